//! SWAR bit-transpose of bitplane words.
//!
//! `B` input words hold bit `b` of 32 codes each (word `b` = code bit `b`).
//! Each word is viewed as `32 / B` sub-vectors of `B` bits, so the `B` words
//! form `32 / B` independent `B × B` bit matrices that are transposed in
//! parallel. Afterwards output word `g`, field `s` (bits `s·B .. s·B + B`)
//! is the code of weight `s·B + g`:
//!
//! `out[g] bit (s·B + b) == in[b] bit (s·B + g)`.
//!
//! The transpose runs `log2(B)` block-swap rounds; a round pairs words `i`
//! and `i + w` and exchanges their off-diagonal `w × w` blocks with one
//! shift/xor/mask sequence.

use crate::error::{Error, Result};

/// Bit-widths the transpose handles natively.
pub const SUPPORTED_WIDTHS: [usize; 3] = [2, 4, 8];

/// Within each field, bit positions whose bit `w` is clear.
const fn low_mask(w: usize) -> u32 {
    match w {
        1 => 0x5555_5555,
        2 => 0x3333_3333,
        4 => 0x0F0F_0F0F,
        _ => panic!("unsupported swap width"),
    }
}

/// Bitwise operations per swapped word pair: two shifts, three xors, one and.
pub const OPS_PER_PAIR: usize = 6;

/// Bitwise operation count of [`transpose_block`] for `B` words.
pub const fn op_count(b: usize) -> usize {
    b.trailing_zeros() as usize * (b / 2) * OPS_PER_PAIR
}

const _: () = assert!(op_count(4) <= 40);

/// Transposes the `32 / B` bit matrices held in `words`.
#[inline(always)]
pub fn transpose_block<const B: usize>(mut words: [u32; B]) -> [u32; B] {
    let mut w = B / 2;
    while w > 0 {
        let m = low_mask(w);
        let mut i = 0;
        while i < B {
            if i & w == 0 {
                let (x, y) = (words[i], words[i + w]);
                let t = ((x >> w) ^ y) & m;
                words[i + w] = y ^ t;
                words[i] = x ^ (t << w);
            }
            i += 1;
        }
        w /= 2;
    }
    words
}

/// Runtime-width form of [`transpose_block`]; `words.len()` must be 2, 4 or 8.
pub fn bit_transpose(words: &[u32]) -> Result<Vec<u32>> {
    match words.len() {
        2 => Ok(transpose_block::<2>(words.try_into().expect("len 2")).to_vec()),
        4 => Ok(transpose_block::<4>(words.try_into().expect("len 4")).to_vec()),
        8 => Ok(transpose_block::<8>(words.try_into().expect("len 8")).to_vec()),
        n => Err(Error::Parameter(format!(
            "bit-transpose needs 2, 4 or 8 words, got {n}"
        ))),
    }
}

/// Transport width used for a `k`-bit code: the next power of two.
pub fn lane_width(k: u8) -> Result<usize> {
    if !(crate::MIN_BITS..=crate::MAX_BITS).contains(&k) {
        return Err(Error::Parameter(format!("bit-width {k} outside [2, 8]")));
    }
    Ok((k as usize).next_power_of_two())
}

/// Transposes `k` words (word `b` = code bit `b`) by zero-padding to the next
/// power of two. Codes come out zero-extended in `B`-bit fields.
pub fn transpose_any_width(words: &[u32]) -> Result<Vec<u32>> {
    let k = u8::try_from(words.len()).unwrap_or(u8::MAX);
    let b = lane_width(k)?;
    let mut padded = words.to_vec();
    padded.resize(b, 0);
    bit_transpose(&padded)
}
