//! Bitplane storage of quantization codes.
//!
//! Plane `p` holds bit `n_max - 1 - p` of every code, so plane 0 is the most
//! significant bit and the first `k` planes are exactly the `k`-bit model.
//! Each plane is a row-major bit matrix; weight `c` of a row lives in byte
//! `c / 8`, bit `c % 8`. Rows are zero-padded to a multiple of [`TILE_WEIGHTS`].
//!
//! In the permuted layout every 128-byte tile of a plane is rearranged so that
//! the 4-byte word of lane `t` holds weights `256j + 8t .. 256j + 8t + 7` for
//! `j = 0..4`. A warp of 32 lanes then reads 32 consecutive activations per
//! access instead of 32 strided ones.

mod apq;

pub use apq::{deserialize, serialize, PackedLayer, APQ_MAGIC, HEADER_LEN};

use crate::error::{Error, Result};
use crate::CodeMatrix;

/// Weights per tile: 32 lanes × 32 bits.
pub const TILE_WEIGHTS: usize = 1024;
/// Bytes per tile per plane.
pub const TILE_BYTES: usize = TILE_WEIGHTS / 8;
/// Lanes per tile.
pub const LANES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Linear,
    Permuted,
}

impl Layout {
    pub fn flag(self) -> u8 {
        match self {
            Layout::Linear => 0,
            Layout::Permuted => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Layout::Linear),
            1 => Some(Layout::Permuted),
            _ => None,
        }
    }

    /// Position within its tile of the weight held by bit `bit` of lane
    /// `lane`'s 32-bit little-endian word.
    #[inline]
    pub fn weight_in_tile(self, lane: usize, bit: usize) -> usize {
        match self {
            Layout::Linear => lane * 32 + bit,
            Layout::Permuted => 256 * (bit >> 3) + 8 * lane + (bit & 7),
        }
    }
}

/// Byte `4t + j` of the output tile is byte `32j + t` of the input tile.
pub fn permute_tile(input: &[u8; TILE_BYTES]) -> [u8; TILE_BYTES] {
    let mut out = [0u8; TILE_BYTES];
    for t in 0..LANES {
        for j in 0..4 {
            out[4 * t + j] = input[32 * j + t];
        }
    }
    out
}

/// Inverse of [`permute_tile`].
pub fn unpermute_tile(input: &[u8; TILE_BYTES]) -> [u8; TILE_BYTES] {
    let mut out = [0u8; TILE_BYTES];
    for t in 0..LANES {
        for j in 0..4 {
            out[32 * j + t] = input[4 * t + j];
        }
    }
    out
}

/// `cols` rounded up to a whole number of tiles.
pub fn padded_cols(cols: usize) -> usize {
    cols.div_ceil(TILE_WEIGHTS) * TILE_WEIGHTS
}

/// Codes decomposed into MSB-first bit matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitplaneTensor {
    rows: usize,
    cols: usize,
    padded_cols: usize,
    layout: Layout,
    planes: Vec<Vec<u8>>,
}

impl BitplaneTensor {
    /// Assembles a tensor from raw planes, checking their sizes.
    pub fn from_planes(rows: usize, cols: usize, layout: Layout, planes: Vec<Vec<u8>>) -> Result<Self> {
        let padded = padded_cols(cols);
        let plane_len = rows * padded / 8;
        if planes.is_empty() || planes.len() > crate::MAX_BITS as usize {
            return Err(Error::Parameter(format!("{} planes", planes.len())));
        }
        if let Some(p) = planes.iter().position(|p| p.len() != plane_len) {
            return Err(Error::Shape(format!(
                "plane {p} has {} bytes, expected {plane_len}",
                planes[p].len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            padded_cols: padded,
            layout,
            planes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn padded_cols(&self) -> usize {
        self.padded_cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_planes(&self) -> u8 {
        self.planes.len() as u8
    }

    /// Bytes in one plane.
    pub fn plane_len(&self) -> usize {
        self.rows * self.padded_cols / 8
    }

    /// Bytes of one row within a plane.
    pub fn row_bytes(&self) -> usize {
        self.padded_cols / 8
    }

    pub fn plane(&self, p: usize) -> &[u8] {
        &self.planes[p]
    }

    pub fn plane_mut(&mut self, p: usize) -> &mut [u8] {
        &mut self.planes[p]
    }

    /// The `k` most significant planes; everything a `k`-bit reader may touch.
    pub fn prefix(&self, k: u8) -> Result<&[Vec<u8>]> {
        if k == 0 || k > self.n_planes() {
            return Err(Error::Parameter(format!(
                "prefix of {k} planes from {}",
                self.n_planes()
            )));
        }
        Ok(&self.planes[..k as usize])
    }

    /// Position of weight `(row, col)` in every plane: byte offset and bit.
    #[inline]
    fn locate(&self, row: usize, col: usize) -> (usize, u8) {
        let row_base = row * self.row_bytes();
        match self.layout {
            Layout::Linear => (row_base + col / 8, (col % 8) as u8),
            Layout::Permuted => {
                let tile = col / TILE_WEIGHTS;
                let in_tile = col % TILE_WEIGHTS;
                let src = in_tile / 8;
                let (j, t) = (src / 32, src % 32);
                (row_base + tile * TILE_BYTES + 4 * t + j, (in_tile % 8) as u8)
            }
        }
    }

    fn map_tiles(&self, f: fn(&[u8; TILE_BYTES]) -> [u8; TILE_BYTES], layout: Layout) -> Self {
        let planes = self
            .planes
            .iter()
            .map(|plane| {
                let mut out = Vec::with_capacity(plane.len());
                for tile in plane.chunks_exact(TILE_BYTES) {
                    out.extend_from_slice(&f(tile.try_into().expect("tile size")));
                }
                out
            })
            .collect();
        Self {
            planes,
            layout,
            ..*self
        }
    }
}

/// Decomposes `codes` into `n_max` bitplanes in linear layout.
pub fn pack_bitplanes(codes: &CodeMatrix, n_max: u8) -> Result<BitplaneTensor> {
    crate::quant::check_bits(n_max)?;
    let (rows, cols) = (codes.rows(), codes.cols());
    let padded = padded_cols(cols);
    let row_bytes = padded / 8;
    let mut planes = vec![vec![0u8; rows * row_bytes]; n_max as usize];
    for r in 0..rows {
        for (c, &code) in codes.row(r).iter().enumerate() {
            if (code as u32) >> n_max != 0 {
                return Err(Error::CodeRange {
                    row: r,
                    col: c,
                    code: code as u32,
                    bits: n_max,
                });
            }
            let byte = r * row_bytes + c / 8;
            for (p, plane) in planes.iter_mut().enumerate() {
                let bit = (code >> (n_max as usize - 1 - p)) & 1;
                plane[byte] |= bit << (c % 8);
            }
        }
    }
    BitplaneTensor::from_planes(rows, cols, Layout::Linear, planes)
}

/// Applies the coalescing byte permutation to every tile.
pub fn permute_layout(t: &BitplaneTensor) -> Result<BitplaneTensor> {
    if t.layout != Layout::Linear {
        return Err(Error::Layout {
            expected: Layout::Linear,
            found: t.layout,
        });
    }
    Ok(t.map_tiles(permute_tile, Layout::Permuted))
}

/// Undoes [`permute_layout`].
pub fn inverse_permute_layout(t: &BitplaneTensor) -> Result<BitplaneTensor> {
    if t.layout != Layout::Permuted {
        return Err(Error::Layout {
            expected: Layout::Permuted,
            found: t.layout,
        });
    }
    Ok(t.map_tiles(unpermute_tile, Layout::Linear))
}

/// Top-`k`-bit codes, reading only planes `0..k`.
pub fn unpack_codes(t: &BitplaneTensor, k: u8) -> Result<CodeMatrix> {
    let planes = t.prefix(k)?;
    let mut out = CodeMatrix::zeros(t.rows, t.cols);
    for r in 0..t.rows {
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            let (byte, bit) = t.locate(r, c);
            let mut code = 0u8;
            for plane in planes {
                code = (code << 1) | ((plane[byte] >> bit) & 1);
            }
            *o = code;
        }
    }
    Ok(out)
}
