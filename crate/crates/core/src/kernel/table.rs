use crate::error::{Error, Result};

/// Pairwise centroid table for 3-bit codes: entry `8i + j` is
/// `(c[i], c[j])`, so one 6-bit index dequantizes two adjacent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTable3 {
    entries: [(f32, f32); 64],
}

impl MergedTable3 {
    pub fn entries(&self) -> &[(f32, f32); 64] {
        &self.entries
    }

    #[inline(always)]
    pub fn lookup(&self, index: u8) -> (f32, f32) {
        self.entries[(index & 0x3F) as usize]
    }
}

/// Expands 8 centroids into the 64-entry pair table.
pub fn build_merged_table(centroids: &[f32]) -> Result<MergedTable3> {
    let c: &[f32; 8] = centroids.try_into().map_err(|_| {
        Error::Parameter(format!(
            "merged table needs 8 centroids, got {}",
            centroids.len()
        ))
    })?;
    Ok(MergedTable3 {
        entries: std::array::from_fn(|e| (c[e >> 3], c[e & 7])),
    })
}

/// Merged index of two 3-bit codes.
#[inline(always)]
pub fn merge_index(first: u8, second: u8) -> u8 {
    ((first & 7) << 3) | (second & 7)
}
