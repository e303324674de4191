//! The `.apq` container.
//!
//! All integers little-endian:
//!
//! ```text
//! 0   magic "APQ1"
//! 4   u8 n_min, u8 n_max, u8 layout (0 linear, 1 permuted), u8 reserved (0)
//! 8   u32 out_channels
//! 12  u32 in_features (unpadded)
//! 16  u32 padded_cols
//! 20  centroid tables for k = n_min..=n_max, each out_channels × 2^k f16
//! ..  planes 0..n_max, each out_channels × padded_cols / 8 bytes
//! ..  u32 CRC-32 of everything before it
//! ```

use half::f16;

use super::{padded_cols, pack_bitplanes, permute_layout, unpack_codes, BitplaneTensor, Layout};
use crate::error::{Error, Result};
use crate::quant::{AnyPrecisionLayer, CentroidTable};

pub const APQ_MAGIC: &[u8; 4] = b"APQ1";
pub const HEADER_LEN: usize = 20;
const CRC_LEN: usize = 4;

/// An any-precision layer in its inference-ready form: centroid tables plus
/// bitplanes.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    n_min: u8,
    n_max: u8,
    tables: Vec<CentroidTable>,
    planes: BitplaneTensor,
}

impl PackedLayer {
    pub fn new(n_min: u8, n_max: u8, tables: Vec<CentroidTable>, planes: BitplaneTensor) -> Result<Self> {
        if planes.n_planes() != n_max {
            return Err(Error::Shape(format!(
                "{} planes for a {n_max}-bit layer",
                planes.n_planes()
            )));
        }
        if planes.rows() == 0 || planes.cols() == 0 {
            return Err(Error::Shape("empty layer".into()));
        }
        crate::quant::validate_tables(n_min, n_max, planes.rows(), &tables)?;
        Ok(Self {
            n_min,
            n_max,
            tables,
            planes,
        })
    }

    /// Packs a layer's parent codes into bitplanes with the given layout.
    pub fn from_layer(layer: &AnyPrecisionLayer, layout: Layout) -> Result<Self> {
        if layer.rows() == 0 || layer.cols() == 0 {
            return Err(Error::Shape("empty layer".into()));
        }
        let linear = pack_bitplanes(layer.codes(), layer.n_max())?;
        let planes = match layout {
            Layout::Linear => linear,
            Layout::Permuted => permute_layout(&linear)?,
        };
        Self::new(layer.n_min(), layer.n_max(), layer.tables().to_vec(), planes)
    }

    /// Recovers the code-matrix form.
    pub fn to_layer(&self) -> Result<AnyPrecisionLayer> {
        let codes = unpack_codes(&self.planes, self.n_max)?;
        AnyPrecisionLayer::new(self.n_min, self.n_max, codes, self.tables.clone())
    }

    pub fn n_min(&self) -> u8 {
        self.n_min
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn rows(&self) -> usize {
        self.planes.rows()
    }

    pub fn cols(&self) -> usize {
        self.planes.cols()
    }

    pub fn planes(&self) -> &BitplaneTensor {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut BitplaneTensor {
        &mut self.planes
    }

    pub fn tables(&self) -> &[CentroidTable] {
        &self.tables
    }

    pub fn supports(&self, k: u8) -> bool {
        (self.n_min..=self.n_max).contains(&k)
    }

    pub fn table(&self, k: u8) -> Result<&CentroidTable> {
        if !self.supports(k) {
            return Err(Error::Parameter(format!(
                "bit-width {k} not in {}..={}",
                self.n_min, self.n_max
            )));
        }
        Ok(&self.tables[(k - self.n_min) as usize])
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Encodes `layer` as an `.apq` byte stream.
pub fn serialize(layer: &PackedLayer) -> Result<Vec<u8>> {
    let planes = layer.planes();
    let table_bytes: usize = layer.tables.iter().map(|t| t.byte_len()).sum();
    let mut out = Vec::with_capacity(
        HEADER_LEN + table_bytes + planes.plane_len() * layer.n_max as usize + CRC_LEN,
    );
    out.extend_from_slice(APQ_MAGIC);
    out.extend_from_slice(&[layer.n_min, layer.n_max, planes.layout().flag(), 0]);
    put_u32(&mut out, planes.rows())?;
    put_u32(&mut out, planes.cols())?;
    put_u32(&mut out, planes.padded_cols())?;
    for t in &layer.tables {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in 0..layer.n_max as usize {
        out.extend_from_slice(planes.plane(p));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes an `.apq` byte stream. Never panics on malformed input.
pub fn deserialize(bytes: &[u8]) -> Result<PackedLayer> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::format(
            bytes.len(),
            format!("truncated: {} bytes is shorter than the header", bytes.len()),
        ));
    }
    if &bytes[..3] != b"APQ" {
        return Err(Error::format(0, "bad magic"));
    }
    if bytes[3] != APQ_MAGIC[3] {
        return Err(Error::format(3, format!("unsupported version byte {:#04x}", bytes[3])));
    }
    let (n_min, n_max) = (bytes[4], bytes[5]);
    if !(crate::MIN_BITS..=crate::MAX_BITS).contains(&n_min) {
        return Err(Error::format(4, format!("n_min {n_min} out of range")));
    }
    if !(crate::MIN_BITS..=crate::MAX_BITS).contains(&n_max) || n_max < n_min {
        return Err(Error::format(5, format!("n_max {n_max} out of range")));
    }
    let layout = Layout::from_flag(bytes[6])
        .ok_or_else(|| Error::format(6, format!("unknown layout flag {}", bytes[6])))?;
    if bytes[7] != 0 {
        return Err(Error::format(7, "reserved byte is not zero"));
    }
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let padded = read_u32(bytes, 16) as usize;
    if rows == 0 {
        return Err(Error::format(8, "zero output channels"));
    }
    if cols == 0 {
        return Err(Error::format(12, "zero input features"));
    }
    if padded != padded_cols(cols) {
        return Err(Error::format(
            16,
            format!("padded_cols {padded} does not match {cols} input features"),
        ));
    }

    let table_entries: u64 = (n_min..=n_max).map(|k| (rows as u64) << k).sum();
    let plane_len = rows as u64 * padded as u64 / 8;
    let expected = HEADER_LEN as u64 + 2 * table_entries + n_max as u64 * plane_len + CRC_LEN as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            bytes.len().min(expected as usize),
            format!("length {} but header implies {expected}", bytes.len()),
        ));
    }
    let body = bytes.len() - CRC_LEN;
    let stored = read_u32(bytes, body);
    let actual = crc32fast::hash(&bytes[..body]);
    if stored != actual {
        return Err(Error::format(
            body,
            format!("crc mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        ));
    }

    let mut at = HEADER_LEN;
    let mut tables = Vec::with_capacity((n_max - n_min + 1) as usize);
    for k in n_min..=n_max {
        let n = rows << k;
        let values = bytes[at..at + 2 * n]
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes([b[0], b[1]]))
            .collect();
        tables.push(CentroidTable::new(k, rows, values)?);
        at += 2 * n;
    }
    let plane_len = plane_len as usize;
    let planes = (0..n_max)
        .map(|_| {
            let p = bytes[at..at + plane_len].to_vec();
            at += plane_len;
            p
        })
        .collect();
    let planes = BitplaneTensor::from_planes(rows, cols, layout, planes)?;
    PackedLayer::new(n_min, n_max, tables, planes)
}
