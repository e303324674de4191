//! Weight matrix files.
//!
//! Two formats are read:
//! - raw little-endian `f32`, row-major, with a sidecar `<name>.json`
//!   holding `{"rows": R, "cols": C}`;
//! - `.npy` files with dtype `<f4`, C order, one or two dimensions.

use std::path::{Path, PathBuf};

use anyprec_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Reads a weight-shaped matrix, picking the format from the extension.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = read_bytes(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy")) {
        return parse_npy(&bytes).map_err(|m| CliError::Validation(format!("{}: {m}", path.display())));
    }
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let shape: Shape = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", side.display())))?;
    parse_raw(&bytes, shape).map_err(|m| CliError::Validation(format!("{}: {m}", path.display())))
}

/// Writes `m` as raw `f32` plus its shape sidecar.
pub fn write_raw(path: &Path, m: &Matrix) -> Result<()> {
    let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)?;
    let shape = Shape {
        rows: m.rows(),
        cols: m.cols(),
    };
    write_bytes(&sidecar_path(path), serde_json::to_string(&shape).expect("plain struct").as_bytes())
}

fn le_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

pub fn parse_raw(bytes: &[u8], shape: Shape) -> std::result::Result<Matrix, String> {
    let n = shape.rows.checked_mul(shape.cols).ok_or("shape overflows")?;
    if bytes.len() != n * 4 {
        return Err(format!(
            "{} bytes but {}x{} f32 needs {}",
            bytes.len(),
            shape.rows,
            shape.cols,
            n * 4
        ));
    }
    Matrix::new(shape.rows, shape.cols, le_f32s(bytes)).map_err(|e| e.to_string())
}

/// Value of `'key': value` in an NPY header dict, up to the next top-level comma.
fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Some(rest[..end].trim())
}

pub fn parse_npy(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("not an NPY file".into());
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        v => return Err(format!("unsupported NPY version {v}")),
    };
    let header = bytes
        .get(start..start + len)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or("truncated NPY header")?;
    let descr = header_field(header, "descr").ok_or("NPY header lacks descr")?;
    if descr.trim_matches(['\'', '"']) != "<f4" {
        return Err(format!("dtype {descr} is not little-endian f32"));
    }
    if header_field(header, "fortran_order") != Some("False") {
        return Err("fortran-ordered arrays are not supported".into());
    }
    let dims: Vec<usize> = header_field(header, "shape")
        .ok_or("NPY header lacks shape")?
        .trim_matches(['(', ')'])
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad dimension {s}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let shape = match dims[..] {
        [c] => Shape { rows: 1, cols: c },
        [r, c] => Shape { rows: r, cols: c },
        _ => return Err(format!("expected 1 or 2 dimensions, got {}", dims.len())),
    };
    parse_raw(&bytes[start + len..], shape)
}
