//! On-disk format for fields and masks: a small TOML text header next to a
//! raw little-endian payload file.
//!
//! The header carries the grid geometry plus a `payload` entry naming the
//! binary file relative to the header. Scalar and vector payloads are f64
//! little-endian in flat node order (component-fastest for vectors); masks
//! are one byte per node, 0 or 1.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, RegionMask, ScalarField, VectorField};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    dim: usize,
    shape: Vec<usize>,
    origin: Vec<f64>,
    spacing: f64,
    components: usize,
    dtype: String,
    payload: String,
}

fn payload_name(header_path: &Path) -> Result<String> {
    let name = header_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("bad header path {}", header_path.display())))?;
    Ok(format!("{name}.bin"))
}

fn write_header_and_payload(header_path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let text = toml::to_string(header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    fs::write(header_path, text)?;
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    fs::write(dir.join(&header.payload), payload)?;
    Ok(())
}

fn read_header(header_path: &Path) -> Result<(Header, Vec<u8>)> {
    let text = fs::read_to_string(header_path)?;
    let header: Header =
        toml::from_str(&text).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}, expected {FORMAT_VERSION}",
            header.version
        )));
    }
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let payload_path = dir.join(&header.payload);
    let payload = fs::read(&payload_path).map_err(|e| {
        Error::Format(format!("payload {} unreadable: {e}", payload_path.display()))
    })?;
    Ok((header, payload))
}

fn grid_of(header: &Header) -> Result<Grid> {
    if header.shape.len() != header.dim || header.origin.len() != header.dim {
        return Err(Error::Format(format!(
            "dim {} does not match shape/origin lengths {}/{}",
            header.dim,
            header.shape.len(),
            header.origin.len()
        )));
    }
    Grid::new(&header.shape, &header.origin, header.spacing)
}

fn f64_payload(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f64_values(header: &Header, payload: &[u8], expected: usize) -> Result<Vec<f64>> {
    if header.dtype != "f64-le" {
        return Err(Error::Format(format!(
            "dtype {} where f64-le was expected",
            header.dtype
        )));
    }
    if payload.len() != expected * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in payload.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value {v} in payload")));
        }
        values.push(v);
    }
    Ok(values)
}

fn header_for(grid: &Grid, kind: &str, components: usize, dtype: &str, payload: String) -> Header {
    Header {
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        dim: grid.dim(),
        shape: grid.shape().to_vec(),
        origin: grid.origin().to_vec(),
        spacing: grid.spacing(),
        components,
        dtype: dtype.to_string(),
        payload,
    }
}

pub fn write_scalar(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let path = path.as_ref();
    let header = header_for(field.grid(), "scalar", 1, "f64-le", payload_name(path)?);
    write_header_and_payload(path, &header, &f64_payload(field.values()))
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    let (header, payload) = read_header(path.as_ref())?;
    if header.kind != "scalar" || header.components != 1 {
        return Err(Error::Format(format!("expected a scalar field, found {}", header.kind)));
    }
    let grid = grid_of(&header)?;
    let values = f64_values(&header, &payload, grid.len())?;
    ScalarField::new(grid, values)
}

pub fn write_vector(path: impl AsRef<Path>, field: &VectorField) -> Result<()> {
    let path = path.as_ref();
    let header = header_for(
        field.grid(),
        "vector",
        field.components(),
        "f64-le",
        payload_name(path)?,
    );
    write_header_and_payload(path, &header, &f64_payload(field.values()))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<VectorField> {
    let (header, payload) = read_header(path.as_ref())?;
    if header.kind != "vector" || header.components == 0 {
        return Err(Error::Format(format!("expected a vector field, found {}", header.kind)));
    }
    let grid = grid_of(&header)?;
    let values = f64_values(&header, &payload, grid.len() * header.components)?;
    VectorField::new(grid, header.components, values)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &RegionMask) -> Result<()> {
    let path = path.as_ref();
    let header = header_for(mask.grid(), "mask", 1, "u8", payload_name(path)?);
    let payload: Vec<u8> = mask.flags().iter().map(|b| u8::from(*b)).collect();
    write_header_and_payload(path, &header, &payload)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    let (header, payload) = read_header(path.as_ref())?;
    if header.kind != "mask" {
        return Err(Error::Format(format!("expected a mask, found {}", header.kind)));
    }
    if header.dtype != "u8" {
        return Err(Error::Format(format!("dtype {} where u8 was expected", header.dtype)));
    }
    let grid = grid_of(&header)?;
    if payload.len() != grid.len() {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            grid.len()
        )));
    }
    let mut flags = Vec::with_capacity(payload.len());
    for (i, b) in payload.iter().enumerate() {
        match b {
            0 => flags.push(false),
            1 => flags.push(true),
            other => {
                return Err(Error::Format(format!("mask byte {other} at node {i} is not 0 or 1")))
            }
        }
    }
    RegionMask::new(grid, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn scalar_roundtrip_is_bitwise() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(2, -1.0, 1.0, 9).unwrap();
        let f = ScalarField::from_fn(g, |x| (x[0] * 3.7).sin() + x[1] / 3.0);
        let path = dir.path().join("f.toml");
        write_scalar(&path, &f).unwrap();
        let back = read_scalar(&path).unwrap();
        assert_eq!(back.grid(), f.grid());
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn vector_roundtrip_keeps_layout() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(2, 0.0, 1.0, 5).unwrap();
        let v = VectorField::from_fn(g, 2, |x, a| if a == 0 { x[0] } else { -x[1] });
        let path = dir.path().join("v.toml");
        write_vector(&path, &v).unwrap();
        let back = read_vector(&path).unwrap();
        assert_eq!(back.components(), 2);
        assert_eq!(back.values(), v.values());
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 17).unwrap();
        let m = RegionMask::from_fn(g, |x| x[0] > 0.5);
        let path = dir.path().join("m.toml");
        write_mask(&path, &m).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back.flags(), m.flags());
    }

    #[test]
    fn missing_payload_is_a_format_error() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 5).unwrap();
        let f = ScalarField::constant(g, 1.0);
        let path = dir.path().join("f.toml");
        write_scalar(&path, &f).unwrap();
        fs::remove_file(dir.path().join("f.toml.bin")).unwrap();
        assert!(matches!(read_scalar(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 5).unwrap();
        let f = ScalarField::constant(g, 2.0);
        let path = dir.path().join("f.toml");
        write_scalar(&path, &f).unwrap();
        let bin = dir.path().join("f.toml.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_scalar(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 5).unwrap();
        let mut f = ScalarField::constant(g, 0.0);
        f.values_mut()[2] = f64::NAN;
        let path = dir.path().join("f.toml");
        write_scalar(&path, &f).unwrap();
        assert!(matches!(read_scalar(&path), Err(Error::Format(_))));
    }

    #[test]
    fn stray_mask_byte_is_rejected() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 5).unwrap();
        let m = RegionMask::full(g);
        let path = dir.path().join("m.toml");
        write_mask(&path, &m).unwrap();
        let bin = dir.path().join("m.toml.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[1] = 7;
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Format(_))));
    }

    #[test]
    fn scalar_header_kind_checked_on_read() {
        let dir = tempdir().unwrap();
        let g = Grid::cube(1, 0.0, 1.0, 5).unwrap();
        let m = RegionMask::full(g);
        let path = dir.path().join("m.toml");
        write_mask(&path, &m).unwrap();
        assert!(matches!(read_scalar(&path), Err(Error::Format(_))));
    }
}
