//! Field persistence: a flat little-endian binary file plus a text sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{BoxGrid, Field, Grid, RadialGrid};

const MAGIC: &[u8; 8] = b"CHQFIELD";
const VERSION: u64 = 1;
const TAG_RADIAL: u64 = 0;
const TAG_BOX: u64 = 1;

/// Serialize a field: magic, version, backend tag, grid descriptor
/// (`f64` extent, `u64` nodes), `u64` length, then the `f64` payload.
pub fn encode_field(u: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 8 * u.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, extent, nodes) = match u.grid() {
        Grid::Radial(g) => (TAG_RADIAL, g.r_max, g.n),
        Grid::Box(g) => (TAG_BOX, g.half_width, g.n),
    };
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&extent.to_le_bytes());
    out.extend_from_slice(&(nodes as u64).to_le_bytes());
    out.extend_from_slice(&(u.len() as u64).to_le_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let bad = |msg: &str| Error::Input(format!("field file: {msg}"));
    if bytes.len() < 48 || &bytes[..8] != MAGIC {
        return Err(bad("missing header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    if word(1) != VERSION {
        return Err(bad(&format!("unsupported version {}", word(1))));
    }
    let extent = f64::from_bits(word(3));
    let nodes = word(4) as usize;
    let grid = match word(2) {
        TAG_RADIAL => Grid::Radial(RadialGrid::new(extent, nodes)?),
        TAG_BOX => Grid::Box(BoxGrid::new(extent, nodes)?),
        t => return Err(bad(&format!("unknown backend tag {t}"))),
    };
    let len = word(5) as usize;
    if bytes.len() != 48 + 8 * len {
        return Err(bad("payload length does not match the header"));
    }
    let values = bytes[48..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Field::new(grid, values)
}

/// Path of the text sidecar belonging to a field file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.txt")
}

/// Write `path` and its sidecar; `meta` lines are `key = value`.
pub fn write_field(path: &Path, u: &Field, meta: &[(String, String)]) -> Result<()> {
    fs::write(path, encode_field(u))?;
    let mut side = fs::File::create(sidecar_path(path))?;
    writeln!(side, "backend = {}", u.grid().backend_name())?;
    match u.grid() {
        Grid::Radial(g) => writeln!(side, "r_max = {}\nnodes = {}", g.r_max, g.n)?,
        Grid::Box(g) => writeln!(side, "half_width = {}\nnodes_per_axis = {}", g.half_width, g.n)?,
    }
    writeln!(side, "length = {}", u.len())?;
    for (k, v) in meta {
        writeln!(side, "{k} = {v}")?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_exact() {
        let g = Grid::Box(BoxGrid::new(1.5, 4).unwrap());
        let u = Field::from_radial_fn(g, |r| (-r).exp() / 3.0);
        let back = decode_field(&encode_field(&u)).unwrap();
        assert_eq!(u, back);
        let g = Grid::Radial(RadialGrid::new(2.0, 16).unwrap());
        let u = Field::from_radial_fn(g, |r| r.sin());
        assert_eq!(decode_field(&encode_field(&u)).unwrap(), u);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let g = Grid::Radial(RadialGrid::new(2.0, 16).unwrap());
        let mut bytes = encode_field(&Field::zeros(g));
        bytes.pop();
        assert!(decode_field(&bytes).is_err());
        assert!(decode_field(b"nonsense").is_err());
    }

    #[test]
    fn sidecar_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("field.bin");
        let g = Grid::Radial(RadialGrid::new(2.0, 16).unwrap());
        write_field(&p, &Field::zeros(g), &[("energy".into(), "1.5".into())]).unwrap();
        let side = fs::read_to_string(sidecar_path(&p)).unwrap();
        assert!(side.contains("backend = radial") && side.contains("energy = 1.5"));
        assert_eq!(read_field(&p).unwrap(), Field::zeros(g));
    }
}
