//! Output files: CSV tables, pretty JSON, and a compact binary field record.
//!
//! Binary field layout (all little-endian):
//!
//! ```text
//! b"FLD1"
//! u32            dim
//! dim × u32      points per axis
//! dim × (f64 min, f64 max)   axis extents
//! Π N × f64      values, row-major, last axis fastest
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use carleman_core::grid::ScalarField;
use serde::Serialize;

pub const FIELD_MAGIC: &[u8; 4] = b"FLD1";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldRecord {
    pub points_per_axis: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    pub values: Vec<f64>,
}

impl FieldRecord {
    pub fn from_field(u: &ScalarField) -> Self {
        let g = &u.grid;
        FieldRecord {
            points_per_axis: vec![g.points_per_axis; g.dim],
            extents: vec![(-g.half_extent, g.half_extent); g.dim],
            values: u.values.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 20 * self.points_per_axis.len() + 8 * self.values.len());
        out.extend_from_slice(FIELD_MAGIC);
        out.extend_from_slice(&(self.points_per_axis.len() as u32).to_le_bytes());
        for n in &self.points_per_axis {
            out.extend_from_slice(&(*n as u32).to_le_bytes());
        }
        for (lo, hi) in &self.extents {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).context("truncated field record")?;
        if &magic != FIELD_MAGIC {
            bail!("not a field record (bad magic)");
        }
        let mut u32_buf = [0u8; 4];
        let mut f64_buf = [0u8; 8];
        r.read_exact(&mut u32_buf)?;
        let dim = u32::from_le_bytes(u32_buf) as usize;
        if !(1..=3).contains(&dim) {
            bail!("field record dimension {dim} out of range");
        }
        let mut points_per_axis = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut u32_buf)?;
            points_per_axis.push(u32::from_le_bytes(u32_buf) as usize);
        }
        let mut extents = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut f64_buf)?;
            let lo = f64::from_le_bytes(f64_buf);
            r.read_exact(&mut f64_buf)?;
            extents.push((lo, f64::from_le_bytes(f64_buf)));
        }
        let len: usize = points_per_axis.iter().product();
        if r.len() != 8 * len {
            bail!("field record holds {} value bytes, expected {}", r.len(), 8 * len);
        }
        let values = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(FieldRecord {
            points_per_axis,
            extents,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
    }
}

#[derive(Serialize)]
struct FieldRow {
    x1: f64,
    x2: f64,
    x3: Option<f64>,
    value: f64,
}

/// One row per node: coordinates and value.
pub fn write_field_csv(path: &Path, u: &ScalarField) -> Result<()> {
    let rows: Vec<FieldRow> = (0..u.values.len())
        .map(|i| {
            let x = u.grid.point(i);
            FieldRow {
                x1: x[0],
                x2: x[1],
                x3: x.get(2).copied(),
                value: u.values[i],
            }
        })
        .collect();
    write_csv(path, &rows)
}
