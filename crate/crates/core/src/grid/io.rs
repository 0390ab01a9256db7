use std::io::{Read, Write};
use std::path::Path;

use super::{Field, Grid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PHIF";
const VERSION: u32 = 1;

/// Little-endian layout: magic, version, d, then per axis `n: u64, lo: f64, hi: f64`,
/// then the nodal values as f64, then one mask byte per node.
pub fn write_field_binary(field: &Field, mut w: impl Write) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    for a in 0..g.dim() {
        w.write_all(&(g.n()[a] as u64).to_le_bytes())?;
        w.write_all(&g.lo()[a].to_le_bytes())?;
        w.write_all(&g.hi()[a].to_le_bytes())?;
    }
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    let mask: Vec<u8> = field.fixed().iter().map(|&b| b as u8).collect();
    w.write_all(&mask)?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated field file: {e}")))?;
    Ok(buf)
}

pub fn read_field_binary(mut r: impl Read) -> Result<Field> {
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(take(&mut r)?) as usize;
    if dim != 1 && dim != 2 {
        return Err(Error::Format(format!("bad dimension {dim}")));
    }
    let mut n = [1usize; 2];
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for a in 0..dim {
        n[a] = u64::from_le_bytes(take(&mut r)?) as usize;
        lo[a] = f64::from_le_bytes(take(&mut r)?);
        hi[a] = f64::from_le_bytes(take(&mut r)?);
    }
    let grid = Grid::new(dim, lo, hi, n)?;
    let count = grid.num_nodes();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(take(&mut r)?));
    }
    let mut mask = vec![0u8; count];
    r.read_exact(&mut mask)
        .map_err(|e| Error::Format(format!("truncated mask: {e}")))?;
    Field::new(grid, values)?.with_mask(mask.into_iter().map(|b| b != 0).collect())
}

/// Columns `x1[,x2],value`.
pub fn write_field_csv(field: &Field, path: &Path) -> Result<()> {
    let g = field.grid();
    let mut w = csv::Writer::from_path(path)?;
    if g.dim() == 2 {
        w.write_record(["x1", "x2", "value"])?;
    } else {
        w.write_record(["x1", "value"])?;
    }
    for (k, v) in field.values().iter().enumerate() {
        let x = g.node_coord(k);
        if g.dim() == 2 {
            w.write_record([x[0].to_string(), x[1].to_string(), v.to_string()])?;
        } else {
            w.write_record([x[0].to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-cell values at cell centers, same column layout as nodal CSV.
pub fn write_cell_csv(grid: &Grid, values: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if grid.dim() == 2 {
        w.write_record(["x1", "x2", "value"])?;
    } else {
        w.write_record(["x1", "value"])?;
    }
    for (c, v) in values.iter().enumerate() {
        let x = grid.cell_center(c);
        if grid.dim() == 2 {
            w.write_record([x[0].to_string(), x[1].to_string(), v.to_string()])?;
        } else {
            w.write_record([x[0].to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
