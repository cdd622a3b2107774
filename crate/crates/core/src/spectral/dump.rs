//! `DSMF` spectrum dumps: magic, `u32` version, `u32` H, `u32` W, then `H*W`
//! row-major `f64`, all little-endian.

use std::io::{Read, Write};

use super::{Domain, SpectrumGrid};
use crate::error::{DsmError, Result};

pub const MAGIC: &[u8; 4] = b"DSMF";
pub const VERSION: u32 = 1;

pub fn write_spectrum<W: Write>(mut out: W, grid: &SpectrumGrid) -> Result<()> {
    let h = u32::try_from(grid.height())
        .map_err(|_| DsmError::InvalidArgument("grid height exceeds u32".into()))?;
    let w = u32::try_from(grid.width())
        .map_err(|_| DsmError::InvalidArgument("grid width exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(16 + 8 * grid.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    buf.extend_from_slice(&w.to_le_bytes());
    for v in grid.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_spectrum<R: Read>(mut input: R) -> Result<SpectrumGrid> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(DsmError::Format("not a DSMF spectrum dump".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(DsmError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(DsmError::Format(format!(
            "DSMF payload is {} bytes, header declares {h}x{w}",
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SpectrumGrid::new(h, w, data, Domain::Frequency)
}

/// Shades from empty to hottest.
const RAMP: &[u8] = b" .:-=+*#%@";
/// Magnitudes more than this many decades below the peak render blank.
const DECADES: f64 = 6.0;

/// Log-magnitude heatmap, one character per cell, `(0, 0)` top-left. Grids
/// larger than `max_side` are max-pooled down to fit.
pub fn ascii_heatmap(grid: &SpectrumGrid, max_side: usize) -> String {
    let max_side = max_side.max(1);
    let (h, w) = (grid.height(), grid.width());
    let (rows, cols) = (h.min(max_side), w.min(max_side));
    let peak = grid.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = String::with_capacity(rows * (cols + 1));
    for r in 0..rows {
        for c in 0..cols {
            let mut m = 0.0f64;
            for i in r * h / rows..(r + 1) * h / rows {
                for j in c * w / cols..(c + 1) * w / cols {
                    m = m.max(grid.get(i, j).abs());
                }
            }
            let level = if peak > 0.0 && m > 0.0 {
                ((m / peak).log10() + DECADES) / DECADES
            } else {
                0.0
            };
            let idx = (level.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64).round() as usize;
            out.push(RAMP[idx] as char);
        }
        out.push('\n');
    }
    out
}
