use super::{Domain, SpectrumGrid};
use crate::error::{DsmError, Result};

/// JPEG-style zigzag scan generalized to rectangular grids.
///
/// Positions are visited anti-diagonal by anti-diagonal (`row + col = d`).
/// Even diagonals run up and to the right, odd ones down and to the left,
/// clamped to the grid bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZigzagOrder {
    height: usize,
    width: usize,
    /// `order[k]` is the row-major index of the k-th scanned position.
    order: Vec<usize>,
    /// `rank[i]` is the scan position of row-major index `i`.
    rank: Vec<usize>,
}

impl ZigzagOrder {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Row-major indices in scan order.
    pub fn indices(&self) -> &[usize] {
        &self.order
    }

    /// Scan position of each row-major index.
    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.order.iter().map(|&i| (i / self.width, i % self.width))
    }

    /// Permute a row-major buffer into scan order. No validation.
    pub fn gather(&self, grid: &[f64], out: &mut [f64]) {
        for (dst, &src) in out.iter_mut().zip(&self.order) {
            *dst = grid[src];
        }
    }

    /// Inverse of [`gather`](Self::gather). No validation.
    pub fn scatter(&self, scanned: &[f64], grid: &mut [f64]) {
        for (&value, &dst) in scanned.iter().zip(&self.order) {
            grid[dst] = value;
        }
    }
}

pub fn zigzag_order(height: usize, width: usize) -> Result<ZigzagOrder> {
    if height == 0 || width == 0 {
        return Err(DsmError::InvalidArgument(format!(
            "zigzag dimensions must be positive, got {height}x{width}"
        )));
    }
    let mut order = Vec::with_capacity(height * width);
    for d in 0..height + width - 1 {
        let lo = d.saturating_sub(width - 1);
        let hi = d.min(height - 1);
        if d % 2 == 0 {
            order.extend((lo..=hi).rev().map(|r| r * width + (d - r)));
        } else {
            order.extend((lo..=hi).map(|r| r * width + (d - r)));
        }
    }
    let mut rank = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k;
    }
    Ok(ZigzagOrder {
        height,
        width,
        order,
        rank,
    })
}

pub fn zigzag_flatten(order: &ZigzagOrder, grid: &SpectrumGrid) -> Result<Vec<f64>> {
    if grid.height() != order.height || grid.width() != order.width {
        return Err(DsmError::Shape(format!(
            "grid is {}x{}, zigzag order is {}x{}",
            grid.height(),
            grid.width(),
            order.height,
            order.width
        )));
    }
    let mut out = vec![0.0; order.len()];
    order.gather(grid.data(), &mut out);
    Ok(out)
}

/// Inverse zigzag; the result is frequency-tagged.
pub fn zigzag_unflatten(order: &ZigzagOrder, scanned: &[f64]) -> Result<SpectrumGrid> {
    if scanned.len() != order.len() {
        return Err(DsmError::Shape(format!(
            "vector of length {} does not match {}x{} zigzag order",
            scanned.len(),
            order.height,
            order.width
        )));
    }
    let mut data = vec![0.0; order.len()];
    order.scatter(scanned, &mut data);
    SpectrumGrid::new(order.height, order.width, data, Domain::Frequency)
}
