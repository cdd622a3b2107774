//! Exact 2D DCT/IDCT on rectangular grids and zigzag spectrum ordering.

mod dct;
pub mod dump;
mod zigzag;

pub use dct::{dct2, idct2, DctPlan, Normalization, DEFAULT_MAX_COEFFICIENTS};
pub use zigzag::{zigzag_flatten, zigzag_order, zigzag_unflatten, ZigzagOrder};

use crate::error::{DsmError, Result};

/// Which side of the transform a grid lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Spatial,
    Frequency,
}

/// A row-major `height x width` real grid tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
    domain: Domain,
}

/// Multiplicative weights over spectrum bands; always frequency-tagged.
pub type SpectrumMask = SpectrumGrid;

impl SpectrumGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>, domain: Domain) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DsmError::InvalidArgument(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(DsmError::Shape(format!(
                "{} values cannot fill a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(SpectrumGrid {
            height,
            width,
            data,
            domain,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64, domain: Domain) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], domain)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
