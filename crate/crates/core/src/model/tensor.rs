use crate::error::{check_finite, DsmError, Result};

/// `batch x height x width x channels` reals, channel-last row-major.
///
/// Used both for token grids and for raw image batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl TokenTensor {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if batch == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(DsmError::Shape(format!(
                "tensor dimensions must be positive, got {batch}x{height}x{width}x{channels}"
            )));
        }
        if data.len() != batch * height * width * channels {
            return Err(DsmError::Shape(format!(
                "{} values for a {batch}x{height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        check_finite(&data, "token tensor")?;
        Ok(TokenTensor {
            batch,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        TokenTensor {
            batch,
            height,
            width,
            channels,
            data: vec![0.0; batch * height * width * channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.batch, self.height, self.width, self.channels)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.height, self.width, self.channels)
    }

    /// Number of tokens across the batch.
    pub fn tokens(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn index(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        ((b * self.height + i) * self.width + j) * self.channels + c
    }

    pub fn at(&self, b: usize, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(b, i, j, c)]
    }

    /// Copy channel `c` of item `b` into a row-major `height x width` grid.
    pub fn read_plane(&self, b: usize, c: usize, out: &mut [f64]) {
        let base = b * self.height * self.width;
        for (p, o) in out.iter_mut().enumerate() {
            *o = self.data[(base + p) * self.channels + c];
        }
    }

    pub fn write_plane(&mut self, b: usize, c: usize, plane: &[f64]) {
        let base = b * self.height * self.width;
        for (p, &v) in plane.iter().enumerate() {
            self.data[(base + p) * self.channels + c] = v;
        }
    }

    /// Items `start..end` of the batch as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.batch {
            return Err(DsmError::InvalidArgument(format!(
                "batch range {start}..{end} out of 0..{}",
                self.batch
            )));
        }
        let per = self.height * self.width * self.channels;
        Ok(TokenTensor {
            batch: end - start,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[start * per..end * per].to_vec(),
        })
    }

    /// Gather the listed batch items, in order.
    pub fn select(&self, items: &[usize]) -> Result<Self> {
        let per = self.height * self.width * self.channels;
        let mut data = Vec::with_capacity(items.len() * per);
        for &b in items {
            if b >= self.batch {
                return Err(DsmError::InvalidArgument(format!("batch index {b} out of range")));
            }
            data.extend_from_slice(&self.data[b * per..(b + 1) * per]);
        }
        if items.is_empty() {
            return Err(DsmError::InvalidArgument("empty selection".into()));
        }
        Ok(TokenTensor {
            batch: items.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        })
    }
}
