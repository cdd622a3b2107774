//! Orthonormal 2D DCT-II / DCT-III on rectangular grids.
//!
//! The 2D transform is separable: a 1D transform along every row followed by
//! one along every column. Each 1D transform of length `n >= 8` uses Makhoul's
//! reordering, which turns an `n`-point DCT-II into a single `n`-point complex
//! FFT plus a twiddle multiply. Shorter lengths use a dense cosine matrix.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Domain, SpectrumGrid};
use crate::error::{check_finite, DsmError, Result};

/// Default cap on `H * W` for a single plan.
pub const DEFAULT_MAX_COEFFICIENTS: usize = 1 << 24;

/// Lengths below this use the dense matrix path.
const FAST_THRESHOLD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Orthonormal,
}

enum Kernel {
    Dense {
        /// Row-major `n x n` orthonormal DCT-II matrix.
        matrix: Vec<f64>,
    },
    Fast {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
        /// `exp(-i*pi*k / 2n)`
        twiddle: Vec<Complex<f64>>,
        scratch_len: usize,
    },
}

/// 1D orthonormal DCT of a fixed length.
struct Dct1d {
    len: usize,
    /// Orthonormal scale per output bin: `sqrt(1/n)` for k = 0, `sqrt(2/n)` otherwise.
    scale: Vec<f64>,
    kernel: Kernel,
}

/// Reusable per-call buffers.
struct Scratch {
    complex: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
    real: Vec<f64>,
}

impl Dct1d {
    fn new(len: usize, planner: &mut FftPlanner<f64>) -> Self {
        let n = len as f64;
        let scale = (0..len)
            .map(|k| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() })
            .collect::<Vec<_>>();
        let kernel = if len < FAST_THRESHOLD {
            let mut matrix = vec![0.0; len * len];
            for k in 0..len {
                for i in 0..len {
                    matrix[k * len + i] =
                        scale[k] * (PI * k as f64 * (i as f64 + 0.5) / n).cos();
                }
            }
            Kernel::Dense { matrix }
        } else {
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let twiddle = (0..len)
                .map(|k| Complex::from_polar(1.0, -PI * k as f64 / (2.0 * n)))
                .collect();
            let scratch_len = forward
                .get_inplace_scratch_len()
                .max(inverse.get_inplace_scratch_len());
            Kernel::Fast {
                forward,
                inverse,
                twiddle,
                scratch_len,
            }
        };
        Dct1d { len, scale, kernel }
    }

    fn scratch(&self) -> Scratch {
        let fft_len = match &self.kernel {
            Kernel::Fast { scratch_len, .. } => *scratch_len,
            Kernel::Dense { .. } => 0,
        };
        Scratch {
            complex: vec![Complex::new(0.0, 0.0); self.len],
            fft: vec![Complex::new(0.0, 0.0); fft_len],
            real: vec![0.0; self.len],
        }
    }

    /// In-place orthonormal DCT-II.
    fn forward(&self, x: &mut [f64], s: &mut Scratch) {
        let n = self.len;
        match &self.kernel {
            Kernel::Dense { matrix } => {
                s.real.copy_from_slice(x);
                for (k, out) in x.iter_mut().enumerate() {
                    let row = &matrix[k * n..(k + 1) * n];
                    *out = row.iter().zip(&s.real).map(|(a, b)| a * b).sum();
                }
            }
            Kernel::Fast {
                forward, twiddle, ..
            } => {
                // even samples ascending, odd samples descending
                let half = n.div_ceil(2);
                for i in 0..half {
                    s.complex[i] = Complex::new(x[2 * i], 0.0);
                }
                for i in 0..n / 2 {
                    s.complex[n - 1 - i] = Complex::new(x[2 * i + 1], 0.0);
                }
                forward.process_with_scratch(&mut s.complex, &mut s.fft);
                for k in 0..n {
                    x[k] = (s.complex[k] * twiddle[k]).re * self.scale[k];
                }
            }
        }
    }

    /// In-place orthonormal DCT-III (inverse of `forward`).
    fn inverse(&self, y: &mut [f64], s: &mut Scratch) {
        let n = self.len;
        match &self.kernel {
            Kernel::Dense { matrix } => {
                s.real.copy_from_slice(y);
                for (i, out) in y.iter_mut().enumerate() {
                    *out = (0..n).map(|k| matrix[k * n + i] * s.real[k]).sum();
                }
            }
            Kernel::Fast {
                inverse, twiddle, ..
            } => {
                // undo the orthonormal scale to recover the plain cosine sums
                for k in 0..n {
                    s.real[k] = y[k] / self.scale[k];
                }
                s.complex[0] = Complex::new(s.real[0], 0.0);
                for k in 1..n {
                    let z = Complex::new(s.real[k], -s.real[n - k]);
                    s.complex[k] = z * twiddle[k].conj();
                }
                inverse.process_with_scratch(&mut s.complex, &mut s.fft);
                let inv_n = 1.0 / n as f64;
                let half = n.div_ceil(2);
                for i in 0..half {
                    y[2 * i] = s.complex[i].re * inv_n;
                }
                for i in 0..n / 2 {
                    y[2 * i + 1] = s.complex[n - 1 - i].re * inv_n;
                }
            }
        }
    }
}

/// Precomputed transform context for grids of exactly `height x width`.
///
/// Immutable after construction, so a single plan can be shared across threads.
pub struct DctPlan {
    height: usize,
    width: usize,
    normalization: Normalization,
    rows: Dct1d,
    cols: Dct1d,
}

impl fmt::Debug for DctPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DctPlan")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("normalization", &self.normalization)
            .finish()
    }
}

impl DctPlan {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::with_limit(height, width, DEFAULT_MAX_COEFFICIENTS)
    }

    pub fn with_limit(height: usize, width: usize, max_coefficients: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DsmError::InvalidArgument(format!(
                "DCT plan dimensions must be positive, got {height}x{width}"
            )));
        }
        match height.checked_mul(width) {
            Some(n) if n <= max_coefficients => {}
            _ => {
                return Err(DsmError::ResourceLimit(format!(
                    "{height}x{width} exceeds the {max_coefficients}-coefficient plan limit"
                )))
            }
        }
        let mut planner = FftPlanner::new();
        let rows = Dct1d::new(width, &mut planner);
        let cols = Dct1d::new(height, &mut planner);
        Ok(DctPlan {
            height,
            width,
            normalization: Normalization::Orthonormal,
            rows,
            cols,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Forward transform of a row-major buffer, in place. No validation.
    pub fn forward_in_place(&self, data: &mut [f64]) {
        self.apply(data, true);
    }

    /// Inverse transform of a row-major buffer, in place. No validation.
    pub fn inverse_in_place(&self, data: &mut [f64]) {
        self.apply(data, false);
    }

    fn apply(&self, data: &mut [f64], forward: bool) {
        assert_eq!(data.len(), self.len(), "buffer does not match plan");
        let (h, w) = (self.height, self.width);
        if w > 1 {
            let mut s = self.rows.scratch();
            for row in data.chunks_exact_mut(w) {
                if forward {
                    self.rows.forward(row, &mut s);
                } else {
                    self.rows.inverse(row, &mut s);
                }
            }
        }
        if h > 1 {
            let mut s = self.cols.scratch();
            let mut column = vec![0.0; h];
            for j in 0..w {
                for i in 0..h {
                    column[i] = data[i * w + j];
                }
                if forward {
                    self.cols.forward(&mut column, &mut s);
                } else {
                    self.cols.inverse(&mut column, &mut s);
                }
                for i in 0..h {
                    data[i * w + j] = column[i];
                }
            }
        }
    }

    fn check_grid(&self, grid: &SpectrumGrid, expected: Domain) -> Result<()> {
        if grid.height() != self.height || grid.width() != self.width {
            return Err(DsmError::Shape(format!(
                "grid is {}x{}, plan is {}x{}",
                grid.height(),
                grid.width(),
                self.height,
                self.width
            )));
        }
        if grid.domain() != expected {
            return Err(DsmError::InvalidArgument(format!(
                "expected a {expected:?}-domain grid, got {:?}",
                grid.domain()
            )));
        }
        check_finite(grid.data(), "transform input")
    }
}

/// Orthonormal 2D DCT-II.
pub fn dct2(plan: &DctPlan, x: &SpectrumGrid) -> Result<SpectrumGrid> {
    plan.check_grid(x, Domain::Spatial)?;
    let mut data = x.data().to_vec();
    plan.forward_in_place(&mut data);
    SpectrumGrid::new(plan.height, plan.width, data, Domain::Frequency)
}

/// Orthonormal 2D DCT-III, the exact inverse (and adjoint) of [`dct2`].
pub fn idct2(plan: &DctPlan, y: &SpectrumGrid) -> Result<SpectrumGrid> {
    plan.check_grid(y, Domain::Frequency)?;
    let mut data = y.data().to_vec();
    plan.inverse_in_place(&mut data);
    SpectrumGrid::new(plan.height, plan.width, data, Domain::Spatial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> SpectrumGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpectrumGrid::new(h, w, data, Domain::Spatial).unwrap()
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(matches!(DctPlan::new(0, 4), Err(DsmError::InvalidArgument(_))));
        assert!(matches!(DctPlan::new(4, 0), Err(DsmError::InvalidArgument(_))));
    }

    #[test]
    fn rejects_oversized_plan() {
        assert!(matches!(
            DctPlan::with_limit(64, 64, 1000),
            Err(DsmError::ResourceLimit(_))
        ));
        assert!(matches!(
            DctPlan::new(usize::MAX, 2),
            Err(DsmError::ResourceLimit(_))
        ));
    }

    #[test]
    fn plan_echoes_dimensions() {
        let plan = DctPlan::new(8, 8).unwrap();
        assert_eq!((plan.height(), plan.width()), (8, 8));
        assert_eq!(plan.normalization(), Normalization::Orthonormal);
    }

    #[test]
    fn single_point_is_identity() {
        let plan = DctPlan::new(1, 1).unwrap();
        let x = SpectrumGrid::new(1, 1, vec![-3.25], Domain::Spatial).unwrap();
        assert_eq!(dct2(&plan, &x).unwrap().data(), &[-3.25]);
    }

    #[test]
    fn constant_grid_is_pure_dc() {
        let plan = DctPlan::new(4, 4).unwrap();
        let x = SpectrumGrid::new(4, 4, vec![1.0; 16], Domain::Spatial).unwrap();
        let y = dct2(&plan, &x).unwrap();
        assert!((y.data()[0] - 4.0).abs() < 1e-12);
        assert!(y.data()[1..].iter().all(|v| v.abs() < 1e-12));
        assert_eq!(y.domain(), Domain::Frequency);
    }

    #[test]
    fn dc_impulse_inverts_to_constant() {
        let plan = DctPlan::new(4, 4).unwrap();
        let mut data = vec![0.0; 16];
        data[0] = 1.0;
        let y = SpectrumGrid::new(4, 4, data, Domain::Frequency).unwrap();
        let x = idct2(&plan, &y).unwrap();
        assert!(x.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn row_vector_reference_values() {
        // Orthonormal direct sums for [1, 2, 3, 4]:
        // X0 = 10/2, X1 = sqrt(1/2) * sum x_i cos(pi(2i+1)/8), ...
        let plan = DctPlan::new(1, 4).unwrap();
        let x = SpectrumGrid::new(1, 4, vec![1.0, 2.0, 3.0, 4.0], Domain::Spatial).unwrap();
        let y = dct2(&plan, &x).unwrap();
        let expected = [5.0, -2.230_442_497_387_663, 0.0, -0.158_512_667_781_108_15];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fast_path_round_trips_for_odd_and_prime_lengths() {
        for &(h, w) in &[(9, 8), (13, 7), (11, 17), (31, 10), (64, 3)] {
            let plan = DctPlan::new(h, w).unwrap();
            let x = random_grid(h, w, (h * w) as u64);
            let back = idct2(&plan, &dct2(&plan, &x).unwrap()).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_and_domain_are_checked() {
        let plan = DctPlan::new(4, 4).unwrap();
        let wrong = random_grid(4, 5, 1);
        assert!(matches!(dct2(&plan, &wrong), Err(DsmError::Shape(_))));
        let spatial = random_grid(4, 4, 1);
        assert!(idct2(&plan, &spatial).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let plan = DctPlan::new(2, 2).unwrap();
        let x = SpectrumGrid::new(2, 2, vec![1.0, f64::NAN, 0.0, 0.0], Domain::Spatial).unwrap();
        assert!(matches!(dct2(&plan, &x), Err(DsmError::NonFinite(_))));
    }
}
