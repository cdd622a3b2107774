//! Reference transform, timing harness, and mask-mode / spectrum-length
//! ablations at toy scale.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{DsmError, Result};
use crate::model::{count_params_flops, MaskMode, SpectrumLength};
use crate::spectral::{DctPlan, Domain, SpectrumGrid};
use crate::train::{encode_checkpoint, Trainer};

/// Orthonormal 2D DCT-II by the direct quadruple sum, `O(H^2 W^2)`.
pub fn naive_dct2(x: &SpectrumGrid) -> SpectrumGrid {
    let (h, w) = (x.height(), x.width());
    let scale = |k: usize, n: usize| {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = 0.0;
            for i in 0..h {
                let cu = (PI * u as f64 * (i as f64 + 0.5) / h as f64).cos();
                for j in 0..w {
                    let cv = (PI * v as f64 * (j as f64 + 0.5) / w as f64).cos();
                    acc += x.data()[i * w + j] * cu * cv;
                }
            }
            out[u * w + v] = scale(u, h) * scale(v, w) * acc;
        }
    }
    SpectrumGrid::new(h, w, out, Domain::Frequency).expect("same shape as the input")
}

const WARMUPS: usize = 2;
/// Each timed sample repeats the operation until it lasts at least this long.
const MIN_SAMPLE_SECS: f64 = 5e-3;

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn random_grid(side: usize, seed: u64) -> Result<SpectrumGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SpectrumGrid::new(side, side, data, Domain::Spatial)
}

/// Per-call seconds of `run`: two warmup calls, then `repeats` samples of
/// `k` back-to-back calls each, with `k` sized from the warmup timing.
fn time_runs(repeats: usize, mut run: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    let mut slowest = 0.0f64;
    for _ in 0..WARMUPS {
        let start = Instant::now();
        run()?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
    }
    let k = (MIN_SAMPLE_SECS / slowest.max(1e-9)).ceil().clamp(1.0, 1e6) as usize;
    (0..repeats)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..k {
                run()?;
            }
            Ok(start.elapsed().as_secs_f64() / k as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub side: usize,
    pub median_secs: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub timings: Vec<Timing>,
}

impl BenchReport {
    pub fn median(&self, side: usize) -> Option<f64> {
        self.timings.iter().find(|t| t.side == side).map(|t| t.median_secs)
    }

    /// `time(b) / time(a)` for two benchmarked sides.
    pub fn ratio(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.median(b)? / self.median(a)?)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("grid        N  median_us  ratio_vs_prev\n");
        for (i, t) in self.timings.iter().enumerate() {
            let ratio = match i {
                0 => "-".to_string(),
                _ => format!("{:.2}", t.median_secs / self.timings[i - 1].median_secs),
            };
            let _ = writeln!(
                out,
                "{:>4}x{:<4} {:>6} {:>10.1} {:>14}",
                t.side,
                t.side,
                t.side * t.side,
                t.median_secs * 1e6,
                ratio
            );
        }
        out
    }
}

/// Median-of-`repeats` wall time of the fast forward transform on square
/// grids, after two warmup runs. Plans and buffers are set up outside the
/// timed region; each run copies the input and transforms it in place.
pub fn bench_dct(sides: &[usize], repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(DsmError::InvalidArgument("repeats must be at least 1".into()));
    }
    if sides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DsmError::InvalidArgument("sizes must be ascending".into()));
    }
    let mut timings = Vec::with_capacity(sides.len());
    for &side in sides {
        let plan = DctPlan::new(side, side)?;
        let grid = random_grid(side, side as u64)?;
        let mut buf = vec![0.0; grid.data().len()];
        let samples = time_runs(repeats, || {
            buf.copy_from_slice(grid.data());
            plan.forward_in_place(&mut buf);
            Ok(())
        })?;
        timings.push(Timing {
            side,
            median_secs: median(&samples),
            samples,
        });
    }
    Ok(BenchReport { timings })
}

/// Median time of [`naive_dct2`] on one square grid.
pub fn bench_naive(side: usize, repeats: usize) -> Result<f64> {
    let grid = random_grid(side, side as u64)?;
    let samples = time_runs(repeats.max(1), || {
        naive_dct2(&grid);
        Ok(())
    })?;
    Ok(median(&samples))
}

/// One trained configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `dynamic`, `allpass`, `random`, or `l=<bands>`.
    pub config: String,
    pub mode: MaskMode,
    pub spectrum_length: SpectrumLength,
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub steps: u64,
    pub wall_secs: f64,
    /// Weights-generator multiply-adds per image over the whole network.
    pub dswg_mul_adds: u64,
    /// CRC32 of the freshly initialized training state.
    pub init_hash: u32,
}

impl AblationRow {
    pub fn record(&self) -> String {
        format!("config={} seed={} acc={:.4}", self.config, self.seed, self.test_acc)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Distinct configurations in first-seen order.
    pub fn configs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.config) {
                out.push(r.config.clone());
            }
        }
        out
    }

    pub fn mean_test_acc(&self, config: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.config == config)
            .map(|r| r.test_acc)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// One `config=<string> seed=<u64> acc=<float>` line per row.
    pub fn records(&self) -> String {
        self.rows.iter().map(|r| r.record() + "\n").collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::from(
            "config        seed  train_acc  test_acc  steps  dswg_madds   wall_s\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>10.2} {:>9.2} {:>6} {:>11} {:>8.1}",
                r.config, r.seed, r.train_acc, r.test_acc, r.steps, r.dswg_mul_adds, r.wall_secs
            );
        }
        out.push_str("\nconfig       mean_test_acc\n");
        for c in self.configs() {
            let _ = writeln!(out, "{:<12} {:>13.2}", c, self.mean_test_acc(&c).unwrap_or(f64::NAN));
        }
        out
    }
}

fn train_one(cfg: &RunConfig, label: String) -> Result<AblationRow> {
    cfg.validate()?;
    let (train, test) = cfg.datasets()?;
    let mut trainer = Trainer::new(cfg.model.clone(), cfg.train.clone(), train.len())?;
    let init_hash = crc32fast::hash(&encode_checkpoint(&trainer.to_checkpoint(""))?);
    let dswg_mul_adds = count_params_flops(&cfg.model)?
        .entries
        .iter()
        .flat_map(|e| &e.blocks)
        .map(|b| b.dswg)
        .sum();
    let start = Instant::now();
    let outcome = trainer.fit(&train, &test, Default::default())?;
    let wall_secs = start.elapsed().as_secs_f64();
    let test_acc = match outcome.last_epoch {
        Some(e) => e.test.acc,
        None => trainer.evaluate(&test)?.acc,
    };
    Ok(AblationRow {
        config: label,
        mode: cfg.model.mask_mode,
        spectrum_length: cfg.model.spectrum_length,
        seed: cfg.train.seed,
        train_acc: trainer.evaluate(&train)?.acc,
        test_acc,
        steps: trainer.step(),
        wall_secs,
        dswg_mul_adds,
        init_hash,
    })
}

/// Trains one model per (mode, seed) that differ only in mask mode. Models
/// sharing a seed must start from bit-identical parameters.
pub fn run_ablation(cfg: &RunConfig, modes: &[MaskMode], seeds: &[u64]) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &seed in seeds {
        let mut first_hash = None;
        for &mode in modes {
            let mut c = cfg.clone();
            c.train.seed = seed;
            c.model.mask_mode = mode;
            let row = train_one(&c, mode.to_string())?;
            match first_hash {
                None => first_hash = Some(row.init_hash),
                Some(h) if h != row.init_hash => {
                    return Err(DsmError::InvalidState(format!(
                        "mode {mode} changed the initial parameters for seed {seed}"
                    )))
                }
                _ => {}
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// Trains one dynamic-mask model per (l, seed).
pub fn sweep_spectrum_length(cfg: &RunConfig, lengths: &[usize], seeds: &[u64]) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &l in lengths {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.train.seed = seed;
            c.model.mask_mode = MaskMode::Dynamic;
            c.model.spectrum_length = SpectrumLength::Bands(l);
            report.rows.push(train_one(&c, format!("l={l}"))?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{dct2, idct2};

    #[test]
    fn naive_constant_grid_is_dc_only() {
        let x = SpectrumGrid::filled(4, 4, 1.0, Domain::Spatial).unwrap();
        let y = naive_dct2(&x);
        assert!((y.get(0, 0) - 4.0).abs() < 1e-12);
        assert!(y.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn naive_single_cell_is_identity() {
        let x = SpectrumGrid::new(1, 1, vec![-2.5], Domain::Spatial).unwrap();
        assert_eq!(naive_dct2(&x).data(), &[-2.5]);
    }

    #[test]
    fn naive_matches_fast_on_odd_rectangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..13 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = SpectrumGrid::new(13, 7, data, Domain::Spatial).unwrap();
        let plan = DctPlan::new(13, 7).unwrap();
        let fast = dct2(&plan, &x).unwrap();
        let slow = naive_dct2(&x);
        let err: f64 = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / slow.norm() < 1e-10);
        let back = idct2(&plan, &slow).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn bench_reports_every_size() {
        let report = bench_dct(&[4, 8, 16], 3).unwrap();
        assert_eq!(report.timings.len(), 3);
        assert!(report.timings.iter().all(|t| t.samples.len() == 3 && t.median_secs > 0.0));
        assert!(report.ratio(4, 16).unwrap() > 0.0);
        assert_eq!(report.table().lines().count(), 4);
        assert!(bench_dct(&[8, 4], 3).is_err());
        assert!(bench_dct(&[8], 0).is_err());
    }

    fn toy() -> RunConfig {
        let text = "variant = dsm-s-desk\nimage_height = 8\nimage_width = 8\npatch_size = 2\n\
                    depths = 1\nwidths = 4\nspectrum_length = 4\ndswg_hidden = 4\nmlp_ratio = 1\n\
                    num_classes = 2\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 8\n\
                    train_size = 16\ntest_size = 8\n";
        RunConfig::parse(text, &[]).unwrap()
    }

    #[test]
    fn ablation_rows_cover_modes_and_seeds() {
        let report = run_ablation(&toy(), &MaskMode::ALL, &[3, 4]).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.configs(), vec!["dynamic", "allpass", "random"]);
        for seed in [3, 4] {
            let hashes: Vec<u32> = report
                .rows
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| r.init_hash)
                .collect();
            assert!(hashes.iter().all(|&h| h == hashes[0]));
        }
        let r = &report.rows[0];
        assert!((0.0..=100.0).contains(&r.test_acc) && (0.0..=100.0).contains(&r.train_acc));
        assert_eq!(r.steps, 4);
        assert!(report.rows[1].dswg_mul_adds == 0 && r.dswg_mul_adds > 0);
        assert!(report.records().lines().all(|l| l.starts_with("config=")));
        assert_eq!(report.records().lines().next().unwrap().split(' ').count(), 3);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run_ablation(&toy(), &[MaskMode::Dynamic], &[1]).unwrap();
        let b = run_ablation(&toy(), &[MaskMode::Dynamic], &[1]).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.rows[0].train_acc, b.rows[0].train_acc);
    }

    #[test]
    fn sweep_labels_and_costs() {
        let report = sweep_spectrum_length(&toy(), &[1, 2, 4], &[0]).unwrap();
        assert_eq!(report.configs(), vec!["l=1", "l=2", "l=4"]);
        let c: Vec<u64> = report.rows.iter().map(|r| r.dswg_mul_adds).collect();
        assert_eq!(c[2] - c[1], 2 * (c[1] - c[0]));
    }
}
