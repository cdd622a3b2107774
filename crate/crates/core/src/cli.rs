//! The `dsm` command line: configuration loading and command dispatch.
//!
//! Every command except `config` writes `resolved-config.txt` to `out_dir`;
//! passing that file back with `-c` replays the run exactly.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};

use crate::bench::{bench_dct, bench_naive, run_ablation, sweep_spectrum_length, AblationReport};
use crate::config::{RunConfig, KEYS};
use crate::error::{DsmError, Result};
use crate::fsutil::write_atomic;
use crate::model::Model;
use crate::spectral::dump::{ascii_heatmap, write_spectrum};
use crate::spectral::{dct2, DctPlan, Domain, SpectrumGrid};
use crate::train::{
    evaluate, load_checkpoint, load_params, parse_idx_images, save_checkpoint, FitOptions, Trainer,
};

pub const RESOLVED_CONFIG: &str = "resolved-config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.dsmc";
pub const METRICS_LOG: &str = "metrics.log";

/// Largest heatmap side printed by `spectrum`.
const HEATMAP_SIDE: usize = 64;
/// `bench` also times the direct transform up to this side.
const NAIVE_MAX_SIDE: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "dsm", version, about = "Spectral token-mixing networks at desk scale")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(short = 'c', long = "config", global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, writing checkpoints and a metrics log to `out_dir`.
    Train {
        /// Continue from a checkpoint; its stored configuration is used.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Print the test accuracy of a checkpoint.
    Eval { checkpoint: PathBuf },
    /// Time the fast 2D DCT over `bench_sizes`.
    Bench,
    /// Compare mask modes over `modes` and `seeds`.
    Ablate,
    /// Train one model per value in `spectrum_lengths`.
    Sweep,
    /// Dump the DCT spectrum of an image (PNG/PGM) or of one IDX entry.
    Spectrum {
        input: PathBuf,
        /// Entry to read from an IDX image file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output path; defaults to `<out_dir>/<input stem>.dsmf`.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// List every key with its resolved value and meaning.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// Training stopped early on request; a checkpoint was written.
    Interrupted,
}

/// Names the file in I/O errors.
fn in_file(path: &Path) -> impl Fn(DsmError) -> DsmError + '_ {
    move |e| match e {
        DsmError::Io(io) => DsmError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::from_file(path, &cli.set),
        None => RunConfig::parse("", &cli.set),
    }
}

/// Configuration stored inside a checkpoint, with `--set` overrides.
fn checkpoint_config(cli: &Cli, text: &str) -> Result<RunConfig> {
    if cli.config.is_some() {
        return Err(DsmError::Config(
            "`--config` cannot be combined with a checkpoint; it carries its own".into(),
        ));
    }
    RunConfig::parse(text, &cli.set)
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())
}

/// Runs one command, printing results to `out`. `stop` interrupts training.
pub fn run(cli: &Cli, stop: &AtomicBool, out: &mut dyn Write) -> Result<Outcome> {
    match &cli.command {
        Command::Train { resume } => train(cli, resume.as_deref(), stop, out),
        Command::Eval { checkpoint } => {
            let ck = load_checkpoint(checkpoint).map_err(in_file(checkpoint))?;
            let cfg = checkpoint_config(cli, &ck.config_text)?;
            prepare_out_dir(&cfg)?;
            let (_, test) = cfg.datasets()?;
            let model = Model::new(cfg.model.clone())?;
            let params = load_params(&model, &ck)?;
            let stats = evaluate(&model, &params, &test, cfg.train.batch_size)?;
            let step = ck.require("train/step").map_or(0.0, |t| t.data[0]);
            writeln!(
                out,
                "step={} test_loss={:.6} acc={:.4}",
                step as u64, stats.loss, stats.acc
            )?;
            Ok(Outcome::Completed)
        }
        Command::Bench => {
            let cfg = load_config(cli)?;
            prepare_out_dir(&cfg)?;
            let report = bench_dct(&cfg.bench_sizes, cfg.bench_repeats)?;
            let mut text = report.table();
            for t in report.timings.iter().filter(|t| t.side <= NAIVE_MAX_SIDE) {
                let naive = bench_naive(t.side, 1)?;
                text.push_str(&format!(
                    "direct sum {0}x{0}: {1:.1} us ({2:.0}x slower)\n",
                    t.side,
                    naive * 1e6,
                    naive / t.median_secs
                ));
            }
            out.write_all(text.as_bytes())?;
            write_atomic(&cfg.out_dir.join("bench.txt"), text.as_bytes())?;
            Ok(Outcome::Completed)
        }
        Command::Ablate => {
            let cfg = load_config(cli)?;
            prepare_out_dir(&cfg)?;
            let report = run_ablation(&cfg, &cfg.modes, &cfg.seeds)?;
            emit_report(&cfg, "ablation", &report, out)
        }
        Command::Sweep => {
            let cfg = load_config(cli)?;
            prepare_out_dir(&cfg)?;
            let report = sweep_spectrum_length(&cfg, &cfg.spectrum_lengths, &cfg.seeds)?;
            emit_report(&cfg, "sweep", &report, out)
        }
        Command::Spectrum { input, index, out: path } => {
            let cfg = load_config(cli)?;
            prepare_out_dir(&cfg)?;
            let image = read_image(input, *index)?;
            let plan = DctPlan::new(image.height(), image.width())?;
            let spectrum = dct2(&plan, &image)?;
            let target = match path {
                Some(p) => p.clone(),
                None => {
                    let stem = input.file_stem().map_or("spectrum".into(), |s| s.to_string_lossy());
                    cfg.out_dir.join(format!("{stem}.dsmf"))
                }
            };
            let mut bytes = Vec::new();
            write_spectrum(&mut bytes, &spectrum)?;
            write_atomic(&target, &bytes)?;
            writeln!(
                out,
                "{}x{} spectrum written to {}",
                spectrum.height(),
                spectrum.width(),
                target.display()
            )?;
            out.write_all(ascii_heatmap(&spectrum, HEATMAP_SIDE).as_bytes())?;
            Ok(Outcome::Completed)
        }
        Command::Config => {
            let cfg = load_config(cli)?;
            let text = cfg.to_text();
            for (line, (_, about)) in text.lines().zip(KEYS) {
                writeln!(out, "{line:<40} # {about}")?;
            }
            Ok(Outcome::Completed)
        }
    }
}

fn emit_report(cfg: &RunConfig, name: &str, report: &AblationReport, out: &mut dyn Write) -> Result<Outcome> {
    let table = report.table();
    let records = report.records();
    out.write_all(table.as_bytes())?;
    out.write_all(records.as_bytes())?;
    write_atomic(&cfg.out_dir.join(format!("{name}.txt")), table.as_bytes())?;
    write_atomic(&cfg.out_dir.join(format!("{name}-records.txt")), records.as_bytes())?;
    Ok(Outcome::Completed)
}

fn train(cli: &Cli, resume: Option<&Path>, stop: &AtomicBool, out: &mut dyn Write) -> Result<Outcome> {
    let (cfg, resumed) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path).map_err(in_file(path))?;
            (checkpoint_config(cli, &ck.config_text)?, Some(ck))
        }
        None => (load_config(cli)?, None),
    };
    prepare_out_dir(&cfg)?;
    let (train_set, test_set) = cfg.datasets()?;
    let mut trainer = match &resumed {
        Some(ck) => Trainer::from_checkpoint(cfg.model.clone(), cfg.train.clone(), train_set.len(), ck)?,
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), train_set.len())?,
    };
    let config_text = cfg.to_text();
    let ck_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let log_file = if resumed.is_some() {
        OpenOptions::new().create(true).append(true).open(cfg.out_dir.join(METRICS_LOG))?
    } else {
        File::create(cfg.out_dir.join(METRICS_LOG))?
    };
    let mut log = Tee {
        file: BufWriter::new(log_file),
        echo: out,
    };
    let every = cfg.checkpoint_every as u64;
    let mut on_epoch = |t: &Trainer, e: &crate::train::EpochStats| -> Result<()> {
        if every > 0 && e.epoch.is_multiple_of(every) {
            save_checkpoint(&ck_path, &t.to_checkpoint(&config_text))?;
        }
        Ok(())
    };
    let outcome = trainer.fit(
        &train_set,
        &test_set,
        FitOptions {
            log: Some(&mut log),
            stop: Some(stop),
            until_step: None,
            on_epoch: Some(&mut on_epoch),
        },
    )?;
    save_checkpoint(&ck_path, &trainer.to_checkpoint(&config_text))?;
    log.flush()?;
    if outcome.interrupted {
        writeln!(
            log.echo,
            "interrupted at step {}; checkpoint written to {}",
            trainer.step(),
            ck_path.display()
        )?;
        return Ok(Outcome::Interrupted);
    }
    Ok(Outcome::Completed)
}

/// Writes metrics to the log file and echoes them.
struct Tee<'a> {
    file: BufWriter<File>,
    echo: &'a mut dyn Write,
}

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.file.write_all(buf)?;
        self.echo.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.file.flush()?;
        self.echo.flush()
    }
}

const IDX_IMAGE_MAGIC: [u8; 4] = [0, 0, 8, 3];

/// Grayscale pixels in `[0, 1]` from an IDX image file or a PNG/PNM image.
pub fn read_image(path: &Path, index: usize) -> Result<SpectrumGrid> {
    let bytes = fs::read(path).map_err(|e| in_file(path)(e.into()))?;
    if bytes.starts_with(&IDX_IMAGE_MAGIC) {
        let (n, rows, cols, pixels) = parse_idx_images(&bytes)?;
        if index >= n {
            return Err(DsmError::InvalidArgument(format!(
                "index {index} out of range for {n} images"
            )));
        }
        let size = rows * cols;
        return SpectrumGrid::new(rows, cols, pixels[index * size..(index + 1) * size].to_vec(), Domain::Spatial);
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| DsmError::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    SpectrumGrid::new(h as usize, w as usize, data, Domain::Spatial)
}
