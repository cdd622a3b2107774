use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;

use clap::Parser;
use dsm_core::cli::{self, Cli, Outcome, CHECKPOINT_FILE, METRICS_LOG, RESOLVED_CONFIG};
use dsm_core::spectral::dump::read_spectrum;
use dsm_core::DsmError;

const SMALL: &str = "
image_height = 8
image_width = 8
patch_size = 2
depths = 1
widths = 8
spectrum_length = 4
dswg_hidden = 8
num_classes = 4
train_size = 64
test_size = 32
batch_size = 16
epochs = 2
warmup_epochs = 0
seeds = 0,1
";

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{SMALL}out_dir = {}\n", dir.join("out").display())).unwrap();
    path.display().to_string()
}

fn invoke(args: &[&str], stop: bool) -> (dsm_core::Result<Outcome>, String) {
    let cli = Cli::try_parse_from(std::iter::once("dsm").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    let result = cli::run(&cli, &AtomicBool::new(stop), &mut out);
    (result, String::from_utf8(out).unwrap())
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .unwrap()
}

#[test]
fn eval_reproduces_final_logged_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (r, printed) = invoke(&["-c", &cfg, "train"], false);
    assert_eq!(r.unwrap(), Outcome::Completed);
    let out = dir.path().join("out");
    let log = fs::read_to_string(out.join(METRICS_LOG)).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert_eq!(printed, log);
    let last = log.lines().last().unwrap();

    let ck = out.join(CHECKPOINT_FILE);
    let (r, eval) = invoke(&["eval", ck.to_str().unwrap()], false);
    r.unwrap();
    assert_eq!(field(&eval, "step"), field(last, "step"));
    assert_eq!(field(&eval, "acc"), field(last, "acc"));
}

#[test]
fn resolved_config_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    invoke(&["-c", &cfg, "train"], false).0.unwrap();
    let out = dir.path().join("out");
    let first = fs::read_to_string(out.join(METRICS_LOG)).unwrap();
    let resolved = out.join(RESOLVED_CONFIG);
    let copy = dir.path().join("replay.cfg");
    fs::copy(&resolved, &copy).unwrap();
    invoke(&["-c", copy.to_str().unwrap(), "train"], false).0.unwrap();
    assert_eq!(fs::read_to_string(out.join(METRICS_LOG)).unwrap(), first);
}

#[test]
fn stop_flag_interrupts_with_checkpoint_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    invoke(&["-c", &cfg, "train"], false).0.unwrap();
    let uninterrupted = fs::read_to_string(out.join(METRICS_LOG)).unwrap();

    let (r, printed) = invoke(&["-c", &cfg, "train"], true);
    assert_eq!(r.unwrap(), Outcome::Interrupted);
    assert!(printed.contains("interrupted at step 0"), "{printed}");
    let ck = out.join(CHECKPOINT_FILE);
    assert!(ck.exists());

    let (r, _) = invoke(&["train", "--resume", ck.to_str().unwrap()], false);
    assert_eq!(r.unwrap(), Outcome::Completed);
    assert_eq!(fs::read_to_string(out.join(METRICS_LOG)).unwrap(), uninterrupted);
}

#[test]
fn resume_rejects_a_second_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    invoke(&["-c", &cfg, "train", "--set", "epochs=1"], false).0.unwrap();
    let ck = dir.path().join("out").join(CHECKPOINT_FILE);
    let (r, _) = invoke(&["-c", &cfg, "train", "--resume", ck.to_str().unwrap()], false);
    assert!(matches!(r, Err(DsmError::Config(_))));
}

#[test]
fn ablate_reports_one_row_per_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (r, _) = invoke(&["-c", &cfg, "--set", "epochs=1", "ablate"], false);
    r.unwrap();
    let records = fs::read_to_string(dir.path().join("out").join("ablation-records.txt")).unwrap();
    let lines: Vec<&str> = records.lines().collect();
    assert_eq!(lines.len(), 6);
    for mode in ["dynamic", "allpass", "random"] {
        assert_eq!(lines.iter().filter(|l| l.contains(&format!("config={mode} "))).count(), 2);
    }
}

#[test]
fn spectrum_of_constant_image_has_one_hot_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let img = dir.path().join("flat.pgm");
    let mut bytes = b"P5 8 8 255\n".to_vec();
    bytes.extend(std::iter::repeat_n(200u8, 64));
    fs::write(&img, bytes).unwrap();
    let (r, printed) = invoke(&["-c", &cfg, "spectrum", img.to_str().unwrap()], false);
    r.unwrap();
    assert!(printed.starts_with("8x8 spectrum written to"));

    let dumped = fs::File::open(dir.path().join("out").join("flat.dsmf")).unwrap();
    let grid = read_spectrum(dumped).unwrap();
    let expected_dc = 200.0 / 255.0 * 8.0;
    assert!((grid.get(0, 0) - expected_dc).abs() < 1e-9);
    let rest: f64 = grid.data()[1..].iter().map(|v| v.abs()).sum();
    assert!(rest < 1e-9);
    let heat: String = printed.lines().skip(1).collect();
    assert_eq!(heat.chars().filter(|c| *c != ' ').count(), 1);
}

#[test]
fn config_errors_name_the_key() {
    let (r, _) = invoke(&["--set", "spectrum_length=0", "config"], false);
    let msg = r.unwrap_err().to_string();
    assert!(msg.contains("spectrum_length"), "{msg}");

    let (r, _) = invoke(&["--set", "no_such_key=1", "config"], false);
    assert!(matches!(r, Err(DsmError::Config(_))));

    let (r, _) = invoke(&["-c", "/nonexistent/run.cfg", "config"], false);
    assert!(r.unwrap_err().to_string().contains("/nonexistent/run.cfg"));
}

#[test]
fn config_lists_every_key() {
    let (r, printed) = invoke(&["config"], false);
    r.unwrap();
    assert_eq!(printed.lines().count(), dsm_core::config::KEYS.len());
    assert!(printed.lines().all(|l| l.contains(" # ")));
}
