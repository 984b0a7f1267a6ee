//! Command-line front end.
//!
//! Exit codes: 0 success, 1 selfcheck failure, 2 usage error, 3 I/O error,
//! 4 shape or compatibility error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::cdp::{measure, MaskSet, OperatorMode};
use crate::datakit::{load_dataset, load_pgm, save_pgm, write_atomic, write_synth_dataset, Split};
use crate::error::Error;
use crate::field::{is_power_of_two, RealImage};
use crate::metrics::{psnr, quality, QualityReport};
use crate::net::forward::reconstruct;
use crate::net::params::{NetConfig, NetParams};
use crate::rng::{streams, SeededRng};
use crate::selfcheck::{run_checks, Fault};
use crate::train::{
    checkpoint_load, checkpoint_save, evaluate, format_log, train_with, AdamState, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "learned-cdp",
    version,
    about = "Coded-diffraction phase retrieval with a learned measurement operator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (PGM images plus manifest).
    GenData(GenDataArgs),
    /// Train the unrolled network and write a checkpoint and CSV log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure one image and reconstruct it with a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Run the built-in numerical checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    /// Image size as HxW; both sides must be powers of two.
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long)]
    seed: u64,
    /// Comma-separated noise levels, each one of 0, 9, 27, 81.
    #[arg(long, value_delimiter = ',', default_value = "9,27,81")]
    alphas: Vec<f64>,
    /// Train or test masks; the two use disjoint mask seeds.
    #[arg(long, default_value = "train")]
    split: Split,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long = "K", default_value_t = 7)]
    stages: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "structured")]
    mode: OperatorMode,
    #[arg(long)]
    tie_adjoint: bool,
    /// One operator for all stages instead of one per stage.
    #[arg(long)]
    share_operator: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Validation dataset scored after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    /// CSV log path; defaults to the checkpoint path with `.csv` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write 0 in the seconds column so identical runs give identical logs.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Score the ground truth against itself instead of reconstructing.
    #[arg(long)]
    bypass: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long)]
    quick: bool,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("expected HxW, got '{s}'"))
    };
    let (h, w) = (parse(h)?, parse(w)?);
    if !is_power_of_two(h) || !is_power_of_two(w) {
        return Err(format!("{h}x{w}: both sides must be a power of two"));
    }
    Ok((h, w))
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::UnsupportedFormat(_) => EXIT_IO,
        Error::Dimension(_) | Error::State(_) | Error::UnsupportedVersion { .. } => EXIT_SHAPE,
        Error::Argument(_) => EXIT_USAGE,
        Error::Record { source, .. } => exit_code(source),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Selfcheck(a) => selfcheck_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<i32, Failure> {
    let (h, w) = a.size;
    let m = write_synth_dataset(&a.out, a.count, h, w, a.seed, &a.alphas, a.split)?;
    println!(
        "wrote {} images of {h}x{w} with {} masks to {}",
        m.records.len(),
        m.mask_count,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn require_dir(path: &Path) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_IO,
            format!("data directory {} does not exist", path.display()),
        ))
    }
}

fn train_cmd(a: TrainArgs) -> Result<i32, Failure> {
    require_dir(&a.data)?;
    let (manifest, train_set) = load_dataset(&a.data)?;
    let val_set = match &a.val {
        Some(dir) => {
            require_dir(dir)?;
            load_dataset(dir)?.1
        }
        None => Vec::new(),
    };
    let net = NetConfig::new(manifest.height, manifest.width)
        .with_stages(a.stages)
        .with_channels(a.channels)
        .with_mask_count(manifest.mask_count)
        .with_mode(a.mode)
        .with_tied_adjoint(a.tie_adjoint)
        .with_shared_operator(a.share_operator);
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: a.seed,
        threads: a.threads,
        record_timing: !a.no_timing,
        ..TrainConfig::new(net.clone())
    };
    config.validate()?;
    let params = NetParams::init(net, a.seed)?;
    let adam = AdamState::new(&params, a.lr);
    let outcome = if a.epochs == 0 {
        crate::train::TrainOutcome {
            params,
            adam,
            history: Vec::new(),
        }
    } else {
        train_with(params, adam, &train_set, &val_set, &config, |r| {
            println!(
                "epoch {:>3}  lr {:.3e}  loss {:.6}  val_psnr {:.3}  val_ssim {:.4}",
                r.epoch, r.lr, r.train_loss, r.val_psnr, r.val_ssim
            );
        })?
    };
    checkpoint_save(&a.out, &outcome.params, &outcome.adam)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".csv");
        PathBuf::from(p)
    });
    write_atomic(&log_path, format_log(&outcome.history).as_bytes())?;
    println!(
        "saved checkpoint {} and log {}",
        a.out.display(),
        log_path.display()
    );
    Ok(EXIT_OK)
}

fn shape_mismatch(ckpt: &NetConfig, h: usize, w: usize, masks: usize) -> Failure {
    Failure::new(
        EXIT_SHAPE,
        format!(
            "checkpoint expects {}x{} images with {} masks, data is {h}x{w} with {masks} masks",
            ckpt.height, ckpt.width, ckpt.mask_count
        ),
    )
}

fn eval_cmd(a: EvalArgs) -> Result<i32, Failure> {
    let ckpt = checkpoint_load(&a.ckpt)?;
    require_dir(&a.data)?;
    let (manifest, samples) = load_dataset(&a.data)?;
    if samples.is_empty() {
        return Err(Failure::new(
            EXIT_IO,
            format!("dataset {} has no samples", a.data.display()),
        ));
    }
    let cfg = ckpt.params.config();
    if (manifest.height, manifest.width, manifest.mask_count)
        != (cfg.height, cfg.width, cfg.mask_count)
    {
        return Err(shape_mismatch(
            cfg,
            manifest.height,
            manifest.width,
            manifest.mask_count,
        ));
    }
    let reports: Vec<QualityReport> = if a.bypass {
        samples
            .iter()
            .map(|s| quality(&s.image, &s.image))
            .collect::<Result<_, _>>()?
    } else {
        evaluate(&ckpt.params, &samples)?
    };
    let mut csv = String::from("name,alpha,psnr,ssim\n");
    for (s, r) in samples.iter().zip(&reports) {
        let row = format!("{},{},{},{}", s.name, s.measurement.alpha(), r.psnr, r.ssim);
        println!("{row}");
        let _ = writeln!(csv, "{row}");
    }
    let n = reports.len() as f64;
    let mean_psnr = reports.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = reports.iter().map(|r| r.ssim).sum::<f64>() / n;
    println!("mean,{mean_psnr},{mean_ssim}");
    if let Some(path) = &a.csv {
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<i32, Failure> {
    let ckpt = checkpoint_load(&a.ckpt)?;
    let image = load_pgm(&a.input)?;
    let cfg = ckpt.params.config();
    let (h, w) = image.shape();
    if (h, w) != (cfg.height, cfg.width) {
        return Err(shape_mismatch(cfg, h, w, cfg.mask_count));
    }
    let masks = Arc::new(MaskSet::from_seed(
        Split::Test.mask_seed(a.seed),
        cfg.mask_count,
        h,
        w,
    )?);
    let y = measure(
        &image,
        &masks,
        a.alpha,
        &mut SeededRng::named(a.seed, streams::NOISE, 0),
    )?;
    let mut x: RealImage = reconstruct(&y, &masks, &ckpt.params, None)?;
    x.clamp_unit();
    save_pgm(&x, &a.out)?;
    println!(
        "wrote {} (psnr vs input {:.3} dB)",
        a.out.display(),
        psnr(&x, &image)?
    );
    Ok(EXIT_OK)
}

fn selfcheck_cmd(a: SelfcheckArgs) -> Result<i32, Failure> {
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("adjoint") => Some(Fault::Adjoint),
        Some(other) => {
            return Err(Failure::new(EXIT_USAGE, format!("unknown fault '{other}'")));
        }
    };
    let results = run_checks(a.quick, fault)?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<28} {:<4} error {:.3e}  threshold {:.1e}",
            r.name, status, r.error, r.threshold
        );
        if !r.passed() {
            failed.push(r.name.as_str());
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(EXIT_OK)
    } else {
        println!("failed: {}", failed.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("32x64").unwrap(), (32, 64));
        assert!(parse_size("100x100").unwrap_err().contains("power of two"));
        assert!(parse_size("32").is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::arg("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::dim("x")), EXIT_SHAPE);
        assert_eq!(
            exit_code(&Error::Record {
                index: 0,
                source: Box::new(Error::io("a", std::io::Error::other("b")))
            }),
            EXIT_IO
        );
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["learned-cdp", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["learned-cdp", "selfcheck", "--nope"]), EXIT_USAGE);
        assert_eq!(run(["learned-cdp", "--help"]), EXIT_OK);
    }
}
