//! `ogan` command line: train, evaluate, sample, reconstruct, interpolate,
//! plot, and gradient-check.
//!
//! Exit codes: 0 on success, 1 when a command fails at run time, 2 for
//! usage and configuration errors. Failures print one JSON line
//! `{"error": kind, "message": text}` on stderr.

pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{self, Dataset, DatasetSpec, ImageSet};
use crate::eval::{self, EvalOptions};
use crate::gradsuite;
use crate::ndnum::{streams, Rng, Tensor};
use crate::objectives::ObjectiveKind;
use crate::trainer::{self, Checkpoint, TrainConfig, TrainError};

#[derive(Debug, Parser)]
#[command(name = "ogan", version, about = "Orthogonal GAN training laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a JSON config; writes metrics.csv, checkpoints and config.json to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes eval.txt to --out and annotates --out/metrics.csv if present.
    Eval(EvalArgs),
    /// Draw generator samples to a .csv or .svg file.
    Sample(SampleArgs),
    /// Reconstruct data rows as G(N(E(x))) into a .csv, .svg or .oimg file.
    Reconstruct(ReconstructArgs),
    /// Decode a straight line between two normalized codes.
    Interpolate(InterpolateArgs),
    /// Plot every metric column of a metrics CSV as an SVG polyline.
    Plot(PlotArgs),
    /// Run the gradient-check suite over all primitives and losses.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's iteration count.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// vanilla | ogan | ogan-T | mse
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<ObjectiveKind>,
    /// Continue from this checkpoint instead of initializing fresh networks.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_EVAL_SAMPLES)]
    pub samples: usize,
    /// Minimum sample share for a mode to count as covered.
    #[arg(long, default_value_t = eval::DEFAULT_COVERAGE_THRESHOLD)]
    pub threshold: f64,
    /// Membership radius in mode standard deviations.
    #[arg(long, default_value_t = eval::DEFAULT_COVERAGE_SIGMAS)]
    pub sigmas: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(short = 'n', long = "count")]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Project samples onto their two leading principal axes before plotting.
    #[arg(long)]
    pub project: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// An OIMG image file or a CSV of rows.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub a: usize,
    #[arg(long)]
    pub b: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Rows to index with --a/--b; defaults to the checkpoint's dataset
    /// (1000 draws for synthetic sets).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = gradsuite::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_variant(s: &str) -> Result<ObjectiveKind, String> {
    ObjectiveKind::parse(s).ok_or_else(|| format!("unknown variant `{s}` (vanilla, ogan, ogan-T, mse)"))
}

/// A failed command: `usage` errors exit 2, the rest exit 1.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub usage: bool,
}

impl CliError {
    fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            usage: false,
        }
    }

    fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            usage: true,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            2
        } else {
            1
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::usage("config", e.to_string()),
            TrainError::Io { .. } => CliError::runtime("io", e.to_string()),
            TrainError::BadMagic { .. }
            | TrainError::UnsupportedVersion { .. }
            | TrainError::Truncated { .. }
            | TrainError::ShapeMismatch(_) => CliError::runtime("checkpoint", e.to_string()),
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => {
                CliError::runtime("diverged", e.to_string())
            }
            TrainError::Data(_) => CliError::usage("data", e.to_string()),
            TrainError::Net(_) | TrainError::Objective(_) => CliError::runtime("model", e.to_string()),
        }
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        match e {
            eval::EvalError::Train(t) => t.into(),
            eval::EvalError::Invalid(m) => CliError::usage("invalid", m),
            other => CliError::runtime("eval", other.to_string()),
        }
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        match e {
            data::DataError::Io { .. } => CliError::runtime("io", e.to_string()),
            other => CliError::usage("data", other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Output goes to `stdout`; errors to `stderr`.
pub fn run<I, T>(argv: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let err = CliError::usage("usage", first.trim_start_matches("error: "));
            let _ = writeln!(stderr, "{}", err.to_json_line());
            let _ = write!(stderr, "{}", e.render());
            return 2;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json_line());
            if err.usage {
                use clap::CommandFactory;
                let _ = write!(stderr, "{}", Cli::command().render_usage());
                let _ = writeln!(stderr);
            }
            err.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => evaluate(a, out),
        Command::Sample(a) => sample(a, out),
        Command::Reconstruct(a) => reconstruct(a, out),
        Command::Interpolate(a) => interpolate(a, out),
        Command::Plot(a) => plot(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn say(out: &mut dyn std::io::Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime("io", format!("{}: {e}", parent.display())))?;
    }
    trainer::atomic_write(path, bytes).map_err(CliError::from)
}

fn train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let outcome = if let Some(resume) = &a.resume {
        let ckpt = trainer::load_checkpoint(resume)?;
        let target = a.iterations.unwrap_or(ckpt.config.iterations);
        trainer::resume_loop(ckpt, target, &a.out)?
    } else {
        let mut config = TrainConfig::load(&a.config).map_err(|e| CliError::usage("config", e.to_string()))?;
        config.seed = a.seed;
        config.out_dir = a.out.clone();
        if let Some(n) = a.iterations {
            config.iterations = n;
        }
        if let Some(v) = a.variant {
            config.variant = v;
        }
        config.validate()?;
        fs::create_dir_all(&a.out).map_err(|e| CliError::runtime("io", format!("{}: {e}", a.out.display())))?;
        write_file(&a.out.join("config.json"), config.to_json().as_bytes())?;
        trainer::train_loop(&config)?
    };
    say(
        out,
        &format!(
            "iterations={} checkpoint={} metrics={}",
            outcome.checkpoint.iteration,
            outcome.final_path.display(),
            outcome.metrics_path.display()
        ),
    );
    Ok(())
}

fn evaluate(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let ckpt = trainer::load_checkpoint(&a.ckpt)?;
    let report = eval::evaluate_checkpoint(
        &ckpt,
        EvalOptions {
            samples: a.samples,
            threshold: a.threshold,
            sigmas: a.sigmas,
        },
    )?;
    let text = report.to_kv_text();
    write_file(&a.out.join("eval.txt"), text.as_bytes())?;
    let metrics = a.out.join(trainer::METRICS_FILE);
    if metrics.exists() {
        eval::annotate_metrics(&metrics, &report)?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Labels points by nearest mode center for mixtures, else all 0.
fn mode_labels(spec: &DatasetSpec, points: &Tensor) -> Vec<usize> {
    match spec.mode_centers() {
        Some(centers) if points.cols() == 2 => (0..points.rows())
            .map(|r| {
                let p = points.row(r);
                centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, (f64::from(p[0]) - c[0]).hypot(f64::from(p[1]) - c[1])))
                    .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                    .0
            })
            .collect(),
        _ => vec![0; points.rows()],
    }
}

fn to_csv(t: &Tensor) -> String {
    let mut s = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(f32::to_string).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn planar_points(t: &Tensor, project: bool) -> Result<Vec<[f64; 2]>, CliError> {
    let t = if project { principal_projection(t) } else { t.clone() };
    if t.cols() != 2 {
        return Err(CliError::usage(
            "not-2d",
            format!("scatter needs 2-D points, got {} columns; use `sample --project`", t.cols()),
        ));
    }
    Ok((0..t.rows()).map(|r| [t.row(r)[0].into(), t.row(r)[1].into()]).collect())
}

/// Projection onto the two leading principal axes (power iteration with
/// deflation on the sample covariance).
pub fn principal_projection(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    if d <= 2 || n == 0 {
        return x.clone();
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| f64::from(x.row(i)[j])).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = x.row(i);
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (f64::from(r[a]) - mean[a]) * (f64::from(r[b]) - mean[b]) / n as f64;
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for k in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 / (1.0 + (j + k) as f64)).collect();
        for _ in 0..200 {
            let mut w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a * d + b] * v[b]).sum()).collect();
            for u in &axes {
                let dot: f64 = w.iter().zip(u).map(|(p, q)| p * q).sum();
                w.iter_mut().zip(u).for_each(|(p, q)| *p -= dot * q);
            }
            let norm = w.iter().map(|p| p * p).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w.into_iter().map(|p| p / norm).collect();
        }
        axes.push(v);
    }
    let data = (0..n)
        .flat_map(|i| {
            let r = x.row(i);
            let centered: Vec<f64> = (0..d).map(|j| f64::from(r[j]) - mean[j]).collect();
            axes.iter()
                .map(|u| centered.iter().zip(u).map(|(p, q)| p * q).sum::<f64>() as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::new(vec![n, 2], data).expect("shape matches data")
}

fn load_ckpt_dataset(ckpt: &Checkpoint) -> Result<Dataset, CliError> {
    let spec = ckpt.config.dataset_spec()?;
    Ok(Dataset::open(spec)?)
}

fn sample(a: SampleArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let ckpt = trainer::load_checkpoint(&a.ckpt)?;
    let seed = a.seed.unwrap_or(ckpt.config.seed);
    let mut rng = Rng::new(seed).fork(streams::EVAL);
    let z = data::sample_prior(&mut rng, a.n, ckpt.config.n_z);
    let x = ckpt
        .nets
        .generator
        .forward(&z)
        .map_err(|e| CliError::runtime("model", e.to_string()))?;
    let spec = ckpt.config.dataset_spec()?;
    let bytes = if extension(&a.out) == "svg" {
        let labels = mode_labels(&spec, &x);
        svg::scatter(&planar_points(&x, a.project)?, &labels)
    } else if a.project {
        to_csv(&principal_projection(&x))
    } else {
        to_csv(&x)
    };
    write_file(&a.out, bytes.as_bytes())?;
    say(out, &format!("samples={} out={}", a.n, a.out.display()));
    Ok(())
}

/// Rows from an OIMG file (detected by magic) or a CSV of numbers. Lines
/// that are empty, start with `#`, or do not parse (a header) are skipped.
pub fn read_rows(path: &Path) -> Result<(Tensor, Option<ImageSet>), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"OIMG") {
        let set = data::decode_image_file(&bytes, path)?;
        return Ok((set.to_tensor(), Some(set)));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::usage("data", format!("{}: neither OIMG nor UTF-8 CSV", path.display())))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let parsed: Result<Vec<f32>, _> = line.split(',').map(|f| f.trim().parse::<f32>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if rows.is_empty() => continue,
            Err(_) => {
                return Err(CliError::usage("data", format!("{}: malformed row `{line}`", path.display())))
            }
        }
    }
    let t = Tensor::from_rows(&rows).map_err(|e| CliError::usage("data", format!("{}: {e}", path.display())))?;
    Ok((t, None))
}

fn check_width(t: &Tensor, expected: usize) -> Result<(), CliError> {
    if t.rows() == 0 || t.cols() != expected {
        return Err(CliError::usage(
            "data",
            format!("data has shape {:?}, the checkpoint expects rows of width {expected}", t.shape()),
        ));
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let ckpt = trainer::load_checkpoint(&a.ckpt)?;
    let (x, image) = read_rows(&a.data)?;
    check_width(&x, ckpt.nets.encoder.input_dim())?;
    let x_hat = eval::reconstruction(&ckpt.nets.encoder, &ckpt.nets.generator, &x)?;
    let bytes = match extension(&a.out).as_str() {
        "svg" => {
            let mut pts = planar_points(&x, false)?;
            pts.extend(planar_points(&x_hat, false)?);
            let labels: Vec<usize> = (0..pts.len()).map(|i| usize::from(i >= x.rows())).collect();
            svg::scatter(&pts, &labels).into_bytes()
        }
        "oimg" => {
            let set = image.ok_or_else(|| CliError::usage("data", "OIMG output needs OIMG input"))?;
            data::encode_image_file(&ImageSet::from_tensor(&x_hat, set.height, set.width, set.channels)?)
        }
        _ => to_csv(&x_hat).into_bytes(),
    };
    write_file(&a.out, &bytes)?;
    say(out, &format!("rows={} out={}", x.rows(), a.out.display()));
    Ok(())
}

fn interpolate(a: InterpolateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let ckpt = trainer::load_checkpoint(&a.ckpt)?;
    let rows = match &a.data {
        Some(p) => read_rows(p)?.0,
        None => {
            let ds = load_ckpt_dataset(&ckpt)?;
            match ds.rows() {
                Some(r) => r.clone(),
                None => ds.sample(&mut Rng::new(ckpt.config.seed).fork(streams::EVAL), 1000).x,
            }
        }
    };
    check_width(&rows, ckpt.nets.encoder.input_dim())?;
    for idx in [a.a, a.b] {
        if idx >= rows.rows() {
            return Err(CliError::usage("index", format!("row {idx} out of range for {} rows", rows.rows())));
        }
    }
    let path = eval::interpolate(&ckpt.nets.encoder, &ckpt.nets.generator, rows.row(a.a), rows.row(a.b), a.steps)?;
    let bytes = if extension(&a.out) == "svg" {
        let mut pts = planar_points(&path, false)?;
        pts.push([rows.row(a.a)[0].into(), rows.row(a.a)[1].into()]);
        pts.push([rows.row(a.b)[0].into(), rows.row(a.b)[1].into()]);
        let labels: Vec<usize> = (0..pts.len()).map(|i| usize::from(i >= path.rows())).collect();
        svg::scatter(&pts, &labels)
    } else {
        to_csv(&path)
    };
    write_file(&a.out, bytes.as_bytes())?;
    say(
        out,
        &format!("steps={} max_step={} out={}", a.steps, eval::max_step(&path), a.out.display()),
    );
    Ok(())
}

/// Named metric columns, in file order.
pub type MetricSeries = Vec<(String, Vec<f64>)>;

/// `(iters, [(column, values)])` from a metrics CSV, skipping annotations.
pub fn read_metrics(path: &Path) -> Result<(Vec<f64>, MetricSeries), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::usage("metrics", format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(CliError::usage("metrics", format!("{}: header has no metric columns", path.display())));
    }
    let mut iters = Vec::new();
    let mut cols = vec![Vec::new(); header.len() - 1];
    for line in lines {
        let fields: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let fields = fields
            .ok()
            .filter(|f| f.len() == header.len())
            .ok_or_else(|| CliError::usage("metrics", format!("{}: malformed row `{line}`", path.display())))?;
        iters.push(fields[0]);
        for (c, v) in cols.iter_mut().zip(&fields[1..]) {
            c.push(*v);
        }
    }
    Ok((iters, header[1..].iter().cloned().zip(cols).collect()))
}

fn plot(a: PlotArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let (iters, series) = read_metrics(&a.metrics)?;
    write_file(&a.out, svg::curves(&iters, &series).as_bytes())?;
    say(out, &format!("series={} rows={} out={}", series.len(), iters.len(), a.out.display()));
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let entries = gradsuite::full_suite(a.seed, a.tolerance)
        .map_err(|e| CliError::runtime("gradcheck", e.to_string()))?;
    let mut worst = 0.0f64;
    let mut failed = 0;
    for e in &entries {
        worst = worst.max(e.report.max_rel_err);
        if !e.report.pass {
            failed += 1;
        }
        say(
            out,
            &format!(
                "{} {} max_rel_err={:.3e}",
                if e.report.pass { "ok  " } else { "FAIL" },
                e.check,
                e.report.max_rel_err
            ),
        );
    }
    say(
        out,
        &format!("checks={} failed={failed} max_rel_err={worst:.3e} tolerance={:e}", entries.len(), a.tolerance),
    );
    if failed > 0 {
        return Err(CliError::runtime(
            "gradcheck",
            format!("{failed} of {} checks exceeded tolerance {}", entries.len(), a.tolerance),
        ));
    }
    Ok(())
}
