//! Post-training measurements: reconstruction, latent statistics, mode
//! coverage, interpolation, and the optimal-discriminator oracle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::{sample_prior, DatasetSpec};
use crate::ndnum::{streams, Feeds, Graph, Rng, Tensor};
use crate::nets::{Activation, MlpParams, NetError, NetSpec};
use crate::ortho::{self, OrthoError};
use crate::trainer::{rmsprop_step, Checkpoint, OptState, RmsProp, TrainError};

/// Minimum share of generated samples for a mode to count as covered.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.01;
/// Members must lie within this many mode standard deviations of the center.
pub const DEFAULT_COVERAGE_SIGMAS: f64 = 3.0;
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn normalize_rows(codes: &Tensor) -> Result<Tensor, EvalError> {
    let eps = ortho::DEFAULT_EPS as f32;
    let mut data = Vec::with_capacity(codes.len());
    for r in 0..codes.rows() {
        data.extend(ortho::normalize(codes.row(r), eps)?);
    }
    Ok(Tensor::new(codes.shape().to_vec(), data).expect("same shape"))
}

/// `x̂ = G(𝒩(E(x)))`.
pub fn reconstruction(encoder: &MlpParams, generator: &MlpParams, x: &Tensor) -> Result<Tensor, EvalError> {
    let codes = encoder.forward(x)?;
    Ok(generator.forward(&normalize_rows(&codes)?)?)
}

/// Euclidean `‖xᵢ − x̂ᵢ‖` per row.
pub fn reconstruction_distances(
    encoder: &MlpParams,
    generator: &MlpParams,
    x: &Tensor,
) -> Result<Vec<f64>, EvalError> {
    let x_hat = reconstruction(encoder, generator, x)?;
    Ok((0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(x_hat.row(r))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean over `m` prior draws of `ρ(z, E(G(z)))`.
pub fn recon_rho(encoder: &MlpParams, generator: &MlpParams, rng: &mut Rng, m: usize) -> Result<f64, EvalError> {
    if m < 100 {
        return Err(EvalError::Invalid(format!("recon_rho needs at least 100 draws, got {m}")));
    }
    let z = sample_prior(rng, m, generator.input_dim());
    let codes = encoder.forward(&generator.forward(&z)?)?;
    let eps = ortho::DEFAULT_EPS;
    let mut total = 0.0;
    for r in 0..m {
        let zr: Vec<f64> = z.row(r).iter().map(|&v| v.into()).collect();
        let cr: Vec<f64> = codes.row(r).iter().map(|&v| v.into()).collect();
        total += ortho::pearson(&zr, &cr, eps)?;
    }
    Ok(total / m as f64)
}

/// `(mean of avg(E(xᵢ)), mean of std(E(xᵢ)))` over the rows of `x`.
pub fn latent_stats(encoder: &MlpParams, x: &Tensor) -> Result<(f64, f64), EvalError> {
    if x.rows() == 0 {
        return Err(EvalError::Invalid("latent_stats needs a non-empty dataset".into()));
    }
    let codes = encoder.forward(x)?;
    let (mut sa, mut ss) = (0.0, 0.0);
    for r in 0..codes.rows() {
        let row: Vec<f64> = codes.row(r).iter().map(|&v| v.into()).collect();
        sa += ortho::avg(&row)?;
        ss += ortho::std(&row)?;
    }
    let n = codes.rows() as f64;
    Ok((sa / n, ss / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub covered: usize,
    /// Share of all samples that fall within the radius of each mode.
    pub fractions: Vec<f64>,
}

/// Assigns each 2-D point to its nearest center; a point within
/// `sigmas · std` of that center is a member. A mode is covered when its
/// members make up at least `threshold` of all points.
pub fn coverage_of_points(
    points: &Tensor,
    centers: &[[f64; 2]],
    std: f64,
    threshold: f64,
    sigmas: f64,
) -> Result<Coverage, EvalError> {
    if points.shape().len() != 2 || points.cols() != 2 {
        return Err(EvalError::Invalid(format!(
            "mode coverage needs 2-D points, got shape {:?}",
            points.shape()
        )));
    }
    let radius = sigmas * std;
    let mut counts = vec![0usize; centers.len()];
    for r in 0..points.rows() {
        let p = points.row(r);
        let (best, dist) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (f64::from(p[0]) - c[0]).hypot(f64::from(p[1]) - c[1])))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if dist <= radius {
            counts[best] += 1;
        }
    }
    let n = points.rows().max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    Ok(Coverage {
        covered: fractions.iter().filter(|&&f| f >= threshold).count(),
        fractions,
    })
}

/// Coverage of `m` generator samples against a labeled mixture.
pub fn mode_coverage(
    generator: &MlpParams,
    spec: &DatasetSpec,
    rng: &mut Rng,
    m: usize,
    threshold: f64,
    sigmas: f64,
) -> Result<Coverage, EvalError> {
    let (centers, std) = match spec {
        DatasetSpec::GaussianMixture { modes, std } => (crate::data::mixture_centers(*modes), *std),
        other => {
            return Err(EvalError::Invalid(format!(
                "mode coverage needs a labeled mixture, got {other:?}"
            )))
        }
    };
    if m < 1000 {
        return Err(EvalError::Invalid(format!("mode coverage needs at least 1000 samples, got {m}")));
    }
    let z = sample_prior(rng, m, generator.input_dim());
    coverage_of_points(&generator.forward(&z)?, &centers, std, threshold, sigmas)
}

/// Codes `(1−t)·𝒩(E(x_a)) + t·𝒩(E(x_b))` for `steps` values of `t` evenly
/// spaced over `[0, 1]`, decoded by `G`. Rows of the result follow `t`.
pub fn interpolate(
    encoder: &MlpParams,
    generator: &MlpParams,
    x_a: &[f32],
    x_b: &[f32],
    steps: usize,
) -> Result<Tensor, EvalError> {
    if steps < 2 {
        return Err(EvalError::Invalid(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let pair = Tensor::from_rows(&[x_a.to_vec(), x_b.to_vec()])
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let codes = normalize_rows(&encoder.forward(&pair)?)?;
    let (ca, cb) = (codes.row(0), codes.row(1));
    let mut data = Vec::with_capacity(steps * ca.len());
    for s in 0..steps {
        let t = if s == steps - 1 { 1.0 } else { s as f32 / (steps - 1) as f32 };
        data.extend(ca.iter().zip(cb).map(|(&a, &b)| (1.0 - t) * a + t * b));
    }
    let path = Tensor::new(vec![steps, ca.len()], data).expect("shape matches data");
    Ok(generator.forward(&path)?)
}

/// Largest Euclidean distance between consecutive rows.
pub fn max_step(path: &Tensor) -> f64 {
    (1..path.rows())
        .map(|r| {
            path.row(r - 1)
                .iter()
                .zip(path.row(r))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

// ---- optimal discriminator oracle ----

/// One-dimensional Gaussian with closed-form log density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1 {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian1 {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let u = (x - self.mean) / self.std;
        -0.5 * u * u - self.std.ln() - 0.5 * (std::f64::consts::TAU).ln()
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Tensor {
        let data = (0..n).map(|_| (self.mean + self.std * rng.normal()) as f32).collect();
        Tensor::new(vec![n, 1], data).expect("shape matches data")
    }
}

/// `n` points evenly spaced over `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRatioCheck {
    pub correlation: f64,
    /// Set when either side is constant over the grid; `correlation` is 0.
    pub degenerate: bool,
}

/// Pearson correlation between `d(x)` and `log p(x) − log q(x)` over `grid`.
pub fn density_ratio_check(
    d: impl Fn(f64) -> f64,
    p: Gaussian1,
    q: Gaussian1,
    grid: &[f64],
) -> DensityRatioCheck {
    let scores: Vec<f64> = grid.iter().map(|&x| d(x)).collect();
    let truth: Vec<f64> = grid.iter().map(|&x| p.log_pdf(x) - q.log_pdf(x)).collect();
    let spread = |v: &[f64]| ortho::std(v).unwrap_or(0.0);
    if grid.is_empty() || spread(&scores) < 1e-12 || spread(&truth) < 1e-12 {
        return DensityRatioCheck {
            correlation: 0.0,
            degenerate: true,
        };
    }
    DensityRatioCheck {
        correlation: ortho::pearson(&scores, &truth, 0.0).unwrap_or(0.0),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub p: Gaussian1,
    pub q: Gaussian1,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub rms: RmsProp,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p: Gaussian1 { mean: 0.0, std: 1.0 },
            q: Gaussian1 { mean: 0.5, std: 1.0 },
            hidden: vec![32, 32],
            steps: 5000,
            batch_size: 128,
            rms: RmsProp {
                lr: 1e-3,
                decay: 0.99,
                eps: 1e-8,
            },
            seed: 0,
        }
    }
}

/// Trains a scalar discriminator `D: ℝ → ℝ` on the softplus objective
/// `mean[sp(−D(x_p)) + sp(D(x_q))]` with the fake side frozen at `q`.
pub fn train_oracle_discriminator(cfg: &OracleConfig) -> Result<MlpParams, EvalError> {
    let root = Rng::new(cfg.seed);
    let mut spec = NetSpec::encoder(1, 1, &cfg.hidden);
    spec.output_activation = Activation::Linear;
    let mut d = spec.build(&mut root.fork(streams::INIT))?;
    let mut opt = OptState::zeros_like(d.named_tensors("D"));
    let mut rng = root.fork(streams::DATA);
    let b = cfg.batch_size;

    let mut g = Graph::new();
    let mut feeds = Feeds::new();
    let bound = d.bind(&mut g, "D", &mut feeds);
    let real = g.leaf("real", &[b, 1]);
    let fake = g.leaf("fake", &[b, 1]);
    let d_real = bound.apply(&mut g, real);
    let d_fake = bound.apply(&mut g, fake);
    let neg = g.neg(d_real);
    let sp_real = g.softplus(neg);
    let sp_fake = g.softplus(d_fake);
    let both = g.add(sp_real, sp_fake);
    let loss = g.mean(both);

    for _ in 0..cfg.steps {
        for (name, t) in d.named_tensors("D") {
            feeds.insert(name, t.clone());
        }
        feeds.insert("real".into(), cfg.p.sample(&mut rng, b));
        feeds.insert("fake".into(), cfg.q.sample(&mut rng, b));
        g.forward(loss, &feeds).map_err(|e| EvalError::Invalid(e.to_string()))?;
        let grads = g.backward(loss).map_err(|e| EvalError::Invalid(e.to_string()))?;
        rmsprop_step(d.named_tensors_mut("D"), &grads, &mut opt, cfg.rms)?;
    }
    Ok(d)
}

/// Scalar evaluation of a `1 → 1` network.
pub fn scalar_fn(net: &MlpParams) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let t = Tensor::new(vec![1, 1], vec![x as f32]).expect("1×1");
        f64::from(net.forward(&t).expect("1-D network").data()[0])
    }
}

// ---- report ----

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iteration: u64,
    pub recon_rho: f64,
    pub latent_avg: f64,
    pub latent_std: f64,
    pub modes_covered: Option<usize>,
    pub coverage_fractions: Vec<f64>,
    pub density_ratio_corr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub threshold: f64,
    pub sigmas: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_EVAL_SAMPLES,
            threshold: DEFAULT_COVERAGE_THRESHOLD,
            sigmas: DEFAULT_COVERAGE_SIGMAS,
        }
    }
}

/// Evaluates a checkpoint on fresh draws from a stream derived from its
/// seed, so repeated evaluation gives identical reports.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, opts: EvalOptions) -> Result<EvalReport, EvalError> {
    let nets = &ckpt.nets;
    let dataset = crate::data::Dataset::open(ckpt.config.dataset_spec()?)
        .map_err(TrainError::from)?;
    let mut rng = Rng::new(ckpt.config.seed).fork(streams::EVAL);
    let rho = recon_rho(&nets.encoder, &nets.generator, &mut rng, opts.samples)?;
    let x = match dataset.rows() {
        Some(rows) => rows.clone(),
        None => dataset.sample(&mut rng, opts.samples).x,
    };
    let (latent_avg, latent_std) = latent_stats(&nets.encoder, &x)?;
    let coverage = match dataset.spec() {
        spec @ DatasetSpec::GaussianMixture { .. } => Some(mode_coverage(
            &nets.generator,
            spec,
            &mut rng,
            opts.samples,
            opts.threshold,
            opts.sigmas,
        )?),
        _ => None,
    };
    Ok(EvalReport {
        iteration: ckpt.iteration,
        recon_rho: rho,
        latent_avg,
        latent_std,
        modes_covered: coverage.as_ref().map(|c| c.covered),
        coverage_fractions: coverage.map(|c| c.fractions).unwrap_or_default(),
        density_ratio_corr: None,
    })
}

impl EvalReport {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("iteration", self.iteration.to_string()),
            ("recon_rho", self.recon_rho.to_string()),
            ("latent_avg", self.latent_avg.to_string()),
            ("latent_std", self.latent_std.to_string()),
        ];
        if let Some(m) = self.modes_covered {
            out.push(("modes_covered", m.to_string()));
            out.push(("modes_total", self.coverage_fractions.len().to_string()));
            let fr: Vec<String> = self.coverage_fractions.iter().map(f64::to_string).collect();
            out.push(("coverage_fractions", fr.join(";")));
        }
        if let Some(c) = self.density_ratio_corr {
            out.push(("density_ratio_corr", c.to_string()));
        }
        out
    }

    /// One `key=value` per line.
    pub fn to_kv_text(&self) -> String {
        self.pairs().iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }

    /// `#eval,key=value,...`: a comment-style row for the metrics CSV.
    pub fn to_metrics_annotation(&self) -> String {
        let body: Vec<String> = self.pairs().iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("#eval,{}", body.join(","))
    }
}

/// Appends the report's annotation row to a metrics CSV, replacing any
/// earlier annotation so repeated evaluation leaves the same file.
pub fn annotate_metrics(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = fs::read_to_string(path).map_err(io)?;
    let mut out: String = text
        .lines()
        .filter(|l| !l.starts_with("#eval,"))
        .fold(String::new(), |mut s, l| {
            let _ = writeln!(s, "{l}");
            s
        });
    let _ = writeln!(out, "{}", report.to_metrics_annotation());
    crate::trainer::atomic_write(path, out.as_bytes())?;
    Ok(())
}
