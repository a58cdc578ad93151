//! Alternating optimization: one encoder step, then one generator step,
//! both with RMSprop. Checkpoints and metrics are written under the run's
//! output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_prior, DataError, Dataset, DatasetSpec};
use crate::ndnum::{streams, Gradients, Rng, Tensor};
use crate::nets::{NetError, NetSpec};
use crate::objectives::{
    build_losses, Nets, ObjectiveError, ObjectiveKind, ObjectiveVariant, ENC_PREFIX, GEN_PREFIX,
    HEAD_PREFIX,
};

pub const METRICS_HEADER: &str = "iter,loss_E,loss_G,rho,score_real,score_fake,std_code_real";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ogan";

const CKPT_MAGIC: &[u8; 4] = b"OGAN";
pub const CKPT_VERSION: u32 = 1;
const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite gradient for `{name}`")]
    NonFiniteGradient { name: String },
    #[error("non-finite loss at iteration {iteration} ({detail}); last good checkpoint: {}",
        last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    NonFiniteLoss {
        iteration: u64,
        detail: String,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic, expected \"OGAN\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated checkpoint ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("checkpoint does not match its config: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Flat run configuration, read from and written to JSON. Unknown keys are
/// rejected; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: ObjectiveKind,
    /// `None` means `0.25 / n_x`.
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    pub eps_r: f64,
    pub n_z: usize,
    pub gen_hidden: Vec<usize>,
    pub enc_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Draw a new latent batch for the generator step instead of reusing
    /// the encoder step's.
    pub fresh_z_for_g: bool,
    pub seed: u64,
    pub dataset: String,
    pub modes: usize,
    pub data_std: f64,
    pub cells: usize,
    pub data_path: Option<PathBuf>,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: ObjectiveKind::OganSimplest,
            lambda1: None,
            lambda2: 0.5,
            eps_r: 1e-8,
            n_z: 8,
            gen_hidden: vec![64, 64],
            enc_hidden: vec![64, 64],
            head_hidden: vec![64],
            batch_size: 128,
            iterations: 10_000,
            learning_rate: 1e-4,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            fresh_z_for_g: true,
            seed: 42,
            dataset: "gaussian-mixture".into(),
            modes: 8,
            data_std: 0.05,
            cells: 4,
            data_path: None,
            log_every: 100,
            checkpoint_every: 1000,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            TrainError::Config(m) => TrainError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, TrainError> {
        let spec = match self.dataset.as_str() {
            "gaussian-mixture" => DatasetSpec::GaussianMixture {
                modes: self.modes,
                std: self.data_std,
            },
            "ring" => DatasetSpec::Ring { std: self.data_std },
            "checkerboard" => DatasetSpec::Checkerboard { cells: self.cells },
            "binary-image-file" => DatasetSpec::BinaryImageFile {
                path: self.data_path.clone().ok_or_else(|| {
                    TrainError::Config("dataset binary-image-file needs data_path".into())
                })?,
            },
            other => {
                return Err(TrainError::Config(format!(
                    "unknown dataset `{other}` (gaussian-mixture, ring, checkerboard, binary-image-file)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn variant(&self, n_x: usize) -> ObjectiveVariant {
        let mut v = ObjectiveVariant::defaults(self.variant, n_x);
        if let Some(l1) = self.lambda1 {
            v.lambda1 = l1;
        }
        v.lambda2 = self.lambda2;
        v.eps_r = self.eps_r;
        v
    }

    pub fn net_specs(&self, n_x: usize) -> (NetSpec, NetSpec, Option<NetSpec>) {
        let head = self
            .variant
            .uses_score_head()
            .then(|| NetSpec::encoder(self.n_z, 1, &self.head_hidden));
        (
            NetSpec::generator(self.n_z, n_x, &self.gen_hidden),
            NetSpec::encoder(n_x, self.n_z, &self.enc_hidden),
            head,
        )
    }

    pub fn rmsprop(&self) -> RmsProp {
        RmsProp {
            lr: self.learning_rate,
            decay: self.rms_decay,
            eps: self.rms_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return fail(format!("rms_decay must lie in (0, 1), got {}", self.rms_decay));
        }
        if self.rms_eps.is_nan() || self.rms_eps < 0.0 {
            return fail(format!("rms_eps must be non-negative, got {}", self.rms_eps));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.n_z == 0 {
            return fail("n_z must be positive".into());
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        if self.gen_hidden.is_empty() || self.enc_hidden.is_empty() {
            return fail("gen_hidden and enc_hidden need at least one layer".into());
        }
        if self.variant.uses_score_head() && self.head_hidden.is_empty() {
            return fail("head_hidden needs at least one layer".into());
        }
        self.dataset_spec()?;
        self.variant(2)
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

/// Squared-gradient accumulators keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub acc: BTreeMap<String, Tensor>,
    pub step: u64,
}

impl OptState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = (String, &'a Tensor)>) -> Self {
        Self {
            acc: params
                .into_iter()
                .map(|(name, t)| (name, Tensor::zeros(t.shape())))
                .collect(),
            step: 0,
        }
    }
}

/// `acc ← decay·acc + (1−decay)·g²; p ← p − lr·g/(√acc + eps)`.
///
/// All gradients are checked before any parameter moves. A parameter the
/// root does not reach gets a zero gradient.
pub fn rmsprop_step(
    params: Vec<(String, &mut Tensor)>,
    grads: &Gradients,
    opt: &mut OptState,
    hp: RmsProp,
) -> Result<(), TrainError> {
    let mut pairs = Vec::with_capacity(params.len());
    for (name, p) in params {
        let g = grads.leaf(&name);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(TrainError::ShapeMismatch(format!(
                    "gradient {:?} for `{name}` {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient { name });
            }
        }
        match opt.acc.get(&name) {
            Some(a) if a.shape() == p.shape() => {}
            _ => {
                return Err(TrainError::ShapeMismatch(format!(
                    "no accumulator shaped {:?} for `{name}`",
                    p.shape()
                )))
            }
        }
        pairs.push((name, p, g));
    }
    let (lr, decay, eps) = (hp.lr as f32, hp.decay as f32, hp.eps as f32);
    for (name, p, g) in pairs {
        let acc = opt.acc.get_mut(&name).expect("checked above");
        let params = p.data_mut();
        let accs = acc.data_mut();
        match g {
            Some(g) => {
                for ((p, a), &g) in params.iter_mut().zip(accs.iter_mut()).zip(g.data()) {
                    *a = decay * *a + (1.0 - decay) * g * g;
                    *p -= lr * g / (a.sqrt() + eps);
                }
            }
            None => accs.iter_mut().for_each(|a| *a *= decay),
        }
    }
    opt.step += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptStates {
    pub generator: OptState,
    pub encoder: OptState,
    pub score_head: Option<OptState>,
}

impl OptStates {
    pub fn for_nets(nets: &Nets) -> Self {
        Self {
            generator: OptState::zeros_like(nets.generator.named_tensors(GEN_PREFIX)),
            encoder: OptState::zeros_like(nets.encoder.named_tensors(ENC_PREFIX)),
            score_head: nets
                .score_head
                .as_ref()
                .map(|t| OptState::zeros_like(t.named_tensors(HEAD_PREFIX))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub loss_e: f32,
    pub loss_g: f32,
    pub rho: f32,
    pub score_real: f32,
    pub score_fake: f32,
    pub std_code_real: f32,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            self.loss_e,
            self.loss_g,
            self.rho,
            self.score_real,
            self.score_fake,
            self.std_code_real
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: Rng,
    pub nets: Nets,
    pub opt: OptStates,
}

/// Live training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    dataset: Dataset,
    variant: ObjectiveVariant,
    nets: Nets,
    opt: OptStates,
    iteration: u64,
    rng: Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let dataset = Dataset::open(config.dataset_spec()?)?;
        let n_x = dataset.dim();
        let root = Rng::new(config.seed);
        let mut init = root.fork(streams::INIT);
        let (gs, es, ts) = config.net_specs(n_x);
        let nets = Nets {
            generator: gs.build(&mut init)?,
            encoder: es.build(&mut init)?,
            score_head: ts.map(|t| t.build(&mut init)).transpose()?,
        };
        let opt = OptStates::for_nets(&nets);
        Ok(Self {
            variant: config.variant(n_x),
            config,
            dataset,
            nets,
            opt,
            iteration: 0,
            rng: root.fork(streams::DATA),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        let dataset = Dataset::open(ckpt.config.dataset_spec()?)?;
        let n_x = dataset.dim();
        check_nets_against_config(&ckpt.nets, &ckpt.config, n_x)?;
        Ok(Self {
            variant: ckpt.config.variant(n_x),
            config: ckpt.config,
            dataset,
            nets: ckpt.nets,
            opt: ckpt.opt,
            iteration: ckpt.iteration,
            rng: ckpt.rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            rng: self.rng,
            nets: self.nets.clone(),
            opt: self.opt.clone(),
        }
    }

    /// Draws a data batch and latent batches, then runs
    /// [`Trainer::train_step_on`].
    pub fn train_step(&mut self) -> Result<MetricsRow, TrainError> {
        let b = self.config.batch_size;
        let x = self.dataset.sample(&mut self.rng, b).x;
        let z = sample_prior(&mut self.rng, b, self.config.n_z);
        let z_g = if self.config.fresh_z_for_g {
            sample_prior(&mut self.rng, b, self.config.n_z)
        } else {
            z.clone()
        };
        self.train_step_on(&x, &z, &z_g)
    }

    /// One encoder (and score head) update on `loss_E(x, z)`, then one
    /// generator update on `loss_G(x, z_g)` against the updated encoder.
    pub fn train_step_on(
        &mut self,
        x: &Tensor,
        z: &Tensor,
        z_g: &Tensor,
    ) -> Result<MetricsRow, TrainError> {
        let hp = self.config.rmsprop();
        let next = self.iteration + 1;
        let non_finite = |detail: String| TrainError::NonFiniteLoss {
            iteration: next,
            detail,
            last_checkpoint: None,
        };

        let diverged = |e: TrainError| match e {
            TrainError::NonFiniteGradient { name } => non_finite(format!("non-finite gradient for {name}")),
            other => other,
        };

        let mut bundle = build_losses(&self.nets, x, z, &self.variant)?;
        let (de, grads) = bundle.e_step().map_err(|e| non_finite(e.to_string()))?;
        if !de.loss.is_finite() {
            return Err(non_finite(format!("loss_E = {}", de.loss)));
        }
        rmsprop_step(
            self.nets.encoder.named_tensors_mut(ENC_PREFIX),
            &grads,
            &mut self.opt.encoder,
            hp,
        )
        .map_err(diverged)?;
        if let (Some(t), Some(o)) = (self.nets.score_head.as_mut(), self.opt.score_head.as_mut()) {
            rmsprop_step(t.named_tensors_mut(HEAD_PREFIX), &grads, o, hp).map_err(diverged)?;
        }

        let mut bundle = build_losses(&self.nets, x, z_g, &self.variant)?;
        let loss_g = bundle.eval(bundle.loss_g).map_err(|e| non_finite(e.to_string()))?;
        if !loss_g.is_finite() {
            return Err(non_finite(format!("loss_G = {loss_g}")));
        }
        let grads = bundle
            .graph
            .backward(bundle.loss_g)
            .map_err(|e| non_finite(e.to_string()))?;
        rmsprop_step(
            self.nets.generator.named_tensors_mut(GEN_PREFIX),
            &grads,
            &mut self.opt.generator,
            hp,
        )
        .map_err(diverged)?;

        self.iteration = next;
        Ok(MetricsRow {
            iter: next,
            loss_e: de.loss,
            loss_g,
            rho: de.rho,
            score_real: de.score_real,
            score_fake: de.score_fake,
            std_code_real: de.std_code_real,
        })
    }
}

fn check_nets_against_config(nets: &Nets, config: &TrainConfig, n_x: usize) -> Result<(), TrainError> {
    let (gs, es, ts) = config.net_specs(n_x);
    let dims = |spec: &NetSpec| {
        let mut d = vec![spec.input_dim];
        d.extend(&spec.hidden_dims);
        d.push(spec.output_dim);
        d
    };
    let actual = |p: &crate::nets::MlpParams| {
        let mut d = vec![p.input_dim()];
        d.extend(p.layers().iter().map(|l| l.weight.shape()[1]));
        d
    };
    let check = |name: &str, spec: &NetSpec, p: &crate::nets::MlpParams| {
        if dims(spec) != actual(p) {
            return Err(TrainError::ShapeMismatch(format!(
                "{name} has layer widths {:?}, config expects {:?}",
                actual(p),
                dims(spec)
            )));
        }
        Ok(())
    };
    check("generator", &gs, &nets.generator)?;
    check("encoder", &es, &nets.encoder)?;
    match (&ts, &nets.score_head) {
        (Some(spec), Some(p)) => check("score head", spec, p),
        (None, None) => Ok(()),
        (Some(_), None) => Err(TrainError::ShapeMismatch("score head missing".into())),
        (None, Some(_)) => Err(TrainError::ShapeMismatch("unexpected score head".into())),
    }
}

// ---- checkpoint encoding ----

fn named_state(ckpt: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out = ckpt.nets.generator.named_tensors(GEN_PREFIX);
    out.extend(ckpt.nets.encoder.named_tensors(ENC_PREFIX));
    if let Some(t) = &ckpt.nets.score_head {
        out.extend(t.named_tensors(HEAD_PREFIX));
    }
    let opts = [Some(&ckpt.opt.generator), Some(&ckpt.opt.encoder), ckpt.opt.score_head.as_ref()];
    for o in opts.into_iter().flatten() {
        out.extend(o.acc.iter().map(|(k, v)| (format!("{OPT_PREFIX}{k}"), v)));
    }
    out
}

/// Little-endian: magic, version, iteration, tensors, rng state, config JSON.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let tensors = named_state(ckpt);
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let (seed, counter) = ckpt.rng.state();
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&counter.to_le_bytes());
    let cfg = serde_json::to_string(&ckpt.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.pos < n {
            return Err(TrainError::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("needed {n} bytes for {what} at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, TrainError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, TrainError> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "magic").map_err(|_| TrainError::BadMagic {
        path: path.to_path_buf(),
    })?;
    if magic != CKPT_MAGIC {
        return Err(TrainError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(TrainError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let iteration = r.u64("iteration")?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| TrainError::Truncated {
                path: path.to_path_buf(),
                detail: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let ndim = r.u8("ndim")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).expect("product of dims matches");
        tensors.insert(name, t);
    }
    let seed = r.u64("rng seed")?;
    let counter = r.u64("rng counter")?;
    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?).map_err(|_| TrainError::Truncated {
        path: path.to_path_buf(),
        detail: "config is not UTF-8".into(),
    })?;
    if r.pos != bytes.len() {
        return Err(TrainError::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let config: TrainConfig =
        serde_json::from_str(cfg_text).map_err(|e| TrainError::Config(e.to_string()))?;
    let n_x = match config.dataset_spec()? {
        DatasetSpec::BinaryImageFile { .. } => tensors
            .get("E.0.w")
            .map(|t| t.shape()[0])
            .ok_or_else(|| TrainError::ShapeMismatch("missing E.0.w".into()))?,
        _ => 2,
    };
    let (gs, es, ts) = config.net_specs(n_x);
    let mut fill = |spec: &NetSpec, prefix: &str| -> Result<(crate::nets::MlpParams, OptState), TrainError> {
        let mut params = spec.build(&mut Rng::new(0))?;
        let mut acc = BTreeMap::new();
        for (name, slot) in params.named_tensors_mut(prefix) {
            let take = |tensors: &mut BTreeMap<String, Tensor>, key: &str| {
                let t = tensors
                    .remove(key)
                    .ok_or_else(|| TrainError::ShapeMismatch(format!("missing tensor `{key}`")))?;
                if t.shape() != slot.shape() {
                    return Err(TrainError::ShapeMismatch(format!(
                        "`{key}` is {:?}, config implies {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                Ok(t)
            };
            let value = take(&mut tensors, &name)?;
            let a = take(&mut tensors, &format!("{OPT_PREFIX}{name}"))?;
            *slot = value;
            acc.insert(name, a);
        }
        Ok((params, OptState { acc, step: iteration }))
    };
    let (generator, g_opt) = fill(&gs, GEN_PREFIX)?;
    let (encoder, e_opt) = fill(&es, ENC_PREFIX)?;
    let head = ts.map(|t| fill(&t, HEAD_PREFIX)).transpose()?;
    if let Some(extra) = tensors.keys().next() {
        return Err(TrainError::ShapeMismatch(format!("unexpected tensor `{extra}`")));
    }
    let (score_head, t_opt) = match head {
        Some((p, o)) => (Some(p), Some(o)),
        None => (None, None),
    };
    Ok(Checkpoint {
        config,
        iteration,
        rng: Rng::from_state(seed, counter),
        nets: Nets {
            generator,
            encoder,
            score_head,
        },
        opt: OptStates {
            generator: g_opt,
            encoder: e_opt,
            score_head: t_opt,
        },
    })
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    atomic_write(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, path)
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt-{iteration:08}.ogan")
}

// ---- loop ----

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub final_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Fresh run of `config.iterations` steps into `config.out_dir`.
pub fn train_loop(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let trainer = Trainer::new(config.clone())?;
    let out = config.out_dir.clone();
    run(trainer, &out, config.iterations, false)
}

/// Continues from `ckpt` up to `iterations` total steps in `out_dir`.
/// Metrics rows past the checkpoint's iteration are discarded first, so the
/// file ends up identical to an uninterrupted run.
pub fn resume_loop(ckpt: Checkpoint, iterations: u64, out_dir: &Path) -> Result<TrainOutcome, TrainError> {
    if iterations < ckpt.iteration {
        return Err(TrainError::Config(format!(
            "checkpoint is at iteration {}, beyond the requested {iterations}",
            ckpt.iteration
        )));
    }
    let trainer = Trainer::from_checkpoint(ckpt)?;
    run(trainer, out_dir, iterations, true)
}

fn prepare_metrics(path: &Path, resume_at: Option<u64>) -> Result<fs::File, TrainError> {
    let mut text = format!("{METRICS_HEADER}\n");
    if let Some(k) = resume_at {
        if let Ok(existing) = fs::read_to_string(path) {
            for line in existing.lines().skip(1) {
                match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
                    Some(iter) if iter <= k => {
                        let _ = writeln!(text, "{line}");
                    }
                    _ => {}
                }
            }
        }
    }
    atomic_write(path, text.as_bytes())?;
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn run(mut trainer: Trainer, out: &Path, iterations: u64, resume: bool) -> Result<TrainOutcome, TrainError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = prepare_metrics(&metrics_path, resume.then_some(trainer.iteration()))?;
    let (log_every, ckpt_every) = (trainer.config().log_every, trainer.config().checkpoint_every);
    let mut last_checkpoint = Some(out.join(checkpoint_name(trainer.iteration()))).filter(|p| p.exists());
    while trainer.iteration() < iterations {
        let row = trainer.train_step().map_err(|e| match e {
            TrainError::NonFiniteLoss {
                iteration, detail, ..
            } => TrainError::NonFiniteLoss {
                iteration,
                detail,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        if row.iter % log_every == 0 {
            writeln!(metrics, "{}", row.to_csv()).map_err(io_err(&metrics_path))?;
        }
        if ckpt_every > 0 && row.iter % ckpt_every == 0 {
            let p = out.join(checkpoint_name(row.iter));
            save_checkpoint(&trainer.checkpoint(), &p)?;
            last_checkpoint = Some(p);
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    let checkpoint = trainer.checkpoint();
    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &final_path)?;
    Ok(TrainOutcome {
        checkpoint,
        final_path,
        metrics_path,
    })
}
