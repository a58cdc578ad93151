//! Loss graphs for the alternating E/G (or T∘E/G) problems.
//!
//! Every builder returns a [`LossBundle`]: one graph holding both roots. The
//! E-side root reads `G(z)` through a detach node, so its gradient never
//! reaches G's parameters; the G-side root reads the live `G(z)`.
//!
//! With `f(t) = h(t) = t` and `g(t) = −t` the O-GAN objective is
//!
//! ```text
//! loss_E = mean[s(x) − s(G(z))] + λ₁·R − λ₂·ρ̄
//! loss_G = mean[s(G(z))]        − λ₂·ρ̄
//! ```
//!
//! where `s` is the score (`avg(E(·))` or `T(E(·))`), `ρ̄` the batch mean of
//! per-row `ρ(z, E(G(z)))` and `R` the pairwise score-difference regularizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndnum::{Feeds, Gradients, Graph, GraphError, NodeId, Tensor};
use crate::nets::MlpParams;
use crate::ortho;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Softplus GAN with `D = T∘E`.
    #[serde(rename = "vanilla")]
    Vanilla,
    /// O-GAN with an explicit score head `T`.
    #[serde(rename = "ogan-T")]
    OganWithT,
    /// O-GAN scoring with `avg(E(x))`.
    #[serde(rename = "ogan")]
    OganSimplest,
    /// The simplest O-GAN with `‖z − E(G(z))‖²/n_z` in place of `−ρ`.
    #[serde(rename = "mse")]
    AblationMse,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Vanilla => "vanilla",
            ObjectiveKind::OganWithT => "ogan-T",
            ObjectiveKind::OganSimplest => "ogan",
            ObjectiveKind::AblationMse => "mse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Vanilla, Self::OganWithT, Self::OganSimplest, Self::AblationMse]
            .into_iter()
            .find(|k| k.name() == s)
    }

    pub fn uses_score_head(self) -> bool {
        matches!(self, ObjectiveKind::Vanilla | ObjectiveKind::OganWithT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVariant {
    pub kind: ObjectiveKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps_r: f64,
}

impl ObjectiveVariant {
    /// λ₁ = 0.25 / n_x, λ₂ = 0.5, eps_R = 1e-8.
    pub fn defaults(kind: ObjectiveKind, n_x: usize) -> Self {
        Self {
            kind,
            lambda1: 0.25 / n_x as f64,
            lambda2: 0.5,
            eps_r: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.eps_r >= 0.0) {
            return Err(ObjectiveError::InvalidVariant(format!(
                "weights must be non-negative: λ₁={} λ₂={} eps_R={}",
                self.lambda1, self.lambda2, self.eps_r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("invalid objective variant: {0}")]
    InvalidVariant(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Generator, encoder and (for `vanilla` / `ogan-T`) score head.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub generator: MlpParams,
    pub encoder: MlpParams,
    pub score_head: Option<MlpParams>,
}

pub const GEN_PREFIX: &str = "G";
pub const ENC_PREFIX: &str = "E";
pub const HEAD_PREFIX: &str = "T";

/// Diagnostic nodes; each is a scalar evaluated alongside `loss_E`.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticNodes {
    pub score_real: NodeId,
    pub score_fake: NodeId,
    pub rho: NodeId,
    pub reg: Option<NodeId>,
    pub std_code_real: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub loss: f32,
    pub score_real: f32,
    pub score_fake: f32,
    pub rho: f32,
    pub reg: Option<f32>,
    pub std_code_real: f32,
}

pub struct LossBundle {
    pub graph: Graph,
    pub feeds: Feeds,
    pub loss_e: NodeId,
    pub loss_g: NodeId,
    pub diagnostics: DiagnosticNodes,
}

impl LossBundle {
    fn diag_roots(&self, root: NodeId) -> Vec<NodeId> {
        let d = self.diagnostics;
        let mut roots = vec![root, d.score_real, d.score_fake, d.rho, d.std_code_real];
        roots.extend(d.reg);
        roots
    }

    fn scalar(&self, id: NodeId) -> f32 {
        self.graph.value(id).and_then(Tensor::item).expect("evaluated scalar")
    }

    fn run(&mut self, root: NodeId) -> Result<(Diagnostics, Gradients), ObjectiveError> {
        let roots = self.diag_roots(root);
        self.graph.forward_many(&roots, &self.feeds)?;
        let grads = self.graph.backward(root)?;
        let d = self.diagnostics;
        let diag = Diagnostics {
            loss: self.scalar(root),
            score_real: self.scalar(d.score_real),
            score_fake: self.scalar(d.score_fake),
            rho: self.scalar(d.rho),
            reg: d.reg.map(|r| self.scalar(r)),
            std_code_real: self.scalar(d.std_code_real),
        };
        Ok((diag, grads))
    }

    /// Forward + backward of `loss_E` with diagnostics.
    pub fn e_step(&mut self) -> Result<(Diagnostics, Gradients), ObjectiveError> {
        self.run(self.loss_e)
    }

    /// Forward + backward of `loss_G` with diagnostics.
    pub fn g_step(&mut self) -> Result<(Diagnostics, Gradients), ObjectiveError> {
        self.run(self.loss_g)
    }

    pub fn eval(&mut self, node: NodeId) -> Result<f32, ObjectiveError> {
        let v = self.graph.forward(node, &self.feeds)?;
        v.item()
            .ok_or_else(|| ObjectiveError::Shape(format!("node is not scalar: {:?}", v.shape())))
    }
}

/// `ρ̄`: batch mean of per-row Pearson correlations, a scalar node.
pub fn rho_term(g: &mut Graph, z: NodeId, codes: NodeId) -> NodeId {
    let rows = ortho::row_pearson(g, z, codes, ortho::DEFAULT_EPS);
    g.mean(rows)
}

/// `R = mean_i (s_real,i − s_fake,i)² / (‖x_i − G(z_i)‖² + eps_R)`.
///
/// Scores are `[B × 1]`; `x` and `gx` are `[B × n_x]`.
pub fn regularizer_r(
    g: &mut Graph,
    score_real: NodeId,
    score_fake: NodeId,
    x: NodeId,
    gx: NodeId,
    eps_r: f64,
) -> NodeId {
    let ds = g.sub(score_real, score_fake);
    let num = g.square(ds);
    let dx = g.sub(x, gx);
    let dx2 = g.square(dx);
    let dist = g.sum_axis(dx2, 1);
    let denom = g.add_scalar(dist, eps_r);
    let ratio = g.div(num, denom);
    g.mean(ratio)
}

/// `mean_i ‖z_i − c_i‖² / n_z`.
pub fn mse_term(g: &mut Graph, z: NodeId, codes: NodeId) -> NodeId {
    let d = g.sub(z, codes);
    let sq = g.square(d);
    // mean over all B·n_z entries = (1/B) Σ_i ‖·‖² / n_z
    g.mean(sq)
}

fn check_batches(x: &Tensor, z: &Tensor, nets: &Nets) -> Result<(), ObjectiveError> {
    let (nx, nz) = (nets.encoder.input_dim(), nets.encoder.output_dim());
    if x.shape().len() != 2 || z.shape().len() != 2 {
        return Err(ObjectiveError::Shape("batches must be rank 2".into()));
    }
    if x.rows() != z.rows() {
        return Err(ObjectiveError::Shape(format!(
            "x has {} rows but z has {}",
            x.rows(),
            z.rows()
        )));
    }
    if x.cols() != nx || nets.generator.output_dim() != nx {
        return Err(ObjectiveError::Shape(format!(
            "data width {} vs encoder input {} and generator output {}",
            x.cols(),
            nx,
            nets.generator.output_dim()
        )));
    }
    if z.cols() != nets.generator.input_dim() {
        return Err(ObjectiveError::Shape(format!(
            "z width {} vs generator input {}",
            z.cols(),
            nets.generator.input_dim()
        )));
    }
    if let Some(t) = &nets.score_head {
        if t.input_dim() != nz || t.output_dim() != 1 {
            return Err(ObjectiveError::Shape(format!(
                "score head maps {} → {}, expected {nz} → 1",
                t.input_dim(),
                t.output_dim()
            )));
        }
    }
    Ok(())
}

enum Score {
    Avg,
    Head(crate::nets::BoundMlp),
}

impl Score {
    fn apply(&self, g: &mut Graph, codes: NodeId) -> NodeId {
        match self {
            Score::Avg => ortho::row_avg(g, codes),
            Score::Head(t) => t.apply(g, codes),
        }
    }
}

#[derive(Clone, Copy)]
enum Reconstruction {
    Correlation,
    Mse,
}

enum Adversarial {
    Softplus,
    Linear {
        lambda1: f64,
        lambda2: f64,
        eps_r: f64,
        recon: Reconstruction,
    },
}

fn build(
    nets: &Nets,
    x: &Tensor,
    z: &Tensor,
    head: bool,
    adversarial: Adversarial,
) -> Result<LossBundle, ObjectiveError> {
    check_batches(x, z, nets)?;
    let mut g = Graph::new();
    let mut feeds = Feeds::new();
    let gen = nets.generator.bind(&mut g, GEN_PREFIX, &mut feeds);
    let enc = nets.encoder.bind(&mut g, ENC_PREFIX, &mut feeds);
    let score = if head {
        let t = nets
            .score_head
            .as_ref()
            .ok_or_else(|| ObjectiveError::InvalidVariant("objective needs a score head T".into()))?;
        Score::Head(t.bind(&mut g, HEAD_PREFIX, &mut feeds))
    } else {
        Score::Avg
    };

    let xn = g.leaf("x", x.shape());
    let zn = g.leaf("z", z.shape());
    feeds.insert("x".into(), x.clone());
    feeds.insert("z".into(), z.clone());

    let fake = gen.apply(&mut g, zn);
    let fake_fixed = g.detach(fake);

    let code_real = enc.apply(&mut g, xn);
    let code_fake_fixed = enc.apply(&mut g, fake_fixed);
    let code_fake = enc.apply(&mut g, fake);

    let s_real = score.apply(&mut g, code_real);
    let s_fake_fixed = score.apply(&mut g, code_fake_fixed);
    let s_fake = score.apply(&mut g, code_fake);

    let score_real = g.mean(s_real);
    let score_fake = g.mean(s_fake_fixed);
    let rho_fixed = rho_term(&mut g, zn, code_fake_fixed);
    let std_code_real = {
        let sd = ortho::row_std(&mut g, code_real);
        g.mean(sd)
    };

    let (loss_e, loss_g, reg) = match adversarial {
        Adversarial::Softplus => {
            let neg_real = g.neg(s_real);
            let sp_real = g.softplus(neg_real);
            let sp_fake = g.softplus(s_fake_fixed);
            let both = g.add(sp_real, sp_fake);
            let loss_e = g.mean(both);
            let neg_fake = g.neg(s_fake);
            let sp_gen = g.softplus(neg_fake);
            let loss_g = g.mean(sp_gen);
            (loss_e, loss_g, None)
        }
        Adversarial::Linear {
            lambda1,
            lambda2,
            eps_r,
            recon,
        } => {
            let gap = g.sub(s_real, s_fake_fixed);
            let adv_e = g.mean(gap);
            let reg = regularizer_r(&mut g, s_real, s_fake_fixed, xn, fake_fixed, eps_r);
            let reg_w = g.scale(reg, lambda1);
            let with_reg = g.add(adv_e, reg_w);
            let adv_g = g.mean(s_fake);
            let (recon_e, recon_g) = match recon {
                Reconstruction::Correlation => {
                    let rho_live = rho_term(&mut g, zn, code_fake);
                    (g.scale(rho_fixed, -lambda2), g.scale(rho_live, -lambda2))
                }
                Reconstruction::Mse => {
                    let mse_fixed = mse_term(&mut g, zn, code_fake_fixed);
                    let mse_live = mse_term(&mut g, zn, code_fake);
                    (g.scale(mse_fixed, lambda2), g.scale(mse_live, lambda2))
                }
            };
            let loss_e = g.add(with_reg, recon_e);
            let loss_g = g.add(adv_g, recon_g);
            (loss_e, loss_g, Some(reg))
        }
    };

    Ok(LossBundle {
        graph: g,
        feeds,
        loss_e,
        loss_g,
        diagnostics: DiagnosticNodes {
            score_real,
            score_fake,
            rho: rho_fixed,
            reg,
            std_code_real,
        },
    })
}

/// `loss_D = mean[sp(−D(x)) + sp(D(G(z)))]`, `loss_G = mean[sp(−D(G(z)))]`
/// with `D = T∘E`.
pub fn vanilla_losses(nets: &Nets, x: &Tensor, z: &Tensor) -> Result<LossBundle, ObjectiveError> {
    build(nets, x, z, true, Adversarial::Softplus)
}

pub fn ogan_simplest_losses(
    nets: &Nets,
    x: &Tensor,
    z: &Tensor,
    variant: &ObjectiveVariant,
) -> Result<LossBundle, ObjectiveError> {
    variant.validate()?;
    build(
        nets,
        x,
        z,
        false,
        Adversarial::Linear {
            lambda1: variant.lambda1,
            lambda2: variant.lambda2,
            eps_r: variant.eps_r,
            recon: Reconstruction::Correlation,
        },
    )
}

pub fn ogan_with_t_losses(
    nets: &Nets,
    x: &Tensor,
    z: &Tensor,
    variant: &ObjectiveVariant,
) -> Result<LossBundle, ObjectiveError> {
    variant.validate()?;
    build(
        nets,
        x,
        z,
        true,
        Adversarial::Linear {
            lambda1: variant.lambda1,
            lambda2: variant.lambda2,
            eps_r: variant.eps_r,
            recon: Reconstruction::Correlation,
        },
    )
}

pub fn ablation_mse_losses(
    nets: &Nets,
    x: &Tensor,
    z: &Tensor,
    variant: &ObjectiveVariant,
) -> Result<LossBundle, ObjectiveError> {
    variant.validate()?;
    build(
        nets,
        x,
        z,
        false,
        Adversarial::Linear {
            lambda1: variant.lambda1,
            lambda2: variant.lambda2,
            eps_r: variant.eps_r,
            recon: Reconstruction::Mse,
        },
    )
}

/// Dispatches on `variant.kind`.
pub fn build_losses(
    nets: &Nets,
    x: &Tensor,
    z: &Tensor,
    variant: &ObjectiveVariant,
) -> Result<LossBundle, ObjectiveError> {
    match variant.kind {
        ObjectiveKind::Vanilla => vanilla_losses(nets, x, z),
        ObjectiveKind::OganWithT => ogan_with_t_losses(nets, x, z, variant),
        ObjectiveKind::OganSimplest => ogan_simplest_losses(nets, x, z, variant),
        ObjectiveKind::AblationMse => ablation_mse_losses(nets, x, z, variant),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::{grad_check, Rng};
    use crate::nets::{Activation, InitScheme, Layer, NetSpec};

    fn small_nets(seed: u64, head: bool) -> Nets {
        let mut rng = Rng::new(seed);
        Nets {
            generator: NetSpec::generator(4, 2, &[6]).build(&mut rng).unwrap(),
            encoder: NetSpec::encoder(2, 4, &[6]).build(&mut rng).unwrap(),
            score_head: head.then(|| {
                let mut spec = NetSpec::encoder(4, 1, &[3]);
                spec.hidden_activation = Activation::Tanh;
                spec.build(&mut rng).unwrap()
            }),
        }
    }

    /// Draws nets and batches until every relu-family pre-activation sits at
    /// least `margin` away from its kink, so central differences stay on one
    /// linear piece.
    fn kink_free_instance(seed: u64, margin: f32) -> (Nets, Tensor, Tensor) {
        (seed..seed + 1000)
            .find_map(|s| {
                let nets = small_nets(s, true);
                let mut rng = Rng::new(s ^ 0x5eed);
                let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
                let fake = nets.generator.forward(&z).unwrap();
                let m = [
                    nets.generator.kink_margin(&z).unwrap(),
                    nets.encoder.kink_margin(&x).unwrap(),
                    nets.encoder.kink_margin(&fake).unwrap(),
                ]
                .into_iter()
                .fold(f32::INFINITY, f32::min);
                (m > margin).then_some((nets, x, z))
            })
            .expect("a kink-free instance within 1000 seeds")
    }

    fn batch(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(vec![rows, cols], rng.normal_vec(rows * cols)).unwrap()
    }

    fn scalar_graph(build: impl FnOnce(&mut Graph) -> NodeId, feeds: Feeds) -> f32 {
        let mut g = Graph::new();
        let root = build(&mut g);
        g.forward(root, &feeds).unwrap().item().unwrap()
    }

    #[test]
    fn rho_term_examples() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.0, 2.0]]).unwrap();
        let run = |codes: Tensor| {
            let feeds: Feeds = [("z".to_string(), z.clone()), ("c".to_string(), codes)].into();
            scalar_graph(
                |g| {
                    let zn = g.leaf("z", &[2, 4]);
                    let cn = g.leaf("c", &[2, 4]);
                    rho_term(g, zn, cn)
                },
                feeds,
            )
        };
        assert!((run(z.clone()) - 1.0).abs() < 1e-6);
        assert!((run(z.map(|v| 3.0 * v + 7.0)) - 1.0).abs() < 1e-6);

        // antisymmetric rows: reversing the row negates it
        let anti = Tensor::from_rows(&[vec![-3.0, -1.0, 1.0, 3.0], vec![-2.0, 0.5, -0.5, 2.0]]).unwrap();
        let reversed = Tensor::from_rows(&[
            anti.row(0).iter().rev().copied().collect(),
            anti.row(1).iter().rev().copied().collect(),
        ])
        .unwrap();
        let feeds: Feeds = [("z".to_string(), anti), ("c".to_string(), reversed)].into();
        let v = scalar_graph(
            |g| {
                let zn = g.leaf("z", &[2, 4]);
                let cn = g.leaf("c", &[2, 4]);
                rho_term(g, zn, cn)
            },
            feeds,
        );
        assert!((v + 1.0).abs() < 1e-6);
    }

    fn reg_value(sr: Vec<f32>, sf: Vec<f32>, x: Tensor, gx: Tensor, eps: f64) -> f32 {
        let b = sr.len();
        let shape = x.shape().to_vec();
        let feeds: Feeds = [
            ("sr".to_string(), Tensor::new(vec![b, 1], sr).unwrap()),
            ("sf".to_string(), Tensor::new(vec![b, 1], sf).unwrap()),
            ("x".to_string(), x),
            ("gx".to_string(), gx),
        ]
        .into();
        scalar_graph(
            |g| {
                let sr = g.leaf("sr", &[b, 1]);
                let sf = g.leaf("sf", &[b, 1]);
                let xn = g.leaf("x", &shape);
                let gn = g.leaf("gx", &shape);
                regularizer_r(g, sr, sf, xn, gn, eps)
            },
            feeds,
        )
    }

    #[test]
    fn regularizer_examples() {
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap();
        let gx = Tensor::from_rows(&[vec![0.0, 0.5], vec![-0.3, 0.4]]).unwrap();
        assert_eq!(reg_value(vec![0.7, -1.0], vec![0.7, -1.0], x, gx, 1e-8), 0.0);

        let one = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let zero = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        assert_eq!(reg_value(vec![1.0], vec![0.0], one.clone(), zero, 0.0), 1.0);

        let v = reg_value(vec![1.0], vec![0.0], one.clone(), one, 1e-8);
        assert!(v.is_finite() && v > 1e7);
    }

    #[test]
    fn zero_lambdas_leave_the_linear_pair() {
        let nets = small_nets(1, false);
        let mut rng = Rng::new(2);
        let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
        let variant = ObjectiveVariant {
            lambda1: 0.0,
            lambda2: 0.0,
            ..ObjectiveVariant::defaults(ObjectiveKind::OganSimplest, 2)
        };
        let mut b = ogan_simplest_losses(&nets, &x, &z, &variant).unwrap();
        let loss_e = b.eval(b.loss_e).unwrap();
        let sr = b.eval(b.diagnostics.score_real).unwrap();
        let sf = b.eval(b.diagnostics.score_fake).unwrap();
        assert!((loss_e - (sr - sf)).abs() < 1e-6);
        let loss_g = b.eval(b.loss_g).unwrap();
        assert!((loss_g - sf).abs() < 1e-6);
    }

    #[test]
    fn constant_encoder_gives_zero_loss() {
        let mut nets = small_nets(3, false);
        let mut spec = NetSpec::encoder(2, 4, &[6]);
        spec.init = InitScheme::Zeros;
        nets.encoder = spec.build(&mut Rng::new(0)).unwrap();
        let mut rng = Rng::new(4);
        let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
        let variant = ObjectiveVariant::defaults(ObjectiveKind::OganSimplest, 2);
        let mut b = ogan_simplest_losses(&nets, &x, &z, &variant).unwrap();
        assert_eq!(b.eval(b.loss_e).unwrap(), 0.0);
        assert_eq!(b.eval(b.diagnostics.rho).unwrap(), 0.0);
    }

    fn avg_head(n_z: usize) -> MlpParams {
        MlpParams::from_layers(vec![Layer {
            weight: Tensor::full(&[n_z, 1], 1.0 / n_z as f32),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn avg_head_reproduces_simplest_objective() {
        let mut nets = small_nets(5, false);
        let mut rng = Rng::new(6);
        let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
        let variant = ObjectiveVariant::defaults(ObjectiveKind::OganSimplest, 2);
        let mut simple = ogan_simplest_losses(&nets, &x, &z, &variant).unwrap();
        nets.score_head = Some(avg_head(4));
        let mut with_t = ogan_with_t_losses(&nets, &x, &z, &variant).unwrap();
        for (a, b) in [(simple.loss_e, with_t.loss_e), (simple.loss_g, with_t.loss_g)] {
            let (va, vb) = (simple.eval(a).unwrap(), with_t.eval(b).unwrap());
            assert!((va - vb).abs() < 1e-6, "{va} vs {vb}");
        }
    }

    #[test]
    fn missing_head_and_bad_shapes_are_errors() {
        let nets = small_nets(7, false);
        let mut rng = Rng::new(8);
        let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
        assert!(matches!(vanilla_losses(&nets, &x, &z), Err(ObjectiveError::InvalidVariant(_))));
        let z3 = batch(&mut rng, 3, 4);
        let variant = ObjectiveVariant::defaults(ObjectiveKind::OganSimplest, 2);
        assert!(matches!(ogan_simplest_losses(&nets, &x, &z3, &variant), Err(ObjectiveError::Shape(_))));
        let bad = ObjectiveVariant { lambda2: -1.0, ..variant };
        assert!(matches!(ogan_simplest_losses(&nets, &x, &z, &bad), Err(ObjectiveError::InvalidVariant(_))));
    }

    #[test]
    fn mse_ablation_examples() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.5, 0.0, 2.0]]).unwrap();
        let run = |codes: Tensor| {
            let feeds: Feeds = [("z".to_string(), z.clone()), ("c".to_string(), codes)].into();
            scalar_graph(
                |g| {
                    let zn = g.leaf("z", &[2, 4]);
                    let cn = g.leaf("c", &[2, 4]);
                    mse_term(g, zn, cn)
                },
                feeds,
            )
        };
        assert_eq!(run(z.clone()), 0.0);
        let c = 0.75f32;
        assert!((run(z.map(|v| v + c)) - c * c).abs() < 1e-6);
    }

    #[test]
    fn e_loss_gradient_never_reaches_generator() {
        let nets = small_nets(9, false);
        let mut rng = Rng::new(10);
        let (x, z) = (batch(&mut rng, 4, 2), batch(&mut rng, 4, 4));
        let variant = ObjectiveVariant::defaults(ObjectiveKind::OganSimplest, 2);
        let mut b = ogan_simplest_losses(&nets, &x, &z, &variant).unwrap();
        let (_, grads) = b.e_step().unwrap();
        for (name, grad) in grads.leaves() {
            if name.starts_with("G.") {
                assert!(grad.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let (_, grads) = b.g_step().unwrap();
        assert!(grads.leaf("G.0.w").unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_roots_gradient_check() {
        let variant = ObjectiveVariant::defaults(ObjectiveKind::OganWithT, 2);
        let (nets, x, z) = kink_free_instance(11, 0.05);
        let mut b = ogan_with_t_losses(&nets, &x, &z, &variant).unwrap();
        let feeds = b.feeds.clone();
        for (root, leaves) in [
            (b.loss_e, ["E.0.w", "E.1.b", "T.0.w", "T.1.w"]),
            (b.loss_g, ["G.0.w", "G.1.w", "G.0.b", "G.1.b"]),
        ] {
            for leaf in leaves {
                let r = grad_check(&mut b.graph, root, &feeds, leaf, 1e-3, 1e-4).unwrap();
                assert!(r.pass, "{r:?}");
            }
        }
    }
}
