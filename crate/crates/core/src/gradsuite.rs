//! Gradient checks for every graph primitive, the row operators, and the
//! full encoder / generator losses of each objective.

use crate::ndnum::{grad_check, Feeds, GradCheckError, GradCheckReport, Graph, Rng, Tensor};
use crate::nets::NetSpec;
use crate::objectives::{build_losses, Nets, ObjectiveKind, ObjectiveVariant};
use crate::ortho;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub const PRIMITIVES: &[&str] = &[
    "add", "add_bias", "sub", "mul", "div", "scale", "add_scalar", "neg", "matmul", "sum",
    "sum_axis0", "sum_axis1", "mean", "mean_axis0", "mean_axis1", "square", "sqrt", "exp",
    "softplus", "relu", "leaky_relu", "tanh", "slice", "concat", "row_avg", "row_std",
    "row_normalize", "row_pearson",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub check: String,
    pub report: GradCheckReport,
}

/// Values bounded away from zero: `sign(v)·(|v| + margin)`.
fn away_from_zero(t: Tensor, margin: f32) -> Tensor {
    t.map(|v| v.signum() * (v.abs() + margin))
}

/// `[r × c]` normals, each row redrawn until its population std is at least
/// 0.5; central differences lose accuracy as a row's spread approaches zero.
fn spread_rows(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(r * c);
    while data.len() < r * c {
        let row = rng.normal_vec(c);
        if ortho::std(&row).unwrap_or(0.0) >= 0.5 {
            data.extend(row);
        }
    }
    Tensor::new(vec![r, c], data).expect("shape matches data")
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), rng.normal_vec(shape.iter().product())).expect("shape matches data")
}

/// Builds `Σ W ⊙ op(inputs)` for a fixed random `W` and checks every input.
pub fn check_primitive(
    name: &str,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<Vec<SuiteEntry>, GradCheckError> {
    let mut rng = Rng::new(seed);
    let mut g = Graph::new();
    let mut feeds = Feeds::new();
    let input = |g: &mut Graph, feeds: &mut Feeds, leaf: &str, value: Tensor| {
        let id = g.leaf(leaf, value.shape());
        feeds.insert(leaf.to_string(), value);
        id
    };
    let (r, c) = (3, 4);
    let (a_val, b_val) = if name.starts_with("row_") {
        (spread_rows(&mut rng, r, c), spread_rows(&mut rng, r, c))
    } else {
        (random(&mut rng, &[r, c]), random(&mut rng, &[r, c]))
    };
    let y = match name {
        "add" | "sub" | "mul" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", b_val);
            match name {
                "add" => g.add(a, b),
                "sub" => g.sub(a, b),
                _ => g.mul(a, b),
            }
        }
        "div" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", away_from_zero(b_val, 0.5));
            g.div(a, b)
        }
        "add_bias" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", random(&mut rng, &[c]));
            g.add_bias(a, b)
        }
        "matmul" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", random(&mut rng, &[c, 2]));
            g.matmul(a, b)
        }
        "concat" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", random(&mut rng, &[r, 2]));
            g.concat(&[a, b], 1)
        }
        "row_pearson" => {
            let a = input(&mut g, &mut feeds, "a", a_val);
            let b = input(&mut g, &mut feeds, "b", b_val);
            ortho::row_pearson(&mut g, a, b, ortho::DEFAULT_EPS)
        }
        _ => {
            let value = match name {
                "sqrt" => a_val.map(|v| v.abs() + 0.5),
                "relu" | "leaky_relu" => away_from_zero(a_val, 0.1),
                _ => a_val,
            };
            let a = input(&mut g, &mut feeds, "a", value);
            match name {
                "scale" => g.scale(a, -1.7),
                "add_scalar" => g.add_scalar(a, 0.3),
                "neg" => g.neg(a),
                "sum" => g.sum(a),
                "sum_axis0" => g.sum_axis(a, 0),
                "sum_axis1" => g.sum_axis(a, 1),
                "mean" => g.mean(a),
                "mean_axis0" => g.mean_axis(a, 0),
                "mean_axis1" => g.mean_axis(a, 1),
                "square" => g.square(a),
                "sqrt" => g.sqrt(a),
                "exp" => g.exp(a),
                "softplus" => g.softplus(a),
                "relu" => g.relu(a),
                "leaky_relu" => g.leaky_relu(a, 0.2),
                "tanh" => g.tanh(a),
                "slice" => g.slice(a, 1, 1, 3),
                "row_avg" => ortho::row_avg(&mut g, a),
                "row_std" => ortho::row_std(&mut g, a),
                "row_normalize" => ortho::row_normalize(&mut g, a, ortho::DEFAULT_EPS),
                other => panic!("unknown primitive `{other}`"),
            }
        }
    };
    // The output shape is only known after a forward pass.
    g.forward(y, &feeds)?;
    let shape = g.value(y).expect("evaluated").shape().to_vec();
    let w = g.constant(random(&mut rng, &shape).cast());
    let weighted = g.mul(y, w);
    let root = g.sum(weighted);
    let leaves: Vec<String> = g.leaf_names().map(str::to_string).collect();
    leaves
        .iter()
        .map(|leaf| {
            Ok(SuiteEntry {
                check: format!("{name}/{leaf}"),
                report: grad_check(&mut g, root, &feeds, leaf, step, tolerance)?,
            })
        })
        .collect()
}

/// Small generator / encoder / score head with their batches, chosen so
/// that no relu-family pre-activation lies within `margin` of its kink.
/// Central differences are then taken on a single linear piece.
pub fn kink_free_instance(seed: u64, n_z: usize, n_x: usize, batch: usize, margin: f32) -> (Nets, Tensor, Tensor) {
    (seed..)
        .find_map(|s| {
            let mut rng = Rng::new(s);
            let nets = Nets {
                generator: NetSpec::generator(n_z, n_x, &[6]).build(&mut rng).ok()?,
                encoder: NetSpec::encoder(n_x, n_z, &[6]).build(&mut rng).ok()?,
                score_head: NetSpec::encoder(n_z, 1, &[3]).build(&mut rng).ok(),
            };
            let x = random(&mut rng, &[batch, n_x]).map(f32::tanh);
            let z = random(&mut rng, &[batch, n_z]);
            let fake = nets.generator.forward(&z).ok()?;
            let code_real = nets.encoder.forward(&x).ok()?;
            let code_fake = nets.encoder.forward(&fake).ok()?;
            let head = nets.score_head.as_ref()?;
            let m = [
                nets.generator.kink_margin(&z).ok()?,
                nets.encoder.kink_margin(&x).ok()?,
                nets.encoder.kink_margin(&fake).ok()?,
                head.kink_margin(&code_real).ok()?,
                head.kink_margin(&code_fake).ok()?,
            ]
            .into_iter()
            .fold(f32::INFINITY, f32::min);
            (m > margin).then_some((nets, x, z))
        })
        .expect("search is unbounded")
}

/// Gradient checks of `loss_E` with respect to the encoder and score head,
/// and of `loss_G` with respect to every network.
///
/// `loss_E` reaches the generator only through a stop-gradient, so its
/// generator gradient is zero by construction and is not compared against
/// finite differences.
pub fn check_losses(
    kind: ObjectiveKind,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<Vec<SuiteEntry>, GradCheckError> {
    let (n_z, n_x) = (4, 2);
    let (mut nets, x, z) = kink_free_instance(seed, n_z, n_x, 4, 0.05);
    if !kind.uses_score_head() {
        nets.score_head = None;
    }
    let variant = ObjectiveVariant::defaults(kind, n_x);
    let mut b = build_losses(&nets, &x, &z, &variant).expect("consistent shapes");
    let feeds = b.feeds.clone();
    let leaves: Vec<String> = b.graph.leaf_names().map(str::to_string).collect();
    let params = |prefixes: &[&str]| -> Vec<String> {
        leaves
            .iter()
            .filter(|l| prefixes.iter().any(|p| l.starts_with(p)))
            .cloned()
            .collect()
    };
    let e_leaves = params(&["E.", "T."]);
    let g_leaves = params(&["G.", "E.", "T."]);
    let mut out = Vec::new();
    for (root, label, list) in [(b.loss_e, "loss_E", &e_leaves), (b.loss_g, "loss_G", &g_leaves)] {
        for leaf in list {
            let report = grad_check(&mut b.graph, root, &feeds, leaf, step, tolerance)?;
            out.push(SuiteEntry {
                check: format!("{}/{label}/{leaf}", kind.name()),
                report,
            });
        }
    }
    Ok(out)
}

/// Checks that `detach` passes values through and stops gradients.
pub fn check_detach() -> SuiteEntry {
    let mut g = Graph::new();
    let a = g.leaf("a", &[2]);
    let d = g.detach(a);
    let s = g.square(d);
    let y = g.sum(s);
    let linear = g.sum(a);
    let root = g.add(y, linear);
    let feeds: Feeds = [("a".to_string(), Tensor::vector(vec![1.5, -2.0]))].into();
    let ok = g.forward(root, &feeds).map(|v| v.item()) == Ok(Some(1.5 * 1.5 + 4.0 + 1.5 - 2.0))
        && g.backward(root).map(|gr| gr.leaf("a").cloned()) == Ok(Some(Tensor::vector(vec![1.0, 1.0])));
    SuiteEntry {
        check: "detach/a".into(),
        report: GradCheckReport {
            leaf: "a".into(),
            max_rel_err: if ok { 0.0 } else { f64::INFINITY },
            worst_index: 0,
            pass: ok,
        },
    }
}

/// Every primitive, the detach contract, and all four objectives.
pub fn full_suite(seed: u64, tolerance: f64) -> Result<Vec<SuiteEntry>, GradCheckError> {
    let mut out = Vec::new();
    for (i, name) in PRIMITIVES.iter().enumerate() {
        out.extend(check_primitive(name, seed.wrapping_add(i as u64), DEFAULT_STEP, tolerance)?);
    }
    out.push(check_detach());
    for kind in [
        ObjectiveKind::Vanilla,
        ObjectiveKind::OganWithT,
        ObjectiveKind::OganSimplest,
        ObjectiveKind::AblationMse,
    ] {
        out.extend(check_losses(kind, seed, DEFAULT_STEP, tolerance)?);
    }
    Ok(out)
}
