//! Central-difference gradient checks.
//!
//! The analytic side is the single-precision backward pass used in training.
//! The numeric side perturbs one coordinate at a time and re-evaluates the
//! graph in double precision.

use thiserror::Error;

use super::graph::{Feeds, Feeds64, Graph, GraphError, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("no leaf named `{0}`")]
    UnknownLeaf(String),
    #[error("non-finite evaluation while perturbing `{leaf}`[{index}]")]
    NonFinite { leaf: String, index: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaf: String,
    /// `max |analytic − numeric| / max(1, |analytic|)` over coordinates.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub pass: bool,
}

pub fn grad_check(
    graph: &mut Graph,
    root: NodeId,
    feeds: &Feeds,
    leaf: &str,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError> {
    if step.is_nan() || step <= 0.0 {
        return Err(GradCheckError::InvalidStep(step));
    }
    if graph.leaf_id(leaf).is_none() {
        return Err(GradCheckError::UnknownLeaf(leaf.to_string()));
    }
    graph.forward(root, feeds)?;
    let grads = graph.backward(root)?;
    let analytic = grads.leaf(leaf).expect("declared leaf has a gradient").clone();

    let mut shadow: Feeds64 = feeds.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
    let base = shadow
        .get(leaf)
        .ok_or_else(|| GraphError::MissingFeed(leaf.to_string()))?
        .clone();

    let eval = |shadow: &Feeds64, index: usize| -> Result<f64, GradCheckError> {
        match graph.shadow_eval(root, shadow) {
            Ok(v) => Ok(v.item().expect("scalar root")),
            Err(GraphError::NonFinite { .. }) => Err(GradCheckError::NonFinite {
                leaf: leaf.to_string(),
                index,
            }),
            Err(e) => Err(e.into()),
        }
    };

    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for (i, &a) in analytic.data().iter().enumerate() {
        let x0 = base.data()[i];
        let mut perturbed = base.clone();
        perturbed.data_mut()[i] = x0 + step;
        shadow.insert(leaf.to_string(), perturbed.clone());
        let plus = eval(&shadow, i)?;
        perturbed.data_mut()[i] = x0 - step;
        shadow.insert(leaf.to_string(), perturbed);
        let minus = eval(&shadow, i)?;
        let numeric = (plus - minus) / (2.0 * step);
        let a = f64::from(a);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err > max_rel_err {
            max_rel_err = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        leaf: leaf.to_string(),
        max_rel_err,
        worst_index,
        pass: max_rel_err <= tolerance,
    })
}

/// Runs [`grad_check`] for every leaf named in `leaves`.
pub fn grad_check_leaves(
    graph: &mut Graph,
    root: NodeId,
    feeds: &Feeds,
    leaves: &[&str],
    step: f64,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>, GradCheckError> {
    leaves
        .iter()
        .map(|leaf| grad_check(graph, root, feeds, leaf, step, tolerance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::Tensor;

    #[test]
    fn exact_quadratic_passes() {
        let mut g = Graph::new();
        let v = g.leaf("v", &[2]);
        let sq = g.square(v);
        let s = g.sum(sq);
        let feeds: Feeds = [("v".to_string(), Tensor::vector(vec![1.0, 2.0]))].into();
        let report = grad_check(&mut g, s, &feeds, "v", 1e-3, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.max_rel_err < 1e-6);
    }

    #[test]
    fn sqrt_of_square_matches_abs() {
        let mut g = Graph::new();
        let v = g.leaf("v", &[1]);
        let sq = g.square(v);
        let r = g.sqrt(sq);
        let s = g.sum(r);
        let feeds: Feeds = [("v".to_string(), Tensor::vector(vec![0.5]))].into();
        assert!(grad_check(&mut g, s, &feeds, "v", 1e-3, 1e-4).unwrap().pass);
        let feeds: Feeds = [("v".to_string(), Tensor::vector(vec![0.0]))].into();
        let report = grad_check(&mut g, s, &feeds, "v", 1e-3, 1e-4).unwrap();
        // sqrt reports a zero derivative at 0; central differences of |x| agree
        assert!(report.max_rel_err < 1e-12, "{report:?}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut g = Graph::new();
        let v = g.leaf("v", &[1]);
        let s = g.sum(v);
        let feeds: Feeds = [("v".to_string(), Tensor::vector(vec![1.0]))].into();
        assert!(matches!(
            grad_check(&mut g, s, &feeds, "v", 0.0, 1e-4),
            Err(GradCheckError::InvalidStep(_))
        ));
        assert!(matches!(
            grad_check(&mut g, s, &feeds, "w", 1e-3, 1e-4),
            Err(GradCheckError::UnknownLeaf(_))
        ));
    }
}
