//! The avg / std / 𝒩 decomposition of a vector and the Pearson correlation
//! built from it.
//!
//! Statistics are population statistics (divisor `n`). Value-level functions
//! work on slices in any [`Real`] precision; the `row_*` builders emit the
//! same computations row-wise into a [`Graph`] for `[B × n]` inputs.
//!
//! The guard `eps` is added to each standard deviation factor, never inside
//! the square root. With `eps > 0` a constant input normalizes to zeros and
//! correlates at 0; with `eps == 0` it is a [`OrthoError::Singular`] error.

use thiserror::Error;

use crate::ndnum::{Graph, NodeId, Real};

/// Guard used by training and evaluation.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Shortest vector for which `[avg, std, 𝒩]` is an independent decomposition.
pub const MIN_LATENT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrthoError {
    #[error("empty vector")]
    Empty,
    #[error("vector of length {len} is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero standard deviation with eps = 0")]
    Singular,
}

pub fn avg<T: Real>(v: &[T]) -> Result<T, OrthoError> {
    if v.is_empty() {
        return Err(OrthoError::Empty);
    }
    let n = T::from_usize(v.len()).expect("length fits");
    Ok(v.iter().fold(T::zero(), |acc, &x| acc + x) / n)
}

pub fn std<T: Real>(v: &[T]) -> Result<T, OrthoError> {
    let m = avg(v)?;
    let n = T::from_usize(v.len()).expect("length fits");
    let ss = v.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    Ok((ss / n).sqrt())
}

fn check_latent(len: usize) -> Result<(), OrthoError> {
    if len < MIN_LATENT_DIM {
        return Err(OrthoError::TooShort {
            len,
            min: MIN_LATENT_DIM,
        });
    }
    Ok(())
}

/// `(v − avg(v)) / (std(v) + eps)`.
pub fn normalize<T: Real>(v: &[T], eps: T) -> Result<Vec<T>, OrthoError> {
    check_latent(v.len())?;
    let m = avg(v)?;
    let denom = std(v)? + eps;
    if denom == T::zero() {
        return Err(OrthoError::Singular);
    }
    Ok(v.iter().map(|&x| (x - m) / denom).collect())
}

pub fn pearson<T: Real>(z: &[T], z_hat: &[T], eps: T) -> Result<T, OrthoError> {
    if z.len() != z_hat.len() {
        return Err(OrthoError::LengthMismatch {
            left: z.len(),
            right: z_hat.len(),
        });
    }
    check_latent(z.len())?;
    let (mz, mh) = (avg(z)?, avg(z_hat)?);
    let n = T::from_usize(z.len()).expect("length fits");
    let cov = z
        .iter()
        .zip(z_hat)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - mz) * (b - mh))
        / n;
    let denom = (std(z)? + eps) * (std(z_hat)? + eps);
    if denom == T::zero() {
        return Err(OrthoError::Singular);
    }
    Ok(cov / denom)
}

/// `‖𝒩(z) − 𝒩(ẑ)‖²` with no guard; equals `2·n·(1 − ρ(z, ẑ))`.
pub fn normalized_mse<T: Real>(z: &[T], z_hat: &[T]) -> Result<T, OrthoError> {
    if z.len() != z_hat.len() {
        return Err(OrthoError::LengthMismatch {
            left: z.len(),
            right: z_hat.len(),
        });
    }
    let a = normalize(z, T::zero())?;
    let b = normalize(z_hat, T::zero())?;
    Ok(a.iter().zip(&b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y)))
}

/// A latent code of dimension at least [`MIN_LATENT_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Vec<f32>);

impl LatentVector {
    pub fn new(values: Vec<f32>) -> Result<Self, OrthoError> {
        check_latent(values.len())?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn avg(&self) -> f32 {
        avg(&self.0).expect("non-empty")
    }

    pub fn std(&self) -> f32 {
        std(&self.0).expect("non-empty")
    }

    pub fn normalized(&self, eps: f32) -> Result<LatentVector, OrthoError> {
        normalize(&self.0, eps).map(LatentVector)
    }

    pub fn pearson(&self, other: &LatentVector, eps: f32) -> Result<f32, OrthoError> {
        pearson(&self.0, &other.0, eps)
    }
}

impl TryFrom<Vec<f32>> for LatentVector {
    type Error = OrthoError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

/// Per-row mean of a `[B × n]` node, shape `[B × 1]`.
pub fn row_avg(g: &mut Graph, x: NodeId) -> NodeId {
    g.mean_axis(x, 1)
}

pub fn row_center(g: &mut Graph, x: NodeId) -> NodeId {
    let m = row_avg(g, x);
    g.sub(x, m)
}

/// Per-row population standard deviation, shape `[B × 1]`.
pub fn row_std(g: &mut Graph, x: NodeId) -> NodeId {
    let c = row_center(g, x);
    let sq = g.square(c);
    let var = g.mean_axis(sq, 1);
    g.sqrt(var)
}

pub fn row_normalize(g: &mut Graph, x: NodeId, eps: f64) -> NodeId {
    let c = row_center(g, x);
    let sq = g.square(c);
    let var = g.mean_axis(sq, 1);
    let sd = g.sqrt(var);
    let denom = g.add_scalar(sd, eps);
    g.div(c, denom)
}

/// Per-row Pearson correlation of two `[B × n]` nodes, shape `[B × 1]`.
pub fn row_pearson(g: &mut Graph, z: NodeId, z_hat: NodeId, eps: f64) -> NodeId {
    let cz = row_center(g, z);
    let ch = row_center(g, z_hat);
    let prod = g.mul(cz, ch);
    let cov = g.mean_axis(prod, 1);
    let sz = {
        let sq = g.square(cz);
        let var = g.mean_axis(sq, 1);
        g.sqrt(var)
    };
    let sh = {
        let sq = g.square(ch);
        let var = g.mean_axis(sq, 1);
        g.sqrt(var)
    };
    let dz = g.add_scalar(sz, eps);
    let dh = g.add_scalar(sh, eps);
    let denom = g.mul(dz, dh);
    g.div(cov, denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::{grad_check, Feeds, Rng, Tensor};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn avg_examples() {
        close(avg(&[1.0f32, 2., 3.]).unwrap().into(), 2.0, 1e-6);
        close(avg(&[0.0f32; 4]).unwrap().into(), 0.0, 1e-6);
        close(avg(&[-1.0f32, 1.]).unwrap().into(), 0.0, 1e-6);
        assert_eq!(avg::<f32>(&[]), Err(OrthoError::Empty));
    }

    #[test]
    fn std_examples() {
        close(std(&[1.0f32, 2., 3.]).unwrap().into(), (2.0f64 / 3.0).sqrt(), 1e-6);
        close(std(&[5.0f32, 5., 5.]).unwrap().into(), 0.0, 1e-6);
        for a in [0.0f32, 0.5, 3.0] {
            close(std(&[-a, a]).unwrap().into(), a.into(), 1e-6);
        }
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&[1.0f32, 2., 3.], 0.0).unwrap();
        let expect = [-1.224_744_9, 0.0, 1.224_744_9];
        for (a, b) in n.iter().zip(expect) {
            close((*a).into(), b, 1e-6);
        }
        let fixed = normalize(&n, 0.0).unwrap();
        for (a, b) in fixed.iter().zip(&n) {
            close((*a).into(), (*b).into(), 1e-6);
        }
        assert_eq!(normalize(&[7.0f32, 7., 7.], 0.0), Err(OrthoError::Singular));
        assert_eq!(normalize(&[7.0f32, 7., 7.], 1e-8).unwrap(), vec![0.0; 3]);
        assert!(matches!(normalize(&[1.0f32, 2.], 0.0), Err(OrthoError::TooShort { .. })));
    }

    #[test]
    fn pearson_examples() {
        close(pearson(&[1.0f32, 2., 3.], &[2., 4., 6.], 0.0).unwrap().into(), 1.0, 1e-6);
        close(pearson(&[1.0f32, 2., 3.], &[3., 2., 1.], 0.0).unwrap().into(), -1.0, 1e-6);
        close(pearson(&[1.0f32, 0., -1.], &[0., 1., 0.], 0.0).unwrap().into(), 0.0, 1e-6);
        assert!(matches!(
            pearson(&[1.0f32, 2., 3.], &[1., 2.], 0.0),
            Err(OrthoError::LengthMismatch { .. })
        ));
        assert_eq!(pearson(&[2.0f32; 3], &[5.0; 3], 0.0), Err(OrthoError::Singular));
        assert_eq!(pearson(&[2.0f32; 3], &[5.0; 3], 1e-8).unwrap(), 0.0);
        assert_eq!(pearson(&[1.0f32, 2., 3.], &[5.0; 3], 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn normalized_mse_examples() {
        close(normalized_mse(&[1.0f32, 2., 3.], &[3., 2., 1.]).unwrap().into(), 12.0, 1e-5);
        close(normalized_mse(&[1.0f32, 5., 3.], &[1., 5., 3.]).unwrap().into(), 0.0, 1e-6);
        let mut rng = Rng::new(11);
        let z: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let h: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let rho = pearson(&z, &h, 0.0).unwrap();
        close(normalized_mse(&z, &h).unwrap(), 16.0 * (1.0 - rho), 1e-5);
    }

    #[test]
    fn latent_vector_enforces_dimension() {
        assert!(LatentVector::new(vec![1.0, 2.0]).is_err());
        let v = LatentVector::try_from(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.dim(), 3);
        close(v.avg().into(), 2.0, 1e-7);
        let w = LatentVector::new(vec![2.0, 4.0, 6.0]).unwrap();
        close(v.pearson(&w, 0.0).unwrap().into(), 1.0, 1e-6);
    }

    fn row_feeds(z: &[Vec<f32>], h: &[Vec<f32>]) -> Feeds {
        [
            ("z".to_string(), Tensor::from_rows(z).unwrap()),
            ("h".to_string(), Tensor::from_rows(h).unwrap()),
        ]
        .into()
    }

    #[test]
    fn graph_rows_match_value_functions() {
        let mut rng = Rng::new(5);
        let z: Vec<Vec<f32>> = (0..4).map(|_| rng.normal_vec(6)).collect();
        let h: Vec<Vec<f32>> = (0..4).map(|_| rng.normal_vec(6)).collect();
        let mut g = Graph::new();
        let zn = g.leaf("z", &[4, 6]);
        let hn = g.leaf("h", &[4, 6]);
        let rho = row_pearson(&mut g, zn, hn, 0.0);
        let sd = row_std(&mut g, zn);
        let nz = row_normalize(&mut g, zn, 0.0);
        let feeds = row_feeds(&z, &h);
        g.forward_many(&[rho, sd, nz], &feeds).unwrap();
        for i in 0..4 {
            let expect = pearson(&z[i], &h[i], 0.0).unwrap();
            close(g.value(rho).unwrap().data()[i].into(), expect.into(), 1e-6);
            close(g.value(sd).unwrap().data()[i].into(), std(&z[i]).unwrap().into(), 1e-6);
            let n = normalize(&z[i], 0.0).unwrap();
            for (a, b) in g.value(nz).unwrap().row(i).iter().zip(&n) {
                close((*a).into(), (*b).into(), 1e-6);
            }
        }
    }

    #[test]
    fn pearson_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let mut g = Graph::new();
        let zn = g.leaf("z", &[1, 8]);
        let hn = g.leaf("h", &[1, 8]);
        let rho = row_pearson(&mut g, zn, hn, DEFAULT_EPS);
        let root = g.sum(rho);
        let feeds = row_feeds(&[rng.normal_vec(8)], &[rng.normal_vec(8)]);
        for leaf in ["z", "h"] {
            let report = grad_check(&mut g, root, &feeds, leaf, 1e-3, 1e-4).unwrap();
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn normalize_gradient_errors_on_constant_input() {
        let mut g = Graph::new();
        let v = g.leaf("v", &[1, 3]);
        let n = row_normalize(&mut g, v, 0.0);
        let c = g.constant(Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap());
        let weighted = g.mul(n, c);
        let root = g.sum(weighted);
        let feeds: Feeds = [("v".to_string(), Tensor::new(vec![1, 3], vec![5.0, 5.0, 5.0]).unwrap())].into();
        assert!(grad_check(&mut g, root, &feeds, "v", 1e-3, 1e-4).is_err());
    }
}
