//! Fully-connected generator and encoder networks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndnum::{kernels, Feeds, Graph, NodeId, Rng, Tensor, TensorError};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => kernels::relu(x),
            Activation::LeakyRelu => kernels::leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    fn emit(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.leaky_relu(x, f64::from(LEAKY_SLOPE)),
            Activation::Tanh => g.tanh(x),
            Activation::Linear => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in ±√(6 / (fan_in + fan_out)), zero biases.
    GlorotUniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("network needs at least one hidden layer")]
    NoHiddenLayers,
    #[error("zero-width layer in {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("layer {layer}: {detail}")]
    BadLayer { layer: usize, detail: String },
    #[error("input has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub init: InitScheme,
}

impl NetSpec {
    /// `n_z → hidden → n_x`, relu hidden layers, tanh head.
    pub fn generator(n_z: usize, n_x: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim: n_z,
            hidden_dims: hidden.to_vec(),
            output_dim: n_x,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
            init: InitScheme::GlorotUniform,
        }
    }

    /// `n_x → hidden → n_z`, leaky-relu hidden layers, linear head.
    pub fn encoder(n_x: usize, n_z: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim: n_x,
            hidden_dims: hidden.to_vec(),
            output_dim: n_z,
            hidden_activation: Activation::LeakyRelu,
            output_activation: Activation::Linear,
            init: InitScheme::GlorotUniform,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden_dims.is_empty() {
            return Err(NetError::NoHiddenLayers);
        }
        let dims = self.dims();
        if dims.contains(&0) {
            return Err(NetError::ZeroDim(dims));
        }
        Ok(())
    }

    /// Σ (inₖ · outₖ + outₖ) over layers.
    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn build(&self, rng: &mut Rng) -> Result<MlpParams, NetError> {
        self.validate()?;
        let dims = self.dims();
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = match self.init {
                    InitScheme::GlorotUniform => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let data = (0..fan_in * fan_out)
                            .map(|_| rng.uniform(-limit, limit) as f32)
                            .collect();
                        Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
                    }
                    InitScheme::Zeros => Tensor::zeros(&[fan_in, fan_out]),
                };
                Layer {
                    weight,
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i == last {
                        self.output_activation
                    } else {
                        self.hidden_activation
                    },
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::BadLayer {
                layer: 0,
                detail: "no layers".into(),
            });
        }
        for (i, l) in layers.iter().enumerate() {
            let ws = l.weight.shape();
            if ws.len() != 2 || l.bias.shape() != [ws[1]] {
                return Err(NetError::BadLayer {
                    layer: i,
                    detail: format!("weight {:?} with bias {:?}", ws, l.bias.shape()),
                });
            }
            if i > 0 && layers[i - 1].weight.shape()[1] != ws[0] {
                return Err(NetError::BadLayer {
                    layer: i,
                    detail: format!(
                        "input {} does not chain from previous output {}",
                        ws[0],
                        layers[i - 1].weight.shape()[1]
                    ),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `(name, tensor)` pairs named `{prefix}.{layer}.w` / `.b`, in layer order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.w"), &l.weight),
                    (format!("{prefix}.{i}.b"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.w"), &mut l.weight),
                    (format!("{prefix}.{i}.b"), &mut l.bias),
                ]
            })
            .collect()
    }

    /// Direct forward pass on a `[B × in]` batch. Uses the same kernels as
    /// the graph, so results are bit-identical to [`BoundMlp::apply`].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NetError> {
        if x.shape().len() != 2 || x.shape()[1] != self.input_dim() {
            return Err(NetError::InputWidth {
                expected: self.input_dim(),
                got: x.shape().last().copied().unwrap_or(0),
            });
        }
        let mut h = x.clone();
        for l in &self.layers {
            let pre = h.matmul(&l.weight)?.zip_broadcast(&l.bias, |a, b| a + b)?;
            h = pre.map(|v| l.activation.apply(v));
        }
        Ok(h)
    }

    /// Smallest `|pre-activation|` over units feeding a relu or leaky-relu,
    /// or `+∞` when there are none. Finite differences with a step well
    /// below this margin never straddle a kink.
    pub fn kink_margin(&self, x: &Tensor) -> Result<f32, NetError> {
        let mut h = x.clone();
        let mut margin = f32::INFINITY;
        for l in &self.layers {
            let pre = h.matmul(&l.weight)?.zip_broadcast(&l.bias, |a, b| a + b)?;
            if matches!(l.activation, Activation::Relu | Activation::LeakyRelu) {
                margin = pre.data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            h = pre.map(|v| l.activation.apply(v));
        }
        Ok(margin)
    }

    /// Declares this network's parameters as leaves of `g` and feeds their
    /// current values.
    pub fn bind(&self, g: &mut Graph, prefix: &str, feeds: &mut Feeds) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let wn = format!("{prefix}.{i}.w");
                let bn = format!("{prefix}.{i}.b");
                let w = g.leaf(&wn, l.weight.shape());
                let b = g.leaf(&bn, l.bias.shape());
                feeds.insert(wn, l.weight.clone());
                feeds.insert(bn, l.bias.clone());
                (w, b, l.activation)
            })
            .collect();
        BoundMlp { layers }
    }
}

/// Parameter leaves of an [`MlpParams`] inside one graph. Applying it more
/// than once shares weights.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId, Activation)>,
}

impl BoundMlp {
    pub fn apply(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.layers.iter().fold(x, |h, &(w, b, act)| {
            let mm = g.matmul(h, w);
            let pre = g.add_bias(mm, b);
            act.emit(g, pre)
        })
    }
}

/// G: `[B × n_z] → [B × n_x]`.
pub fn gen_forward(generator: &MlpParams, z: &Tensor) -> Result<Tensor, NetError> {
    generator.forward(z)
}

/// E: `[B × n_x] → [B × n_z]`.
pub fn enc_forward(encoder: &MlpParams, x: &Tensor) -> Result<Tensor, NetError> {
    encoder.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::grad_check;

    fn zeroed(spec: &NetSpec) -> MlpParams {
        let mut s = spec.clone();
        s.init = InitScheme::Zeros;
        s.build(&mut Rng::new(0)).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let spec = NetSpec::encoder(2, 2, &[8]);
        let a = spec.build(&mut Rng::new(1)).unwrap();
        let b = spec.build(&mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        let c = spec.build(&mut Rng::new(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_formula() {
        let spec = NetSpec::encoder(4, 4, &[16, 16]);
        assert_eq!(spec.param_count(), 420);
        assert_eq!(spec.build(&mut Rng::new(3)).unwrap().param_count(), 420);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert_eq!(NetSpec::encoder(2, 2, &[]).validate(), Err(NetError::NoHiddenLayers));
        assert!(matches!(NetSpec::encoder(2, 0, &[4]).validate(), Err(NetError::ZeroDim(_))));
        let l0 = Layer {
            weight: Tensor::zeros(&[2, 3]),
            bias: Tensor::zeros(&[3]),
            activation: Activation::Relu,
        };
        let l1 = Layer {
            weight: Tensor::zeros(&[4, 1]),
            bias: Tensor::zeros(&[1]),
            activation: Activation::Linear,
        };
        assert!(matches!(MlpParams::from_layers(vec![l0, l1]), Err(NetError::BadLayer { layer: 1, .. })));
    }

    #[test]
    fn heads_follow_roles() {
        let g = NetSpec::generator(8, 2, &[4]).build(&mut Rng::new(0)).unwrap();
        assert_eq!(g.layers()[0].activation, Activation::Relu);
        assert_eq!(g.layers()[1].activation, Activation::Tanh);
        let e = NetSpec::encoder(2, 8, &[4]).build(&mut Rng::new(0)).unwrap();
        assert_eq!(e.layers()[0].activation, Activation::LeakyRelu);
        assert_eq!(e.layers()[1].activation, Activation::Linear);
    }

    #[test]
    fn zero_networks_output_zero() {
        let g = zeroed(&NetSpec::generator(8, 2, &[16]));
        let z = Tensor::new(vec![3, 8], Rng::new(4).normal_vec(24)).unwrap();
        assert!(gen_forward(&g, &z).unwrap().data().iter().all(|&v| v == 0.0));
        let e = zeroed(&NetSpec::encoder(2, 8, &[16]));
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        assert!(enc_forward(&e, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_match_single_rows_bit_exact() {
        let mut rng = Rng::new(9);
        let g = NetSpec::generator(8, 2, &[64, 64]).build(&mut rng).unwrap();
        let z = Tensor::new(vec![3, 8], rng.normal_vec(24)).unwrap();
        let batched = gen_forward(&g, &z).unwrap();
        for i in 0..3 {
            let single = Tensor::new(vec![1, 8], z.row(i).to_vec()).unwrap();
            let out = gen_forward(&g, &single).unwrap();
            let a: Vec<u32> = out.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = batched.row(i).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert!(batched.data().iter().all(|v| v.is_finite() && v.abs() < 1.0));
    }

    #[test]
    fn graph_and_direct_forward_agree() {
        let mut rng = Rng::new(10);
        let e = NetSpec::encoder(2, 8, &[16, 16]).build(&mut rng).unwrap();
        let x = Tensor::new(vec![5, 2], rng.normal_vec(10)).unwrap();
        let mut g = Graph::new();
        let mut feeds = Feeds::new();
        let bound = e.bind(&mut g, "E", &mut feeds);
        let xn = g.leaf("x", &[5, 2]);
        feeds.insert("x".into(), x.clone());
        let out = bound.apply(&mut g, xn);
        let via_graph = g.forward(out, &feeds).unwrap().clone();
        assert_eq!(via_graph, enc_forward(&e, &x).unwrap());
        assert!(matches!(
            enc_forward(&e, &Tensor::zeros(&[5, 3])),
            Err(NetError::InputWidth { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn encoder_score_gradient_checks() {
        let mut rng = Rng::new(12);
        let e = NetSpec::encoder(2, 8, &[16]).build(&mut rng).unwrap();
        let mut g = Graph::new();
        let mut feeds = Feeds::new();
        let bound = e.bind(&mut g, "E", &mut feeds);
        let xn = g.leaf("x", &[4, 2]);
        feeds.insert("x".into(), Tensor::new(vec![4, 2], rng.normal_vec(8)).unwrap());
        let codes = bound.apply(&mut g, xn);
        let score = g.mean(codes);
        let report = grad_check(&mut g, score, &feeds, "E.0.w", 1e-3, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }
}
