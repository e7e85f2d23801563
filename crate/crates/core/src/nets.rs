//! Encoder / head MLPs for the clustering model and the prototype-based
//! projector used by the SwAV-style baseline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu { slope } => tape.leaky_relu(x, slope),
        }
    }

    fn apply_scalar(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
        }
    }
}

/// Layer widths of the model. The encoder maps `input_dim` through
/// `encoder_hidden` to `latent_dim`; the head maps `latent_dim` through
/// `head_hidden` to `clusters`. For the SwAV-style model the head widths are
/// used by the projector, whose output has `latent_dim` units and is compared
/// against `clusters` prototypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub head_hidden: Vec<usize>,
    pub clusters: usize,
    #[serde(default)]
    pub activation: Activation,
    pub tau: f64,
}

impl Default for Architecture {
    /// 2→100→100→2 encoder and 2→4→2 head with ReLU, `tau = 1`.
    fn default() -> Self {
        Self {
            input_dim: 2,
            encoder_hidden: vec![100, 100],
            latent_dim: 2,
            head_hidden: vec![4],
            clusters: 2,
            activation: Activation::Relu,
            tau: 1.0,
        }
    }
}

impl Architecture {
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.encoder_hidden);
        d.push(self.latent_dim);
        d
    }

    pub fn head_dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.head_hidden);
        d.push(self.clusters);
        d
    }

    pub fn projector_dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim];
        d.extend(&self.head_hidden);
        d.push(self.latent_dim);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_dims().contains(&0) || self.head_dims().contains(&0) {
            return Err(Error::param("zero-dimension layer in architecture"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return Err(Error::param("leaky relu slope must be finite"));
            }
        }
        Ok(())
    }
}

/// Fan-in scaled uniform weight init.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    /// `b = 1/sqrt(fan_in)`, the usual default of deep-learning frameworks.
    #[default]
    FanIn,
    /// `b = sqrt(6/fan_in)` (He uniform).
    Kaiming,
}

impl WeightInit {
    pub fn bound(self, fan_in: usize) -> f64 {
        match self {
            WeightInit::FanIn => (1.0 / fan_in as f64).sqrt(),
            WeightInit::Kaiming => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored `[in×out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// `U(-b, b)` weights with `b` set by `init`, and `U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))` biases.
    pub fn uniform_init(inputs: usize, outputs: usize, init: WeightInit, rng: &mut impl Rng) -> Self {
        let wb = init.bound(inputs);
        let bb = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-wb..wb))
            .collect();
        let b = (0..outputs).map(|_| rng.random_range(-bb..bb)).collect();
        Self {
            weight: Tensor::matrix(inputs, outputs, w).expect("consistent shape"),
            bias: Tensor::vector(b),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Stack of linear layers with the activation applied between layers (not
/// after the last one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init(dims: &[usize], activation: Activation, init: WeightInit, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::uniform_init(w[0], w[1], init, rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            activation,
        }
    }

    /// Checks that layer shapes chain through `dims`.
    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::dim(format!(
                "expected {} layers, found {}",
                dims.len().saturating_sub(1),
                self.layers.len()
            )));
        }
        for (l, w) in self.layers.iter().zip(dims.windows(2)) {
            if l.weight.shape() != [w[0], w[1]] || l.bias.shape() != [w[1]] {
                return Err(Error::dim(format!(
                    "layer {:?}/{:?} does not match widths {}→{}",
                    l.weight.shape(),
                    l.bias.shape(),
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundMlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = tape.leaf(l.weight.clone(), requires_grad)?;
            let b = tape.leaf(l.bias.clone(), requires_grad)?;
            layers.push((w, b));
        }
        Ok(BoundMlp {
            layers,
            activation: self.activation,
        })
    }

    /// Plain forward pass without a tape.
    pub fn forward_value(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weight)?;
            let cols = h.cols();
            for row in h.data_mut().chunks_mut(cols) {
                for (v, b) in row.iter_mut().zip(l.bias.data()) {
                    *v += b;
                }
            }
            if i + 1 < self.layers.len() {
                h = h.map(|v| self.activation.apply_scalar(v));
            }
        }
        Ok(h)
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let in_dim = self.layers.first().map(|(w, _)| tape.value(*w).rows());
        let (_, d) = tape.value(x).dims2()?;
        if in_dim != Some(d) {
            return Err(Error::dim(format!(
                "input has {d} columns, network expects {in_dim:?}"
            )));
        }
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, *w)?;
            h = tape.add_bias(h, *b)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }
}

/// Anything holding a flat, ordered list of trainable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Encoder, discriminative head and temperature of the clustering model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub encoder: Mlp,
    pub head: Mlp,
}

impl ModelParams {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        Self::init_with(arch, WeightInit::default(), seed)
    }

    pub fn init_with(arch: &Architecture, init: WeightInit, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init(&arch.encoder_dims(), arch.activation, init, &mut rng)?;
        let head = Mlp::init(&arch.head_dims(), arch.activation, init, &mut rng)?;
        Ok(Self {
            arch: arch.clone(),
            encoder,
            head,
        })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            encoder: Mlp::zeros(&arch.encoder_dims(), arch.activation),
            head: Mlp::zeros(&arch.head_dims(), arch.activation),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.encoder.check_dims(&self.arch.encoder_dims())?;
        self.head.check_dims(&self.arch.head_dims())
    }

    pub fn tau(&self) -> f64 {
        self.arch.tau
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundModel> {
        Ok(BoundModel {
            encoder: self.encoder.bind(tape, requires_grad)?,
            head: self.head.bind(tape, requires_grad)?,
            tau: self.arch.tau,
        })
    }

    pub fn encode_value(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.forward_value(x)
    }

    /// Unscaled head outputs `f(enc(x))`.
    pub fn logits_value(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_value(x)?;
        self.head.forward_value(&z)
    }

    /// Hard cluster assignments (row-wise argmax of the logits).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.logits_value(x)?.argmax_rows()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, d) = x.dims2()?;
        if d != self.arch.input_dim {
            return Err(Error::dim(format!(
                "input has {d} columns, model expects {}",
                self.arch.input_dim
            )));
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.encoder.tensors().chain(self.head.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .tensors_mut()
            .chain(self.head.tensors_mut())
            .collect()
    }
}

/// [`ModelParams`] registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: BoundMlp,
    head: BoundMlp,
    tau: f64,
}

impl BoundModel {
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.encoder.forward(tape, x)
    }

    /// `f(enc(x))`, not divided by the temperature.
    pub fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.encode(tape, x)?;
        self.head.forward(tape, z)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Parameter gradients in [`Parameters::tensors`] order; zeros for
    /// parameters the root does not depend on.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.encoder
            .vars()
            .chain(self.head.vars())
            .map(|v| tape.grad_or_zeros(v))
            .collect()
    }
}

/// Backbone, projector onto the unit sphere and prototype matrix `U [h×c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwavParams {
    pub arch: Architecture,
    pub encoder: Mlp,
    pub projector: Mlp,
    pub prototypes: Tensor,
}

/// Variance floor of the projector's per-feature standardization.
pub const STANDARDIZE_EPS: f64 = 1e-5;

impl SwavParams {
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        Self::init_with(arch, WeightInit::default(), seed)
    }

    pub fn init_with(arch: &Architecture, init: WeightInit, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init(&arch.encoder_dims(), arch.activation, init, &mut rng)?;
        let projector = Mlp::init(&arch.projector_dims(), arch.activation, init, &mut rng)?;
        let (h, c) = (arch.latent_dim, arch.clusters);
        let u: Vec<f64> = (0..h * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut params = Self {
            arch: arch.clone(),
            encoder,
            projector,
            prototypes: Tensor::matrix(h, c, u)?,
        };
        params.normalize_prototypes()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.encoder.check_dims(&self.arch.encoder_dims())?;
        self.projector.check_dims(&self.arch.projector_dims())?;
        if self.prototypes.shape() != [self.arch.latent_dim, self.arch.clusters] {
            return Err(Error::dim("prototype matrix shape"));
        }
        Ok(())
    }

    /// Rescales every prototype column to unit L2 norm.
    pub fn normalize_prototypes(&mut self) -> Result<()> {
        let (h, c) = self.prototypes.dims2()?;
        let data = self.prototypes.data_mut();
        for j in 0..c {
            let norm = (0..h).map(|i| data[i * c + j].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Numeric(format!("prototype {j} has zero norm")));
            }
            for i in 0..h {
                data[i * c + j] /= norm;
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundSwav> {
        Ok(BoundSwav {
            encoder: self.encoder.bind(tape, requires_grad)?,
            projector: self.projector.bind(tape, requires_grad)?,
            prototypes: tape.leaf(self.prototypes.clone(), requires_grad)?,
            tau: self.arch.tau,
        })
    }

    /// Cosine scores of a batch without recording gradients.
    pub fn scores_value(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let s = bound.scores(&mut tape, xv)?;
        Ok(tape.value(s).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.scores_value(x)?.argmax_rows()
    }
}

impl Parameters for SwavParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.encoder
            .tensors()
            .chain(self.projector.tensors())
            .chain(std::iter::once(&self.prototypes))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .tensors_mut()
            .chain(self.projector.tensors_mut())
            .chain(std::iter::once(&mut self.prototypes))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundSwav {
    encoder: BoundMlp,
    projector: BoundMlp,
    prototypes: Var,
    tau: f64,
}

impl BoundSwav {
    /// Unit-norm embedding `proj(enc(x))`. The projector standardizes each
    /// hidden feature over the batch before its activation.
    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = self.encoder.forward(tape, x)?;
        let n = self.projector.layers.len();
        for (i, (w, b)) in self.projector.layers.iter().enumerate() {
            h = tape.matmul(h, *w)?;
            h = tape.add_bias(h, *b)?;
            if i + 1 < n {
                if tape.value(h).rows() > 1 {
                    h = tape.standardize_cols(h, STANDARDIZE_EPS)?;
                }
                h = self.projector.activation.apply(tape, h)?;
            }
        }
        tape.normalize_rows(h)
    }

    /// Cosine similarity between embeddings and prototype columns, `[n×c]`.
    pub fn scores(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.embed(tape, x)?;
        tape.matmul(z, self.prototypes)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.encoder
            .vars()
            .chain(self.projector.vars())
            .chain(std::iter::once(self.prototypes))
            .map(|v| tape.grad_or_zeros(v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::matrix(n, d, data).unwrap()
    }

    #[test]
    fn default_architecture_widths() {
        let a = Architecture::default();
        assert_eq!(a.encoder_dims(), vec![2, 100, 100, 2]);
        assert_eq!(a.head_dims(), vec![2, 4, 2]);
        assert_eq!(a.activation, Activation::Relu);
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let p = ModelParams::zeros(&Architecture::default()).unwrap();
        let z = p.encode_value(&random_input(5, 2, 1)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let l = p.logits_value(&random_input(5, 2, 1)).unwrap();
        assert!(l.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_encoder() {
        let arch = Architecture {
            encoder_hidden: vec![],
            ..Architecture::default()
        };
        let mut p = ModelParams::zeros(&arch).unwrap();
        p.encoder.layers[0].weight = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let x = random_input(4, 2, 3);
        assert_eq!(p.encode_value(&x).unwrap(), x);
    }

    #[test]
    fn manual_layer_by_layer_forward() {
        let p = ModelParams::init(&Architecture::default(), 11).unwrap();
        let x = random_input(6, 2, 12);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let z = bound.encode(&mut tape, xv).unwrap();
        let got = tape.value(z).clone();
        for i in 0..6 {
            let mut h: Vec<f64> = x.row(i).to_vec();
            for (k, layer) in p.encoder.layers.iter().enumerate() {
                let (din, dout) = layer.weight.dims2().unwrap();
                let mut next = vec![0.0; dout];
                for (o, nv) in next.iter_mut().enumerate() {
                    let mut acc = layer.bias.data()[o];
                    for (j, hv) in h.iter().enumerate().take(din) {
                        acc += hv * layer.weight.data()[j * dout + o];
                    }
                    *nv = if k + 1 < p.encoder.layers.len() { acc.max(0.0) } else { acc };
                }
                h = next;
            }
            for (a, b) in h.iter().zip(got.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_compose_encode_and_head() {
        let p = ModelParams::init(&Architecture::default(), 5).unwrap();
        let x = random_input(7, 2, 6);
        let direct = p.logits_value(&x).unwrap();
        let z = p.encode_value(&x).unwrap();
        let composed = p.head.forward_value(&z).unwrap();
        assert_eq!(direct, composed);
        assert_eq!(direct, p.logits_value(&x).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let p = ModelParams::init(&Architecture::default(), 5).unwrap();
        assert!(matches!(
            p.encode_value(&random_input(3, 3, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let a = Architecture::default();
        assert_eq!(ModelParams::init(&a, 1).unwrap(), ModelParams::init(&a, 1).unwrap());
        assert_ne!(ModelParams::init(&a, 1).unwrap(), ModelParams::init(&a, 2).unwrap());
    }

    #[test]
    fn init_rejects_zero_width() {
        let a = Architecture {
            encoder_hidden: vec![100, 0],
            ..Architecture::default()
        };
        assert!(matches!(ModelParams::init(&a, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn init_weight_mean_is_centered() {
        // U(-b, b) has std b/sqrt(3); the sample mean of N draws has
        // standard error b/sqrt(3N).
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let layer = Linear::uniform_init(100, 100, WeightInit::Kaiming, &mut rng);
        let n = layer.weight.numel() as f64;
        let b = (6.0f64 / 100.0).sqrt();
        let mean = layer.weight.sum() / n;
        let se = b / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn swav_scores_are_cosines() {
        let arch = Architecture::default();
        let p = SwavParams::init(&arch, 3).unwrap();
        let x = random_input(16, 2, 4);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false).unwrap();
        let xv = tape.constant(x).unwrap();
        let z = bound.embed(&mut tape, xv).unwrap();
        let s = bound.scores(&mut tape, xv).unwrap();
        let (z, s) = (tape.value(z).clone(), tape.value(s).clone());
        let (h, c) = p.prototypes.dims2().unwrap();
        for i in 0..16 {
            let norm: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            for j in 0..c {
                let col: Vec<f64> = (0..h).map(|k| p.prototypes.data()[k * c + j]).collect();
                let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = z.row(i).iter().zip(&col).map(|(a, b)| a * b).sum();
                let cos = dot / (norm * cn);
                assert!((cos - s.row(i)[j]).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(&s.row(i)[j]));
            }
        }
    }

    #[test]
    fn swav_score_matches_prototype_geometry() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[[0.6, 0.8]]).unwrap()).unwrap();
        let u = tape
            .constant(Tensor::from_rows(&[[0.6, -0.8], [0.8, 0.6]]).unwrap())
            .unwrap();
        let s = tape.matmul(z, u).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!(v[1].abs() < 1e-15);
    }
}
