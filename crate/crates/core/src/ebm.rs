//! The classifier read as an energy-based density over inputs:
//! `log p̃(x) = logsumexp_y f_y(enc(x)) / tau`. The normalizer is never
//! computed; model samples come from SGLD chains kept in a replay buffer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{BoundModel, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

/// Per-sample `log p̃(x)` on a tape, `[n×d] -> [n]`.
pub fn log_unnorm_density(tape: &mut Tape, model: &BoundModel, x: Var) -> Result<Var> {
    let logits = model.logits(tape, x)?;
    log_density_from_logits(tape, logits, model.tau())
}

/// `logsumexp(logits / tau)` per row.
pub fn log_density_from_logits(tape: &mut Tape, logits: Var, tau: f64) -> Result<Var> {
    let scaled = tape.scale(logits, 1.0 / tau)?;
    tape.logsumexp_rows(scaled)
}

/// Unnormalized log-density with an input gradient. SGLD only needs these two
/// evaluations, which lets tests inject analytic densities.
pub trait LogDensity {
    /// `log p̃(x)` per row.
    fn log_density(&self, x: &Tensor) -> Result<Tensor>;

    /// `∇ₓ log p̃(x)` per row, same shape as `x`.
    fn input_grad(&self, x: &Tensor) -> Result<Tensor>;
}

impl LogDensity for ModelParams {
    fn log_density(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let model = self.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let lp = log_unnorm_density(&mut tape, &model, xv)?;
        Ok(tape.value(lp).clone())
    }

    fn input_grad(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let model = self.bind(&mut tape, false)?;
        let xv = tape.leaf(x.clone(), true)?;
        let lp = log_unnorm_density(&mut tape, &model, xv)?;
        // Rows are independent, so the gradient of the sum is the stack of
        // per-row gradients.
        let total = tape.sum(lp)?;
        tape.backward(total)?;
        Ok(tape.grad_or_zeros(xv))
    }
}

/// Settings of the Langevin sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub steps: usize,
    pub step_size: f64,
    pub noise_std: f64,
    pub reinit_prob: f64,
    /// Per-dimension bounds of the uniform reinitialization box.
    pub init_low: Vec<f64>,
    pub init_high: Vec<f64>,
    /// When set, iterates are clamped to the init box scaled by this factor
    /// about its center.
    pub clamp_factor: Option<f64>,
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("SGLD step size must be > 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("SGLD noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.reinit_prob) {
            return Err(Error::param("reinitialization probability must be in [0, 1]"));
        }
        if self.init_low.len() != self.init_high.len() || self.init_low.is_empty() {
            return Err(Error::param("init bounds must be non-empty and equally long"));
        }
        if self
            .init_low
            .iter()
            .zip(&self.init_high)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
        {
            return Err(Error::param("init bounds must satisfy low < high"));
        }
        if let Some(f) = self.clamp_factor {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(Error::param("clamp factor must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.init_low.len()
    }

    fn uniform_point(&self, rng: &mut impl Rng, out: &mut [f64]) {
        for ((o, l), h) in out.iter_mut().zip(&self.init_low).zip(&self.init_high) {
            *o = rng.random_range(*l..*h);
        }
    }

    fn clamp_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.clamp_factor.map(|f| {
            self.init_low
                .iter()
                .zip(&self.init_high)
                .map(|(l, h)| {
                    let (c, r) = ((l + h) / 2.0, (h - l) / 2.0 * f);
                    (c - r, c + r)
                })
                .unzip()
        })
    }
}

/// Bounding box of the rows of `points`, widened by `margin` times its extent
/// on every side.
pub fn expanded_bounds(points: &Tensor, margin: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = points.dims2()?;
    if n == 0 {
        return Err(Error::param("bounds of an empty point set"));
    }
    let mut low = vec![f64::INFINITY; d];
    let mut high = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (j, &v) in points.row(i).iter().enumerate() {
            low[j] = low[j].min(v);
            high[j] = high[j].max(v);
        }
    }
    for j in 0..d {
        let extent = (high[j] - low[j]).max(1e-6);
        low[j] -= margin * extent;
        high[j] += margin * extent;
    }
    Ok((low, high))
}

/// Fixed-capacity store of persistent SGLD chain states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: Tensor,
}

impl ReplayBuffer {
    /// Buffer pre-filled with uniform draws from the config's init box.
    pub fn new_uniform(capacity: usize, cfg: &SgldConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if capacity == 0 {
            return Err(Error::param("replay buffer capacity must be > 0"));
        }
        let d = cfg.dim();
        let mut entries = Tensor::zeros(&[capacity, d]);
        for i in 0..capacity {
            cfg.uniform_point(rng, entries.row_mut(i));
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Tensor) -> Result<Self> {
        let (n, d) = entries.dims2()?;
        if n == 0 || d == 0 {
            return Err(Error::param("replay buffer must be non-empty"));
        }
        Ok(Self { entries })
    }

    pub fn capacity(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }
}

/// Result of one sampling call.
#[derive(Clone, Debug)]
pub struct SgldDraw {
    pub samples: Tensor,
    /// Buffer rows the samples were taken from (and written back to).
    pub slots: Vec<usize>,
    pub reinitialized: usize,
}

/// Draws `m` buffer slots without replacement, reinitializes each with
/// probability `reinit_prob`, runs `steps` Langevin updates
/// `x ← x + step_size·∇ₓ log p̃(x) + noise_std·ε` and writes the final states
/// back. No gradient with respect to the model parameters is kept.
pub fn sgld_sample<D: LogDensity + ?Sized>(
    density: &D,
    buffer: &mut ReplayBuffer,
    cfg: &SgldConfig,
    m: usize,
    rng: &mut impl Rng,
) -> Result<SgldDraw> {
    cfg.validate()?;
    if m > buffer.capacity() {
        return Err(Error::param(format!(
            "requested {m} samples from a buffer of {}",
            buffer.capacity()
        )));
    }
    if cfg.dim() != buffer.dim() {
        return Err(Error::dim("SGLD init box and buffer dimension differ"));
    }
    let slots = rand::seq::index::sample(rng, buffer.capacity(), m).into_vec();
    let mut x = buffer.entries.gather_rows(&slots)?;
    let mut reinitialized = 0;
    for i in 0..m {
        if rng.random::<f64>() < cfg.reinit_prob {
            cfg.uniform_point(rng, x.row_mut(i));
            reinitialized += 1;
        }
    }
    let clamp = cfg.clamp_box();
    for _ in 0..cfg.steps {
        let g = density.input_grad(&x)?;
        let d = x.cols();
        for (k, (xv, gv)) in x.data_mut().iter_mut().zip(g.data()).enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            *xv += cfg.step_size * gv + cfg.noise_std * eps;
            if let Some((lo, hi)) = &clamp {
                let j = k % d;
                *xv = xv.clamp(lo[j], hi[j]);
            }
        }
        if !x.is_finite() {
            return Err(Error::Numeric("SGLD iterate diverged".into()));
        }
    }
    for (k, &slot) in slots.iter().enumerate() {
        buffer.entries.row_mut(slot).copy_from_slice(x.row(k));
    }
    Ok(SgldDraw {
        samples: x,
        slots,
        reinitialized,
    })
}

/// Gradient of the generative surrogate
/// `mean_data log p̃ − mean_model log p̃` with respect to the parameters.
#[derive(Clone, Debug)]
pub struct GenGradient {
    /// Ascent direction, in [`crate::nets::Parameters::tensors`] order.
    pub grads: Vec<Tensor>,
    /// Mean data log-density minus mean model log-density.
    pub value: f64,
}

/// Two-sample estimator of the generative gradient: the data batch raises the
/// density, the (detached) model samples lower it.
pub fn gen_loss_grad(params: &ModelParams, data_x: &Tensor, model_x: &Tensor) -> Result<GenGradient> {
    if data_x.rows() == 0 || model_x.rows() == 0 {
        return Err(Error::param("generative term needs non-empty data and model batches"));
    }
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, true)?;
    let surrogate = gen_surrogate(&mut tape, &model, data_x, model_x)?;
    tape.backward(surrogate)?;
    Ok(GenGradient {
        grads: model.gradients(&tape),
        value: tape.value(surrogate).item()?,
    })
}

/// Records the generative surrogate scalar on `tape`.
pub fn gen_surrogate(
    tape: &mut Tape,
    model: &BoundModel,
    data_x: &Tensor,
    model_x: &Tensor,
) -> Result<Var> {
    let n = data_x.rows();
    let both = Tensor::concat_rows(&[data_x, model_x])?;
    let xv = tape.constant(both)?;
    let lp = log_unnorm_density(tape, model, xv)?;
    let data_lp = tape.slice_rows(lp, 0, n)?;
    let model_lp = tape.slice_rows(lp, n, n + model_x.rows())?;
    let a = tape.mean(data_lp)?;
    let b = tape.mean(model_lp)?;
    tape.sub(a, b)
}
