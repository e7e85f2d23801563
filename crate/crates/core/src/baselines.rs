//! Comparison methods: a SwAV-style swapped-prediction objective with
//! Sinkhorn-Knopp targets behind a stop-gradient. The JEM baseline is the
//! clustering model trained on the generative term alone; see
//! [`crate::trainer::Variant::Jem`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Batch, EPS_Q};
use crate::nets::SwavParams;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub iterations: usize,
    pub epsilon: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            epsilon: 0.05,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("Sinkhorn needs at least one iteration"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("Sinkhorn epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Balanced soft assignments from `exp(scores/ε)`: each round rescales the
/// columns to sum `n/c`, then the rows to sum 1. Computed in the log domain.
pub fn sinkhorn_knopp(scores: &Tensor, cfg: &SinkhornConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (n, c) = scores.dims2()?;
    if n == 0 || c == 0 {
        return Err(Error::dim("Sinkhorn of an empty score matrix"));
    }
    if !scores.is_finite() {
        return Err(Error::Numeric("non-finite Sinkhorn scores".into()));
    }
    let mut log_q = scores.map(|s| s / cfg.epsilon);
    let log_col_target = (n as f64 / c as f64).ln();
    let data = log_q.data_mut();
    let mut col = vec![0.0; n];
    for _ in 0..cfg.iterations {
        for j in 0..c {
            for i in 0..n {
                col[i] = data[i * c + j];
            }
            let shift = log_col_target - logsumexp(&col);
            for i in 0..n {
                data[i * c + j] += shift;
            }
        }
        for row in data.chunks_mut(c) {
            let shift = logsumexp(row);
            for v in row.iter_mut() {
                *v -= shift;
            }
        }
    }
    let q = log_q.map(f64::exp);
    if !q.is_finite() {
        return Err(Error::Numeric("Sinkhorn produced a non-finite value".into()));
    }
    Ok(q)
}

fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Settings of the swapped-prediction objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwavConfig {
    pub sinkhorn: SinkhornConfig,
    /// Softmax temperature of the predictions.
    pub tau: f64,
}

impl Default for SwavConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            tau: 0.1,
        }
    }
}

/// Nodes of one recorded swapped-prediction loss.
#[derive(Clone, Copy, Debug)]
pub struct SwavGraph {
    pub loss: Var,
    /// Per-view cosine scores `[n×c]`.
    pub scores: [Var; 2],
    /// Per-view Sinkhorn targets, registered as constants.
    pub targets: [Var; 2],
}

/// Records the symmetrized swapped-prediction cross-entropy:
/// view-1 targets supervise view-2 predictions and vice versa.
/// `targets` overrides the Sinkhorn computation.
pub fn swav_graph(
    tape: &mut Tape,
    params: &SwavParams,
    batch: &Batch,
    cfg: &SwavConfig,
    targets: Option<&[Tensor; 2]>,
) -> Result<(SwavGraph, crate::nets::BoundSwav)> {
    let n = batch.x.rows();
    if n == 0 || batch.x_aug.shape() != batch.x.shape() {
        return Err(Error::dim("SwAV batch views must be non-empty and equally shaped"));
    }
    let bound = params.bind(tape, true)?;
    let x = tape.constant(Tensor::concat_rows(&[&batch.x, &batch.x_aug])?)?;
    let scores = bound.scores(tape, x)?;
    let s1 = tape.slice_rows(scores, 0, n)?;
    let s2 = tape.slice_rows(scores, n, 2 * n)?;
    let (q1, q2) = match targets {
        Some([a, b]) => (a.clone(), b.clone()),
        None => (
            sinkhorn_knopp(tape.value(s1), &cfg.sinkhorn)?,
            sinkhorn_knopp(tape.value(s2), &cfg.sinkhorn)?,
        ),
    };
    let q1 = tape.constant(q1)?;
    let q2 = tape.constant(q2)?;
    let a = swapped_ce(tape, q1, s2, cfg.tau, n)?;
    let b = swapped_ce(tape, q2, s1, cfg.tau, n)?;
    let sum = tape.add(a, b)?;
    let loss = tape.scale(sum, 0.5)?;
    Ok((
        SwavGraph {
            loss,
            scores: [s1, s2],
            targets: [q1, q2],
        },
        bound,
    ))
}

fn swapped_ce(tape: &mut Tape, target: Var, scores: Var, tau: f64, n: usize) -> Result<Var> {
    let p = tape.softmax_rows(scores, tau)?;
    let log_p = tape.log_clamped(p, EPS_Q)?;
    let prod = tape.mul(target, log_p)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / n as f64)
}

#[derive(Clone, Debug)]
pub struct SwavStep {
    pub loss: f64,
    /// Gradient of the loss (descent direction is its negation), in
    /// [`crate::nets::Parameters::tensors`] order.
    pub grads: Vec<Tensor>,
    pub targets: [Tensor; 2],
}

/// Loss and parameter gradient of one swapped-prediction step.
pub fn swav_step(params: &SwavParams, batch: &Batch, cfg: &SwavConfig) -> Result<SwavStep> {
    let mut tape = Tape::new();
    let (graph, bound) = swav_graph(&mut tape, params, batch, cfg, None)?;
    tape.backward(graph.loss)?;
    Ok(SwavStep {
        loss: tape.value(graph.loss).item()?,
        grads: bound.gradients(&tape),
        targets: [
            tape.value(graph.targets[0]).clone(),
            tape.value(graph.targets[1]).clone(),
        ],
    })
}

/// Loss value with the targets held fixed.
pub fn swav_loss_with_targets(
    params: &SwavParams,
    batch: &Batch,
    cfg: &SwavConfig,
    targets: &[Tensor; 2],
) -> Result<f64> {
    let mut tape = Tape::new();
    let (graph, _) = swav_graph(&mut tape, params, batch, cfg, Some(targets))?;
    tape.value(graph.loss).item()
}
