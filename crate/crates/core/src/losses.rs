//! Discriminative terms (augmentation invariance and uniform-prior marginal
//! matching) and the weighted generative + discriminative objective.
//!
//! All terms are per-instance means and are *maximized*: each is a negative
//! cross-entropy, so `inv ≤ 0` and `prior ≤ −H(prior)`.

use serde::{Deserialize, Serialize};

use crate::ebm::log_density_from_logits;
use crate::error::{Error, Result};
use crate::nets::ModelParams;
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities inside logarithms.
pub const EPS_Q: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gen: f64,
    pub inv: f64,
    pub prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gen: 1.0,
            inv: 50.0,
            prior: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("gen", self.gen), ("inv", self.inv), ("prior", self.prior)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::param(format!("weight {name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Target marginal over clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    probs: Vec<f64>,
}

impl PriorSpec {
    pub fn uniform(c: usize) -> Self {
        Self {
            probs: vec![1.0 / c as f64; c],
        }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!("invalid prior {probs:?}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossOptions {
    /// Average the invariance term over both target/prediction role
    /// assignments of the two views.
    #[serde(default)]
    pub symmetrize: bool,
    #[serde(default = "default_eps_q")]
    pub eps_q: f64,
    /// Treat the target distribution of the invariance term as a constant.
    #[serde(default)]
    pub detach_target: bool,
}

fn default_eps_q() -> f64 {
    EPS_Q
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            symmetrize: false,
            eps_q: EPS_Q,
            detach_target: false,
        }
    }
}

/// `−Σ p ln max(q, EPS_Q)` in nats.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(format!(
            "cross entropy of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(-p
        .iter()
        .zip(q)
        .map(|(pi, qi)| pi * qi.max(EPS_Q).ln())
        .sum::<f64>())
}

/// Shannon entropy in nats (`0 ln 0 = 0`).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

fn neg_ce_rows(tape: &mut Tape, target: Var, pred: Var, tau: f64, eps_q: f64) -> Result<Var> {
    let n = tape.value(target).rows();
    let p = tape.softmax_rows(target, tau)?;
    let q = tape.softmax_rows(pred, tau)?;
    let log_q = tape.log_clamped(q, eps_q)?;
    let prod = tape.mul(p, log_q)?;
    let total = tape.sum(prod)?;
    tape.scale(total, 1.0 / n as f64)
}

/// Invariance term: `−(1/n) Σ_i CE(softmax(t_aug_i/τ), softmax(t_i/τ))`.
/// Gradients reach both views.
pub fn inv_loss(tape: &mut Tape, t: Var, t_aug: Var, tau: f64, opts: &LossOptions) -> Result<Var> {
    let (n, c) = tape.value(t).dims2()?;
    if tape.value(t_aug).shape() != [n, c] {
        return Err(Error::dim("inv_loss views have different shapes"));
    }
    if n == 0 {
        return Err(Error::dim("inv_loss of an empty batch"));
    }
    let target_of = |tape: &mut Tape, v: Var| -> Result<Var> {
        if opts.detach_target {
            let value = tape.value(v).clone();
            tape.constant(value)
        } else {
            Ok(v)
        }
    };
    let aug_target = target_of(tape, t_aug)?;
    let forward = neg_ce_rows(tape, aug_target, t, tau, opts.eps_q)?;
    if !opts.symmetrize {
        return Ok(forward);
    }
    let clean_target = target_of(tape, t)?;
    let backward = neg_ce_rows(tape, clean_target, t_aug, tau, opts.eps_q)?;
    let both = tape.add(forward, backward)?;
    tape.scale(both, 0.5)
}

/// Prior term: `−CE(prior, q)` with `q` the batch mean of `softmax(t/τ)`.
pub fn prior_loss(tape: &mut Tape, t: Var, tau: f64, prior: &PriorSpec, opts: &LossOptions) -> Result<Var> {
    let (n, c) = tape.value(t).dims2()?;
    if n == 0 {
        return Err(Error::dim("prior_loss of an empty batch"));
    }
    if prior.probs.len() != c {
        return Err(Error::dim(format!(
            "prior over {} classes for {c} logits",
            prior.probs.len()
        )));
    }
    let p = tape.softmax_rows(t, tau)?;
    let q = tape.mean_rows(p)?;
    let log_q = tape.log_clamped(q, opts.eps_q)?;
    let target = tape.constant(Tensor::vector(prior.probs.clone()))?;
    let prod = tape.mul(target, log_q)?;
    tape.sum(prod)
}

/// Value of [`inv_loss`] for plain logit matrices.
pub fn inv_loss_value(t: &Tensor, t_aug: &Tensor, tau: f64, opts: &LossOptions) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(t.clone())?, tape.constant(t_aug.clone())?);
    let v = inv_loss(&mut tape, a, b, tau, opts)?;
    tape.value(v).item()
}

/// Value of [`prior_loss`] for a plain logit matrix.
pub fn prior_loss_value(t: &Tensor, tau: f64, prior: &PriorSpec, opts: &LossOptions) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(t.clone())?;
    let v = prior_loss(&mut tape, a, tau, prior, opts)?;
    tape.value(v).item()
}

/// Clean inputs and their augmented views.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub x_aug: Tensor,
}

/// Unweighted term values; a term whose weight is zero is not evaluated and
/// reported as `0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub gen: f64,
    pub inv: f64,
    pub prior: f64,
}

/// Which terms were actually computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvaluatedTerms {
    pub gen: bool,
    pub inv: bool,
    pub prior: bool,
}

#[derive(Clone, Debug)]
pub struct Objective {
    /// `w_gen·gen + w_inv·inv + w_prior·prior`.
    pub total: f64,
    pub terms: TermBreakdown,
    pub evaluated: EvaluatedTerms,
    /// Ascent direction in [`crate::nets::Parameters::tensors`] order.
    pub grads: Vec<Tensor>,
}

/// Evaluates the weighted objective and its gradient on one tape.
///
/// The generative part is the two-sample surrogate
/// `mean_data log p̃ − mean_model log p̃`, whose gradient is the generative
/// estimator when `model_x` carries no parameter dependence; it is required
/// iff `weights.gen > 0`. Terms with zero weight are skipped entirely.
pub fn gedi_objective(
    params: &ModelParams,
    batch: &Batch,
    model_x: Option<&Tensor>,
    weights: &LossWeights,
    prior: &PriorSpec,
    opts: &LossOptions,
) -> Result<Objective> {
    weights.validate()?;
    let n = batch.x.rows();
    if n == 0 {
        return Err(Error::param("empty batch"));
    }
    let use_gen = weights.gen > 0.0;
    let use_inv = weights.inv > 0.0;
    let use_prior = weights.prior > 0.0;
    let evaluated = EvaluatedTerms {
        gen: use_gen,
        inv: use_inv,
        prior: use_prior,
    };

    let mut tape = Tape::new();
    let model = params.bind(&mut tape, true)?;
    let tau = model.tau();

    let mut parts = vec![&batch.x];
    if use_inv {
        if batch.x_aug.shape() != batch.x.shape() {
            return Err(Error::dim("augmented view shape differs from the batch"));
        }
        parts.push(&batch.x_aug);
    }
    let mut m = 0;
    if use_gen {
        let mx = model_x.ok_or_else(|| Error::param("generative term needs model samples"))?;
        if mx.rows() == 0 {
            return Err(Error::param("generative term needs model samples"));
        }
        m = mx.rows();
        parts.push(mx);
    }
    let inputs = tape.constant(Tensor::concat_rows(&parts)?)?;
    let logits = model.logits(&mut tape, inputs)?;
    let t = tape.slice_rows(logits, 0, n)?;

    let mut terms = TermBreakdown::default();
    let mut weighted = Vec::new();
    if use_gen {
        let start = if use_inv { 2 * n } else { n };
        let t_model = tape.slice_rows(logits, start, start + m)?;
        let lp_data = log_density_from_logits(&mut tape, t, tau)?;
        let lp_model = log_density_from_logits(&mut tape, t_model, tau)?;
        let a = tape.mean(lp_data)?;
        let b = tape.mean(lp_model)?;
        let g = tape.sub(a, b)?;
        terms.gen = tape.value(g).item()?;
        weighted.push(tape.scale(g, weights.gen)?);
    }
    if use_inv {
        let t_aug = tape.slice_rows(logits, n, 2 * n)?;
        let v = inv_loss(&mut tape, t, t_aug, tau, opts)?;
        terms.inv = tape.value(v).item()?;
        weighted.push(tape.scale(v, weights.inv)?);
    }
    if use_prior {
        let v = prior_loss(&mut tape, t, tau, prior, opts)?;
        terms.prior = tape.value(v).item()?;
        weighted.push(tape.scale(v, weights.prior)?);
    }

    let Some((&first, rest)) = weighted.split_first() else {
        let grads = crate::nets::Parameters::tensors(params)
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        return Ok(Objective {
            total: 0.0,
            terms,
            evaluated,
            grads,
        });
    };
    let mut total = first;
    for &w in rest {
        total = tape.add(total, w)?;
    }
    tape.backward(total)?;
    Ok(Objective {
        total: tape.value(total).item()?,
        terms,
        evaluated,
        grads: model.gradients(&tape),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn cross_entropy_values() {
        let ce = cross_entropy(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        let ce = cross_entropy(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
        assert!((ce + 0.9f64.ln()).abs() < 1e-15);
        assert!((ce - 0.10536).abs() < 1e-5);
        assert!(matches!(cross_entropy(&[1.0], &[0.5, 0.5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn self_cross_entropy_is_entropy() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert!((cross_entropy(&p, &p).unwrap() - entropy(&p)).abs() < 1e-15);
    }

    #[test]
    fn inv_uniform_is_minus_ln2() {
        let z = Tensor::zeros(&[3, 2]);
        let v = inv_loss_value(&z, &z, 1.0, &LossOptions::default()).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn inv_confident_agreement_is_near_zero() {
        let t = m(&[&[20.0, 0.0], &[20.0, 0.0]]);
        let v = inv_loss_value(&t, &t, 1.0, &LossOptions::default()).unwrap();
        assert!(v > -1e-6 && v <= 0.0);
    }

    #[test]
    fn inv_row_swap_is_worse() {
        let t = m(&[&[2.0, -1.0], &[-0.5, 1.5]]);
        let swapped = m(&[&[-0.5, 1.5], &[2.0, -1.0]]);
        let o = LossOptions::default();
        let same = inv_loss_value(&t, &t, 1.0, &o).unwrap();
        let perm = inv_loss_value(&t, &swapped, 1.0, &o).unwrap();
        assert!(perm < same);
    }

    #[test]
    fn symmetrized_inv_averages_directions() {
        let t = m(&[&[2.0, -1.0], &[-0.5, 1.5]]);
        let u = m(&[&[0.3, 0.1], &[1.0, -1.0]]);
        let o = LossOptions::default();
        let s = LossOptions {
            symmetrize: true,
            ..o
        };
        let a = inv_loss_value(&t, &u, 1.0, &o).unwrap();
        let b = inv_loss_value(&u, &t, 1.0, &o).unwrap();
        let sym = inv_loss_value(&t, &u, 1.0, &s).unwrap();
        assert!((sym - 0.5 * (a + b)).abs() < 1e-15);
    }

    #[test]
    fn prior_uniform_logits_hit_the_maximum() {
        let o = LossOptions::default();
        let v = prior_loss_value(&Tensor::zeros(&[5, 3]), 1.0, &PriorSpec::uniform(3), &o).unwrap();
        assert!((v + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn prior_penalizes_cluster_collapse() {
        let t = Tensor::from_rows(&[[20.0, 0.0]; 4]).unwrap();
        let o = LossOptions::default();
        let v = prior_loss_value(&t, 1.0, &PriorSpec::uniform(2), &o).unwrap();
        // q2 = sigmoid(-20), q1 = 1 - q2.
        let q2 = 1.0 / (1.0 + 20f64.exp());
        let expected = 0.5 * ((1.0 - q2).ln() + q2.ln());
        assert!((v - expected).abs() < 1e-9);
        assert!(v < -2f64.ln() - 8.0);
    }

    #[test]
    fn prior_is_row_permutation_invariant() {
        let t = m(&[&[0.3, -1.2], &[2.0, 0.5], &[-0.7, 0.1]]);
        let p = m(&[&[-0.7, 0.1], &[0.3, -1.2], &[2.0, 0.5]]);
        let o = LossOptions::default();
        let u = PriorSpec::uniform(2);
        assert_eq!(
            prior_loss_value(&t, 1.0, &u, &o).unwrap(),
            prior_loss_value(&p, 1.0, &u, &o).unwrap()
        );
    }

    #[test]
    fn prior_spec_validation() {
        assert!(PriorSpec::new(vec![0.3, 0.7]).is_ok());
        assert!(PriorSpec::new(vec![0.3, 0.6]).is_err());
        assert!(PriorSpec::new(vec![-0.1, 1.1]).is_err());
        assert!(PriorSpec::new(vec![]).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            gen: -1.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }
}
