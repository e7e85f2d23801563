#![allow(dead_code)]

use gedi::nets::Parameters;
use gedi::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}

/// Reduces a possibly non-scalar output to `Σ out ⊙ r`.
fn project(tape: &mut Tape, out: Var, r: Option<&Tensor>) -> Var {
    match r {
        None => out,
        Some(r) => {
            let rv = tape.constant(r.clone()).unwrap();
            let prod = tape.mul(out, rv).unwrap();
            tape.sum(prod).unwrap()
        }
    }
}

fn eval<F>(inputs: &[Tensor], f: &F, r: Option<&Tensor>) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let s = project(&mut tape, out, r);
    tape.value(s).item().unwrap()
}

/// Relative error between tape gradients and central differences for every
/// input of `f`. Non-scalar outputs are contracted with a fixed random
/// tensor drawn from `rng`.
pub fn check_op<F>(rng: &mut impl Rng, inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let r = if tape.value(out).numel() == 1 && tape.value(out).rank() == 0 {
        None
    } else {
        let shape = tape.value(out).shape().to_vec();
        Some(uniform(rng, &shape, -1.0, 1.0))
    };
    let s = project(&mut tape, out, r.as_ref());
    tape.backward(s).unwrap();
    let mut analytic = Vec::new();
    for v in &vars {
        analytic.extend_from_slice(tape.grad_or_zeros(*v).data());
    }
    let mut numeric = Vec::new();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            numeric.push((eval(&plus, &f, r.as_ref()) - eval(&minus, &f, r.as_ref())) / (2.0 * H));
        }
    }
    rel_error(&analytic, &numeric)
}

/// Central differences of a scalar function of model parameters, in
/// [`Parameters::tensors`] order.
pub fn param_fd<P: Parameters + Clone>(params: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let count = params.tensors().len();
    for i in 0..count {
        let numel = params.tensors()[i].numel();
        for k in 0..numel {
            let mut p = params.clone();
            p.tensors_mut()[i].data_mut()[k] += H;
            let fp = f(&p);
            let mut m = params.clone();
            m.tensors_mut()[i].data_mut()[k] -= H;
            let fm = f(&m);
            out.push((fp - fm) / (2.0 * H));
        }
    }
    out
}

pub fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}
