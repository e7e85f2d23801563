mod common;

use common::{rel_error, rng, uniform};
use gedi::ebm::{gen_loss_grad, sgld_sample, LogDensity, ReplayBuffer, SgldConfig};
use gedi::nets::{Architecture, ModelParams};
use gedi::{Result, Tensor};

/// `log p̃(x) = −½ xᵀ A x` with diagonal `A`.
struct Quadratic {
    precision: Vec<f64>,
}

impl LogDensity for Quadratic {
    fn log_density(&self, x: &Tensor) -> Result<Tensor> {
        let v = (0..x.rows())
            .map(|i| {
                -0.5 * x
                    .row(i)
                    .iter()
                    .zip(&self.precision)
                    .map(|(x, a)| a * x * x)
                    .sum::<f64>()
            })
            .collect();
        Tensor::new(vec![x.rows()], v)
    }

    fn input_grad(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = x.clone();
        for i in 0..g.rows() {
            for (v, a) in g.row_mut(i).iter_mut().zip(&self.precision) {
                *v *= -a;
            }
        }
        Ok(g)
    }
}

fn config(steps: usize, step_size: f64, noise_std: f64, reinit_prob: f64) -> SgldConfig {
    SgldConfig {
        steps,
        step_size,
        noise_std,
        reinit_prob,
        init_low: vec![-3.0, -3.0],
        init_high: vec![3.0, 3.0],
        clamp_factor: None,
    }
}

fn covariance(x: &Tensor) -> [[f64; 2]; 2] {
    let n = x.rows() as f64;
    let mean: Vec<f64> = (0..2)
        .map(|j| (0..x.rows()).map(|i| x.row(i)[j]).sum::<f64>() / n)
        .collect();
    let mut c = [[0.0; 2]; 2];
    for i in 0..x.rows() {
        let r = x.row(i);
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    c
}

/// Chains of `x ← (1 − αa)x + σε` converge to variance `σ² / (1 − (1 − αa)²)`;
/// picking `σ` to make that `1/a` and running well past `1/(αa)` steps leaves
/// the empirical covariance near `A⁻¹`.
fn stationary_check(precision: [f64; 2], step_size: f64) {
    let a_min = precision.iter().copied().fold(f64::INFINITY, f64::min);
    let a_max = precision.iter().copied().fold(0.0, f64::max);
    let contraction = 1.0 - step_size * a_max;
    let noise_std = ((1.0 - contraction * contraction) / a_max).sqrt();
    let burn_in = ((100.0f64).ln() * 4.0 / (step_size * a_min)).ceil() as usize;
    let density = Quadratic {
        precision: precision.to_vec(),
    };
    let cfg = config(burn_in, step_size, noise_std, 0.0);
    let mut r = rng(11);
    let m = 4000;
    let mut buffer = ReplayBuffer::new_uniform(m, &cfg, &mut r).unwrap();
    let draw = sgld_sample(&density, &mut buffer, &cfg, m, &mut r).unwrap();
    let c = covariance(&draw.samples);
    for k in 0..2 {
        let target = if precision[k] == a_max {
            1.0 / a_max
        } else {
            let q = 1.0 - step_size * precision[k];
            noise_std * noise_std / (1.0 - q * q)
        };
        let rel = (c[k][k] - target).abs() / target;
        assert!(rel < 0.15, "variance {k}: {} vs {target}", c[k][k]);
    }
    assert!(c[0][1].abs() < 0.15 * (c[0][0] * c[1][1]).sqrt(), "covariance {c:?}");
}

#[test]
fn isotropic_quadratic_reaches_unit_covariance() {
    stationary_check([1.0, 1.0], 1e-2);
}

#[test]
fn anisotropic_quadratic_reaches_analytic_covariance() {
    stationary_check([4.0, 1.0], 5e-3);
}

#[test]
fn reinitialization_fraction_matches_probability() {
    let density = Quadratic {
        precision: vec![1.0, 1.0],
    };
    let rho = 0.05;
    let cfg = config(0, 1e-2, 0.0, rho);
    let mut r = rng(3);
    let mut buffer = ReplayBuffer::new_uniform(1000, &cfg, &mut r).unwrap();
    let mut total = 0;
    let draws = 100_000;
    for _ in 0..draws / 1000 {
        let before = buffer.capacity();
        total += sgld_sample(&density, &mut buffer, &cfg, 1000, &mut r)
            .unwrap()
            .reinitialized;
        assert_eq!(buffer.capacity(), before);
    }
    let sigma = (rho * (1.0 - rho) / draws as f64).sqrt();
    let frac = total as f64 / draws as f64;
    assert!((frac - rho).abs() < 3.0 * sigma, "fraction {frac}");
}

#[test]
fn model_density_is_row_permutation_equivariant() {
    let params = ModelParams::init(&Architecture::default(), 5).unwrap();
    let mut r = rng(8);
    let x = uniform(&mut r, &[64, 2], -2.0, 2.0);
    let order: Vec<usize> = (0..64).rev().collect();
    let a = params.log_density(&x).unwrap();
    let b = params.log_density(&x.gather_rows(&order).unwrap()).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert!((a.data()[i] - b.data()[k]).abs() < 1e-12);
    }
}

#[test]
fn common_density_shift_cancels_in_the_generative_gradient() {
    let params = ModelParams::init(&Architecture::default(), 21).unwrap();
    let mut shifted = params.clone();
    let last = shifted.head.layers.last_mut().unwrap();
    for b in last.bias.data_mut() {
        *b += 2.5;
    }
    let mut r = rng(4);
    let data = uniform(&mut r, &[50, 2], -1.0, 2.0);
    let model = uniform(&mut r, &[50, 2], -2.0, 3.0);
    let g0 = gen_loss_grad(&params, &data, &model).unwrap();
    let g1 = gen_loss_grad(&shifted, &data, &model).unwrap();
    // The density moves by the same constant everywhere...
    let d0 = params.log_density(&data).unwrap();
    let d1 = shifted.log_density(&data).unwrap();
    let tau = params.tau();
    for (a, b) in d0.data().iter().zip(d1.data()) {
        assert!((b - a - 2.5 / tau).abs() < 1e-9);
    }
    // ...so the difference of means and its gradient are unchanged.
    assert!((g0.value - g1.value).abs() < 1e-9);
    for (a, b) in g0.grads.iter().zip(&g1.grads) {
        assert!(rel_error(a.data(), b.data()) < 1e-9);
    }
}

#[test]
fn generative_gradient_is_deterministic() {
    let params = ModelParams::init(&Architecture::default(), 2).unwrap();
    let mut r = rng(6);
    let data = uniform(&mut r, &[40, 2], -1.0, 2.0);
    let model = uniform(&mut r, &[40, 2], -1.0, 2.0);
    let a = gen_loss_grad(&params, &data, &model).unwrap();
    let b = gen_loss_grad(&params, &data, &model).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.grads, b.grads);
}
