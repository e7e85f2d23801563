mod common;

use common::{check_op, flatten, param_fd, rel_error, rng, uniform};
use gedi::baselines::{swav_loss_with_targets, swav_step, SwavConfig};
use gedi::ebm::{gen_loss_grad, LogDensity};
use gedi::losses::{
    gedi_objective, inv_loss, inv_loss_value, prior_loss, Batch, LossOptions, LossWeights, PriorSpec,
};
use gedi::nets::{Activation, Architecture, ModelParams, SwavParams};
use gedi::{Tape, Tensor};

const TOL: f64 = 1e-4;

fn small_arch() -> Architecture {
    Architecture {
        encoder_hidden: vec![6, 5],
        head_hidden: vec![4],
        clusters: 3,
        ..Architecture::default()
    }
}

#[test]
fn matmul_gradient_is_tight() {
    let mut r = rng(1);
    for _ in 0..10 {
        let a = uniform(&mut r, &[3, 4], -2.0, 2.0);
        let b = uniform(&mut r, &[4, 2], -2.0, 2.0);
        let e = check_op(&mut r, &[a, b], |t, v| t.matmul(v[0], v[1]));
        assert!(e < 1e-6, "{e}");
    }
}

macro_rules! unary_op_test {
    ($name:ident, $shape:expr, $lo:expr, $hi:expr, |$t:ident, $x:ident| $body:expr) => {
        #[test]
        fn $name() {
            let mut r = rng(stringify!($name).len() as u64);
            for _ in 0..20 {
                let x = uniform(&mut r, &$shape, $lo, $hi);
                let e = check_op(&mut r, &[x], |$t, v| {
                    let $x = v[0];
                    $body
                });
                assert!(e < TOL, "{e}");
            }
        }
    };
}

unary_op_test!(scale_gradient, [3, 2], -2.0, 2.0, |t, x| t.scale(x, -1.7));
unary_op_test!(relu_gradient, [4, 3], -2.0, 2.0, |t, x| t.relu(x));
unary_op_test!(leaky_relu_gradient, [4, 3], -2.0, 2.0, |t, x| t.leaky_relu(x, 0.2));
unary_op_test!(exp_gradient, [3, 3], -2.0, 2.0, |t, x| t.exp(x));
unary_op_test!(log_gradient, [3, 3], 0.2, 2.0, |t, x| t.log(x));
unary_op_test!(log_clamped_gradient, [3, 3], 0.2, 2.0, |t, x| t.log_clamped(x, 1e-12));
unary_op_test!(sum_gradient, [3, 4], -2.0, 2.0, |t, x| t.sum(x));
unary_op_test!(mean_gradient, [3, 4], -2.0, 2.0, |t, x| t.mean(x));
unary_op_test!(mean_rows_gradient, [5, 3], -2.0, 2.0, |t, x| t.mean_rows(x));
unary_op_test!(sum_cols_gradient, [5, 3], -2.0, 2.0, |t, x| t.sum_cols(x));
unary_op_test!(logsumexp_gradient, [5, 3], -2.0, 2.0, |t, x| t.logsumexp_rows(x));
unary_op_test!(softmax_gradient, [5, 3], -2.0, 2.0, |t, x| t.softmax_rows(x, 0.7));
unary_op_test!(gather_rows_gradient, [4, 2], -2.0, 2.0, |t, x| t.gather_rows(x, &[3, 0, 3, 1]));
unary_op_test!(slice_rows_gradient, [5, 2], -2.0, 2.0, |t, x| t.slice_rows(x, 1, 4));
unary_op_test!(normalize_rows_gradient, [4, 3], 0.5, 2.0, |t, x| t.normalize_rows(x));
unary_op_test!(standardize_cols_gradient, [6, 3], -2.0, 2.0, |t, x| t.standardize_cols(x, 1e-5));

#[test]
fn log_clamped_has_zero_gradient_below_floor() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1e-20, 2.0]), true).unwrap();
    let y = tape.log_clamped(x, 1e-12).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.5]);
}

#[test]
fn binary_op_gradients() {
    let mut r = rng(7);
    for _ in 0..20 {
        let a = uniform(&mut r, &[3, 2], -2.0, 2.0);
        let b = uniform(&mut r, &[3, 2], -2.0, 2.0);
        let bias = uniform(&mut r, &[2], -2.0, 2.0);
        let pair = [a.clone(), b.clone()];
        assert!(check_op(&mut r, &pair, |t, v| t.add(v[0], v[1])) < TOL);
        assert!(check_op(&mut r, &pair, |t, v| t.sub(v[0], v[1])) < TOL);
        assert!(check_op(&mut r, &pair, |t, v| t.mul(v[0], v[1])) < TOL);
        assert!(check_op(&mut r, &pair, |t, v| t.concat_rows(&[v[0], v[1], v[0]])) < TOL);
        assert!(check_op(&mut r, &[a, bias], |t, v| t.add_bias(v[0], v[1])) < TOL);
    }
}

#[test]
fn reused_node_accumulates() {
    let mut r = rng(8);
    let x = uniform(&mut r, &[3, 3], -2.0, 2.0);
    let e = check_op(&mut r, &[x], |t, v| {
        let a = t.mul(v[0], v[0])?;
        let b = t.exp(v[0])?;
        let c = t.add(a, b)?;
        t.softmax_rows(c, 1.3)
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn loss_term_gradients() {
    let mut r = rng(9);
    let opts = LossOptions::default();
    let prior = PriorSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
    for _ in 0..20 {
        let t = uniform(&mut r, &[8, 3], -2.0, 2.0);
        let ta = uniform(&mut r, &[8, 3], -2.0, 2.0);
        let e = check_op(&mut r, &[t.clone(), ta], |tp, v| inv_loss(tp, v[0], v[1], 0.8, &opts));
        assert!(e < TOL, "inv {e}");
        let e = check_op(&mut r, &[t], |tp, v| prior_loss(tp, v[0], 0.8, &prior, &opts));
        assert!(e < TOL, "prior {e}");
    }
}

#[test]
fn symmetrized_inv_gradient() {
    let mut r = rng(10);
    let opts = LossOptions {
        symmetrize: true,
        ..LossOptions::default()
    };
    let t = uniform(&mut r, &[6, 2], -2.0, 2.0);
    let ta = uniform(&mut r, &[6, 2], -2.0, 2.0);
    let e = check_op(&mut r, &[t, ta], |tp, v| inv_loss(tp, v[0], v[1], 1.0, &opts));
    assert!(e < TOL, "{e}");
}

fn objective_value(
    p: &ModelParams,
    batch: &Batch,
    model_x: Option<&Tensor>,
    w: &LossWeights,
    prior: &PriorSpec,
) -> f64 {
    gedi_objective(p, batch, model_x, w, prior, &LossOptions::default())
        .unwrap()
        .total
}

#[test]
fn full_objective_parameter_gradient() {
    let mut r = rng(11);
    let prior = PriorSpec::uniform(3);
    let w = LossWeights {
        gen: 1.0,
        inv: 5.0,
        prior: 2.0,
    };
    for seed in 0..5 {
        let p = ModelParams::init(&small_arch(), seed).unwrap();
        let batch = Batch {
            x: uniform(&mut r, &[8, 2], -2.0, 2.0),
            x_aug: uniform(&mut r, &[8, 2], -2.0, 2.0),
        };
        let mx = uniform(&mut r, &[5, 2], -2.0, 2.0);
        let obj = gedi_objective(&p, &batch, Some(&mx), &w, &prior, &LossOptions::default()).unwrap();
        let fd = param_fd(&p, |q| objective_value(q, &batch, Some(&mx), &w, &prior));
        let e = rel_error(&flatten(&obj.grads), &fd);
        assert!(e < TOL, "{e}");
    }
}

#[test]
fn discriminative_objective_with_leaky_activation() {
    let mut r = rng(12);
    let arch = Architecture {
        activation: Activation::LeakyRelu { slope: 0.1 },
        tau: 0.5,
        ..small_arch()
    };
    let p = ModelParams::init(&arch, 3).unwrap();
    let prior = PriorSpec::uniform(3);
    let w = LossWeights {
        gen: 0.0,
        inv: 1.0,
        prior: 1.0,
    };
    let batch = Batch {
        x: uniform(&mut r, &[8, 2], -2.0, 2.0),
        x_aug: uniform(&mut r, &[8, 2], -2.0, 2.0),
    };
    let obj = gedi_objective(&p, &batch, None, &w, &prior, &LossOptions::default()).unwrap();
    let fd = param_fd(&p, |q| objective_value(q, &batch, None, &w, &prior));
    assert!(rel_error(&flatten(&obj.grads), &fd) < TOL);
}

#[test]
fn gen_gradient_matches_surrogate_differences() {
    let mut r = rng(13);
    let p = ModelParams::init(&small_arch(), 4).unwrap();
    let data = uniform(&mut r, &[7, 2], -2.0, 2.0);
    let model = uniform(&mut r, &[9, 2], -2.0, 2.0);
    let g = gen_loss_grad(&p, &data, &model).unwrap();
    let fd = param_fd(&p, |q| {
        let a = q.log_density(&data).unwrap();
        let b = q.log_density(&model).unwrap();
        a.sum() / 7.0 - b.sum() / 9.0
    });
    assert!(rel_error(&flatten(&g.grads), &fd) < TOL);
}

#[test]
fn gen_gradient_single_parameter_by_hand() {
    // Identity-free 1-d model: enc(x) = w·x (no hidden layers), head is the
    // identity with zero bias and c = 1, so log p̃(x) = w·x/τ and the
    // gradient in w is mean(data) − mean(model), divided by τ.
    let arch = Architecture {
        input_dim: 1,
        encoder_hidden: vec![],
        latent_dim: 1,
        head_hidden: vec![],
        clusters: 1,
        activation: Activation::Relu,
        tau: 2.0,
    };
    let mut p = ModelParams::zeros(&arch).unwrap();
    p.encoder.layers[0].weight = Tensor::matrix(1, 1, vec![0.7]).unwrap();
    p.head.layers[0].weight = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let data = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
    let model = Tensor::matrix(2, 1, vec![-1.0, 0.0]).unwrap();
    let g = gen_loss_grad(&p, &data, &model).unwrap();
    let expected_w = (2.0 - (-0.5)) / 2.0;
    assert!((g.grads[0].data()[0] - expected_w).abs() < 1e-12);
    assert!((g.value - 0.7 * 2.5 / 2.0).abs() < 1e-12);
}

#[test]
fn input_gradient_of_log_density() {
    let mut r = rng(14);
    let p = ModelParams::init(&small_arch(), 5).unwrap();
    for _ in 0..10 {
        let x = uniform(&mut r, &[4, 2], -2.0, 2.0);
        let g = p.input_grad(&x).unwrap();
        let mut fd = Vec::new();
        for k in 0..x.numel() {
            let mut a = x.clone();
            a.data_mut()[k] += common::H;
            let mut b = x.clone();
            b.data_mut()[k] -= common::H;
            let row = k / 2;
            let fa = p.log_density(&a).unwrap().data()[row];
            let fb = p.log_density(&b).unwrap().data()[row];
            fd.push((fa - fb) / (2.0 * common::H));
        }
        assert!(rel_error(g.data(), &fd) < TOL);
    }
}

#[test]
fn swav_gradient_with_fixed_targets() {
    let mut r = rng(15);
    let arch = Architecture {
        latent_dim: 3,
        ..small_arch()
    };
    let cfg = SwavConfig::default();
    for seed in 0..3 {
        let p = SwavParams::init(&arch, seed).unwrap();
        let batch = Batch {
            x: uniform(&mut r, &[6, 2], -2.0, 2.0),
            x_aug: uniform(&mut r, &[6, 2], -2.0, 2.0),
        };
        let step = swav_step(&p, &batch, &cfg).unwrap();
        let fd = param_fd(&p, |q| swav_loss_with_targets(q, &batch, &cfg, &step.targets).unwrap());
        let e = rel_error(&flatten(&step.grads), &fd);
        assert!(e < TOL, "{e}");
    }
}

#[test]
fn inv_value_helper_matches_tape() {
    let mut r = rng(16);
    let t = uniform(&mut r, &[5, 2], -2.0, 2.0);
    let ta = uniform(&mut r, &[5, 2], -2.0, 2.0);
    let opts = LossOptions::default();
    let mut tape = Tape::new();
    let a = tape.constant(t.clone()).unwrap();
    let b = tape.constant(ta.clone()).unwrap();
    let v = inv_loss(&mut tape, a, b, 1.0, &opts).unwrap();
    assert_eq!(tape.value(v).item().unwrap(), inv_loss_value(&t, &ta, 1.0, &opts).unwrap());
}
