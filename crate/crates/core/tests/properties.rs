use gedi::baselines::{sinkhorn_knopp, swav_loss_with_targets, SinkhornConfig, SwavConfig};
use gedi::data::{permute_dataset, LogitDataset, Permutation};
use gedi::losses::{
    entropy, inv_loss_value, prior_loss_value, Batch, LossOptions, PriorSpec,
};
use gedi::metrics::{detect_cluster_collapse, detect_representation_collapse, nmi};
use gedi::nets::{Architecture, SwavParams};
use gedi::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    (rows, cols).prop_flat_map(move |(n, c)| {
        prop::collection::vec(lo..hi, n * c).prop_map(move |d| Tensor::matrix(n, c, d).unwrap())
    })
}

fn pair(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, lo: f64, hi: f64) -> impl Strategy<Value = (Tensor, Tensor)> {
    (rows, cols).prop_flat_map(move |(n, c)| {
        let m = move |d: Vec<f64>| Tensor::matrix(n, c, d).unwrap();
        (
            prop::collection::vec(lo..hi, n * c).prop_map(m),
            prop::collection::vec(lo..hi, n * c).prop_map(m),
        )
    })
}

fn labels(n: std::ops::Range<usize>, k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    n.prop_flat_map(move |n| (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n)))
}

fn softmax(t: &Tensor, tau: f64) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(t.clone()).unwrap();
    let p = tape.softmax_rows(v, tau).unwrap();
    tape.value(p).clone()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_are_positive_distributions(t in matrix(1..20, 1..6, -30.0, 30.0), tau in 0.1f64..5.0) {
        let p = softmax(&t, tau);
        for i in 0..p.rows() {
            let row = p.row(i);
            prop_assert!(row.iter().all(|v| *v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_is_bracketed_by_max(t in matrix(1..20, 1..6, -50.0, 50.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone()).unwrap();
        let l = tape.logsumexp_rows(v).unwrap();
        let c = t.cols() as f64;
        for (i, lse) in tape.value(l).data().iter().enumerate() {
            let max = t.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*lse >= max);
            prop_assert!(*lse <= max + c.ln() + 1e-12);
        }
    }

    #[test]
    fn inv_and_prior_stay_below_their_maxima((t, t_aug) in pair(1..30, 2..5, -10.0, 10.0), tau in 0.2f64..3.0) {
        let opts = LossOptions::default();
        let c = t.cols();
        let prior = PriorSpec::uniform(c);
        let inv = inv_loss_value(&t, &t_aug, tau, &opts).unwrap();
        let pri = prior_loss_value(&t, tau, &prior, &opts).unwrap();
        prop_assert!(inv <= 0.0);
        prop_assert!(pri <= -(c as f64).ln() + 1e-12);
        prop_assert!(inv + pri <= -(c as f64).ln() + 1e-12);
    }

    #[test]
    fn inv_of_identical_views_is_negative_mean_entropy(t in matrix(1..20, 2..5, -8.0, 8.0)) {
        let opts = LossOptions::default();
        let inv = inv_loss_value(&t, &t, 1.0, &opts).unwrap();
        let p = softmax(&t, 1.0);
        let h = (0..p.rows()).map(|i| entropy(p.row(i))).sum::<f64>() / p.rows() as f64;
        prop_assert!((inv + h).abs() < 1e-9);
    }

    #[test]
    fn prior_is_exactly_permutation_invariant(t in matrix(2..60, 2..5, -10.0, 10.0), seed in any::<u64>()) {
        let n = t.rows();
        let ds = LogitDataset::new(Tensor::zeros(&[n, 2]), t.clone(), t.clone()).unwrap();
        let pi = Permutation::random(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = permute_dataset(&ds, &pi).unwrap();
        let opts = LossOptions::default();
        let prior = PriorSpec::uniform(t.cols());
        let a = prior_loss_value(&ds.t, 1.0, &prior, &opts).unwrap();
        let b = prior_loss_value(&permuted.t, 1.0, &prior, &opts).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn nmi_is_symmetric_bounded_and_relabeling_invariant((a, b) in labels(1..80, 4), shift in 1usize..4) {
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|v| (v + shift) % 4).collect();
        prop_assert!((nmi(&relabeled, &b).unwrap() - ab).abs() < 1e-12);
        let relabeled: Vec<usize> = b.iter().map(|v| 3 - v).collect();
        prop_assert!((nmi(&a, &relabeled).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_rows_and_columns_balance(s in matrix(400..401, 2..3, -1.0, 1.0)) {
        let cfg = SinkhornConfig { iterations: 1000, ..SinkhornConfig::default() };
        let q = sinkhorn_knopp(&s, &cfg).unwrap();
        let (n, c) = q.dims2().unwrap();
        for i in 0..n {
            prop_assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for j in 0..c {
            let col: f64 = (0..n).map(|i| q.row(i)[j]).sum();
            prop_assert!((col - n as f64 / c as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn representation_collapse_is_threshold_monotone(e in matrix(2..30, 1..4, -1.0, 1.0), lo in 0.0f64..0.5, gap in 0.0f64..0.5) {
        let a = detect_representation_collapse(&e, lo).unwrap();
        let b = detect_representation_collapse(&e, lo + gap).unwrap();
        prop_assert!(!a.flagged || b.flagged);
    }

    #[test]
    fn cluster_collapse_is_threshold_monotone(t in matrix(1..30, 2..4, -5.0, 5.0), lo in 0.0f64..0.5, gap in 0.0f64..0.5) {
        let p = softmax(&t, 1.0);
        let a = detect_cluster_collapse(&p, lo).unwrap();
        let b = detect_cluster_collapse(&p, lo + gap).unwrap();
        prop_assert!(!a.flagged || b.flagged);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn swav_loss_ignores_joint_prototype_relabeling(seed in any::<u64>(), n in 2usize..12) {
        let arch = Architecture::default();
        let params = SwavParams::init(&arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let draw = |rng: &mut ChaCha8Rng, c: usize| {
            use rand::Rng;
            Tensor::matrix(n, c, (0..n * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
        };
        let batch = Batch { x: draw(&mut rng, 2), x_aug: draw(&mut rng, 2) };
        let q = [softmax(&draw(&mut rng, 2), 1.0), softmax(&draw(&mut rng, 2), 1.0)];
        let cfg = SwavConfig::default();
        let base = swav_loss_with_targets(&params, &batch, &cfg, &q).unwrap();

        let swap = |t: &Tensor| {
            let (r, c) = t.dims2().unwrap();
            Tensor::matrix(r, c, (0..r).flat_map(|i| t.row(i).iter().rev().copied().collect::<Vec<_>>()).collect()).unwrap()
        };
        let mut relabeled = params.clone();
        relabeled.prototypes = swap(&params.prototypes);
        let swapped = swav_loss_with_targets(&relabeled, &batch, &cfg, &[swap(&q[0]), swap(&q[1])]).unwrap();
        prop_assert!((base - swapped).abs() < 1e-12);
    }
}

#[test]
fn eq4_bound_holds_on_ten_thousand_batches() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = LossOptions::default();
    let mut violations = 0;
    for k in 0..10_000 {
        let n = rng.random_range(1..40);
        let c = rng.random_range(2..6);
        let scale = [0.1, 1.0, 10.0, 100.0][k % 4];
        let mut draw = || {
            Tensor::matrix(n, c, (0..n * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (t, t_aug) = (draw(), draw());
        let bound = -(c as f64).ln();
        let inv = inv_loss_value(&t, &t_aug, 1.0, &opts).unwrap();
        let pri = prior_loss_value(&t, 1.0, &PriorSpec::uniform(c), &opts).unwrap();
        if inv + pri > bound + 1e-12 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn inv_distinguishes_a_permuted_dataset() {
    let t = Tensor::from_rows(&[[4.0, -4.0], [-4.0, 4.0], [3.0, -3.0]]).unwrap();
    let ds = LogitDataset::new(Tensor::zeros(&[3, 2]), t.clone(), t.clone()).unwrap();
    let permuted = permute_dataset(&ds, &Permutation::cyclic(3, 1)).unwrap();
    let opts = LossOptions::default();
    let a = inv_loss_value(&ds.t, &ds.t_aug, 1.0, &opts).unwrap();
    let b = inv_loss_value(&permuted.t, &permuted.t_aug, 1.0, &opts).unwrap();
    assert!(a > b + 1.0);
}
