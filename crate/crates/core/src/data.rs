//! Synthetic 2-D datasets, additive-noise augmentation and the permuted
//! logit datasets used to probe permutation invariance.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Moons,
    Circles,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Moons => "moons",
            DatasetKind::Circles => "circles",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(DatasetKind::Moons),
            "circles" => Ok(DatasetKind::Circles),
            other => Err(Error::param(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise_std: f64,
    #[serde(default = "default_radius_ratio")]
    pub radius_ratio: f64,
    pub seed: u64,
}

fn default_radius_ratio() -> f64 {
    0.5
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            noise_std: 0.05,
            radius_ratio: 0.5,
            seed,
        }
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        match self.kind {
            DatasetKind::Moons => make_moons(self.n, self.noise_std, self.seed),
            DatasetKind::Circles => make_circles(self.n, self.radius_ratio, self.noise_std, self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub spec: DatasetSpec,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `x1,x2,label` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.points.cols();
        let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        for (i, label) in self.labels.iter().enumerate() {
            for v in self.points.row(i) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{label}")?;
        }
        Ok(())
    }
}

fn check_size(n: usize, noise_std: f64) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::param(format!("dataset size must be even and positive, got {n}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::param("data noise must be >= 0"));
    }
    Ok(())
}

/// Two interleaving half circles, `n/2` points each: class 0 on
/// `(cos θ, sin θ)`, class 1 on `(1 − cos θ, 0.5 − sin θ)`, `θ ~ U[0, π]`,
/// plus isotropic Gaussian noise.
pub fn make_moons(n: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    check_size(n, noise_std)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n / 2);
        let theta = rng.random_range(0.0..=PI);
        let (x, y) = if class == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        data.push(x + noise_std * e1);
        data.push(y + noise_std * e2);
        labels.push(class);
    }
    Ok(LabeledDataset {
        points: Tensor::matrix(n, 2, data)?,
        labels,
        spec: DatasetSpec {
            kind: DatasetKind::Moons,
            n,
            noise_std,
            radius_ratio: default_radius_ratio(),
            seed,
        },
    })
}

/// Concentric circles: class 0 on radius 1, class 1 on `radius_ratio`.
pub fn make_circles(n: usize, radius_ratio: f64, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    check_size(n, noise_std)?;
    if !(radius_ratio > 0.0 && radius_ratio < 1.0) {
        return Err(Error::param(format!("radius ratio must be in (0, 1), got {radius_ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n / 2);
        let r = if class == 0 { 1.0 } else { radius_ratio };
        let theta = rng.random_range(0.0..2.0 * PI);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        data.push(r * theta.cos() + noise_std * e1);
        data.push(r * theta.sin() + noise_std * e2);
        labels.push(class);
    }
    Ok(LabeledDataset {
        points: Tensor::matrix(n, 2, data)?,
        labels,
        spec: DatasetSpec {
            kind: DatasetKind::Circles,
            n,
            noise_std,
            radius_ratio,
            seed,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub noise_std: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { noise_std: 0.03 }
    }
}

/// `x + σ·ε` with fresh `ε ~ N(0, I)`.
pub fn augment(x: &Tensor, spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<Tensor> {
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::param("augmentation noise must be >= 0"));
    }
    let mut out = x.clone();
    if spec.noise_std == 0.0 {
        return Ok(out);
    }
    for v in out.data_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *v += spec.noise_std * e;
    }
    Ok(out)
}

/// A bijection on `0..n`, stored as the image of each index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::param(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// `i ↦ i + k mod n`.
    pub fn cyclic(n: usize, k: usize) -> Self {
        Self((0..n).map(|i| (i + k) % n.max(1)).collect())
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }
}

/// Instances `(x_i, t_i, t'_i)` of inputs with their clean and augmented
/// logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitDataset {
    pub x: Tensor,
    pub t: Tensor,
    pub t_aug: Tensor,
}

impl LogitDataset {
    pub fn new(x: Tensor, t: Tensor, t_aug: Tensor) -> Result<Self> {
        let n = x.rows();
        let (tn, c) = t.dims2()?;
        if tn != n || t_aug.shape() != [n, c] {
            return Err(Error::dim("logit dataset components disagree on shape"));
        }
        Ok(Self { x, t, t_aug })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `{(x_i, t_π(i), t'_i)}`: only the clean logits are permuted.
pub fn permute_dataset(ds: &LogitDataset, pi: &Permutation) -> Result<LogitDataset> {
    if pi.len() != ds.len() {
        return Err(Error::param(format!(
            "permutation of {} for {} instances",
            pi.len(),
            ds.len()
        )));
    }
    Ok(LogitDataset {
        x: ds.x.clone(),
        t: ds.t.gather_rows(pi.as_slice())?,
        t_aug: ds.t_aug.clone(),
    })
}
