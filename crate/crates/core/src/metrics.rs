//! Clustering quality (NMI), collapse detectors and the gradient-norm OOD
//! score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ModelParams;
use crate::ebm::LogDensity;
use crate::tensor::Tensor;

/// Counts of (predicted, true) label pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<usize>>,
    n: usize,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::dim(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let rows = pred.iter().max().map_or(0, |m| m + 1);
        let cols = truth.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0; cols]; rows];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[p][t] += 1;
        }
        Ok(Self {
            counts,
            n: pred.len(),
        })
    }

    pub fn total(&self) -> usize {
        self.n
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Mutual information in nats.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let (a, b) = (self.row_sums(), self.col_sums());
        let mut mi = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &nij) in row.iter().enumerate() {
                if nij > 0 {
                    let nij = nij as f64;
                    mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
                }
            }
        }
        mi.max(0.0)
    }

    pub fn pred_entropy(&self) -> f64 {
        count_entropy(&self.row_sums(), self.n)
    }

    pub fn true_entropy(&self) -> f64 {
        count_entropy(&self.col_sums(), self.n)
    }
}

fn count_entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    /// `I / sqrt(H(a)·H(b))`.
    #[default]
    Geometric,
    /// `I / ((H(a) + H(b)) / 2)`.
    Arithmetic,
}

/// Normalized mutual information in `[0, 1]`; zero when either labeling is
/// constant.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNormalization::Geometric)
}

pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::dim("NMI of empty labelings"));
    }
    let table = ContingencyTable::new(pred, truth)?;
    let (ha, hb) = (table.pred_entropy(), table.true_entropy());
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let denom = match norm {
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
    };
    Ok((table.mutual_information() / denom).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationCollapse {
    pub flagged: bool,
    /// Mean per-dimension (population) variance of the embeddings.
    pub score: f64,
}

/// Flags embeddings whose mean per-dimension variance is below `eps`.
pub fn detect_representation_collapse(embeddings: &Tensor, eps: f64) -> Result<RepresentationCollapse> {
    let (n, h) = embeddings.dims2()?;
    if n < 2 || h == 0 {
        return Err(Error::dim("representation collapse needs at least 2 rows"));
    }
    let mut total = 0.0;
    for j in 0..h {
        let mean = (0..n).map(|i| embeddings.row(i)[j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (embeddings.row(i)[j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        total += var;
    }
    let score = total / h as f64;
    Ok(RepresentationCollapse {
        flagged: score < eps,
        score,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCollapse {
    pub flagged: bool,
    /// Batch mean of the predictive distributions.
    pub marginal: Vec<f64>,
}

impl ClusterCollapse {
    pub fn max_mass(&self) -> f64 {
        self.marginal.iter().copied().fold(0.0, f64::max)
    }
}

/// Flags a batch whose cluster marginal puts more than `1 − eps` on one
/// cluster.
pub fn detect_cluster_collapse(probs: &Tensor, eps: f64) -> Result<ClusterCollapse> {
    let (n, c) = probs.dims2()?;
    if n == 0 || c == 0 {
        return Err(Error::dim("cluster collapse of an empty batch"));
    }
    let mut marginal = vec![0.0; c];
    for i in 0..n {
        let row = probs.row(i);
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::Distribution(format!("row {i} is not a distribution")));
        }
        for (m, p) in marginal.iter_mut().zip(row) {
            *m += p / n as f64;
        }
    }
    let flagged = marginal.iter().any(|&q| q > 1.0 - eps);
    Ok(ClusterCollapse { flagged, marginal })
}

/// `s(x) = −‖∇ₓ log p̃(x)‖₂` per sample.
pub fn ood_score<D: LogDensity + ?Sized>(density: &D, x: &Tensor) -> Result<Tensor> {
    let g = density.input_grad(x)?;
    let (n, _) = g.dims2()?;
    Ok(Tensor::vector(
        (0..n)
            .map(|i| -g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
    ))
}

/// Row-wise softmax of the model's logits.
pub fn predictive_probs(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let logits = params.logits_value(x)?;
    let tau = params.tau();
    let mut out = logits;
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}
