//! The training loop: per iteration draw a batch and its augmented view, run
//! SGLD when the generative term is active, assemble the weighted gradient and
//! take one Adam ascent step. Also hosts the ablation grid and the
//! loss-weight sensitivity sweep.

use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{swav_step, SwavConfig};
use crate::checkpoint::{Checkpoint, Model};
use crate::data::{augment, AugmentationSpec, DatasetKind, DatasetSpec, LabeledDataset};
use crate::ebm::{expanded_bounds, sgld_sample, ReplayBuffer, SgldConfig};
use crate::error::{Error, Result};
use crate::losses::{gedi_objective, Batch, LossOptions, LossWeights, PriorSpec, TermBreakdown};
use crate::metrics::{
    detect_cluster_collapse, detect_representation_collapse, nmi, predictive_probs, ClusterCollapse,
    RepresentationCollapse,
};
use crate::nets::{Architecture, ModelParams, Parameters, SwavParams, WeightInit};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Seed offset between a training set and its held-out test set.
pub const TEST_SEED_OFFSET: u64 = 0x5EED_7E57;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Gedi,
    NoGen,
    NoInv,
    NoUnif,
    Jem,
    Swav,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Jem,
        Variant::Swav,
        Variant::NoUnif,
        Variant::NoInv,
        Variant::NoGen,
        Variant::Gedi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gedi => "gedi",
            Variant::NoGen => "no-gen",
            Variant::NoInv => "no-inv",
            Variant::NoUnif => "no-unif",
            Variant::Jem => "jem",
            Variant::Swav => "swav",
        }
    }

    /// Column header used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Gedi => "GEDI",
            Variant::NoGen => "GEDI no gen",
            Variant::NoInv => "GEDI no inv",
            Variant::NoUnif => "GEDI no unif",
            Variant::Jem => "JEM",
            Variant::Swav => "SwAV",
        }
    }

    /// Configured weights with this variant's terms zeroed.
    pub fn effective_weights(self, w: &LossWeights) -> LossWeights {
        match self {
            Variant::Gedi => *w,
            Variant::NoGen => LossWeights { gen: 0.0, ..*w },
            Variant::NoInv => LossWeights { inv: 0.0, ..*w },
            Variant::NoUnif => LossWeights { prior: 0.0, ..*w },
            Variant::Jem => LossWeights {
                gen: 1.0,
                inv: 0.0,
                prior: 0.0,
            },
            Variant::Swav => LossWeights {
                gen: 0.0,
                inv: 0.0,
                prior: 0.0,
            },
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sampler settings as configured; the init box is resolved from the
/// training data at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldSettings {
    pub steps: usize,
    /// Chain length used by the JEM variant.
    pub jem_steps: usize,
    pub step_size: f64,
    pub noise_std: f64,
    pub reinit_prob: f64,
    pub buffer_size: usize,
    /// Relative widening of the data bounding box for (re)initialization.
    pub init_margin: f64,
    #[serde(default)]
    pub clamp_factor: Option<f64>,
}

impl Default for SgldSettings {
    fn default() -> Self {
        Self {
            steps: 1,
            jem_steps: 10,
            step_size: 0.01f64.powi(2) / 2.0,
            noise_std: 0.01,
            reinit_prob: 0.05,
            buffer_size: 10_000,
            init_margin: 0.1,
            clamp_factor: None,
        }
    }
}

impl SgldSettings {
    pub fn resolve(&self, variant: Variant, data: &Tensor) -> Result<SgldConfig> {
        if !(self.init_margin >= 0.0 && self.init_margin.is_finite()) {
            return Err(Error::param("SGLD init margin must be >= 0"));
        }
        let (init_low, init_high) = expanded_bounds(data, self.init_margin)?;
        let cfg = SgldConfig {
            steps: if variant == Variant::Jem {
                self.jem_steps
            } else {
                self.steps
            },
            step_size: self.step_size,
            noise_std: self.noise_std,
            reinit_prob: self.reinit_prob,
            init_low,
            init_high,
            clamp_factor: self.clamp_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Cluster collapse is flagged when one cluster holds more than `1 − eps`
    /// of the marginal mass.
    pub cluster_collapse_eps: f64,
    /// Representation collapse is flagged below this mean embedding variance.
    pub representation_collapse_eps: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            cluster_collapse_eps: 0.05,
            representation_collapse_eps: 1e-6,
        }
    }
}

/// Full description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub dataset: DatasetSpec,
    pub architecture: Architecture,
    #[serde(default)]
    pub init: WeightInit,
    pub weights: LossWeights,
    #[serde(default)]
    pub loss: LossOptions,
    pub sgld: SgldSettings,
    pub adam: AdamConfig,
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub swav: SwavConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    /// Toy defaults: 400 points, full batch, 20k iterations.
    pub fn toy(kind: DatasetKind, variant: Variant) -> Self {
        Self {
            variant,
            seed: 0,
            iterations: 20_000,
            batch_size: 400,
            eval_every: 500,
            out_dir: None,
            dataset: DatasetSpec::new(kind, 400, 0),
            architecture: Architecture::default(),
            init: WeightInit::default(),
            weights: LossWeights::default(),
            loss: LossOptions::default(),
            sgld: SgldSettings::default(),
            adam: AdamConfig::default(),
            augmentation: AugmentationSpec::default(),
            swav: SwavConfig::default(),
            eval: EvalSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every must be >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.dataset.n {
            return Err(Error::param(format!(
                "batch size {} must be in 1..={}",
                self.batch_size, self.dataset.n
            )));
        }
        if self.architecture.input_dim != 2 {
            return Err(Error::param("toy datasets are two-dimensional"));
        }
        self.architecture.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        self.swav.sinkhorn.validate()?;
        if !(self.swav.tau > 0.0) {
            return Err(Error::param("SwAV temperature must be > 0"));
        }
        if self.effective_weights().gen > 0.0 && self.batch_size > self.sgld.buffer_size {
            return Err(Error::param("replay buffer smaller than the batch"));
        }
        if !(self.loss.eps_q > 0.0) {
            return Err(Error::param("eps_q must be > 0"));
        }
        Ok(())
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.variant.effective_weights(&self.weights)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// The `k`-th replicate: model and data seeds both shifted by `k`, so
    /// different variants with the same `k` see the same data.
    pub fn replicate(&self, k: u64) -> Self {
        let mut c = self.clone();
        c.seed = self.seed.wrapping_add(k);
        c.dataset.seed = self.dataset.seed.wrapping_add(k);
        c
    }

    pub fn test_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.dataset.seed.wrapping_add(TEST_SEED_OFFSET),
            ..self.dataset.clone()
        }
    }
}

/// One evaluation row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub l_gen: f64,
    pub l_inv: f64,
    pub l_prior: f64,
    pub objective: f64,
    pub nmi_train: f64,
    pub nmi_test: f64,
    pub repr_collapse_score: f64,
    pub cluster_marginal_max: f64,
}

pub const METRICS_HEADER: &str =
    "iter,L_gen,L_inv,L_prior,objective,nmi_train,nmi_test,repr_collapse_score,cluster_marginal_max";

/// How often each gradient path ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounters {
    pub sgld_calls: usize,
    pub gen_terms: usize,
    pub inv_terms: usize,
    pub prior_terms: usize,
    pub swav_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub data_seed: u64,
    pub weights: LossWeights,
    pub rows: Vec<MetricRow>,
    /// Total objective at every iteration (for SwAV: the negated loss).
    pub objective_trace: Vec<f64>,
    pub final_nmi_train: f64,
    pub final_nmi_test: f64,
    pub representation_collapse: RepresentationCollapse,
    pub cluster_collapse: ClusterCollapse,
    pub counters: PathCounters,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn write_metrics_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.l_gen,
                r.l_inv,
                r.l_prior,
                r.objective,
                r.nmi_train,
                r.nmi_test,
                r.repr_collapse_score,
                r.cluster_marginal_max
            )?;
        }
        Ok(())
    }

    pub fn metrics_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_metrics_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Mean of the objective over the `window` iterations ending at `iter`
    /// (1-based, inclusive).
    pub fn trailing_objective_mean(&self, iter: usize, window: usize) -> Option<f64> {
        if iter == 0 || iter > self.objective_trace.len() || window == 0 {
            return None;
        }
        let start = iter.saturating_sub(window);
        let slice = &self.objective_trace[start..iter];
        Some(slice.iter().sum::<f64>() / slice.len() as f64)
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub config: RunConfig,
    pub record: RunRecord,
    pub model: Model,
    pub adam: AdamState,
    pub buffer: Option<ReplayBuffer>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl TrainedRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: Some(self.adam.clone()),
            buffer: self.buffer.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(#[from] Error),
    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        source: Error,
        partial: Box<RunRecord>,
        dump: Box<Checkpoint>,
    },
}

/// Clustering quality and collapse diagnostics of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nmi_train: f64,
    pub nmi_test: f64,
    /// Measured on the encoder output for the training points.
    pub repr: RepresentationCollapse,
    /// Measured on the predictive distributions for the training points.
    pub cluster: ClusterCollapse,
}

pub fn evaluate(model: &Model, train: &LabeledDataset, test: &LabeledDataset, eval: &EvalSettings) -> Result<Evaluation> {
    let (pred_train, pred_test, embeddings, probs) = match model {
        Model::Gedi(p) => (
            p.predict(&train.points)?,
            p.predict(&test.points)?,
            p.encode_value(&train.points)?,
            predictive_probs(p, &train.points)?,
        ),
        Model::Swav(p) => {
            let scores = p.scores_value(&train.points)?;
            let probs = softmax_rows(&scores, p.arch.tau);
            (
                scores.argmax_rows()?,
                p.predict(&test.points)?,
                p.encoder.forward_value(&train.points)?,
                probs,
            )
        }
    };
    Ok(Evaluation {
        nmi_train: nmi(&pred_train, &train.labels)?,
        nmi_test: nmi(&pred_test, &test.labels)?,
        repr: detect_representation_collapse(&embeddings, eval.representation_collapse_eps)?,
        cluster: detect_cluster_collapse(&probs, eval.cluster_collapse_eps)?,
    })
}

fn softmax_rows(t: &Tensor, tau: f64) -> Tensor {
    let mut out = t.clone();
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
    out
}

/// Runs one full training job. Deterministic in `cfg`.
pub fn train(cfg: &RunConfig) -> std::result::Result<TrainedRun, TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let train_set = cfg.dataset.generate()?;
    let test_set = cfg.test_spec().generate()?;
    let weights = cfg.effective_weights();
    let prior = PriorSpec::uniform(cfg.architecture.clusters);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut model = match cfg.variant {
        Variant::Swav => {
            let arch = Architecture {
                tau: cfg.swav.tau,
                ..cfg.architecture.clone()
            };
            Model::Swav(SwavParams::init_with(&arch, cfg.init, cfg.seed)?)
        }
        _ => Model::Gedi(ModelParams::init_with(&cfg.architecture, cfg.init, cfg.seed)?),
    };
    let mut adam = AdamState::new(cfg.adam, &model.tensors())?;
    let sgld = if weights.gen > 0.0 {
        Some(cfg.sgld.resolve(cfg.variant, &train_set.points)?)
    } else {
        None
    };
    let mut buffer = match &sgld {
        Some(s) => Some(ReplayBuffer::new_uniform(cfg.sgld.buffer_size, s, &mut rng)?),
        None => None,
    };

    let n = train_set.len();
    let full_batch = cfg.batch_size == n;
    let mut record = RunRecord {
        variant: cfg.variant,
        seed: cfg.seed,
        data_seed: cfg.dataset.seed,
        weights,
        rows: Vec::new(),
        objective_trace: Vec::with_capacity(cfg.iterations),
        final_nmi_train: 0.0,
        final_nmi_test: 0.0,
        representation_collapse: RepresentationCollapse {
            flagged: false,
            score: 0.0,
        },
        cluster_collapse: ClusterCollapse {
            flagged: false,
            marginal: Vec::new(),
        },
        counters: PathCounters::default(),
        wall_clock_secs: 0.0,
    };

    for iter in 1..=cfg.iterations {
        let step = (|| -> Result<(f64, TermBreakdown)> {
            let x = if full_batch {
                train_set.points.clone()
            } else {
                let idx = rand::seq::index::sample(&mut rng, n, cfg.batch_size).into_vec();
                train_set.points.gather_rows(&idx)?
            };
            match &mut model {
                Model::Gedi(params) => {
                    let x_aug = if weights.inv > 0.0 {
                        augment(&x, &cfg.augmentation, &mut rng)?
                    } else {
                        x.clone()
                    };
                    let model_x = match (&sgld, buffer.as_mut()) {
                        (Some(s), Some(buf)) => {
                            record.counters.sgld_calls += 1;
                            Some(sgld_sample(&*params, buf, s, x.rows(), &mut rng)?.samples)
                        }
                        _ => None,
                    };
                    let batch = Batch { x, x_aug };
                    let obj = gedi_objective(params, &batch, model_x.as_ref(), &weights, &prior, &cfg.loss)?;
                    record.counters.gen_terms += usize::from(obj.evaluated.gen);
                    record.counters.inv_terms += usize::from(obj.evaluated.inv);
                    record.counters.prior_terms += usize::from(obj.evaluated.prior);
                    if !obj.total.is_finite() {
                        return Err(Error::Numeric("non-finite objective".into()));
                    }
                    adam.ascend(&mut params.tensors_mut(), &obj.grads)?;
                    Ok((obj.total, obj.terms))
                }
                Model::Swav(params) => {
                    let v1 = augment(&x, &cfg.augmentation, &mut rng)?;
                    let v2 = augment(&x, &cfg.augmentation, &mut rng)?;
                    let out = swav_step(params, &Batch { x: v1, x_aug: v2 }, &cfg.swav)?;
                    record.counters.swav_steps += 1;
                    if !out.loss.is_finite() {
                        return Err(Error::Numeric("non-finite SwAV loss".into()));
                    }
                    adam.descend(&mut params.tensors_mut(), &out.grads)?;
                    params.normalize_prototypes()?;
                    Ok((-out.loss, TermBreakdown::default()))
                }
            }
        })();

        let (total, terms) = match step {
            Ok(v) => v,
            Err(source) => {
                record.wall_clock_secs = started.elapsed().as_secs_f64();
                return Err(TrainError::Diverged {
                    iteration: iter,
                    source,
                    partial: Box::new(record),
                    dump: Box::new(Checkpoint {
                        model,
                        adam: Some(adam),
                        buffer,
                    }),
                });
            }
        };
        record.objective_trace.push(total);

        if iter % cfg.eval_every == 0 || iter == cfg.iterations {
            let ev = evaluate(&model, &train_set, &test_set, &cfg.eval).map_err(|source| {
                TrainError::Diverged {
                    iteration: iter,
                    source,
                    partial: Box::new(record.clone()),
                    dump: Box::new(Checkpoint {
                        model: model.clone(),
                        adam: Some(adam.clone()),
                        buffer: buffer.clone(),
                    }),
                }
            })?;
            record.rows.push(MetricRow {
                iter,
                l_gen: terms.gen,
                l_inv: terms.inv,
                l_prior: terms.prior,
                objective: total,
                nmi_train: ev.nmi_train,
                nmi_test: ev.nmi_test,
                repr_collapse_score: ev.repr.score,
                cluster_marginal_max: ev.cluster.max_mass(),
            });
            if iter == cfg.iterations {
                record.final_nmi_train = ev.nmi_train;
                record.final_nmi_test = ev.nmi_test;
                record.representation_collapse = ev.repr;
                record.cluster_collapse = ev.cluster;
            }
        }
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainedRun {
        config: cfg.clone(),
        record,
        model,
        adam,
        buffer,
        train: train_set,
        test: test_set,
    })
}

/// Runs independent jobs on up to `jobs` threads; results keep input order.
pub fn run_parallel<T, F>(configs: &[RunConfig], jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&RunConfig) -> T + Sync,
{
    let jobs = jobs.max(1).min(configs.len().max(1));
    if jobs == 1 {
        return configs.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..configs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let out = f(&configs[i]);
                results.lock().expect("result lock")[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|o| o.expect("every job ran")).collect()
}

/// Final metrics of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub data_seed: u64,
    pub nmi_train: f64,
    pub nmi_test: f64,
    pub cluster_collapse: bool,
    pub cluster_marginal_max: f64,
    pub representation_collapse: bool,
    pub wall_clock_secs: f64,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            seed: r.seed,
            data_seed: r.data_seed,
            nmi_train: r.final_nmi_train,
            nmi_test: r.final_nmi_test,
            cluster_collapse: r.cluster_collapse.flagged,
            cluster_marginal_max: r.cluster_collapse.max_mass(),
            representation_collapse: r.representation_collapse.flagged,
            wall_clock_secs: r.wall_clock_secs,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub runs: Vec<RunSummary>,
    pub nmi_mean: f64,
    pub nmi_std: f64,
}

impl AblationCell {
    pub fn from_runs(variant: Variant, runs: Vec<RunSummary>) -> Self {
        let nmis: Vec<f64> = runs.iter().map(|r| r.nmi_test).collect();
        let (nmi_mean, nmi_std) = mean_std(&nmis);
        Self {
            variant,
            runs,
            nmi_mean,
            nmi_std,
        }
    }

    pub fn collapse_count(&self) -> usize {
        self.runs.iter().filter(|r| r.cluster_collapse).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: DatasetKind,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, v: Variant) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.variant == v)
    }

    /// One header line and one `dataset,mean±std,...` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset");
        for c in &self.cells {
            s.push(',');
            s.push_str(c.variant.label());
        }
        s.push('\n');
        s.push_str(self.dataset.name());
        for c in &self.cells {
            s.push_str(&format!(",{:.2}±{:.2}", c.nmi_mean, c.nmi_std));
        }
        s.push('\n');
        s
    }

    /// Long format: one row per (variant, replicate).
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("variant,seed,data_seed,nmi_train,nmi_test,cluster_collapse,cluster_marginal_max\n");
        for c in &self.cells {
            for r in &c.runs {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    c.variant, r.seed, r.data_seed, r.nmi_train, r.nmi_test, r.cluster_collapse, r.cluster_marginal_max
                ));
            }
        }
        s
    }
}

/// Every variant × replicate combination. Replicate `k` uses
/// [`RunConfig::replicate`]`(k)`, so all variants share data seeds.
pub fn ablation_suite(
    base: &RunConfig,
    variants: &[Variant],
    replicates: usize,
    jobs: usize,
) -> std::result::Result<AblationTable, TrainError> {
    if replicates == 0 || variants.is_empty() {
        return Err(Error::param("ablation needs at least one variant and one seed").into());
    }
    let configs: Vec<RunConfig> = variants
        .iter()
        .flat_map(|&v| (0..replicates as u64).map(move |k| base.with_variant(v).replicate(k)))
        .collect();
    let results = run_parallel(&configs, jobs, |c| train(c).map(|r| RunSummary::from(&r.record)));
    let mut results = results.into_iter();
    let mut cells = Vec::with_capacity(variants.len());
    for &v in variants {
        let runs = results
            .by_ref()
            .take(replicates)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        cells.push(AblationCell::from_runs(v, runs));
    }
    Ok(AblationTable {
        dataset: base.dataset.kind,
        cells,
    })
}

/// Mean test NMI over a `(w_inv, w_prior)` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    /// `nmi[i][j]` for `w_inv = grid[i]`, `w_prior = grid[j]`.
    pub nmi: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w_inv\\w_prior");
        for g in &self.grid {
            s.push_str(&format!(",{g}"));
        }
        s.push('\n');
        for (g, row) in self.grid.iter().zip(&self.nmi) {
            s.push_str(&format!("{g}"));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains the full objective for every `(w_inv, w_prior)` pair in
/// `grid × grid`, keeping `w_gen` from `base`.
pub fn sensitivity_sweep(
    base: &RunConfig,
    grid: &[f64],
    replicates: usize,
    jobs: usize,
) -> std::result::Result<SweepResult, TrainError> {
    if grid.is_empty() || replicates == 0 {
        return Err(Error::param("sweep needs a non-empty grid and at least one seed").into());
    }
    let mut configs = Vec::new();
    for &wi in grid {
        for &wp in grid {
            for k in 0..replicates as u64 {
                let mut c = base.with_variant(Variant::Gedi).replicate(k);
                c.weights.inv = wi;
                c.weights.prior = wp;
                configs.push(c);
            }
        }
    }
    let results = run_parallel(&configs, jobs, |c| train(c).map(|r| r.record.final_nmi_test));
    let mut it = results.into_iter();
    let mut nmi = Vec::with_capacity(grid.len());
    for _ in grid {
        let mut row = Vec::with_capacity(grid.len());
        for _ in grid {
            let vals = it
                .by_ref()
                .take(replicates)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            row.push(mean_std(&vals).0);
        }
        nmi.push(row);
    }
    Ok(SweepResult {
        grid: grid.to_vec(),
        nmi,
    })
}

/// Random in-box points, handy for seeding plots of an untrained model.
pub fn uniform_points(n: usize, low: &[f64], high: &[f64], rng: &mut impl Rng) -> Result<Tensor> {
    let d = low.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (l, h) in low.iter().zip(high) {
            data.push(rng.random_range(*l..*h));
        }
    }
    Tensor::matrix(n, d, data)
}
