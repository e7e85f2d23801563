//! Command implementations and run-directory layout.
//!
//! A `train` directory holds `config.snapshot` (resolved TOML config),
//! `metrics.csv`, `summary.json`, `checkpoint.bin`, `clusters.svg` and
//! `samples.svg`. A diverged run keeps its partial `metrics.csv` and writes
//! `dump.bin` (parameters, optimizer state and buffer) instead of a
//! checkpoint.

use std::path::{Path, PathBuf};

use gedi::checkpoint::{Checkpoint, Model};
use gedi::data::LabeledDataset;
use gedi::ebm::{sgld_sample, ReplayBuffer};
use gedi::trainer::{
    ablation_suite, evaluate, mean_std, sensitivity_sweep, train, RunConfig, RunRecord, TrainError, Variant,
};
use gedi::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{self, parse_grid, parse_list, to_snapshot};
use crate::svg::{emit_samples_svg, emit_scatter_svg, heatmap_svg};
use crate::{write_file, AblateArgs, CliError, Command, EvalArgs, PlotArgs, SweepArgs, TrainArgs};

pub const SNAPSHOT: &str = "config.snapshot";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const DUMP: &str = "dump.bin";
pub const CLUSTERS_SVG: &str = "clusters.svg";
pub const SAMPLES_SVG: &str = "samples.svg";

/// Model samples drawn for `samples.svg`.
const PLOT_SAMPLES: usize = 1000;
/// Langevin steps for plots of models trained without a replay buffer.
const FRESH_CHAIN_STEPS: usize = 200;

pub fn build_id() -> String {
    match option_env!("GEDI_GIT_REV") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn dispatch(cmd: Command, env_seed: Option<&str>) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => train_cmd(&a, env_seed),
        Command::Ablate(a) => ablate_cmd(&a, env_seed),
        Command::Sweep(a) => sweep_cmd(&a, env_seed),
        Command::Eval(a) => eval_cmd(&a, env_seed),
        Command::Plot(a) => plot_cmd(&a),
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig, default: String) -> Result<PathBuf, CliError> {
    let dir = flag
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(default));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn jobs(flag: Option<usize>) -> usize {
    flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .max(1)
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    write_file(path, s)
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    ckpt.save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(e) => CliError::Config(e.to_string()),
        e @ TrainError::Diverged { .. } => CliError::Runtime(e.to_string()),
    }
}

fn variant_stats(records: &[&RunRecord]) -> Value {
    let test: Vec<f64> = records.iter().map(|r| r.final_nmi_test).collect();
    let train: Vec<f64> = records.iter().map(|r| r.final_nmi_train).collect();
    let (tm, ts) = mean_std(&test);
    let (rm, rs) = mean_std(&train);
    json!({
        "runs": records.len(),
        "nmi_test_mean": tm,
        "nmi_test_std": ts,
        "nmi_train_mean": rm,
        "nmi_train_std": rs,
    })
}

pub fn train_cmd(a: &TrainArgs, env_seed: Option<&str>) -> Result<(), CliError> {
    let cfg = a.config.resolve(env_seed)?;
    let dir = out_dir(
        &a.out,
        &cfg,
        format!("{}-{}-s{}", cfg.dataset.kind.name(), cfg.variant, cfg.seed),
    )?;
    let run = run_train(&cfg, &dir)?;
    println!(
        "{} {} seed {}: test NMI {:.4}, train NMI {:.4} -> {}",
        cfg.dataset.kind.name(),
        cfg.variant,
        cfg.seed,
        run.final_nmi_test,
        run.final_nmi_train,
        dir.display()
    );
    Ok(())
}

/// Trains `cfg` and fills `dir` with the run artifacts.
pub fn run_train(cfg: &RunConfig, dir: &Path) -> Result<RunRecord, CliError> {
    let snapshot = to_snapshot(cfg)?;
    write_file(&dir.join(SNAPSHOT), &snapshot)?;
    let base = json!({
        "command": "train",
        "dataset": cfg.dataset.kind.name(),
        "variant": cfg.variant.name(),
        "seed": cfg.seed,
        "config_sha256": sha256_hex(&snapshot),
        "build": build_id(),
    });
    match train(cfg) {
        Ok(run) => {
            write_file(&dir.join(METRICS), run.record.metrics_csv())?;
            save_checkpoint(&run.checkpoint(), &dir.join(CHECKPOINT))?;
            render(
                cfg,
                &run.model,
                run.buffer.as_ref(),
                &run.train,
                dir,
            )?;
            let mut summary = base;
            let r = &run.record;
            extend(&mut summary, json!({
                "status": "ok",
                "nmi_train": r.final_nmi_train,
                "nmi_test": r.final_nmi_test,
                "nmi": { cfg.variant.name(): variant_stats(&[r]) },
                "cluster_collapse": r.cluster_collapse,
                "representation_collapse": r.representation_collapse,
                "counters": r.counters,
                "wall_clock_secs": r.wall_clock_secs,
            }));
            write_json(&dir.join(SUMMARY), &summary)?;
            Ok(run.record)
        }
        Err(TrainError::Diverged {
            iteration,
            source,
            partial,
            dump,
        }) => {
            write_file(&dir.join(METRICS), partial.metrics_csv())?;
            save_checkpoint(&dump, &dir.join(DUMP))?;
            let mut summary = base;
            extend(&mut summary, json!({
                "status": "diverged",
                "iteration": iteration,
                "error": source.to_string(),
                "wall_clock_secs": partial.wall_clock_secs,
            }));
            write_json(&dir.join(SUMMARY), &summary)?;
            Err(CliError::Runtime(format!(
                "training diverged at iteration {iteration}: {source}; state dumped to {}",
                dir.join(DUMP).display()
            )))
        }
        Err(e) => Err(train_error(e)),
    }
}

fn extend(base: &mut Value, more: Value) {
    if let (Value::Object(b), Value::Object(m)) = (base, more) {
        b.extend(m);
    }
}

/// Writes `clusters.svg` (training points coloured by prediction) and
/// `samples.svg` (model samples over the data).
pub fn render(
    cfg: &RunConfig,
    model: &Model,
    buffer: Option<&ReplayBuffer>,
    data: &LabeledDataset,
    dir: &Path,
) -> Result<(), CliError> {
    let pred = model.predict(&data.points)?;
    emit_scatter_svg(&data.points, &pred, &dir.join(CLUSTERS_SVG))?;
    let samples = model_samples(cfg, model, buffer, data)?;
    emit_samples_svg(&data.points, &samples, &dir.join(SAMPLES_SVG))
}

/// Up to 1000 evenly spaced buffer entries, or for models
/// trained without a buffer, fresh chains started uniformly in the init box.
/// The SwAV-style model defines no density and yields no samples.
pub fn model_samples(
    cfg: &RunConfig,
    model: &Model,
    buffer: Option<&ReplayBuffer>,
    data: &LabeledDataset,
) -> Result<Tensor, CliError> {
    let params = match model {
        Model::Gedi(p) => p,
        Model::Swav(_) => return Ok(Tensor::zeros(&[0, data.points.cols()])),
    };
    if let Some(b) = buffer {
        let n = b.capacity();
        let stride = n.div_ceil(PLOT_SAMPLES).max(1);
        let idx: Vec<usize> = (0..n).step_by(stride).collect();
        return Ok(b.entries().gather_rows(&idx)?);
    }
    let mut sgld = cfg.sgld.resolve(cfg.variant, &data.points)?;
    sgld.steps = FRESH_CHAIN_STEPS;
    sgld.reinit_prob = 0.0;
    let m = PLOT_SAMPLES.min(data.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chains = ReplayBuffer::new_uniform(m, &sgld, &mut rng)?;
    match sgld_sample(params, &mut chains, &sgld, m, &mut rng) {
        Ok(draw) => Ok(draw.samples),
        Err(_) => Ok(Tensor::zeros(&[0, data.points.cols()])),
    }
}

pub fn ablate_cmd(a: &AblateArgs, env_seed: Option<&str>) -> Result<(), CliError> {
    let base = a.config.resolve(env_seed)?;
    let variants: Vec<Variant> = parse_list(&a.variants)?;
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds must be >= 1".into()));
    }
    let dir = out_dir(&a.out, &base, format!("ablate-{}", base.dataset.kind.name()))?;
    let snapshot = to_snapshot(&base)?;
    write_file(&dir.join(SNAPSHOT), &snapshot)?;
    let start = std::time::Instant::now();
    let table = ablation_suite(&base, &variants, a.seeds, jobs(a.jobs)).map_err(train_error)?;
    write_file(&dir.join("table.csv"), table.to_csv())?;
    write_file(&dir.join("runs.csv"), table.runs_csv())?;
    let mut nmi = serde_json::Map::new();
    for c in &table.cells {
        let train: Vec<f64> = c.runs.iter().map(|r| r.nmi_train).collect();
        let (rm, rs) = mean_std(&train);
        nmi.insert(
            c.variant.name().to_string(),
            json!({
                "runs": c.runs.len(),
                "nmi_test_mean": c.nmi_mean,
                "nmi_test_std": c.nmi_std,
                "nmi_train_mean": rm,
                "nmi_train_std": rs,
                "cluster_collapse_count": c.collapse_count(),
            }),
        );
    }
    write_json(
        &dir.join(SUMMARY),
        &json!({
            "command": "ablate",
            "dataset": base.dataset.kind.name(),
            "seeds": a.seeds,
            "nmi": nmi,
            "config_sha256": sha256_hex(&snapshot),
            "build": build_id(),
            "wall_clock_secs": start.elapsed().as_secs_f64(),
        }),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}

pub fn sweep_cmd(a: &SweepArgs, env_seed: Option<&str>) -> Result<(), CliError> {
    let base = a.config.resolve(env_seed)?;
    let grid = parse_grid(&a.grid)?;
    if a.seeds == 0 {
        return Err(CliError::Config("--seeds must be >= 1".into()));
    }
    let dir = out_dir(&a.out, &base, format!("sweep-{}", base.dataset.kind.name()))?;
    let snapshot = to_snapshot(&base)?;
    write_file(&dir.join(SNAPSHOT), &snapshot)?;
    let start = std::time::Instant::now();
    let res = sensitivity_sweep(&base, &grid, a.seeds, jobs(a.jobs)).map_err(train_error)?;
    write_file(&dir.join("sweep.csv"), res.to_csv())?;
    write_file(
        &dir.join("heatmap.svg"),
        heatmap_svg(&res.grid, &res.grid, &res.nmi, "w_inv", "w_prior")?,
    )?;
    write_json(
        &dir.join(SUMMARY),
        &json!({
            "command": "sweep",
            "dataset": base.dataset.kind.name(),
            "seeds": a.seeds,
            "grid": res.grid,
            "nmi_test_mean": res.nmi,
            "config_sha256": sha256_hex(&snapshot),
            "build": build_id(),
            "wall_clock_secs": start.elapsed().as_secs_f64(),
        }),
    )?;
    print!("{}", res.to_csv());
    Ok(())
}

/// Config and checkpoint of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Checkpoint), CliError> {
    let text = config::read(&dir.join(SNAPSHOT))?;
    let cfg = config::parse_config(&text, &RunConfig::toy(gedi::data::DatasetKind::Moons, Variant::Gedi))?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT)).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, ckpt))
}

pub fn eval_cmd(a: &EvalArgs, env_seed: Option<&str>) -> Result<(), CliError> {
    let (cfg, ckpt) = match (&a.run, &a.checkpoint) {
        (Some(dir), _) => load_run(dir)?,
        (None, Some(path)) => (
            a.config.resolve(env_seed)?,
            Checkpoint::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        ),
        (None, None) => return Err(CliError::Config("eval needs --run or --checkpoint".into())),
    };
    let train = cfg.dataset.generate()?;
    let test = cfg.test_spec().generate()?;
    let ev = evaluate(&ckpt.model, &train, &test, &cfg.eval)?;
    let out = json!({
        "dataset": cfg.dataset.kind.name(),
        "data_seed": cfg.dataset.seed,
        "nmi_train": ev.nmi_train,
        "nmi_test": ev.nmi_test,
        "cluster_collapse": ev.cluster,
        "representation_collapse": ev.repr,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Runtime(e.to_string()))?);
    Ok(())
}

pub fn plot_cmd(a: &PlotArgs) -> Result<(), CliError> {
    let (cfg, ckpt) = load_run(&a.run)?;
    let dir = a.out.clone().unwrap_or_else(|| a.run.clone());
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let train = cfg.dataset.generate()?;
    render(&cfg, &ckpt.model, ckpt.buffer.as_ref(), &train, &dir)
}
