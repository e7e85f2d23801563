//! Run configuration from TOML files, environment and flags.
//!
//! Precedence, lowest first: built-in toy defaults, `GEDI_SEED`, the config
//! file, command-line flags.

use std::path::Path;
use std::str::FromStr;

use clap::Args;
use gedi::data::DatasetKind;
use gedi::nets::WeightInit;
use gedi::trainer::{RunConfig, Variant};
use toml::{Table, Value};

use crate::CliError;

pub const SEED_ENV: &str = "GEDI_SEED";

/// Flags shared by every command that builds a [`RunConfig`].
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML file mirroring the run configuration; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// moons | circles
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// gedi | no-gen | no-inv | no-unif | jem | swav
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Run seed (falls back to GEDI_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Points per dataset split.
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Standard deviation of the dataset's Gaussian noise.
    #[arg(long)]
    pub data_noise: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub w_gen: Option<f64>,
    #[arg(long)]
    pub w_inv: Option<f64>,
    #[arg(long)]
    pub w_prior: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Standard deviation of the Gaussian augmentation.
    #[arg(long)]
    pub aug_noise: Option<f64>,
    #[arg(long)]
    pub sgld_steps: Option<usize>,
    #[arg(long)]
    pub sgld_step_size: Option<f64>,
    #[arg(long)]
    pub sgld_noise: Option<f64>,
    /// Clamp SGLD iterates to the init box scaled by this factor.
    #[arg(long)]
    pub sgld_clamp: Option<f64>,
    /// fan-in | kaiming
    #[arg(long, value_parser = parse_init)]
    pub init: Option<WeightInit>,
}

fn parse_init(s: &str) -> Result<WeightInit, String> {
    match s {
        "fan-in" => Ok(WeightInit::FanIn),
        "kaiming" => Ok(WeightInit::Kaiming),
        _ => Err(format!("unknown init scheme '{s}' (expected fan-in or kaiming)")),
    }
}

/// Deserializes a config document layered over `defaults`. Keys missing from
/// `text` keep their default; unknown keys are rejected.
pub fn parse_config(text: &str, defaults: &RunConfig) -> Result<RunConfig, CliError> {
    let file: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config is not valid TOML: {e}")))?;
    let mut base = to_table(defaults)?;
    merge(&mut base, file);
    let cfg: RunConfig = Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config: {e}")))?;
    Ok(cfg)
}

/// Fully resolved config as written to `config.snapshot`.
pub fn to_snapshot(cfg: &RunConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}

fn to_table(cfg: &RunConfig) -> Result<Table, CliError> {
    match Value::try_from(cfg) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => Err(CliError::Config("config did not serialize to a table".into())),
        Err(e) => Err(CliError::Config(format!("cannot serialize config: {e}"))),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ConfigArgs {
    /// Resolves the full configuration. `env_seed` is the raw value of
    /// [`SEED_ENV`], if set.
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
        let mut defaults = RunConfig::toy(
            self.dataset.unwrap_or(DatasetKind::Moons),
            self.variant.unwrap_or(Variant::Gedi),
        );
        if let Some(s) = env_seed {
            defaults.seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
        }
        let mut cfg = match &self.config {
            Some(path) => parse_config(&read(path)?, &defaults)?,
            None => defaults,
        };
        self.apply(&mut cfg);
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.dataset {
            cfg.dataset.kind = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.iterations, self.iterations);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.eval_every, self.eval_every);
        set(&mut cfg.dataset.n, self.n_points);
        set(&mut cfg.dataset.noise_std, self.data_noise);
        set(&mut cfg.dataset.seed, self.data_seed);
        set(&mut cfg.weights.gen, self.w_gen);
        set(&mut cfg.weights.inv, self.w_inv);
        set(&mut cfg.weights.prior, self.w_prior);
        set(&mut cfg.architecture.tau, self.tau);
        set(&mut cfg.adam.lr, self.lr);
        set(&mut cfg.augmentation.noise_std, self.aug_noise);
        set(&mut cfg.sgld.steps, self.sgld_steps);
        set(&mut cfg.sgld.step_size, self.sgld_step_size);
        set(&mut cfg.sgld.noise_std, self.sgld_noise);
        if self.sgld_clamp.is_some() {
            cfg.sgld.clamp_factor = self.sgld_clamp;
        }
        set(&mut cfg.init, self.init);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Comma-separated list, e.g. `gedi,no-gen` or `0,10,20`. Items are trimmed;
/// empty items and duplicates are rejected.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr + PartialEq,
    T::Err: std::fmt::Display,
{
    let mut out: Vec<T> = Vec::new();
    for item in s.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(CliError::Config(format!("empty item in list '{s}'")));
        }
        let v = item
            .parse::<T>()
            .map_err(|e| CliError::Config(format!("bad list item '{item}': {e}")))?;
        if out.contains(&v) {
            return Err(CliError::Config(format!("duplicate list item '{item}'")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Loss-weight grid: a list of finite, non-negative numbers.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let grid: Vec<f64> = parse_list(s)?;
    if let Some(bad) = grid.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(CliError::Config(format!("grid weight {bad} must be finite and >= 0")));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> RunConfig {
        RunConfig::toy(DatasetKind::Moons, Variant::Gedi)
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(parse_config("", &defaults()).unwrap(), defaults());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = defaults();
        cfg.sgld.clamp_factor = Some(3.0);
        cfg.weights.inv = 12.5;
        let text = to_snapshot(&cfg).unwrap();
        assert_eq!(parse_config(&text, &RunConfig::toy(DatasetKind::Circles, Variant::Jem)).unwrap(), cfg);
    }

    #[test]
    fn nested_keys_override_individually() {
        let cfg = parse_config("seed = 9\n[weights]\ninv = 3.0\n", &defaults()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.weights.inv, 3.0);
        assert_eq!(cfg.weights.prior, defaults().weights.prior);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_config("seeed = 1\n", &defaults()), Err(CliError::Config(_))));
        assert!(matches!(parse_config("[weights]\nfoo = 1.0\n", &defaults()), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_beat_file_beats_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\niterations = 7\n").unwrap();
        let mut args = ConfigArgs {
            config: Some(path),
            ..ConfigArgs::default()
        };
        assert_eq!(args.resolve(Some("3")).unwrap().seed, 5);
        args.seed = Some(11);
        assert_eq!(args.resolve(Some("3")).unwrap().seed, 11);
        let bare = ConfigArgs::default();
        assert_eq!(bare.resolve(Some("3")).unwrap().seed, 3);
        assert_eq!(bare.resolve(None).unwrap().seed, 0);
        assert!(bare.resolve(Some("x")).is_err());
    }

    #[test]
    fn lists_parse_and_reject_garbage() {
        assert_eq!(
            parse_list::<Variant>("gedi, no-gen").unwrap(),
            vec![Variant::Gedi, Variant::NoGen]
        );
        assert_eq!(parse_grid("0,10,20").unwrap(), vec![0.0, 10.0, 20.0]);
        assert!(parse_grid("0,,1").is_err());
        assert!(parse_grid("1,1").is_err());
        assert!(parse_grid("-1").is_err());
        assert!(parse_grid("nan").is_err());
        assert!(parse_list::<Variant>("gedi,bogus").is_err());
    }
}
