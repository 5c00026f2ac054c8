//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! fl.K = 50
//! fuzzy.alpha = 0.5
//! ```
//!
//! Every key can also be given on the command line as `--<key> VALUE`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use flmr::data::GeneratorConfig;
use flmr::deepcog::DeepCogLossConfig;
use flmr::experiment::{DataSource, ExperimentConfig};
use flmr::federation::LossKind;
use flmr::logic::FuzzyConfig;
use flmr::nn::MlpConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("{0}")]
    Conflict(String),
}

pub struct KeySpec {
    pub key: &'static str,
    /// Short flag spelling accepted in addition to `--<key>`.
    pub alias: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, alias: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, alias, help }
}

pub const KEYS: &[KeySpec] = &[
    key("seed", None, "Run seed (u64) for data, initialization and batch order"),
    key("loss", None, "Local objective: flmr or deepcog"),
    key("workers", None, "Worker threads for the per-client loop"),
    key("out", None, "Output directory [env: FLMR_OUT_DIR]"),
    key("label", None, "Run label; outputs go to <out>/<label>"),
    key("data.dir", Some("data-dir"), "Directory of client_<id>.csv files (instead of generating)"),
    key("data.test_fraction", None, "Held-out fraction per client"),
    key("data.keep_exploded", None, "Keep runs flagged explode=1 (true/false)"),
    key("fl.K", Some("clients"), "Number of clients K"),
    key("fl.T", Some("rounds"), "Number of federated rounds T"),
    key("fl.L", Some("local-epochs"), "Local epochs per round L"),
    key("fl.batch_size", None, "Local mini-batch size"),
    key("fl.participation", None, "Fraction of clients training each round"),
    key("optim.rho", None, "AdaDelta decay"),
    key("optim.epsilon", None, "AdaDelta epsilon"),
    key("optim.scale", None, "Multiplier applied to every AdaDelta update"),
    key("fuzzy.alpha", Some("alpha"), "Smoothness of the eq predicate"),
    key("fuzzy.p", Some("p"), "Exponent of the Forall p-mean error"),
    key("mlp.hidden1", None, "Width of the first hidden layer"),
    key("mlp.hidden2", None, "Width of the second hidden layer"),
    key("gen.n_records", None, "Synthetic records per client"),
    key("gen.ul_max_kbps", None, "Uplink traffic maximum"),
    key("gen.dl_max_kbps", None, "Downlink traffic maximum"),
    key("gen.base_load", None, "Idle CPU load"),
    key("gen.ul_weight", None, "Uplink load weight"),
    key("gen.dl_weight", None, "Downlink load weight"),
    key("gen.mcs_ul_factor", None, "Extra uplink load at MCS 0"),
    key("gen.mcs_dl_factor", None, "Extra downlink load at MCS 0"),
    key("gen.cpu_set_count", None, "Number of computing sets"),
    key("gen.cpu_set_offset_step", None, "Load offset per computing set"),
    key("gen.noise_sd", None, "Gaussian noise standard deviation"),
    key("gen.explode_threshold", None, "Raw load above which a run is flagged explode"),
    key("deepcog.alpha_penalty", None, "Baseline: SLA violation penalty"),
    key("deepcog.epsilon_smooth", None, "Baseline: width of the underprovisioning ramp"),
    key("deepcog.over_slope", None, "Baseline: overprovisioning cost per unit"),
    key("deepcog.under_slope", None, "Baseline: residual slope past the ramp"),
];

pub fn is_known(k: &str) -> bool {
    KEYS.iter().any(|s| s.key == k)
}

/// Parses configuration text into key/value pairs.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !is_known(k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if v.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, message: format!("`{k}` has no value") });
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn value<T: FromStr>(settings: &BTreeMap<String, String>, k: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    settings
        .get(k)
        .map(|v| {
            v.parse::<T>().map_err(|e| ConfigError::Invalid { key: k.to_string(), message: format!("{v:?}: {e}") })
        })
        .transpose()
}

fn set<T: FromStr>(settings: &BTreeMap<String, String>, k: &str, slot: &mut T) -> Result<(), ConfigError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = value(settings, k)? {
        *slot = v;
    }
    Ok(())
}

fn invalid(k: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { key: k.to_string(), message: e.to_string() }
}

/// Applies `settings` on top of `base`. `out_fallback` is used for the output
/// directory when no `out` key is present.
pub fn build(
    base: ExperimentConfig,
    settings: &BTreeMap<String, String>,
    out_fallback: Option<PathBuf>,
) -> Result<ExperimentConfig, ConfigError> {
    if let Some(k) = settings.keys().find(|k| !is_known(k)) {
        return Err(ConfigError::UnknownKey(k.clone()));
    }
    let mut cfg = base;
    let fl = &mut cfg.fl;

    set(settings, "seed", &mut fl.seed)?;
    if let Some(kind) = value::<LossKind>(settings, "loss")? {
        fl.loss_kind = kind;
    }
    set(settings, "workers", &mut fl.workers)?;
    set(settings, "fl.K", &mut fl.clients)?;
    set(settings, "fl.T", &mut fl.rounds)?;
    set(settings, "fl.L", &mut fl.local_epochs)?;
    set(settings, "fl.batch_size", &mut fl.batch_size)?;
    set(settings, "fl.participation", &mut fl.participation)?;
    set(settings, "optim.rho", &mut fl.optimizer.rho)?;
    set(settings, "optim.epsilon", &mut fl.optimizer.epsilon)?;
    set(settings, "optim.scale", &mut fl.optimizer.scale)?;

    let alpha = value(settings, "fuzzy.alpha")?.unwrap_or(fl.fuzzy.alpha());
    let p = value(settings, "fuzzy.p")?.unwrap_or(fl.fuzzy.p());
    fl.fuzzy = FuzzyConfig::new(alpha, p).map_err(|e| invalid("fuzzy", e))?;

    let [h1, h2] = fl.mlp.hidden_dims();
    let h1 = value(settings, "mlp.hidden1")?.unwrap_or(h1);
    let h2 = value(settings, "mlp.hidden2")?.unwrap_or(h2);
    fl.mlp = MlpConfig::new(fl.mlp.input_dim(), [h1, h2], 1).map_err(|e| invalid("mlp", e))?;

    let d = fl.deepcog;
    fl.deepcog = DeepCogLossConfig::new(
        value(settings, "deepcog.alpha_penalty")?.unwrap_or(d.alpha_penalty()),
        value(settings, "deepcog.epsilon_smooth")?.unwrap_or(d.epsilon_smooth()),
        value(settings, "deepcog.over_slope")?.unwrap_or(d.over_slope()),
        value(settings, "deepcog.under_slope")?.unwrap_or(d.under_slope()),
    )
    .map_err(|e| invalid("deepcog", e))?;

    set(settings, "data.test_fraction", &mut cfg.test_fraction)?;
    set(settings, "data.keep_exploded", &mut cfg.keep_exploded)?;
    if let Some(label) = settings.get("label") {
        cfg.label = Some(label.clone());
    }
    match (settings.get("out"), out_fallback) {
        (Some(o), _) => cfg.out_dir = PathBuf::from(o),
        (None, Some(o)) => cfg.out_dir = o,
        (None, None) => {}
    }

    let gen_keys: Vec<&String> = settings.keys().filter(|k| k.starts_with("gen.")).collect();
    if let Some(dir) = settings.get("data.dir") {
        if let Some(k) = gen_keys.first() {
            return Err(ConfigError::Conflict(format!(
                "`data.dir` and generator setting `{k}` are mutually exclusive"
            )));
        }
        cfg.data = DataSource::Directory(PathBuf::from(dir));
    } else {
        let mut g = match cfg.data {
            DataSource::Synthetic(g) => g,
            DataSource::Directory(_) => GeneratorConfig::default(),
        };
        g.seed = cfg.fl.seed;
        set(settings, "gen.n_records", &mut g.n_records)?;
        set(settings, "gen.ul_max_kbps", &mut g.ul_max_kbps)?;
        set(settings, "gen.dl_max_kbps", &mut g.dl_max_kbps)?;
        set(settings, "gen.base_load", &mut g.base_load)?;
        set(settings, "gen.ul_weight", &mut g.ul_weight)?;
        set(settings, "gen.dl_weight", &mut g.dl_weight)?;
        set(settings, "gen.mcs_ul_factor", &mut g.mcs_ul_factor)?;
        set(settings, "gen.mcs_dl_factor", &mut g.mcs_dl_factor)?;
        set(settings, "gen.cpu_set_count", &mut g.cpu_set_count)?;
        set(settings, "gen.cpu_set_offset_step", &mut g.cpu_set_offset_step)?;
        set(settings, "gen.noise_sd", &mut g.noise_sd)?;
        set(settings, "gen.explode_threshold", &mut g.explode_threshold)?;
        g.validate().map_err(|e| invalid("gen", e))?;
        cfg.data = DataSource::Synthetic(g);
    }

    cfg.fl.validate().map_err(|e| invalid("fl", e))?;
    Ok(cfg)
}
