//! End-to-end experiment driver: data, federated training, reports.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{self, filter_exploded, generate_synthetic, ClientDataset, DataError, GeneratorConfig, VbsRecord};
use crate::federation::{run_federation, FedError, FlConfig, LossKind, RoundResult};
use crate::metrics::{
    compare, emit_reports, prediction_errors, provisioning_decomposition, ComparisonReport, ErrorSnapshots,
    MetricsError, ProvisioningStats, Summary, ERROR_SAMPLES,
};
use crate::nn::{forward, ModelParams};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FedError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExperimentError {
    /// True for problems with the requested settings, as opposed to failures
    /// while running them.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Federation(FedError::Config(_)))
    }
}

/// Where client records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate each client's records; `seed` of the config is the run seed.
    Synthetic(GeneratorConfig),
    /// Read `client_<id>.csv` for every client id from a directory.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fl: FlConfig,
    pub data: DataSource,
    pub test_fraction: f64,
    pub keep_exploded: bool,
    pub out_dir: PathBuf,
    pub label: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fl: FlConfig::default(),
            data: DataSource::Synthetic(GeneratorConfig::default()),
            test_fraction: 0.2,
            keep_exploded: false,
            out_dir: PathBuf::from("flmr-out"),
            label: None,
        }
    }
}

impl ExperimentConfig {
    /// Five synthetic clients of 2000 records, 20 rounds, otherwise defaults.
    pub fn desk_scale(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.fl.clients = 5;
        cfg.fl.rounds = 20;
        cfg.fl.seed = seed;
        cfg.data = DataSource::Synthetic(GeneratorConfig { seed, n_records: 2000, ..Default::default() });
        cfg
    }

    /// `out_dir`, or `out_dir/label` when a label is set.
    pub fn output_dir(&self) -> PathBuf {
        match &self.label {
            Some(l) if !l.is_empty() => self.out_dir.join(l),
            _ => self.out_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.fl.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ExperimentError::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        match &self.data {
            DataSource::Synthetic(g) => g.validate().map_err(|e| ExperimentError::Config(e.to_string())),
            DataSource::Directory(dir) if !dir.is_dir() => {
                Err(ExperimentError::Config(format!("data directory {} does not exist", dir.display())))
            }
            DataSource::Directory(_) => Ok(()),
        }
    }
}

pub fn client_file_name(client_id: u32) -> String {
    format!("client_{client_id}.csv")
}

fn client_ids(cfg: &ExperimentConfig) -> impl Iterator<Item = u32> {
    0..cfg.fl.clients as u32
}

/// Raw records of every client, in client-id order, before filtering.
pub fn client_records(cfg: &ExperimentConfig) -> Result<Vec<Vec<VbsRecord>>, ExperimentError> {
    match &cfg.data {
        DataSource::Synthetic(g) => client_ids(cfg).map(|k| Ok(generate_synthetic(&g.for_client(k))?)).collect(),
        DataSource::Directory(dir) => client_ids(cfg)
            .map(|k| {
                let path = dir.join(client_file_name(k));
                if !path.is_file() {
                    return Err(ExperimentError::Config(format!("missing client file {}", path.display())));
                }
                Ok(data::load_csv(&path)?)
            })
            .collect(),
    }
}

/// Writes one CSV per client into `out_dir` and returns their paths.
pub fn generate_client_files(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if cfg.fl.clients == 0 {
        return Err(ExperimentError::Config("client count K must be at least 1".into()));
    }
    let DataSource::Synthetic(_) = cfg.data else {
        return Err(ExperimentError::Config("generate needs generator settings, not a data directory".into()));
    };
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(DataError::from)?;
    client_records(cfg)?
        .iter()
        .zip(client_ids(cfg))
        .map(|(recs, k)| {
            let path = out_dir.join(client_file_name(k));
            data::write_csv(&path, recs)?;
            Ok(path)
        })
        .collect()
}

/// Filtered, split, per-client datasets ready for training.
pub fn prepare_datasets(cfg: &ExperimentConfig) -> Result<Vec<ClientDataset>, ExperimentError> {
    cfg.validate()?;
    client_records(cfg)?
        .into_iter()
        .zip(client_ids(cfg))
        .map(|(recs, k)| {
            let recs = if cfg.keep_exploded { recs } else { filter_exploded(&recs) };
            Ok(ClientDataset::new(k, &recs, cfg.test_fraction, cfg.fl.seed)?)
        })
        .collect()
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: LossKind,
    pub rounds: Vec<RoundResult>,
    /// Provisioning statistics of each round's broadcast model on the pooled
    /// test samples of all clients.
    pub provisioning: Vec<ProvisioningStats>,
    pub errors: ErrorSnapshots,
}

impl RunOutcome {
    pub fn final_stats(&self) -> ProvisioningStats {
        *self.provisioning.last().expect("at least one round")
    }

    pub fn summary(&self) -> Summary {
        Summary::single(self.kind, self.final_stats())
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        emit_reports(&self.rounds, self.kind, &self.errors, &self.summary(), dir)?;
        Ok(())
    }
}

struct PooledTest {
    per_client: Vec<(crate::nn::Matrix, Vec<f64>)>,
}

impl PooledTest {
    fn new(datasets: &[ClientDataset]) -> Self {
        let mut sorted: Vec<&ClientDataset> = datasets.iter().collect();
        sorted.sort_by_key(|d| d.client_id);
        Self { per_client: sorted.iter().map(|d| data::normalize(&d.test, &d.feature_stats)).collect() }
    }

    fn errors(&self, params: &ModelParams) -> Result<Vec<f64>, ExperimentError> {
        let mut out = Vec::new();
        for (x, y) in &self.per_client {
            let (pred, _) = forward(params, x).map_err(FedError::from)?;
            out.extend(prediction_errors(&pred, y)?);
        }
        Ok(out)
    }
}

/// Trains with `cfg.fl.loss_kind` on `datasets` and measures provisioning.
pub fn run_on(cfg: &ExperimentConfig, datasets: &[ClientDataset]) -> Result<RunOutcome, ExperimentError> {
    let rounds = run_federation(&cfg.fl, datasets)?;
    let pooled = PooledTest::new(datasets);
    let mut provisioning = Vec::with_capacity(rounds.len());
    let mut first_round = Vec::new();
    let mut final_round = Vec::new();
    for (i, r) in rounds.iter().enumerate() {
        let errs = pooled.errors(&r.global_params)?;
        provisioning.push(provisioning_decomposition(&errs)?);
        if i == 0 {
            first_round = errs.iter().copied().take(ERROR_SAMPLES).collect();
        }
        if i + 1 == rounds.len() {
            final_round = errs.into_iter().take(ERROR_SAMPLES).collect();
        }
    }
    Ok(RunOutcome { kind: cfg.fl.loss_kind, rounds, provisioning, errors: ErrorSnapshots { first_round, final_round } })
}

/// Prepares data, trains, and writes reports to [`ExperimentConfig::output_dir`].
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    let datasets = prepare_datasets(cfg)?;
    let outcome = run_on(cfg, &datasets)?;
    outcome.write(&cfg.output_dir())?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub flmr: RunOutcome,
    pub baseline: RunOutcome,
    pub comparison: ComparisonReport,
}

/// Trains both objectives on identical data and seeds. Writes `flmr/`,
/// `deepcog/` and a merged `summary.json` under the output directory.
pub fn run_demo(cfg: &ExperimentConfig) -> Result<DemoOutcome, ExperimentError> {
    let datasets = prepare_datasets(cfg)?;
    let out = cfg.output_dir();
    let run = |kind: LossKind| -> Result<RunOutcome, ExperimentError> {
        let mut c = cfg.clone();
        c.fl.loss_kind = kind;
        let outcome = run_on(&c, &datasets)?;
        outcome.write(&out.join(kind.name()))?;
        Ok(outcome)
    };
    let flmr = run(LossKind::Flmr)?;
    let baseline = run(LossKind::DeepCog)?;
    let comparison = compare(&flmr.final_stats(), &baseline.final_stats());
    write_summary(&out.join("summary.json"), &Summary::from_comparison(&comparison))?;
    Ok(DemoOutcome { flmr, baseline, comparison })
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(MetricsError::from)?;
    }
    fs::write(path, summary.to_json()?).map_err(MetricsError::from)?;
    Ok(())
}

/// Merges two single-run summaries into a comparison. The FLMR side is read
/// from the first file's `flmr` entry and the baseline from the second file's
/// `baseline` entry; either falls back to the other key when absent.
pub fn compare_summaries(flmr_path: &Path, baseline_path: &Path) -> Result<ComparisonReport, ExperimentError> {
    let read = |p: &Path| {
        if !p.is_file() {
            return Err(ExperimentError::Config(format!("summary {} does not exist", p.display())));
        }
        Ok(Summary::read(p)?)
    };
    let a = read(flmr_path)?;
    let b = read(baseline_path)?;
    let flmr = a.flmr.or(a.baseline).ok_or_else(|| {
        ExperimentError::Config(format!("{} holds no provisioning statistics", flmr_path.display()))
    })?;
    let baseline = b.baseline.or(b.flmr).ok_or_else(|| {
        ExperimentError::Config(format!("{} holds no provisioning statistics", baseline_path.display()))
    })?;
    Ok(compare(&flmr, &baseline))
}
