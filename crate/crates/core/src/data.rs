//! vBS telemetry records: CSV ingestion, a synthetic generator,
//! normalization and train/test splitting.
//!
//! Each record is one experiment run of a virtualized base station: uplink
//! and downlink MCS indices and traffic demand, the CPU core set it ran on,
//! the measured mean CPU utilisation, and whether the run failed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::nn::Matrix;
use crate::rng::{self, StreamKind};

pub const MAX_MCS: u8 = 28;
pub const CSV_HEADER: [&str; 7] = ["mcs_dl", "mcs_ul", "dl_kbps", "ul_kbps", "cpu_set", "cpu", "explode"];
/// Model inputs, in column order.
pub const FEATURES: [&str; 5] = ["mcs_dl", "mcs_ul", "dl_kbps", "ul_kbps", "cpu_set"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: {reason}")]
    Validation { row: usize, column: String, reason: String },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbsRecord {
    pub mcs_dl: u8,
    pub mcs_ul: u8,
    pub dl_kbps: f64,
    pub ul_kbps: f64,
    pub cpu_set: u32,
    pub cpu: f64,
    pub explode: bool,
}

impl VbsRecord {
    pub fn features(&self) -> [f64; 5] {
        [
            f64::from(self.mcs_dl),
            f64::from(self.mcs_ul),
            self.dl_kbps,
            self.ul_kbps,
            f64::from(self.cpu_set),
        ]
    }

    /// Checks Table-style bounds; `Err` carries `(column, reason)`.
    fn check(&self) -> Result<(), (&'static str, String)> {
        if self.mcs_dl > MAX_MCS {
            return Err(("mcs_dl", format!("MCS index {} outside 0..=28", self.mcs_dl)));
        }
        if self.mcs_ul > MAX_MCS {
            return Err(("mcs_ul", format!("MCS index {} outside 0..=28", self.mcs_ul)));
        }
        if !(self.dl_kbps >= 0.0 && self.dl_kbps.is_finite()) {
            return Err(("dl_kbps", format!("traffic {} must be non-negative", self.dl_kbps)));
        }
        if !(self.ul_kbps >= 0.0 && self.ul_kbps.is_finite()) {
            return Err(("ul_kbps", format!("traffic {} must be non-negative", self.ul_kbps)));
        }
        if !(0.0..=1.0).contains(&self.cpu) {
            return Err(("cpu", format!("utilisation {} outside [0, 1]", self.cpu)));
        }
        Ok(())
    }
}

/// Reads records from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<VbsRecord>, DataError> {
    read_csv(File::open(path)?)
}

/// Reads records from CSV text. Columns are matched by name. Row numbers in
/// errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<VbsRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let parse_err = |k: usize| DataError::Parse {
            row,
            column: CSV_HEADER[k].to_string(),
            value: cell(k).to_string(),
        };
        let range_err = |k: usize, reason: String| DataError::Validation {
            row,
            column: CSV_HEADER[k].to_string(),
            reason,
        };
        let float = |k: usize| cell(k).parse::<f64>().map_err(|_| parse_err(k));
        let int = |k: usize| cell(k).parse::<i64>().map_err(|_| parse_err(k));
        let mcs = |k: usize| {
            let v = int(k)?;
            u8::try_from(v)
                .ok()
                .filter(|m| *m <= MAX_MCS)
                .ok_or_else(|| range_err(k, format!("MCS index {v} outside 0..=28")))
        };
        let cpu_set = int(4)?;
        let cpu_set = u32::try_from(cpu_set)
            .map_err(|_| range_err(4, format!("computing set {cpu_set} must be a non-negative integer")))?;
        let explode = match cell(6) {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err(6)),
        };
        let record = VbsRecord {
            mcs_dl: mcs(0)?,
            mcs_ul: mcs(1)?,
            dl_kbps: float(2)?,
            ul_kbps: float(3)?,
            cpu_set,
            cpu: float(5)?,
            explode,
        };
        if let Err((column, reason)) = record.check() {
            return Err(DataError::Validation { row, column: column.to_string(), reason });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, records: &[VbsRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// Writes the canonical format: fixed header, `explode` as `0`/`1`, floats in
/// shortest round-trip form.
pub fn write_csv_to<W: Write>(mut w: W, records: &[VbsRecord]) -> Result<(), DataError> {
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.mcs_dl,
            r.mcs_ul,
            r.dl_kbps,
            r.ul_kbps,
            r.cpu_set,
            r.cpu,
            u8::from(r.explode)
        )?;
    }
    Ok(())
}

/// Parameters of the synthetic workload.
///
/// CPU load is a base term plus uplink and downlink contributions that grow
/// with normalized traffic and with lower MCS (more resource blocks per kbps,
/// hence more decoding work), plus a per-core-set offset and Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_records: usize,
    pub ul_max_kbps: f64,
    pub dl_max_kbps: f64,
    pub base_load: f64,
    pub ul_weight: f64,
    pub dl_weight: f64,
    pub mcs_ul_factor: f64,
    pub mcs_dl_factor: f64,
    pub cpu_set_count: u32,
    pub cpu_set_offset_step: f64,
    pub noise_sd: f64,
    pub explode_threshold: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_records: 2000,
            ul_max_kbps: 20_000.0,
            dl_max_kbps: 50_000.0,
            base_load: 0.10,
            ul_weight: 0.45,
            dl_weight: 0.25,
            mcs_ul_factor: 0.5,
            mcs_dl_factor: 0.3,
            cpu_set_count: 4,
            cpu_set_offset_step: 0.02,
            noise_sd: 0.02,
            explode_threshold: 0.95,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |what: &str| Err(DataError::Usage(format!("generator: {what}")));
        if self.n_records == 0 {
            return bad("n_records must be positive");
        }
        if !(self.ul_max_kbps > 0.0 && self.dl_max_kbps > 0.0) {
            return bad("traffic maxima must be positive");
        }
        if self.cpu_set_count == 0 {
            return bad("cpu_set_count must be positive");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        if !(self.explode_threshold > 0.0 && self.explode_threshold <= 1.0) {
            return bad("explode_threshold must lie in (0, 1]");
        }
        let finite = [
            self.base_load,
            self.ul_weight,
            self.dl_weight,
            self.mcs_ul_factor,
            self.mcs_dl_factor,
            self.cpu_set_offset_step,
            self.noise_sd,
            self.ul_max_kbps,
            self.dl_max_kbps,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        Ok(())
    }

    /// Configuration for client `client_id`: its own seed and traffic maxima
    /// scaled by independent factors drawn from [0.7, 1.3].
    pub fn for_client(&self, client_id: u32) -> GeneratorConfig {
        let mut rng = rng::stream(self.seed, StreamKind::Heterogeneity, client_id, 0);
        let ul_scale = rng.random_range(0.7..=1.3);
        let dl_scale = rng.random_range(0.7..=1.3);
        GeneratorConfig {
            seed: rng.next_u64(),
            ul_max_kbps: self.ul_max_kbps * ul_scale,
            dl_max_kbps: self.dl_max_kbps * dl_scale,
            ..self.clone()
        }
    }

    /// Noise-free load before clamping.
    pub fn raw_load(&self, ul_kbps: f64, dl_kbps: f64, mcs_ul: u8, mcs_dl: u8, cpu_set: u32) -> f64 {
        let m = f64::from(MAX_MCS);
        self.base_load
            + self.ul_weight * (ul_kbps / self.ul_max_kbps) * (1.0 + self.mcs_ul_factor * (m - f64::from(mcs_ul)) / m)
            + self.dl_weight * (dl_kbps / self.dl_max_kbps) * (1.0 + self.mcs_dl_factor * (m - f64::from(mcs_dl)) / m)
            + self.cpu_set_offset_step * f64::from(cpu_set)
    }
}

/// Draws `cfg.n_records` records. Deterministic per `cfg.seed`.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Vec<VbsRecord>, DataError> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, StreamKind::Generator, 0, 0);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| DataError::Usage(e.to_string()))?;
    let records = (0..cfg.n_records)
        .map(|_| {
            let ul_kbps = rng.random_range(0.0..cfg.ul_max_kbps);
            let dl_kbps = rng.random_range(0.0..cfg.dl_max_kbps);
            let mcs_ul = rng.random_range(0..=MAX_MCS);
            let mcs_dl = rng.random_range(0..=MAX_MCS);
            let cpu_set = rng.random_range(0..cfg.cpu_set_count);
            let raw = cfg.raw_load(ul_kbps, dl_kbps, mcs_ul, mcs_dl, cpu_set) + noise.sample(&mut rng);
            VbsRecord {
                mcs_dl,
                mcs_ul,
                dl_kbps,
                ul_kbps,
                cpu_set,
                cpu: raw.clamp(0.0, 1.0),
                explode: raw > cfg.explode_threshold,
            }
        })
        .collect();
    Ok(records)
}

/// Drops runs flagged as failed, preserving order.
pub fn filter_exploded(records: &[VbsRecord]) -> Vec<VbsRecord> {
    records.iter().filter(|r| !r.explode).copied().collect()
}

/// Per-feature `(min, max)` in [`FEATURES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub min: [f64; 5],
    pub max: [f64; 5],
}

/// MCS features use the fixed range 0..=28; the others use observed bounds.
pub fn fit_normalizer(records: &[VbsRecord]) -> Result<FeatureStats, DataError> {
    let first = records
        .first()
        .ok_or_else(|| DataError::Usage("cannot fit normalizer on zero records".into()))?;
    let mut min = first.features();
    let mut max = min;
    for r in &records[1..] {
        for (k, v) in r.features().into_iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    for k in 0..2 {
        min[k] = 0.0;
        max[k] = f64::from(MAX_MCS);
    }
    Ok(FeatureStats { min, max })
}

impl FeatureStats {
    pub fn scale(&self, k: usize, v: f64) -> f64 {
        let span = self.max[k] - self.min[k];
        if span == 0.0 {
            0.0
        } else {
            (v - self.min[k]) / span
        }
    }

    pub fn unscale(&self, k: usize, v: f64) -> f64 {
        self.min[k] + v * (self.max[k] - self.min[k])
    }

    pub fn denormalize(&self, row: &[f64]) -> [f64; 5] {
        std::array::from_fn(|k| self.unscale(k, row[k]))
    }
}

/// Min-max scaled feature matrix (`records x 5`) and the unscaled CPU targets.
pub fn normalize(records: &[VbsRecord], stats: &FeatureStats) -> (Matrix, Vec<f64>) {
    let data = records
        .iter()
        .flat_map(|r| {
            let f = r.features();
            (0..5).map(move |k| stats.scale(k, f[k]))
        })
        .collect();
    let x = Matrix::from_vec(records.len(), 5, data).expect("5 values per record");
    (x, records.iter().map(|r| r.cpu).collect())
}

/// Shuffled split with `round_half_even(test_fraction * n)` test records.
pub fn split(records: &[VbsRecord], test_fraction: f64, seed: u64) -> Result<(Vec<VbsRecord>, Vec<VbsRecord>), DataError> {
    if records.len() < 2 {
        return Err(DataError::Usage(format!("need at least 2 records to split, got {}", records.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Usage(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n_test = (test_fraction * records.len() as f64).round_ties_even() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng::stream(seed, StreamKind::Split, 0, 0));
    let test = order[..n_test].iter().map(|&i| records[i]).collect();
    let train = order[n_test..].iter().map(|&i| records[i]).collect();
    Ok((train, test))
}

/// One vBS's local data: a train/test split and the normalizer fitted on the
/// training part.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: u32,
    pub train: Vec<VbsRecord>,
    pub test: Vec<VbsRecord>,
    pub feature_stats: FeatureStats,
}

impl ClientDataset {
    pub fn new(client_id: u32, records: &[VbsRecord], test_fraction: f64, seed: u64) -> Result<Self, DataError> {
        let split_seed = rng::stream(seed, StreamKind::Split, client_id, 0).next_u64();
        let (train, test) = split(records, test_fraction, split_seed)?;
        if train.is_empty() || test.is_empty() {
            return Err(DataError::Usage(format!(
                "client {client_id}: split of {} records leaves an empty side",
                records.len()
            )));
        }
        let feature_stats = fit_normalizer(&train)?;
        Ok(Self { client_id, train, test, feature_stats })
    }

    /// D_k, the number of training samples.
    pub fn sample_count(&self) -> usize {
        self.train.len()
    }
}
