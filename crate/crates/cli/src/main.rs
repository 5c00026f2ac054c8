//! `flmr` experiment runner.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use flmr::experiment::{self, ExperimentConfig, ExperimentError};
use flmr::metrics::Summary;

const OUT_ENV: &str = "FLMR_OUT_DIR";

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn key_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config").long("config").value_name("PATH").help("Configuration file of `key = value` lines")];
    for spec in config::KEYS {
        let mut arg = Arg::new(spec.key).long(spec.key).value_name("VALUE").help(spec.help);
        if let Some(alias) = spec.alias {
            arg = arg.visible_alias(alias);
        }
        args.push(arg);
    }
    args
}

fn cli() -> Command {
    Command::new("flmr")
        .about("Federated neurosymbolic CPU-load forecasting experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(Command::new("generate").about("Write synthetic client_<id>.csv files").args(key_args()))
        .subcommand(Command::new("train").about("Run federated training and write reports").args(key_args()))
        .subcommand(
            Command::new("demo")
                .about("Desk-scale preset: train FLMR and the DeepCog baseline on identical data and compare")
                .args(key_args()),
        )
        .subcommand(
            Command::new("compare")
                .about("Merge an FLMR summary and a baseline summary into a comparison")
                .arg(Arg::new("flmr").required(true).value_name("FLMR_SUMMARY"))
                .arg(Arg::new("baseline").required(true).value_name("BASELINE_SUMMARY"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("Output directory [env: FLMR_OUT_DIR]")),
        )
}

fn out_fallback() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV).map(PathBuf::from)
}

fn load_config(m: &ArgMatches, base: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    let mut settings: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {path}: {e}")))?;
        settings = config::parse(&text)?;
    }
    for spec in config::KEYS {
        if let Some(v) = m.get_one::<String>(spec.key) {
            settings.insert(spec.key.to_string(), v.clone());
        }
    }
    Ok(config::build(base, &settings, out_fallback())?)
}

fn report_run(outcome: &experiment::RunOutcome) {
    let last = outcome.rounds.last().expect("at least one round");
    let s = outcome.final_stats();
    eprintln!(
        "{}: {} rounds, final test loss {:.5}, phi {:.5}, over {:.4}, under {:.4}",
        outcome.kind.name(),
        outcome.rounds.len(),
        last.mean_test_loss(),
        last.mean_test_phi(),
        s.over_total,
        s.under_total
    );
}

fn run(m: &ArgMatches) -> Result<(), Failure> {
    match m.subcommand() {
        Some(("generate", sub)) => {
            let cfg = load_config(sub, ExperimentConfig::default())?;
            let files = experiment::generate_client_files(&cfg, &cfg.output_dir())?;
            eprintln!("wrote {} client files to {}", files.len(), cfg.output_dir().display());
        }
        Some(("train", sub)) => {
            let cfg = load_config(sub, ExperimentConfig::default())?;
            let outcome = experiment::run_training(&cfg)?;
            report_run(&outcome);
        }
        Some(("demo", sub)) => {
            let cfg = load_config(sub, ExperimentConfig::desk_scale(0))?;
            let demo = experiment::run_demo(&cfg)?;
            report_run(&demo.flmr);
            report_run(&demo.baseline);
            print_ratios(&demo.comparison);
        }
        Some(("compare", sub)) => {
            let a = PathBuf::from(sub.get_one::<String>("flmr").expect("required"));
            let b = PathBuf::from(sub.get_one::<String>("baseline").expect("required"));
            let out = sub
                .get_one::<String>("out")
                .map(PathBuf::from)
                .or_else(out_fallback)
                .unwrap_or_else(|| PathBuf::from("."));
            let report = experiment::compare_summaries(&a, &b)?;
            experiment::write_summary(&out.join("summary.json"), &Summary::from_comparison(&report))?;
            print_ratios(&report);
        }
        _ => unreachable!("subcommand is required"),
    }
    Ok(())
}

fn print_ratios(report: &flmr::metrics::ComparisonReport) {
    let fmt = |r: flmr::metrics::Ratio| if r.is_infinite() { "inf".to_string() } else { format!("{:.3}", r.0) };
    let r = &report.ratios;
    println!(
        "baseline/flmr ratios: over {}, under {}, combined {}",
        fmt(r.over_ratio),
        fmt(r.under_ratio),
        fmt(r.combined_ratio)
    );
    for name in report.infinite_ratios() {
        eprintln!("warning: {name} is infinite (FLMR total is zero)");
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
