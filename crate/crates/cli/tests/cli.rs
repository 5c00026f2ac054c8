use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--clients", "2", "--rounds", "2", "--gen.n_records", "200", "--fl.batch_size", "64", "--mlp.hidden1", "8",
    "--mlp.hidden2", "4",
];

fn flmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flmr")).args(args).env_remove("FLMR_OUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn generate_defaults_write_fifty_clients() {
    let dir = tempfile::tempdir().unwrap();
    let out = flmr(&["generate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let files = tree(dir.path());
    assert_eq!(files.len(), 50);
    for k in 0..50 {
        let text = String::from_utf8(files[&format!("client_{k}.csv")].clone()).unwrap();
        assert!(text.starts_with("mcs_dl,mcs_ul,dl_kbps,ul_kbps,cpu_set,cpu,explode\n"));
        assert_eq!(text.lines().count(), 2001);
    }
}

#[test]
fn generate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        let out = flmr(&with_small(&["generate", "--seed", seed, "--out", dir.path().to_str().unwrap()]));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(tree(a.path()), tree(b.path()));
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn train_on_generated_files() {
    let data = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = flmr(&with_small(&["generate", "--out", data.path().to_str().unwrap()]));
    assert_eq!(code(&out), 0);
    let args = [
        "train", "--clients", "2", "--rounds", "2", "--fl.batch_size", "64", "--data-dir",
        data.path().to_str().unwrap(), "--out", out_dir.path().to_str().unwrap(), "--label", "run",
    ];
    let out = flmr(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let files = tree(&out_dir.path().join("run"));
    for name in ["rounds.csv", "errors_round0.csv", "errors_final.csv", "summary.json"] {
        assert!(files.contains_key(name), "missing {name}");
    }
    let rounds = String::from_utf8(files["rounds.csv"].clone()).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    let summary = String::from_utf8(files["summary.json"].clone()).unwrap();
    assert!(summary.contains("\"flmr\""));
}

#[test]
fn deepcog_run_reports_under_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = flmr(&with_small(&["train", "--loss", "deepcog", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"baseline\"") && !summary.contains("\"flmr\""));
    assert!(stderr(&out).starts_with("deepcog:"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    for (dir, w) in [(&one, "1"), (&eight, "8")] {
        let args = ["demo", "--workers", w, "--clients", "4", "--rounds", "2", "--gen.n_records", "200", "--fl.batch_size", "64"];
        let out = flmr(&[&args[..], &["--out", dir.path().to_str().unwrap()]].concat());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = tree(one.path());
    assert_eq!(a.len(), 9);
    assert_eq!(a, tree(eight.path()));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# small run\nfl.K = 2\nfl.T = 5\ngen.n_records = 200\nfl.batch_size = 64\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = flmr(&["train", "--config", cfg.to_str().unwrap(), "--rounds", "1", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rounds = fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 2, "flag should override the file");
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().to_str().unwrap();
    let missing = dir.path().join("nope");
    let bad_conf = dir.path().join("bad.conf");
    fs::write(&bad_conf, "fl.K = 2\nno equals sign\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--clients", "0", "--out", out_arg],
        vec!["train", "--rounds", "0", "--out", out_arg],
        vec!["train", "--alpha", "-1", "--out", out_arg],
        vec!["train", "--loss", "mse", "--out", out_arg],
        vec!["train", "--data-dir", missing.to_str().unwrap(), "--out", out_arg],
        vec!["train", "--data-dir", out_arg, "--gen.noise_sd", "0.1", "--out", out_arg],
        vec!["train", "--config", bad_conf.to_str().unwrap(), "--out", out_arg],
        vec!["train", "--no-such-flag", "1"],
        vec![],
    ];
    for args in cases {
        let out = flmr(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn corrupt_data_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("client_0.csv"), "mcs_dl,mcs_ul,dl_kbps,ul_kbps,cpu_set,cpu,explode\n1,2,3,4,0,1.5,0\n")
        .unwrap();
    let out_dir = dir.path().join("out");
    let out = flmr(&["train", "--clients", "1", "--data-dir", dir.path().to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("cpu"));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_flmr"))
        .args(with_small(&["generate"]))
        .env("FLMR_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(tree(dir.path()).len(), 2);
}

fn stats_json(over: f64, under: f64) -> String {
    format!(
        "{{\"over_total\": {over}, \"under_total\": {under}, \"over_count\": 1, \"under_count\": 1, \"mean_abs_error\": 0.1, \"sample_count\": 2}}"
    )
}

#[test]
fn compare_writes_ratios_and_inf_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    fs::write(&a, format!("{{\"flmr\": {}}}", stats_json(0.0, 2.0))).unwrap();
    fs::write(&b, format!("{{\"baseline\": {}}}", stats_json(3.0, 1.0))).unwrap();
    let out = flmr(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("over inf, under 0.500, combined 2.000"), "{stdout}");
    assert!(stderr(&out).contains("over_ratio is infinite"));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"over_ratio\": \"inf\""), "{summary}");
    assert!(summary.contains("\"combined_ratio\": 2.0"), "{summary}");

    let missing = dir.path().join("missing.json");
    let out = flmr(&["compare", a.to_str().unwrap(), missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_succeeds() {
    let out = flmr(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("--fuzzy.alpha") && text.contains("--alpha]"), "{text}");
}
