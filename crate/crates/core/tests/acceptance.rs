//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use flmr::data::{self, generate_synthetic, read_csv, write_csv, ClientDataset, DataError, GeneratorConfig};
use flmr::deepcog::{deepcog_loss, DeepCogLossConfig};
use flmr::experiment::{run_demo, ExperimentConfig};
use flmr::federation::{fedavg, run_federation, train_centralized, ClientUpdate, FlConfig};
use flmr::logic::{eq_predicate, forall_diag, loss_and_grad, FuzzyConfig};
use flmr::metrics::provisioning_decomposition;
use flmr::nn::{
    backward, forward, AdaDeltaConfig, AdaDeltaState, Layer, Matrix, MlpConfig, ModelParams, ParamGrads,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the desk-scale experiment used by criteria 5-7.
const DESK_SEED: u64 = 42;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Below this magnitude the h = 1e-6 central difference is dominated by
/// rounding in the loss (~1e-16 / 2h), so the denominator is floored.
const REL_FLOOR: f64 = 1e-5;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fuzzy = FuzzyConfig::new(0.5, 2.0).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut floored = 0usize;
    for instance in 0..20 {
        let cfg = MlpConfig::new(rng.random_range(1..=5), [rng.random_range(1..=8), rng.random_range(1..=8)], 1).unwrap();
        let mut params = ModelParams::zeros(&cfg);
        for v in params.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let n = rng.random_range(1..=16);
        let x = Matrix::from_vec(n, cfg.input_dim(), (0..n * cfg.input_dim()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let loss = |p: &ModelParams| {
            let (pred, _) = forward(p, &x).unwrap();
            loss_and_grad(&pred, &targets, &fuzzy).unwrap().0.loss
        };
        let (pred, trace) = forward(&params, &x).unwrap();
        let (_, d_pred) = loss_and_grad(&pred, &targets, &fuzzy).unwrap();
        let grads = backward(&params, &trace, &d_pred).unwrap();
        for idx in 0..params.len() {
            let mut plus = params.clone();
            *plus.get_mut(idx).unwrap() += h;
            let mut minus = params.clone();
            *minus.get_mut(idx).unwrap() -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads.get(idx).unwrap();
            let rel = relative_error(an, fd);
            if rel > 1e-5 {
                return Err(format!("instance {instance} param {idx}: analytic {an:e} vs fd {fd:e} (rel {rel:e})"));
            }
            worst = worst.max(rel);
            checked += 1;
            if an.abs().max(fd.abs()) < REL_FLOOR {
                floored += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{checked} parameters ({floored} below the {REL_FLOOR:e} floor), worst rel {worst:.2e}, {elapsed:.2?}"))
}

fn predicate_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(1..6);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let alpha = rng.random_range(0.01..10.0);
        check(eq_predicate(&v, &v, alpha).unwrap() == 1.0, format!("eq(v, v) != 1 for {v:?}"))?;
    }
    check(eq_predicate(&[2.0], &[0.0], 0.5).unwrap() == 0.5, "eq at distance 2, alpha 0.5 is not 0.5")?;

    let cfg = FlConfig { clients: 2, rounds: 3, batch_size: 100, mlp: MlpConfig::new(5, [16, 8], 1).unwrap(), seed: 1, ..Default::default() };
    let mut exp = ExperimentConfig::default();
    exp.fl = cfg;
    exp.data = flmr::experiment::DataSource::Synthetic(GeneratorConfig { seed: 1, n_records: 300, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    exp.out_dir = dir.path().to_path_buf();
    let outcome = flmr::experiment::run_training(&exp).map_err(|e| e.to_string())?;
    let mut lines = 0;
    for r in &outcome.rounds {
        for c in &r.per_client {
            check(c.train.loss.to_bits() == (1.0 - c.train.phi).to_bits(), "train loss != 1 - phi")?;
            check(c.test.loss.to_bits() == (1.0 - c.test.phi).to_bits(), "test loss != 1 - phi")?;
            lines += 2;
        }
    }
    let rounds = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    for row in rounds.lines().skip(1) {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        check(f[1].to_bits() == (1.0 - f[2]).to_bits(), format!("rounds.csv train: {row}"))?;
        check(f[3].to_bits() == (1.0 - f[4]).to_bits(), format!("rounds.csv test: {row}"))?;
        lines += 2;
    }
    Ok(format!("{lines} emitted loss/phi pairs exact"))
}

fn scalar(v: f64) -> ModelParams {
    ModelParams::from_layers(vec![Layer { inputs: 1, outputs: 1, weights: vec![v], bias: vec![0.0] }]).unwrap()
}

fn fedavg_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = ModelParams::zeros(&MlpConfig::default());
    for v in p.values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let single = fedavg(&[ClientUpdate { client_id: 0, params: &p, samples: 123 }]).map_err(|e| e.to_string())?;
    check(single == p, "single-client aggregate differs")?;

    let a = scalar(0.0);
    let b = scalar(4.0);
    let two = fedavg(&[ClientUpdate { client_id: 0, params: &a, samples: 1 }, ClientUpdate { client_id: 1, params: &b, samples: 3 }])
        .map_err(|e| e.to_string())?;
    check(two.get(0) == Some(3.0), format!("weighted case gave {:?}", two.get(0)))?;

    let ups: Vec<ClientUpdate<'_>> = (0..7).map(|k| ClientUpdate { client_id: k, params: &p, samples: 1 + 13 * k as usize }).collect();
    let fixed = fedavg(&ups).map_err(|e| e.to_string())?;
    let drift = fixed.values().zip(p.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    check(drift <= 1e-15, format!("equal points drift by {drift:e}"))?;
    Ok(format!("identity, 0.25*0 + 0.75*4 = 3, fixed point drift {drift:e}"))
}

fn federation_degeneracy() -> Outcome {
    let cfg = FlConfig { clients: 1, rounds: 10, batch_size: 128, seed: 17, ..Default::default() };
    let recs = generate_synthetic(&GeneratorConfig { seed: 17, n_records: 600, ..Default::default() }).unwrap();
    let ds = ClientDataset::new(0, &data::filter_exploded(&recs), 0.2, 17).unwrap();
    let fed = run_federation(&cfg, std::slice::from_ref(&ds)).map_err(|e| e.to_string())?;
    let central = train_centralized(&cfg, &ds).map_err(|e| e.to_string())?;
    for (t, (r, c)) in fed.iter().zip(&central).enumerate() {
        let same = r.global_params.values().zip(c.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, format!("round {t} differs"))?;
    }
    check(fed.len() == 10 && central.len() == 10, "wrong number of rounds")?;
    Ok("10 rounds bit-identical".into())
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct Desk {
    demo: flmr::experiment::DemoOutcome,
    elapsed: Duration,
}

fn desk_run(workers: usize, dir: &Path) -> Result<Desk, String> {
    let mut cfg = ExperimentConfig::desk_scale(DESK_SEED);
    cfg.fl.workers = workers;
    cfg.out_dir = dir.to_path_buf();
    let started = Instant::now();
    let demo = run_demo(&cfg).map_err(|e| e.to_string())?;
    Ok(Desk { demo, elapsed: started.elapsed() })
}

fn determinism(one: &Path, eight: &Path) -> Outcome {
    let a = read_tree(one);
    let b = read_tree(eight);
    check(!a.is_empty(), "no output files")?;
    check(a.keys().eq(b.keys()), format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys()))?;
    for (name, bytes) in &a {
        check(&b[name] == bytes, format!("{name} differs"))?;
    }
    Ok(format!("{} files byte-identical", a.len()))
}

fn convergence(desk: &Desk) -> Outcome {
    let rounds = &desk.demo.flmr.rounds;
    let gen = GeneratorConfig::default();
    check(rounds.len() == 20 && rounds[0].per_client.len() == 5, "not the K=5, T=20 preset")?;
    check(gen.n_records == 2000, "not 2000 samples per client")?;
    let phi = rounds.last().unwrap().mean_test_phi();
    let first: Vec<f64> = rounds.iter().take(5).map(|r| r.mean_test_loss()).collect();
    check(first.windows(2).all(|w| w[1] < w[0]), format!("test loss not strictly decreasing: {first:?}"))?;
    check(phi >= 0.90, format!("final mean test phi {phi:.4} < 0.90"))?;
    check(desk.elapsed < Duration::from_secs(120), format!("took {:?}", desk.elapsed))?;
    Ok(format!("final test phi {phi:.4}, first-5 losses {first:.4?}, demo {:.2?}", desk.elapsed))
}

fn trade_off(desk: &Desk) -> Outcome {
    let c = &desk.demo.comparison;
    let flmr = c.flmr.combined_total();
    let base = c.baseline.combined_total();
    let ratio = c.ratios.combined_ratio.0;
    let line = format!(
        "FLMR over {:.3} + under {:.3} = {flmr:.3}; baseline over {:.3} + under {:.3} = {base:.3}; combined ratio {ratio:.3}",
        c.flmr.over_total, c.flmr.under_total, c.baseline.over_total, c.baseline.under_total
    );
    check(flmr < base, format!("FLMR total not below baseline: {line}"))?;
    check(ratio > 1.5, format!("combined ratio too small: {line}"))?;
    Ok(line)
}

fn adadelta_sanity() -> Outcome {
    // minimise (w - 3)^2 from w = 0
    let mut w = scalar(0.0);
    let cfg = AdaDeltaConfig { rho: 0.85, epsilon: 1e-6, scale: 1.0 };
    let mut state = AdaDeltaState::new(&w, cfg).unwrap();
    let mut reached = None;
    for step in 1..=500 {
        let mut g = ParamGrads::zeros_like(&w);
        g.layers_mut()[0].weights[0] = 2.0 * (w.get(0).unwrap() - 3.0);
        state.step(&mut w, &g).map_err(|e| e.to_string())?;
        if (w.get(0).unwrap() - 3.0).abs() < 1e-2 {
            reached = Some(step);
            break;
        }
    }
    match reached {
        Some(step) => Ok(format!("|w - 3| < 1e-2 after {step} steps")),
        None => Err(format!("after 500 steps w = {:.6}, |w - 3| = {:.4}", w.get(0).unwrap(), (w.get(0).unwrap() - 3.0).abs())),
    }
}

fn data_round_trip() -> Outcome {
    let records = generate_synthetic(&GeneratorConfig { seed: 5, n_records: 1000, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("client_0.csv");
    write_csv(&path, &records).map_err(|e| e.to_string())?;
    let back = data::load_csv(&path).map_err(|e| e.to_string())?;
    check(back == records, "round trip changed records")?;

    let missing = "mcs_dl,mcs_ul,dl_kbps,ul_kbps,cpu_set,explode\n1,2,3,4,0,0\n";
    check(matches!(read_csv(missing.as_bytes()), Err(DataError::MissingColumn(ref c)) if c == "cpu"), "missing cpu column not reported")?;
    let bad_cpu = "mcs_dl,mcs_ul,dl_kbps,ul_kbps,cpu_set,cpu,explode\n1,2,3,4,0,0.5,0\n1,2,3,4,0,1.3,0\n";
    check(matches!(read_csv(bad_cpu.as_bytes()), Err(DataError::Validation { row: 2, .. })), "cpu = 1.3 not rejected at row 2")?;
    let bad_cell = "mcs_dl,mcs_ul,dl_kbps,ul_kbps,cpu_set,cpu,explode\n1,x,3,4,0,0.5,0\n";
    check(
        matches!(read_csv(bad_cell.as_bytes()), Err(DataError::Parse { row: 1, ref column, .. }) if column == "mcs_ul"),
        "unparseable cell not reported with row/column",
    )?;
    Ok(format!("{} records exact; schema, range and parse errors raised", records.len()))
}

fn property_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..500 {
        let n = rng.random_range(1..30);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=1.0)).collect();
        let p = rng.random_range(1.0..6.0);
        let q = p + rng.random_range(0.0..4.0);
        check(forall_diag(&values, q).unwrap() <= forall_diag(&values, p).unwrap() + 1e-12, "p-mean monotonicity violated")?;
    }
    for _ in 0..500 {
        let n = rng.random_range(1..200);
        let errs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = provisioning_decomposition(&errs).unwrap();
        let sum: f64 = errs.iter().sum();
        check((s.over_total - s.under_total - sum).abs() <= 1e-9, "over - under != sum of errors")?;
    }
    let dc = DeepCogLossConfig::default();
    for _ in 0..500 {
        let t = rng.random_range(0.0..1.0);
        check(deepcog_loss(t, t, &dc) == 0.0, "loss at zero error is not 0")?;
        let tiny = 1e-13;
        check((deepcog_loss(t + tiny, t, &dc) - deepcog_loss(t - tiny, t, &dc)).abs() <= 1e-11, "jump at x = 0")?;
        let e = dc.epsilon_smooth();
        check((deepcog_loss(t - e - tiny, t, &dc) - deepcog_loss(t - e + tiny, t, &dc)).abs() <= 1e-11, "jump at x = -epsilon")?;
        let d = rng.random_range(1e-6..e);
        check(deepcog_loss(t - d, t, &dc) > deepcog_loss(t + d, t, &dc), "asymmetry violated")?;
    }
    for seed in 0..20 {
        let recs = generate_synthetic(&GeneratorConfig { seed, n_records: 200, ..Default::default() }).unwrap();
        let stats = data::fit_normalizer(&recs).unwrap();
        let (x, _) = data::normalize(&recs, &stats);
        for (i, r) in recs.iter().enumerate() {
            let back = stats.denormalize(x.row(i));
            for (k, (a, b)) in back.iter().zip(r.features()).enumerate() {
                if stats.max[k] > stats.min[k] {
                    check((a - b).abs() <= 1e-12 * b.abs().max(1.0), format!("feature {k} round trip {a} vs {b}"))?;
                }
            }
        }
    }
    Ok("p-mean monotonicity, decomposition identity, baseline continuity/asymmetry, normalization round trip".into())
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient correctness", gradient_correctness()),
        ("2 predicate/loss identities", predicate_identities()),
        ("3 fedavg algebra", fedavg_algebra()),
        ("4 federation degeneracy", federation_degeneracy()),
    ];

    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    match (desk_run(1, one.path()), desk_run(8, eight.path())) {
        (Ok(desk), Ok(_)) => {
            results.push(("5 determinism across workers", determinism(one.path(), eight.path())));
            results.push(("6 desk-scale convergence", convergence(&desk)));
            results.push(("7 trade-off direction", trade_off(&desk)));
        }
        (Err(e), _) | (_, Err(e)) => {
            for name in ["5 determinism across workers", "6 desk-scale convergence", "7 trade-off direction"] {
                results.push((name, Err(e.clone())));
            }
        }
    }
    results.push(("8 adadelta sanity", adadelta_sanity()));
    results.push(("9 data round trip", data_round_trip()));
    results.push(("10 property suite", property_suite()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
