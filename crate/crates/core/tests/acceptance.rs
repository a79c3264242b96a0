//! Exit criteria. Runs without the libtest harness so every criterion prints
//! exactly one PASS/FAIL line; the process fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bbcount::brbpnn::{self, tansig, BrConfig, BrNet, Hyper, ResidualModel};
use bbcount::cfg::{builtin_suite, Axis, GridSpec, Interpreter};
use bbcount::eval::{pearson, spearman, Aggregate, ModelKind};
use bbcount::experiment::{run_experiment, RunConfig};
use bbcount::nn::Mlp;
use bbcount::pnn::{poisson_nll, poisson_pmf, PnnModel, DEFAULT_EPS};
use bbcount::trace::{classify, split, thresholds, BbSeries, Dataset, Partition, Region, SeriesKey, SplitMode, SplitSpec};

const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);
const RANDOM_SPLIT_BUDGET: Duration = Duration::from_secs(300);

const GRADIENT_DRAWS: usize = 100;
const GRADIENT_TOL: f64 = 1e-4;
const PNN_FD_STEP: f64 = 1e-5;
const BR_FD_STEP: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-12;
const PMF_TOL: f64 = 1e-9;
const RANDOM_ACCURACY: f64 = 95.0;
const HIGHLOW_PNN_ACCURACY: f64 = 90.0;
const HIGHLOW_BR_LINEAR_ACCURACY: f64 = 95.0;
const LINEAR_CORRELATION: f64 = 0.98;
const METRIC_PAIRS: usize = 1000;
const METRIC_TOL: f64 = 1e-12;

const SMOOTH: [&str; 3] = ["linear", "bilinear", "trilinear"];
const RUN_SEED: u64 = 1;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn count_oracles() -> Check {
    let start = Instant::now();
    let interp = Interpreter::default();
    let mut points = 0;
    for fam in builtin_suite() {
        let grid = GridSpec::new(vec![Axis::Points(5); fam.program.arity()]);
        for params in grid.assignments(&fam.program).map_err(|e| e.to_string())? {
            let counts = interp.run(&fam.program, &params).map_err(|e| e.to_string())?.to_vec();
            ensure(counts == fam.oracle(&params), || format!("{} at {params:?}: {counts:?}", fam.name))?;
            points += 1;
        }
    }
    within(start, ORACLE_BUDGET)?;
    Ok(format!("{points} assignments over 5 families match exactly"))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
}

fn central_difference(base: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..base.len())
        .map(|i| {
            let (mut up, mut down) = (base.to_vec(), base.to_vec());
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn gradient_checks() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_pnn: f64 = 0.0;
    for _ in 0..GRADIENT_DRAWS {
        let (input, hidden, batch) = (rng.random_range(1..=4), rng.random_range(1..=10), rng.random_range(1..=10));
        let model = PnnModel::new(Mlp::init_uniform(input, hidden, &mut rng), DEFAULT_EPS);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.5)).collect()).collect();
        let ys: Vec<f64> = (0..batch).map(|_| rng.random_range(0.0..1.5)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let analytic = model.loss_and_grad(&refs, &ys).map_err(|e| e.to_string())?.1.flat();
        let numeric = central_difference(&model.net.flat(), PNN_FD_STEP, |p| {
            let mut m = model.clone();
            m.net.set_flat(p);
            m.loss_and_grad(&refs, &ys).unwrap().0
        });
        worst_pnn = worst_pnn.max(rel_err(&analytic, &numeric));
    }
    let mut worst_br: f64 = 0.0;
    for _ in 0..GRADIENT_DRAWS {
        let (input, hidden) = (rng.random_range(1..=4), rng.random_range(1..=10));
        let mut net = BrNet { net: Mlp::init_uniform(input, hidden, &mut rng) };
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut row = vec![0.0; net.num_params()];
        net.gradient_row(&x, &mut row);
        let base = net.params();
        let numeric = central_difference(&base, BR_FD_STEP, |p| {
            net.set_params(p);
            net.predict(&x)
        });
        net.set_params(&base);
        worst_br = worst_br.max(rel_err(&row, &numeric));
    }
    ensure(worst_pnn <= GRADIENT_TOL, || format!("pnn relative error {worst_pnn:e}"))?;
    ensure(worst_br <= GRADIENT_TOL, || format!("brbpnn relative error {worst_br:e}"))?;
    within(start, GRADIENT_BUDGET)?;
    Ok(format!("worst relative error pnn {worst_pnn:.1e}, brbpnn {worst_br:.1e} over {GRADIENT_DRAWS} draws each"))
}

fn loss_and_activation() -> Check {
    let nll = poisson_nll(2.0, 3.0, 0.0).map_err(|e| e.to_string())?;
    let expected = 2.0 - 3.0 * 2f64.ln();
    ensure((nll - expected).abs() <= IDENTITY_TOL, || format!("nll {nll} vs {expected}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_tansig: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-20.0..20.0);
        worst_tansig = worst_tansig.max((tansig(x) - x.tanh()).abs());
    }
    ensure(worst_tansig <= IDENTITY_TOL, || format!("tansig deviates by {worst_tansig:e}"))?;

    let mut worst_pmf: f64 = 0.0;
    for step in 1..=40 {
        let lambda = step as f64 * 0.5;
        let total: f64 = (0..=400).map(|j| poisson_pmf(lambda, j).unwrap()).sum();
        worst_pmf = worst_pmf.max((total - 1.0).abs());
    }
    ensure(worst_pmf <= PMF_TOL, || format!("pmf mass off by {worst_pmf:e}"))?;
    Ok(format!("nll error {:.1e}, tansig error {worst_tansig:.1e}, pmf mass error {worst_pmf:.1e}", (nll - expected).abs()))
}

fn smooth_experiment(split: SplitMode, out: &Path) -> Result<Vec<Aggregate>, String> {
    let cfg = RunConfig {
        families: SMOOTH.iter().map(|s| s.to_string()).collect(),
        split,
        seed: RUN_SEED,
        ..Default::default()
    };
    let outcome = run_experiment(&cfg, out, None).map_err(|e| e.to_string())?;
    ensure(outcome.report.failures.is_empty(), || format!("failures: {:?}", outcome.report.failures))?;
    Ok(outcome.report.aggregates())
}

fn find<'a>(aggs: &'a [Aggregate], app: &str, model: ModelKind) -> Result<&'a Aggregate, String> {
    aggs.iter().find(|a| a.app == app && a.model == model).ok_or_else(|| format!("no aggregate for {app}/{model}"))
}

fn random_split_accuracy(dir: &Path) -> Check {
    let start = Instant::now();
    let aggs = smooth_experiment(SplitMode::Random, &dir.join("random"))?;
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for app in SMOOTH {
        for model in [ModelKind::Pnn, ModelKind::Brbpnn] {
            let a = find(&aggs, app, model)?;
            parts.push(format!("{app}/{model} {:.2}%", a.accuracy_percent));
            if a.accuracy_percent < RANDOM_ACCURACY {
                failed.push(format!("{app}/{model} {:.2}% < {RANDOM_ACCURACY}%", a.accuracy_percent));
            }
        }
    }
    ensure(failed.is_empty(), || failed.join("; "))?;
    within(start, RANDOM_SPLIT_BUDGET)?;
    Ok(parts.join(", "))
}

fn extrapolation(dir: &Path) -> Check {
    let aggs = smooth_experiment(SplitMode::HighLow, &dir.join("highlow"))?;
    let mut failed = Vec::new();
    let mut parts = Vec::new();
    for app in SMOOTH {
        let a = find(&aggs, app, ModelKind::Pnn)?;
        parts.push(format!("pnn {app} {:.2}%", a.accuracy_percent));
        if a.accuracy_percent < HIGHLOW_PNN_ACCURACY {
            failed.push(format!("pnn {app} {:.2}% < {HIGHLOW_PNN_ACCURACY}%", a.accuracy_percent));
        }
    }
    let br_linear = find(&aggs, "linear", ModelKind::Brbpnn)?;
    parts.push(format!("brbpnn linear {:.2}%", br_linear.accuracy_percent));
    if br_linear.accuracy_percent < HIGHLOW_BR_LINEAR_ACCURACY {
        failed.push(format!("brbpnn linear {:.2}% < {HIGHLOW_BR_LINEAR_ACCURACY}%", br_linear.accuracy_percent));
    }
    let (pnn_bi, br_bi) = (find(&aggs, "bilinear", ModelKind::Pnn)?, find(&aggs, "bilinear", ModelKind::Brbpnn)?);
    parts.push(format!("bilinear mse brbpnn {:.4} vs pnn {:.4}", br_bi.avg_mse, pnn_bi.avg_mse));
    if br_bi.avg_mse <= pnn_bi.avg_mse {
        failed.push(format!("bilinear brbpnn mse {} does not exceed pnn {}", br_bi.avg_mse, pnn_bi.avg_mse));
    }
    for model in [ModelKind::Pnn, ModelKind::Brbpnn] {
        let a = find(&aggs, "linear", model)?;
        for (name, value) in [("pearson", a.mean_pearson), ("spearman", a.mean_spearman)] {
            match value {
                Some(v) if v >= LINEAR_CORRELATION => {}
                other => failed.push(format!("linear/{model} {name} {other:?} < {LINEAR_CORRELATION}")),
            }
        }
    }
    ensure(failed.is_empty(), || format!("{} [{}]", failed.join("; "), parts.join(", ")))?;
    Ok(parts.join(", "))
}

fn series_1d(values: &[i64]) -> BbSeries {
    let mut s = BbSeries::new(SeriesKey { app: "fixture".into(), kernel_id: 0, bb_id: 0 });
    for &v in values {
        s.push(vec![v], v as u64 * 3);
    }
    s
}

fn split_protocol() -> Check {
    let s = series_1d(&(1..=10).map(|i| i * 10).collect::<Vec<_>>());
    let cuts = thresholds(&s, 0.7).map_err(|e| e.to_string())?;
    ensure((cuts[0] - 73.0).abs() < 1e-12, || format!("threshold {cuts:?}"))?;
    let parts = split(&s, &SplitSpec::new(SplitMode::HighLow, 0.7, 0).unwrap()).map_err(|e| e.to_string())?;
    let train: Vec<i64> = parts.train.params.iter().map(|p| p[0]).collect();
    let test: Vec<i64> = parts.test.params.iter().map(|p| p[0]).collect();
    ensure(train == vec![10, 20, 30, 40, 50, 60, 70] && test == vec![80, 90, 100], || format!("{train:?} / {test:?}"))?;

    // Ties at the threshold are LOW.
    ensure(classify(&[73], &[73.0]) == Region::Low, || "tie not LOW".into())?;
    ensure(classify(&[1, 9], &[5.0, 5.0]) == Region::Mixed, || "(low, high) not MIXED".into())?;
    ensure(classify(&[6, 9], &[5.0, 5.0]) == Region::High, || "(high, high) not HIGH".into())?;

    let mut grid = BbSeries::new(SeriesKey { app: "fixture".into(), kernel_id: 0, bb_id: 1 });
    for a in 0..=10 {
        for b in 0..=10 {
            grid.push(vec![a * 10, b * 10], (a * b) as u64);
        }
    }
    let hl = split(&grid, &SplitSpec::new(SplitMode::HighLow, 0.7, 0).unwrap()).map_err(|e| e.to_string())?;
    let mhl = split(&grid, &SplitSpec::new(SplitMode::MixedHighLow, 0.7, 0).unwrap()).map_err(|e| e.to_string())?;
    let idx = |a: i64, b: i64| (a * 11 + b) as usize;
    ensure(hl.assignment[idx(1, 10)] == Partition::Discarded, || "mixed sample kept under HighLow".into())?;
    ensure(mhl.assignment[idx(1, 10)] == Partition::Train, || "mixed sample not trained under MixedHighLow".into())?;
    // 8 LOW values per axis (0..70), 3 HIGH (80..100).
    ensure(hl.train.len() == 64 && hl.test.len() == 9, || format!("{} / {}", hl.train.len(), hl.test.len()))?;
    ensure(mhl.train.len() == 121 - 9 && mhl.test == hl.test, || "MixedHighLow partitions".into())?;

    let spec = SplitSpec::new(SplitMode::Random, 0.7, 99).unwrap();
    let a = split(&grid, &spec).map_err(|e| e.to_string())?;
    let b = split(&grid, &spec).map_err(|e| e.to_string())?;
    ensure(a.assignment == b.assignment, || "random split not deterministic".into())?;
    ensure(a.train.len() == 85 && a.test.len() == 36, || format!("random sizes {}/{}", a.train.len(), a.test.len()))?;
    let other = split(&grid, &SplitSpec { seed: 100, ..spec }).map_err(|e| e.to_string())?;
    ensure(other.assignment != a.assignment, || "seed has no effect".into())?;
    Ok("threshold 73, LOW/HIGH/MIXED, mixed handling and seeded random split verified".into())
}

fn brute_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum();
    let va: f64 = (0..a.len()).map(|i| (a[i] - ma) * (a[i] - ma)).sum();
    let vb: f64 = (0..a.len()).map(|i| (b[i] - mb) * (b[i] - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Rank = 1 + number of smaller values + half the number of other equal values.
fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

fn close(got: Option<f64>, want: Option<f64>) -> bool {
    match (got, want) {
        (None, None) => true,
        (Some(g), Some(w)) => (g - w).abs() <= METRIC_TOL,
        _ => false,
    }
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tied = 0;
    for i in 0..METRIC_PAIRS {
        let n = rng.random_range(2..=50);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            if i % 2 == 0 {
                (0..n).map(|_| rng.random_range(-100.0..100.0)).collect()
            } else {
                (0..n).map(|_| rng.random_range(0..5) as f64).collect()
            }
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if i % 2 == 1 {
            tied += 1;
        }
        let p = pearson(&a, &b).map_err(|e| e.to_string())?;
        ensure(close(p, brute_pearson(&a, &b)), || format!("pearson pair {i}: {p:?}"))?;
        let s = spearman(&a, &b).map_err(|e| e.to_string())?;
        let want = brute_pearson(&brute_ranks(&a), &brute_ranks(&b));
        ensure(close(s, want), || format!("spearman pair {i}: {s:?} vs {want:?}"))?;
    }
    Ok(format!("{METRIC_PAIRS} pairs ({tied} with ties) within {METRIC_TOL:e}"))
}

fn reproducibility(dir: &Path) -> Check {
    let bin = env!("CARGO_BIN_EXE_bbcount");
    let first = dir.join("first");
    let second = dir.join("second");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())
    };
    run(&[
        "experiment",
        "--family",
        "linear",
        "--family",
        "branchy",
        "--split",
        "high-low",
        "--model",
        "both",
        "--seed",
        "7",
        "--workers",
        "4",
        "--out",
        first.to_str().unwrap(),
    ])?;
    let manifest = first.join("manifest.json");
    run(&["experiment", "--manifest", manifest.to_str().unwrap(), "--workers", "1", "--out", second.to_str().unwrap()])?;
    let a = std::fs::read(first.join("summary.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(second.join("summary.csv")).map_err(|e| e.to_string())?;
    ensure(!a.is_empty() && a == b, || "summary.csv differs between runs".into())?;
    Ok(format!("summary.csv identical ({} bytes) across 4- and 1-worker runs", a.len()))
}

fn noisy_line(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
    let y = x.iter().map(|v| 0.8 * v[0] + 0.1 + rng.random_range(-0.15..0.15)).collect();
    Dataset { x, y }
}

fn weight_energy(out: &brbpnn::BrOutcome) -> f64 {
    out.model.net.params().iter().map(|w| w * w).sum()
}

fn regularization() -> Check {
    let mut epochs = 0;
    for (seed, hidden) in [(1, 1), (2, 3), (3, 10)] {
        let data = noisy_line(40, seed);
        let out = brbpnn::train(&data, &BrConfig { hidden, seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let n_params = out.model.net.num_params() as f64;
        for r in &out.history {
            ensure((0.0..=n_params).contains(&r.gamma), || format!("gamma {} outside [0, {n_params}]", r.gamma))?;
            ensure(!r.accepted || r.f_after < r.f_before, || format!("F rose at epoch {}", r.epoch))?;
        }
        epochs += out.history.len();
    }
    let data = noisy_line(20, 42);
    let mut parts = Vec::new();
    for hidden in [1, 5] {
        let cfg = BrConfig { hidden, seed: 3, ..Default::default() };
        let br = brbpnn::train(&data, &cfg).map_err(|e| e.to_string())?;
        let plain = brbpnn::train(&data, &BrConfig { fixed: Some(Hyper { alpha: 0.0, beta: 1.0 }), ..cfg })
            .map_err(|e| e.to_string())?;
        let (a, b) = (weight_energy(&br), weight_energy(&plain));
        ensure(a < b, || format!("hidden {hidden}: E_W {a} with regularization, {b} without"))?;
        parts.push(format!("hidden {hidden} E_W {a:.3} < {b:.3}"));
    }
    Ok(format!("{epochs} epochs checked; {}", parts.join(", ")))
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("count-oracle exactness", Box::new(count_oracles)),
        ("gradient checks", Box::new(gradient_checks)),
        ("loss/activation fidelity", Box::new(loss_and_activation)),
        ("random-split accuracy", Box::new({
            let root = root.clone();
            move || random_split_accuracy(&root)
        })),
        ("high-low extrapolation", Box::new({
            let root = root.clone();
            move || extrapolation(&root)
        })),
        ("split-protocol conformance", Box::new(split_protocol)),
        ("metric oracle equivalence", Box::new(metric_oracles)),
        ("reproducibility", Box::new({
            let root = root.clone();
            move || reproducibility(&root)
        })),
        ("regularization behavior", Box::new(regularization)),
    ];

    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS {name} ({took:.1}s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} FAIL {name} ({took:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
