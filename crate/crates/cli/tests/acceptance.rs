//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so every line is printed; exits nonzero if any check fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use eraps_cli::ingest::{ingest_csv, TrainSplit};
use eraps_core::conformal::calibration_threshold;
use eraps_core::eval::marginal_metrics;
use eraps_core::synth::{
    coverage_gap_experiment, dkw_experiment, set_convergence_experiment, ExperimentConfig, GapArm, PlugIn,
};
use eraps_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn ensemble(n_models: usize) -> EnsembleConfig {
    EnsembleConfig {
        n_models,
        ..EnsembleConfig::default()
    }
}

fn well_specified() -> SyntheticDgp {
    DgpSpec {
        n_classes: 5,
        dim: 8,
        rho: 0.5,
        seed: 7,
        ..DgpSpec::default()
    }
    .build()
    .unwrap()
}

fn coverage() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig {
        n_test: 1000,
        ensemble: ensemble(30),
        batch_size: Some(1),
        ..ExperimentConfig::default()
    };
    let report = coverage_gap_experiment(
        &well_specified(),
        GapArm::Method { method: Method::Eraps },
        &[0.1],
        &[2000],
        20,
        &config,
    )
    .unwrap();
    let TheoryReport::CoverageGap { rows, .. } = report else { unreachable!() };
    let cov = rows[0].mean_coverage;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        (0.87..=0.93).contains(&cov) && secs <= 300.0,
        format!("mean coverage {cov:.4} in [0.87, 0.93], {secs:.0}s"),
    )
}

fn gap_shrinkage() -> Outcome {
    let config = ExperimentConfig {
        ensemble: ensemble(30),
        ..ExperimentConfig::default()
    };
    let report = coverage_gap_experiment(
        &well_specified(),
        GapArm::Method { method: Method::Eraps },
        &[0.1],
        &[200, 800, 3200],
        20,
        &config,
    )
    .unwrap();
    let TheoryReport::CoverageGap { rows, .. } = report else { unreachable!() };
    let (first, last) = (rows[0], rows[2]);
    let bound = first.mean_gap + first.gap_se;
    verdict(
        last.mean_gap <= 0.03 && last.mean_gap <= bound,
        format!(
            "gap {:.4} / {:.4} / {:.4} at T=200/800/3200; need <= 0.03 and <= {bound:.4}",
            first.mean_gap, rows[1].mean_gap, last.mean_gap
        ),
    )
}

fn convergence(plug_in: PlugIn, limit: f64) -> Outcome {
    let config = ExperimentConfig {
        ensemble: ensemble(30),
        ..ExperimentConfig::default()
    };
    let report = set_convergence_experiment(&well_specified(), 0.1, &[5000], 10, plug_in, &config).unwrap();
    let TheoryReport::SetConvergence { rows, .. } = report else { unreachable!() };
    let frac = rows[0].frac_within_one;
    verdict(
        frac >= limit,
        format!("{}: fraction with |C delta C*| <= 1 is {frac:.4}, need >= {limit}", plug_in.name()),
    )
}

fn dkw() -> Outcome {
    let report = dkw_experiment(&[1000], 500, 0).unwrap();
    let TheoryReport::Dkw { rows, .. } = report else { unreachable!() };
    let r = rows[0];
    verdict(
        r.exceed_freq <= r.bound,
        format!("exceedance {:.4} <= bound {:.4}", r.exceed_freq, r.bound),
    )
}

fn threshold_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=40);
        // Few distinct values so ties are common.
        let levels = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let alpha = rng.random_range(0.01..0.99);
        let candidate = if rng.random_bool(0.7) {
            rng.random_range(0..=levels) as f64 / 4.0
        } else {
            rng.random_range(-0.5..levels as f64 / 4.0 + 0.5)
        };
        let tau = calibration_threshold(&ScoreWindow::from_scores(scores.clone()).unwrap(), alpha).unwrap();
        let by_rule = candidate < tau;
        let ecdf = scores.iter().filter(|&&s| s <= candidate).count() as f64 / n as f64;
        let by_count = ecdf < 1.0 - alpha;
        mismatches += usize::from(by_rule != by_count);
    }
    verdict(mismatches == 0, format!("{mismatches} disagreements in 10000 triples"))
}

fn prefix_and_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut prefix_sets, mut not_prefix, mut pairs, mut not_nested) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..100 {
        let spec = DgpSpec {
            n_classes: rng.random_range(2..=7),
            dim: rng.random_range(1..=6),
            rho: rng.random_range(0.0..0.9),
            signal: rng.random_range(0.2..3.0),
            seed: rng.random(),
            ..DgpSpec::default()
        };
        let k = spec.n_classes;
        let reg = RegParams::new(rng.random_range(0.0..2.0), rng.random_range(1..k.max(2))).unwrap();
        let sample = spec.build().unwrap().generate(260).unwrap();
        let (train, test) = sample.series.split_at(200);
        let mode = [ThresholdMode::Marginal, ThresholdMode::ClassConditional, ThresholdMode::ClassMax][i % 3];
        let config = MethodConfig {
            ensemble: ensemble(5),
            batch_size: rng.random_range(1..=20),
            seed: rng.random(),
            mode,
            ..MethodConfig::default()
        };
        // Per-class thresholds differ across labels, so only single-threshold
        // sets are expected to be prefixes.
        let single = mode != ThresholdMode::ClassConditional;
        let method = Method::ALL[i % Method::ALL.len()];
        let prepared = PreparedMethod::prepare(method, &train, &test, &config).unwrap();
        let wide = prepared.predict(0.05, reg).unwrap();
        let narrow = prepared.predict(0.2, reg).unwrap();
        for ((w, n), p) in wide.iter().zip(&narrow).zip(prepared.test_probs()) {
            if single {
                prefix_sets += 2;
                not_prefix += usize::from(!w.is_prefix_of(p)) + usize::from(!n.is_prefix_of(p));
            }
            pairs += 1;
            not_nested += usize::from(!n.is_subset_of(w));
        }
    }
    verdict(
        not_prefix == 0 && not_nested == 0,
        format!(
            "{not_prefix} of {prefix_sets} single-threshold sets not prefixes; \
             {not_nested} of {pairs} alpha=0.2 sets outside alpha=0.05"
        ),
    )
}

fn score_examples() -> Outcome {
    let p = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
    let none = RegParams::unregularized();
    let one = RegParams::new(1.0, 1).unwrap();
    let above_1 = scores::mass_above(&p, 1).unwrap();
    let above_2 = scores::mass_above(&p, 2).unwrap();
    let rank = scores::rank_of(&ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap(), 0).unwrap();
    let s = raps_score(&p, 1, 0.5, &one).unwrap();
    let top = raps_score(&p, 0, 0.0, &none).unwrap();
    let pass = above_1 == 0.5 && above_2 == 0.8 && rank == 3 && (s - 1.65).abs() <= 1e-12 && top == 0.0;
    verdict(
        pass,
        format!("mass above {above_1}, {above_2}; rank {rank}; score {s} (1.65); top score {top}"),
    )
}

fn gradients() -> Outcome {
    let spec = DgpSpec {
        n_classes: 4,
        dim: 5,
        seed: 3,
        ..DgpSpec::default()
    };
    let data = spec.build().unwrap().generate(60).unwrap().series;
    let logistic = gradient_check(&ClassifierSpec::logistic(), &data).unwrap();
    let net = gradient_check(&ClassifierSpec::net(8), &data).unwrap();
    verdict(
        logistic <= 1e-4 && net <= 1e-3,
        format!("max relative error logistic {logistic:.2e} (<= 1e-4), net {net:.2e} (<= 1e-3)"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "B = 8\nseed = 42\n[synthetic]\nn_train = 400\nn_test = 300\n").unwrap();
    let stem = dir.path().join("out");
    let run = || {
        let status = Command::new(env!("CARGO_BIN_EXE_eraps"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--output", stem.to_str().unwrap()])
            .env("ERAPS_THREADS", "1")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let csv = std::fs::read(dir.path().join("out.csv")).unwrap();
        let mut json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("out.json")).unwrap()).unwrap();
        json.as_object_mut().unwrap().remove("timestamp");
        (csv, serde_json::to_vec(&json).unwrap())
    };
    let (a, b) = (run(), run());
    verdict(
        a == b,
        format!("csv identical: {}, json identical without timestamp: {}", a.0 == b.0, a.1 == b.1),
    )
}

fn empty_sets() -> Outcome {
    let spec = DgpSpec {
        signal: 6.0,
        seed: 13,
        ..DgpSpec::default()
    };
    let sample = spec.build().unwrap().generate(3000).unwrap();
    let (train, test) = sample.series.split_at(2000);
    let config = MethodConfig {
        ensemble: ensemble(30),
        ..MethodConfig::default()
    };
    let prepared = PreparedMethod::prepare(Method::Eraps, &train, &test, &config).unwrap();
    let sets = prepared.predict(0.2, RegParams::new(0.0, 1).unwrap()).unwrap();
    let (cov, size) = marginal_metrics(&sets, test.labels()).unwrap();
    verdict(
        size < 1.0 && cov >= 0.75,
        format!("lambda=0, alpha=0.2: size {size:.3} (< 1), coverage {cov:.3} (>= 0.75)"),
    )
}

fn pedestrian() -> Outcome {
    let Some(path) = std::env::var_os("ERAPS_PEDESTRIAN_CSV").map(PathBuf::from) else {
        return Outcome::Skip("set ERAPS_PEDESTRIAN_CSV to run".into());
    };
    if !path.exists() {
        return Outcome::Skip(format!("{} not found", path.display()));
    }
    let split = match std::env::var("ERAPS_PEDESTRIAN_TRAIN_COUNT") {
        Ok(n) => TrainSplit::Count(n.parse().expect("ERAPS_PEDESTRIAN_TRAIN_COUNT is an integer")),
        Err(_) => TrainSplit::Fraction(0.5),
    };
    let label = std::env::var("ERAPS_PEDESTRIAN_LABEL").unwrap_or_else(|_| "label".into());
    let data = ingest_csv(&path, &label, split, None).unwrap();
    let prepared =
        PreparedMethod::prepare(Method::Eraps, &data.train, &data.test, &MethodConfig::default()).unwrap();
    let sets = prepared.predict(0.05, RegParams::new(1.0, 2).unwrap()).unwrap();
    let (cov, size) = marginal_metrics(&sets, data.test.labels()).unwrap();
    verdict(
        cov >= 0.92 && size <= 3.0,
        format!("alpha=0.05: coverage {cov:.3} (>= 0.92), size {size:.3} (<= 3.0)"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    // `cargo test -- <filter>` passes a filter; run only matching criteria.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 12] = [
        ("01 coverage", coverage),
        ("02 gap shrinkage", gap_shrinkage),
        ("03a set convergence, estimated", || convergence(PlugIn::Estimated, 0.95)),
        ("03b set convergence, oracle plug-in", || convergence(PlugIn::Oracle, 0.99)),
        ("04 dkw", dkw),
        ("05 threshold vs counting", threshold_equivalence),
        ("06 prefix and nesting", prefix_and_nesting),
        ("07 score examples", score_examples),
        ("08 gradient checks", gradients),
        ("09 determinism", determinism),
        ("10 empty sets", empty_sets),
        ("11 pedestrian", pedestrian),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
