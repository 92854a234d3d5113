use eraps_core::conformal::{eraps_predict_stream, SrapsFit};
use eraps_core::eval::{marginal_metrics, regularizer_sweep, EvalReport};
use eraps_core::synth::SyntheticSample;
use eraps_core::*;

fn sample(spec: DgpSpec, n: usize, path_seed: u64) -> SyntheticSample {
    spec.build().unwrap().generate_with(n, path_seed).unwrap()
}

fn small_ensemble() -> EnsembleConfig {
    EnsembleConfig {
        n_models: 10,
        ..EnsembleConfig::default()
    }
}

#[test]
fn sraps_covers_on_iid_data() {
    let spec = DgpSpec {
        rho: 0.0,
        seed: 3,
        ..DgpSpec::default()
    };
    let mut total = 0.0;
    for seed in 0..20 {
        let s = sample(spec, 3000, seed);
        let (train, test) = s.series.split_at(2000);
        let sets = sraps(
            &train,
            test.features(),
            0.1,
            RegParams::default(),
            &ClassifierSpec::default(),
            SplitMode::SequentialHalf,
            seed,
        )
        .unwrap();
        total += marginal_metrics(&sets, test.labels()).unwrap().0;
    }
    let mean = total / 20.0;
    assert!(mean >= 0.88, "mean coverage {mean}");
}

#[test]
fn random_split_is_reproducible() {
    let s = sample(DgpSpec::default(), 400, 1);
    let (train, test) = s.series.split_at(300);
    let run = || {
        sraps(
            &train,
            test.features(),
            0.1,
            RegParams::default(),
            &ClassifierSpec::default(),
            SplitMode::Random { seed: 9 },
            5,
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn sliding_tracks_drift_better_than_a_fixed_window() {
    let spec = DgpSpec {
        drift: 3.0,
        signal: 2.0,
        seed: 21,
        ..DgpSpec::default()
    };
    let (n_train, n_test) = (600, 1200);
    let (mut sliding, mut fixed) = (0.0, 0.0);
    for seed in 0..20 {
        let s = sample(spec, n_train + n_test, seed);
        let (train, test) = s.series.split_at(n_train);
        let fit = ErapsFit::fit(&train, &small_ensemble(), &ClassifierSpec::default(), seed).unwrap();
        for (batch, acc) in [(1, &mut sliding), (n_test, &mut fixed)] {
            let config = StreamConfig {
                alpha: 0.1,
                score: ScoreParams::raps(RegParams::default()),
                batch_size: Some(batch),
                mode: ThresholdMode::Marginal,
            };
            let sets = eraps_predict_stream(&fit, &test, config).unwrap();
            *acc += (marginal_metrics(&sets, test.labels()).unwrap().0 - 0.9).abs() / 20.0;
        }
    }
    assert!(sliding <= fixed, "sliding deviation {sliding}, fixed {fixed}");
}

#[test]
fn sets_are_prefixes_and_nest_in_alpha() {
    for seed in 0..3 {
        let s = sample(DgpSpec::default(), 700, seed);
        let (train, test) = s.series.split_at(400);
        let config = MethodConfig {
            ensemble: small_ensemble(),
            seed,
            ..MethodConfig::default()
        };
        for method in Method::ALL {
            let prepared = PreparedMethod::prepare(method, &train, &test, &config).unwrap();
            let wide = prepared.predict(0.05, RegParams::default()).unwrap();
            let narrow = prepared.predict(0.2, RegParams::default()).unwrap();
            for ((w, n), p) in wide.iter().zip(&narrow).zip(prepared.test_probs()) {
                assert!(w.is_prefix_of(p) && n.is_prefix_of(p), "{method}");
                assert!(n.is_subset_of(w), "{method}");
            }
        }
    }
}

#[test]
fn methods_are_deterministic() {
    let s = sample(DgpSpec::default(), 500, 4);
    let (train, test) = s.series.split_at(300);
    let config = MethodConfig {
        ensemble: small_ensemble(),
        seed: 17,
        ..MethodConfig::default()
    };
    for method in Method::ALL {
        let a = PreparedMethod::prepare(method, &train, &test, &config).unwrap();
        let b = PreparedMethod::prepare(method, &train, &test, &config).unwrap();
        assert_eq!(
            a.predict(0.1, RegParams::default()).unwrap(),
            b.predict(0.1, RegParams::default()).unwrap()
        );
    }
}

#[test]
fn perfect_classifier_gives_empty_sets() {
    // Well-separated classes: the fitted model puts nearly all mass on the
    // true label, so every plain total-mass calibration score is 0.
    let features: Vec<Vec<f64>> = (0..200)
        .map(|i| if i % 2 == 0 { vec![5.0, 0.0] } else { vec![-5.0, 0.0] })
        .collect();
    let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
    let train = LabeledSeries::new(features.clone(), labels, 2, 2).unwrap();
    let fit = SrapsFit::fit(&train, &ClassifierSpec::default(), SplitMode::SequentialHalf, 0).unwrap();
    let score = ScoreParams::total_mass();
    assert!(fit.calibration_scores(&score).unwrap().iter().all(|&s| s == 0.0));
    let probs = fit.predict_test_all(&features[..10]).unwrap();
    let sets = fit.predict_sets(probs, 0.1, score, ThresholdMode::Marginal).unwrap();
    assert!(sets.iter().all(PredictionSet::is_empty));
}

#[test]
fn class_max_sets_contain_class_conditional_sets() {
    let s = sample(DgpSpec::default(), 800, 2);
    let (train, test) = s.series.split_at(500);
    let base = MethodConfig {
        ensemble: small_ensemble(),
        ..MethodConfig::default()
    };
    let per_class = PreparedMethod::prepare(
        Method::Eraps,
        &train,
        &test,
        &MethodConfig {
            mode: ThresholdMode::ClassConditional,
            ..base
        },
    )
    .unwrap();
    let class_max = PreparedMethod::prepare(
        Method::Eraps,
        &train,
        &test,
        &MethodConfig {
            mode: ThresholdMode::ClassMax,
            ..base
        },
    )
    .unwrap();
    let a = per_class.predict(0.1, RegParams::default()).unwrap();
    let b = class_max.predict(0.1, RegParams::default()).unwrap();
    for (c, m) in a.iter().zip(&b) {
        assert!(c.is_subset_of(m));
    }
}

#[test]
fn sweep_reuse_matches_refitting_each_pair() {
    let s = sample(DgpSpec::default(), 600, 8);
    let (train, test) = s.series.split_at(400);
    let config = MethodConfig::default();
    let grid = SweepGrid {
        lambdas: vec![0.5, 0.01],
        k_regs: vec![3, 1],
    };
    let edges = eval::default_edges(5);
    let prepared = PreparedMethod::prepare(Method::Sraps, &train, &test, &config).unwrap();
    let rows = regularizer_sweep(&prepared, test.labels(), 5, 0.1, &grid, 0, &edges).unwrap();
    let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.lambda, r.k_reg)).collect();
    assert_eq!(keys, vec![(0.01, 1), (0.01, 3), (0.5, 1), (0.5, 3)]);
    for row in rows {
        let reg = RegParams::new(row.lambda, row.k_reg).unwrap();
        let fresh = PreparedMethod::prepare(Method::Sraps, &train, &test, &config).unwrap();
        let sets = fresh.predict(0.1, reg).unwrap();
        let expected = EvalReport::from_sets("sraps", 0.1, reg, 0, &sets, test.labels(), 5, &edges).unwrap();
        assert_eq!(row, expected);
    }
}
