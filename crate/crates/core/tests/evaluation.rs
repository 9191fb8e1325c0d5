use antigenic_core::eval::figures::{figure_files, grouped_bars_csv, FigureOptions, GROUPED_BARS_HEADER};
use antigenic_core::eval::grid::{RfGrid, SvmGrid};
use antigenic_core::eval::{
    bootstrap_ci, run_experiment, ExperimentConfig, ExperimentReport, Paradigm, Scope, SupervisionRatio,
};
use antigenic_core::learners::LearnerKind;
use antigenic_core::synthetic::{two_moons, MoonsSpec};
use antigenic_core::Class;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rf_only(seed: u64, ratios: Vec<SupervisionRatio>) -> ExperimentConfig {
    let mut config = ExperimentConfig {
        seed,
        ratios,
        paradigms: vec![Paradigm::Supervised],
        learners: vec![LearnerKind::RandomForest],
        bootstrap_resamples: 100,
        ..ExperimentConfig::default()
    };
    config.grids.rf = RfGrid {
        n_estimators: vec![10],
        max_depth: vec![None],
    };
    config
}

#[test]
fn bootstrap_interval_brackets_f1() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.gen_range(10..200);
        let outcomes: Vec<(Class, Class)> = (0..n)
            .map(|_| {
                let t = if rng.gen_bool(0.5) { Class::Variant } else { Class::Similar };
                let p = if rng.gen_bool(0.8) { t } else if t == Class::Variant { Class::Similar } else { Class::Variant };
                (t, p)
            })
            .collect();
        let (lo, hi) = bootstrap_ci(&outcomes, 200, 0.95, rng.gen()).unwrap();
        assert!(0.0 <= lo && lo <= hi && hi <= 1.0);
    }
}

#[test]
fn report_rows_bracket_point_estimates() {
    let data = two_moons(&MoonsSpec {
        n_labelled: 150,
        n_unlabelled: 0,
        seed: 1,
        ..MoonsSpec::default()
    });
    let report = run_experiment(&rf_only(1, vec![SupervisionRatio::Half]), &[data]).unwrap();
    let cell = &report.cells[0];
    assert!(cell.is_ok());
    for row in &cell.rows {
        assert!(row.ci_low <= row.mean_f1 && row.mean_f1 <= row.ci_high, "{row:?}");
    }
    let per_subtype: Vec<f64> = cell
        .rows
        .iter()
        .filter(|r| matches!(r.scope, Scope::Subtype(_)))
        .map(|r| r.mean_f1)
        .collect();
    assert_eq!(per_subtype.len(), 4);
    let mean = per_subtype.iter().sum::<f64>() / 4.0;
    assert!((cell.row(Scope::MacroOverSubtypes).unwrap().mean_f1 - mean).abs() < 1e-12);
    assert_eq!(cell.leakage_checks, 5 * (1 + 4));
}

#[test]
fn more_supervision_does_not_hurt_on_separable_data() {
    let mut violations = 0;
    for seed in 0..10 {
        // Separable but curved, so the learning curve is not pinned at F1 = 1.
        let data = two_moons(&MoonsSpec {
            n_labelled: 200,
            n_unlabelled: 0,
            noise: 0.1,
            noise_dims: 0,
            seed,
            ..MoonsSpec::default()
        });
        let mut config = rf_only(seed, vec![SupervisionRatio::Quarter, SupervisionRatio::Full]);
        config.grids.rf.n_estimators = vec![100];
        let report = run_experiment(&config, &[data]).unwrap();
        let f1 = |r| {
            report
                .cell(Paradigm::Supervised, Some(LearnerKind::RandomForest), r, "synthetic")
                .and_then(|c| c.row(Scope::AllPairs))
                .unwrap()
                .mean_f1
        };
        if f1(SupervisionRatio::Full) < f1(SupervisionRatio::Quarter) {
            violations += 1;
        }
    }
    assert!(violations <= 1, "{violations} violations");
}

#[test]
fn report_json_round_trips_and_checks_schema() {
    let data = two_moons(&MoonsSpec {
        n_labelled: 100,
        n_unlabelled: 40,
        seed: 2,
        ..MoonsSpec::default()
    });
    let mut config = rf_only(2, vec![SupervisionRatio::Quarter]);
    config.paradigms = vec![Paradigm::Supervised, Paradigm::LabelSpreading];
    config.learners = vec![LearnerKind::Svm];
    config.grids.svm = SvmGrid {
        c: vec![1.0],
        gamma: vec![0.5],
    };
    config.grids.label_spreading.n_neighbors = vec![5];
    config.grids.label_spreading.max_iter = vec![20];
    let report = run_experiment(&config, &[data]).unwrap();
    assert_eq!(report.cells.len(), 2);

    let json = report.to_json();
    let back = ExperimentReport::from_json(&json).unwrap();
    assert_eq!(back.to_json(), json);
    assert_eq!(back.digest(), report.digest());
    let bumped = json.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert_ne!(bumped, json);
    assert!(ExperimentReport::from_json(&bumped).is_err());

    let bars = grouped_bars_csv(&report);
    assert_eq!(bars.lines().count(), 3);
    assert!(bars.contains("synthetic,label_spreading,kNN,0.25,"));
    let files = figure_files(
        &report,
        FigureOptions {
            per_subtype: true,
            svg: false,
        },
    );
    assert_eq!(files.len(), 5);
    assert!(report.to_csv().lines().count() > 2);
}

#[test]
fn empty_report_gives_headers() {
    let report = ExperimentReport {
        schema_version: antigenic_core::eval::SCHEMA_VERSION,
        config: ExperimentConfig::default(),
        folds_by_subtype: false,
        datasets: vec![],
        cells: vec![],
    };
    assert_eq!(grouped_bars_csv(&report), format!("{GROUPED_BARS_HEADER}\n"));
    for (_, contents) in figure_files(&report, FigureOptions { per_subtype: true, svg: false }) {
        assert_eq!(contents.lines().count(), 1);
    }
}
