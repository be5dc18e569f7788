//! Small end-to-end runs of the library: corpus, training, suites and the
//! placement study.

use streamcost_core::dataset::{make_dataset, Split};
use streamcost_core::generate::{Extrapolation, GenConfig, HardwareDim, Workload};
use streamcost_core::optimize::{CostPredictor, Ensembles, OraclePredictor};
use streamcost_core::suite::{
    ablation_suite, as_ensembles, extrapolation_suite, interpolation_suite, placement_study, train_flat_models,
    train_models, AblationVariant, SuiteConfig,
};
use streamcost_core::Metric;

fn tiny() -> SuiteConfig {
    let mut cfg = SuiteConfig::default();
    cfg.train.epochs = 3;
    cfg.train.hidden_dim = 8;
    cfg.train.seeds = vec![1];
    cfg.flat.iterations = 10;
    cfg.corpus_size = 120;
    cfg.eval_size = 40;
    cfg
}

#[test]
fn suites_produce_finite_reports() {
    let cfg = tiny();
    let ds = make_dataset(&cfg.gen, Some(&cfg.sim), Workload::Mixed, cfg.corpus_size).unwrap();
    let models = train_models(&ds, &Metric::ALL, &cfg.train).unwrap();
    assert_eq!(models.len(), 5);

    let interp = interpolation_suite(&models, &ds, &cfg).unwrap();
    // binary cells need both classes after balancing, which a tiny split may lack
    assert!(interp.cells.iter().all(|c| c.headline().is_finite()));
    for group in ["in_range/all", "interpolation/all"] {
        for metric in Metric::REGRESSION {
            let cell = interp.cell("gnn", metric, group).unwrap_or_else(|| panic!("{metric} {group}"));
            assert!(cell.headline().is_finite());
        }
    }

    let abl = ablation_suite(&ds, &cfg, &AblationVariant::ALL, Some(&models)).unwrap();
    for v in AblationVariant::ALL {
        for metric in Metric::REGRESSION {
            assert!(abl.cell(v.name(), metric, "all").is_some(), "{} {metric}", v.name());
        }
    }

    let cfg = SuiteConfig { metrics: vec![Metric::ProcLatency], ..cfg };
    let extra = extrapolation_suite(&cfg, &[(HardwareDim::Cpu, Extrapolation::Stronger)]).unwrap();
    assert!(!extra.cells.is_empty());
    assert!(extra.cells.iter().all(|c| c.headline().is_finite()));

    let flats = train_flat_models(&ds, &[Metric::Throughput], &cfg.flat).unwrap();
    assert!(flats[&Metric::Throughput].predict(&ds.split(Split::Test)[0].graph).unwrap() > 0.0);
}

#[test]
fn oracle_choices_never_lose_to_the_baseline() {
    let cfg = SuiteConfig { gen: GenConfig { seed: 4, ..GenConfig::default() }, ..tiny() };
    let (lat, ok) = (OraclePredictor::new(Metric::ProcLatency), OraclePredictor::new(Metric::Success));
    let mut oracle: Ensembles<'_> = Ensembles::new();
    oracle.insert(Metric::ProcLatency, vec![&lat as &dyn CostPredictor]);
    oracle.insert(Metric::Success, vec![&ok as &dyn CostPredictor]);
    let report = placement_study(&[("oracle", &oracle)], &cfg, 6, 20).unwrap();
    assert_eq!(report.rows.len(), 18);
    for row in report.rows.iter().filter(|r| r.baseline_latency_ms.is_some()) {
        assert!(row.choices[0].speedup >= 1.0, "{row:?}");
    }
    assert!(report.median("oracle", "all").unwrap() >= 1.0);
    assert_eq!(report.to_csv().lines().count(), 19);
}

#[test]
fn trained_ensembles_drive_the_study() {
    let cfg = tiny();
    let ds = make_dataset(&cfg.gen, Some(&cfg.sim), Workload::Mixed, cfg.corpus_size).unwrap();
    let models = train_models(&ds, &[Metric::ProcLatency, Metric::Success, Metric::Backpressure], &cfg.train).unwrap();
    let ens = as_ensembles(&models);
    let a = placement_study(&[("gnn", &ens)], &cfg, 3, 10).unwrap();
    let b = placement_study(&[("gnn", &ens)], &cfg, 3, 10).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path(), "study").unwrap();
    for ext in ["json", "csv", "svg"] {
        assert!(dir.path().join(format!("study.{ext}")).exists());
    }
}
