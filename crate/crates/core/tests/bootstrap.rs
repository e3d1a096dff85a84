mod common;

use common::gaussian_dataset;
use condex::bootstrap::{bootstrap_ci, bootstrap_exceedances, JointMethod, RiskMeasure, RiskReport, BOOTSTRAP_PROCEDURE};
use condex::config::RunConfig;
use condex::data::Dataset;
use condex::dependence::{dependence_threshold, Exceedances};
use condex::error::Error;
use condex::model::fit_margins;
use condex::rng::derive_seed;

fn exceedances(ds: &Dataset, cond: usize) -> Exceedances {
    let cfg = RunConfig::default();
    let margins = fit_margins(ds, &cfg).unwrap();
    let yl = ds.map_observed(|s, r| Ok(margins[s].to_laplace(r))).unwrap();
    Exceedances::from_dataset(&yl, cond, dependence_threshold(cfg.dependence_quantile).unwrap()).unwrap()
}

fn small_config() -> RunConfig {
    RunConfig {
        n_sim: 5000,
        n_boot: 40,
        ..RunConfig::default()
    }
}

#[test]
fn constant_statistic_has_zero_width() {
    let exc = exceedances(&gaussian_dataset(3, 5000, 0.5, 1), 0);
    let iv = bootstrap_exceedances(&exc, None, 50, 0.95, 1, |_, _| Ok(0.25)).unwrap();
    assert_eq!((iv.lower, iv.point, iv.upper), (0.25, 0.25, 0.25));
    assert_eq!(iv.half_width(), 0.0);
    assert_eq!(iv.n_failed, 0);
}

#[test]
fn interval_contains_point_estimate() {
    let ds = gaussian_dataset(4, 5000, 0.6, 2);
    let cfg = small_config();
    for measure in [
        RiskMeasure::Tau { cond_site: 1, m: 2, p: 0.99 },
        RiskMeasure::JointProb {
            cond_site: 0,
            p_levels: vec![Some(0.99), Some(0.9), None, Some(0.9)],
            method: JointMethod::MonteCarlo,
        },
    ] {
        let iv = bootstrap_ci(&ds, &cfg, &measure, 40, 0.95, 3).unwrap();
        assert!(iv.lower <= iv.point && iv.point <= iv.upper, "{iv:?}");
        assert!(iv.upper > iv.lower);
        assert_eq!(iv.n_boot, 40);
    }
}

#[test]
fn too_many_failures_abort() {
    let exc = exceedances(&gaussian_dataset(3, 5000, 0.5, 4), 2);
    let seed = 11;
    let sim_seed = derive_seed(seed, 0);
    let failing = |k: u64| {
        move |_: &condex::model::SiteModel, s: u64| {
            if (1..=k).any(|b| s == derive_seed(sim_seed, b)) {
                Err(Error::Numerical("injected".into()))
            } else {
                Ok(1.0)
            }
        }
    };
    let iv = bootstrap_exceedances(&exc, None, 100, 0.9, seed, failing(20)).unwrap();
    assert_eq!(iv.n_failed, 20);
    let err = bootstrap_exceedances(&exc, None, 100, 0.9, seed, failing(21)).unwrap_err();
    assert!(matches!(err, Error::Numerical(ref m) if m.contains("21 of 100") && m.contains("injected")), "{err}");
}

#[test]
fn non_finite_values_count_as_failures() {
    let exc = exceedances(&gaussian_dataset(3, 5000, 0.5, 5), 0);
    let sim_seed = derive_seed(6, 0);
    let iv = bootstrap_exceedances(&exc, None, 20, 0.9, 6, |_, s| {
        Ok(if s == derive_seed(sim_seed, 1) { f64::NAN } else { 2.0 })
    })
    .unwrap();
    assert_eq!(iv.n_failed, 1);
}

#[test]
fn invalid_measures_are_config_errors() {
    let ds = gaussian_dataset(3, 3000, 0.5, 7);
    let cfg = small_config();
    let bad = [
        RiskMeasure::Tau { cond_site: 3, m: 1, p: 0.99 },
        RiskMeasure::Tau { cond_site: 0, m: 3, p: 0.99 },
        RiskMeasure::Tau { cond_site: 0, m: 1, p: 0.9 },
        RiskMeasure::JointProb {
            cond_site: 0,
            p_levels: vec![Some(0.99), None],
            method: JointMethod::Integral,
        },
    ];
    for m in &bad {
        assert!(matches!(bootstrap_ci(&ds, &cfg, m, 10, 0.95, 1), Err(Error::Config(_))), "{m:?}");
    }
}

#[test]
fn reports_with_equal_config_and_seed_match() {
    let ds = gaussian_dataset(3, 4000, 0.5, 8);
    let cfg = RunConfig {
        n_boot: 20,
        ..small_config()
    };
    let measures = [RiskMeasure::Tau { cond_site: 0, m: 1, p: 0.99 }];
    let mut a = RiskReport::compute(&ds, &cfg, &measures, 9).unwrap();
    let mut b = RiskReport::compute(&ds, &cfg, &measures, 9).unwrap();
    assert_eq!(a.config_hash, cfg.hash());
    assert_eq!(a.bootstrap_procedure, BOOTSTRAP_PROCEDURE);
    a.timings.clear();
    b.timings.clear();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    assert!(json.contains("\"lower\"") && json.contains("\"kind\":\"tau\""));
}
