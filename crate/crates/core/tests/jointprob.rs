mod common;

use common::{gaussian_dataset, laplace_points, manual_model};
use condex::config::RunConfig;
use condex::jointprob::{joint_prob_integral, joint_prob_mc, IntegralOptions, JointEvent};
use condex::kde::KernelCdf;
use condex::logistic::{logistic_sample, LogisticSpec};
use condex::model::fit_model;
use condex::stats::ks_statistic;

fn laplace_kernel() -> KernelCdf {
    KernelCdf::fit(laplace_points(4000), 10).unwrap()
}

#[test]
fn conditioning_event_alone_is_certain() {
    let model = manual_model(3, 0.5, 0.2, laplace_kernel(), 0.3);
    let ev = JointEvent::from_probabilities(&model, 0, &[Some(0.99), None, None]).unwrap();
    let mc = joint_prob_mc(&model, &ev, 10_000, 1).unwrap();
    assert_eq!(mc.hits, 10_000);
    assert!((mc.estimate - 0.01).abs() < 1e-15);
    assert_eq!(mc.std_error, 0.0);
    let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
    assert!((int.estimate - 0.01).abs() < 1e-12);
}

#[test]
fn impossible_event_is_flagged() {
    // residuals collapse to zero and alpha = 0, so every other site sits at 0
    let g = KernelCdf::new(vec![0.0], 1e-6).unwrap();
    let model = manual_model(3, 0.0, 0.0, g, 0.0);
    let ev = JointEvent::from_probabilities(&model, 1, &[Some(0.9), Some(0.99), None]).unwrap();
    let mc = joint_prob_mc(&model, &ev, 20_000, 2).unwrap();
    assert!(mc.zero_hits);
    assert_eq!(mc.estimate, 0.0);
    let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
    assert!(int.estimate < 1e-15, "{}", int.estimate);
}

#[test]
fn independence_reduces_to_product() {
    let model = manual_model(2, 0.0, 0.0, laplace_kernel(), 0.0);
    let ev = JointEvent::from_probabilities(&model, 0, &[Some(0.99), Some(0.5)]).unwrap();
    let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
    let tol = 3.0 * int.numerical_error + 1e-9;
    assert!((int.estimate - 0.005).abs() < tol, "{} +- {}", int.estimate, int.numerical_error);

    let mc = joint_prob_mc(&model, &ev, 200_000, 3).unwrap();
    assert!((mc.estimate - 0.005).abs() < 3.0 * mc.std_error);
}

#[test]
fn independence_on_fitted_model() {
    let ds = gaussian_dataset(2, 50_000, 0.0, 4);
    let model = fit_model(&ds, &RunConfig::default(), false).unwrap();
    let ev = JointEvent::from_probabilities(&model, 0, &[Some(0.99), Some(0.5)]).unwrap();
    let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
    // about 1000 exceedances: the conditional probability of Y_2 > 0 carries
    // a sampling error near 0.016
    assert!((int.estimate - 0.005).abs() < 0.005 * 0.1, "{}", int.estimate);
}

#[test]
fn integral_agrees_with_monte_carlo() {
    let model = manual_model(4, 0.7, 0.3, KernelCdf::fit(laplace_points(300), 10).unwrap(), 0.4);
    let ev = JointEvent::from_probabilities(&model, 2, &[Some(0.99); 4]).unwrap();
    let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
    let mc = joint_prob_mc(&model, &ev, 400_000, 5).unwrap();
    let combined = (int.numerical_error.powi(2) + mc.std_error.powi(2)).sqrt();
    assert!(
        (int.estimate - mc.estimate).abs() < 3.0 * combined,
        "{} vs {} ({combined})",
        int.estimate,
        mc.estimate
    );
    assert!(int.numerical_error < 0.01 * int.estimate);
}

#[test]
fn all_site_probability_decreases_with_return_period() {
    let ds = gaussian_dataset(5, 20_000, 0.6, 6);
    let model = fit_model(&ds, &RunConfig::default(), false).unwrap();
    let mut last = f64::INFINITY;
    for p in [0.99, 0.999, 0.9999] {
        let ev = JointEvent::from_probabilities(&model, 0, &[Some(p); 5]).unwrap();
        let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
        assert!(int.estimate < last, "p={p}: {} !< {last}", int.estimate);
        assert!(int.estimate > 0.0);
        assert!(int.numerical_error < 0.01 * int.estimate, "p={p}");
        last = int.estimate;
    }
}

#[test]
fn negative_correlation_lowers_joint_mass() {
    let g = laplace_kernel();
    let mut prev = f64::INFINITY;
    for rho in [0.0, -0.4, -0.8] {
        let model = manual_model(3, 0.0, 0.0, g.clone(), rho);
        let ev = JointEvent::from_probabilities(&model, 0, &[Some(0.99); 3]).unwrap();
        let int = joint_prob_integral(&model, &ev, &IntegralOptions::default()).unwrap();
        assert!(int.estimate <= prev + 3.0 * int.numerical_error, "rho={rho}");
        prev = int.estimate;
    }
}

#[test]
fn event_levels_are_validated() {
    let model = manual_model(3, 0.0, 0.0, laplace_kernel(), 0.0);
    assert!(JointEvent::from_probabilities(&model, 0, &[Some(0.9), None, None]).is_err());
    assert!(JointEvent::from_probabilities(&model, 0, &[Some(0.99), None]).is_err());
    assert!(JointEvent::from_probabilities(&model, 5, &[Some(0.99), None, None]).is_err());
}

#[test]
fn logistic_independence_limit() {
    let n = 20_000;
    let u = logistic_sample(&LogisticSpec::new(4, 1.0).unwrap(), n, 7).unwrap();
    for a in 0..4 {
        for b in a + 1..4 {
            let (x, y) = (u.column(a), u.column(b));
            let (mx, my) = (x.mean(), y.mean());
            let cov = x.iter().zip(y.iter()).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>();
            let vx = x.iter().map(|p| (p - mx).powi(2)).sum::<f64>();
            let vy = y.iter().map(|q| (q - my).powi(2)).sum::<f64>();
            let r = cov / (vx * vy).sqrt();
            assert!(r.abs() < 3.0 / (n as f64).sqrt(), "r({a},{b}) = {r}");
        }
    }
}

#[test]
fn logistic_margins_are_uniform() {
    let n = 20_000;
    let u = logistic_sample(&LogisticSpec::new(5, 0.75).unwrap(), n, 8).unwrap();
    for c in 0..5 {
        let col: Vec<f64> = u.column(c).iter().copied().collect();
        let ks = ks_statistic(&col, |x| x.clamp(0.0, 1.0));
        assert!(ks < 1.63 / (n as f64).sqrt(), "column {c}: ks {ks}");
    }
}
