mod common;

use common::{laplace_points, manual_model};
use condex::dependence::conditional_moments;
use condex::kde::KernelCdf;
use condex::margins::laplace_upper_quantile;
use condex::simulate::{
    estimate_argmax_probs, simulate_anywhere_extreme, simulate_conditional, tau_all, tau_from_events, tau_mp,
};
use condex::stats::{ks_statistic, mean};

fn independent_model(d: usize) -> condex::model::CondExModel {
    let g = KernelCdf::fit(laplace_points(20_000), 10).unwrap();
    manual_model(d, 0.0, 0.0, g, 0.0)
}

#[test]
fn perfect_dependence_degenerates() {
    let g = KernelCdf::new(vec![0.0], 1e-8).unwrap();
    let model = manual_model(4, 1.0, 0.0, g, 0.0);
    let ev = simulate_conditional(&model, 0, 0.99, 2000, 1).unwrap();
    for r in 0..ev.len() {
        for i in 1..4 {
            assert!((ev.laplace[(r, i)] - ev.laplace[(r, 0)]).abs() < 1e-6);
        }
    }
    assert_eq!(tau_all(&model, 0, 0.99, 2000, 1).unwrap(), vec![1.0; 3]);
}

#[test]
fn conditioning_values_exceed_marginal_quantile() {
    let model = independent_model(3);
    let p = 0.99;
    let ev = simulate_conditional(&model, 1, p, 2000, 2).unwrap();
    let q = model.margins[1].quantile(p).unwrap();
    let native = ev.native(&model);
    assert!((0..ev.len()).all(|r| native[(r, 1)] > q));
    assert!(ev.cond_site.iter().all(|&j| j == 1));
}

#[test]
fn conditioning_excess_is_standard_exponential() {
    let model = independent_model(3);
    let p = 0.99;
    let v_p = laplace_upper_quantile(p).unwrap();
    let ev = simulate_conditional(&model, 0, p, 100_000, 3).unwrap();
    let e: Vec<f64> = (0..ev.len()).map(|r| ev.laplace[(r, 0)] - v_p).collect();
    let ks = ks_statistic(&e, |x| 1.0 - (-x).exp());
    assert!(ks < 1.63 / (e.len() as f64).sqrt(), "ks {ks}");
}

#[test]
fn residuals_independent_of_conditioning_value() {
    let g = KernelCdf::fit(laplace_points(500), 10).unwrap();
    let model = manual_model(3, 0.6, 0.4, g, 0.5);
    let ev = simulate_conditional(&model, 0, 0.99, 50_000, 4).unwrap();
    let y1: Vec<f64> = (0..ev.len()).map(|r| ev.laplace[(r, 0)]).collect();
    let z: Vec<f64> = (0..ev.len())
        .map(|r| (ev.laplace[(r, 1)] - 0.6 * y1[r]) / y1[r].powf(0.4))
        .collect();
    let (my, mz) = (mean(&y1), mean(&z));
    let cov: f64 = y1.iter().zip(&z).map(|(a, b)| (a - my) * (b - mz)).sum();
    let vy: f64 = y1.iter().map(|a| (a - my).powi(2)).sum();
    let vz: f64 = z.iter().map(|b| (b - mz).powi(2)).sum();
    let r = cov / (vy * vz).sqrt();
    assert!(r.abs() < 3.0 / (y1.len() as f64).sqrt(), "r {r}");
}

#[test]
fn binned_moments_match_regression() {
    let pts: Vec<f64> = laplace_points(400).iter().map(|x| 0.5 * x + 0.3).collect();
    let g = KernelCdf::fit(pts.clone(), 10).unwrap();
    let mut model = manual_model(3, 0.5, 0.3, g.clone(), 0.2);
    // residual law moments: kernel mixture mean and variance
    let m = mean(&pts);
    let var = pts.iter().map(|x| (x - m).powi(2)).sum::<f64>() / pts.len() as f64 + g.bandwidth().powi(2);
    for site in model.conditionals.iter_mut().flatten() {
        site.fit.mu = vec![m; 2];
        site.fit.sigma_res = vec![var.sqrt(); 2];
    }
    let ev = simulate_conditional(&model, 0, 0.99, 200_000, 5).unwrap();
    let fit = &model.conditionals[0].as_ref().unwrap().fit;
    let v_p = laplace_upper_quantile(0.99).unwrap();
    for b in 0..3 {
        let (lo, hi) = (v_p + 0.5 * b as f64, v_p + 0.5 * (b + 1) as f64);
        let rows: Vec<usize> = (0..ev.len())
            .filter(|&r| ev.laplace[(r, 0)] >= lo && ev.laplace[(r, 0)] < hi)
            .collect();
        let y: Vec<f64> = rows.iter().map(|&r| ev.laplace[(r, 1)]).collect();
        let ybar = mean(&rows.iter().map(|&r| ev.laplace[(r, 0)]).collect::<Vec<_>>());
        let (mu, v) = conditional_moments(fit, ybar).unwrap();
        let my = mean(&y);
        let vy = y.iter().map(|x| (x - my).powi(2)).sum::<f64>() / y.len() as f64;
        let se = (v[0] / y.len() as f64).sqrt();
        // bins have width 0.5, so the conditional mean varies inside a bin
        assert!((my - mu[0]).abs() < 4.0 * se + 0.01, "bin {b}: {my} vs {}", mu[0]);
        assert!((vy / v[0] - 1.0).abs() < 0.1, "bin {b}: var {vy} vs {}", v[0]);
    }
}

#[test]
fn simulation_is_deterministic() {
    let model = independent_model(3);
    let a = simulate_conditional(&model, 2, 0.99, 10_000, 77).unwrap();
    let b = simulate_conditional(&model, 2, 0.99, 10_000, 77).unwrap();
    assert_eq!(a, b);
    let c = simulate_conditional(&model, 2, 0.99, 10_000, 78).unwrap();
    assert_ne!(a, c);
}

#[test]
fn p_below_dependence_quantile_is_rejected() {
    let model = independent_model(3);
    assert!(simulate_conditional(&model, 0, 0.9, 10, 1).is_err());
}

#[test]
fn argmax_probabilities() {
    let g = KernelCdf::fit(laplace_points(2000), 10).unwrap();
    let pair = manual_model(2, 0.5, 0.2, g, 0.0);
    let pr = estimate_argmax_probs(&pair, 0.99, 100_000, 6).unwrap();
    assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(pr.iter().all(|&x| x >= 0.0));
    assert!((pr[0] - 0.5).abs() < 0.01, "{pr:?}");

    let ind = independent_model(4);
    let pr = estimate_argmax_probs(&ind, 0.99, 100_000, 7).unwrap();
    for x in &pr {
        assert!((x - 0.25).abs() < 0.01, "{pr:?}");
    }
}

#[test]
fn anywhere_extreme_events() {
    let g = KernelCdf::fit(laplace_points(2000), 10).unwrap();
    let mut model = manual_model(3, 0.7, 0.1, g, 0.3);
    // make site 0 dominate by giving its conditional stronger dependence
    if let Some(s) = model.conditionals[2].as_mut() {
        s.fit.alpha = vec![0.95, 0.95];
    }
    let p = 0.99;
    let v_p = laplace_upper_quantile(p).unwrap();
    let n = 40_000;
    let ev = simulate_anywhere_extreme(&model, p, n, 100_000, 8).unwrap();
    assert_eq!(ev.len(), n);
    for r in 0..n {
        let j = ev.cond_site[r];
        let row: Vec<f64> = ev.laplace.row(r).iter().copied().collect();
        assert!(row.iter().all(|&y| y <= row[j]));
        assert!(row[j] > v_p);
    }
    let probs = estimate_argmax_probs(&model, p, 100_000, 9).unwrap();
    let counts = ev.cond_site_counts(3);
    for j in 0..3 {
        let f = counts[j] as f64 / n as f64;
        let se = (probs[j] * (1.0 - probs[j]) / n as f64).sqrt() + 0.005;
        assert!((f - probs[j]).abs() < 4.0 * se, "site {j}: {f} vs {}", probs[j]);
    }
    assert!(ev.acceptance_rate > 0.0 && ev.acceptance_rate <= 1.0);
}

#[test]
fn tau_independence_and_monotonicity() {
    let d = 4;
    let model = independent_model(d);
    let p = 0.99;
    let tau = tau_all(&model, 0, p, 200_000, 10).unwrap();
    let expected = 1.0 - p.powi(d as i32 - 1);
    let se = (expected * (1.0 - expected) / 200_000.0).sqrt();
    // kernel smoothing inflates the Laplace tail slightly
    assert!((tau[0] - expected).abs() < 4.0 * se + 0.03 * expected, "{} vs {expected}", tau[0]);
    assert!(tau.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(tau_mp(&model, 0, 1, p, 200_000, 10).unwrap(), tau[0]);
    assert!(tau_mp(&model, 0, 0, p, 10, 1).is_err());
    assert!(tau_mp(&model, 0, d, p, 10, 1).is_err());

    let ev = simulate_conditional(&model, 1, p, 5000, 11).unwrap();
    let t = tau_from_events(&ev, d);
    assert!(t.windows(2).all(|w| w[0] >= w[1]));
}
