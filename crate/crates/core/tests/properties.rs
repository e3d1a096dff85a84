mod common;

use common::{gumbel, laplace_points, manual_model};
use condex::kde::KernelCdf;
use condex::margins::{fit_marginal, from_laplace, gpd_survival, to_laplace, GpdFit, MarginalModel};
use condex::residual_copula::{min_eigenvalue, nearest_pd, MIN_EIGENVALUE};
use condex::rng::substream;
use condex::simulate::tau_all;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn fitted_margin() -> &'static MarginalModel {
    static M: OnceLock<MarginalModel> = OnceLock::new();
    M.get_or_init(|| {
        let mut rng = substream(5, 0);
        let x: Vec<f64> = (0..3000).map(|_| gumbel(rng.random::<f64>(), 2)).collect();
        fit_marginal(&x, 0.95).unwrap()
    })
}

fn gpd(sigma: f64, xi: f64) -> GpdFit {
    GpdFit {
        u: 1.0,
        sigma,
        xi,
        phi_u: 0.05,
        n_exc: 100,
        converged: true,
    }
}

proptest! {
    #[test]
    fn probability_laplace_roundtrip(p in 1e-12f64..(1.0 - 1e-12)) {
        let y = to_laplace(p).unwrap();
        prop_assert!((from_laplace(y) - p).abs() < 1e-12);
    }

    #[test]
    fn marginal_laplace_roundtrip(r in 0.0f64..60.0) {
        let m = fitted_margin();
        // a negative shape puts an upper end point on the support
        prop_assume!(m.gpd.xi >= 0.0 || r < m.gpd.u - m.gpd.sigma / m.gpd.xi);
        let back = m.from_laplace(m.to_laplace(r));
        prop_assert!((back - r).abs() < 1e-12 * r.abs().max(1.0), "r={} back={}", r, back);
    }

    #[test]
    fn marginal_laplace_roundtrip_from_laplace(y in -20.0f64..30.0) {
        let m = fitted_margin();
        let back = m.to_laplace(m.from_laplace(y));
        prop_assert!((back - y).abs() < 1e-12 * y.abs().max(1.0), "y={} back={}", y, back);
    }

    #[test]
    fn gpd_shape_continuous_at_zero(sigma in 0.1f64..10.0, excess in 0.0f64..50.0) {
        let r = 1.0 + excess + 1e-9;
        let s0 = gpd_survival(&gpd(sigma, 0.0), r).unwrap();
        for xi in [1e-9, -1e-9] {
            let s = gpd_survival(&gpd(sigma, xi), r).unwrap();
            prop_assert!((s - s0).abs() < 1e-8, "xi={} {} vs {}", xi, s, s0);
        }
    }
}

fn random_unit_diagonal(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, 0);
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..i {
            let v = rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[test]
fn nearest_pd_postconditions() {
    let mut indefinite = 0;
    let mut seed = 0;
    while indefinite < 100 {
        seed += 1;
        let k = 3 + (seed as usize % 8);
        let m = random_unit_diagonal(k, seed);
        if min_eigenvalue(&m) >= 0.0 {
            continue;
        }
        indefinite += 1;
        let r = nearest_pd(&m);
        for i in 0..k {
            assert_eq!(r[(i, i)], 1.0, "seed {seed}");
            for j in 0..k {
                assert_eq!(r[(i, j)], r[(j, i)]);
            }
        }
        let e = min_eigenvalue(&r);
        assert!(e >= MIN_EIGENVALUE, "seed {seed}: min eigenvalue {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tau_is_monotone_in_m(
        alpha in 0.0f64..1.0,
        beta in 0.0f64..0.9,
        rho in -0.2f64..0.9,
        d in 3usize..7,
        p in 0.98f64..0.9995,
        seed in 0u64..1000,
    ) {
        let g = KernelCdf::fit(laplace_points(200), 10).unwrap();
        let model = manual_model(d, alpha, beta, g, rho);
        let tau = tau_all(&model, seed as usize % d, p, 2000, seed).unwrap();
        prop_assert_eq!(tau.len(), d - 1);
        for w in tau.windows(2) {
            prop_assert!(w[0] >= w[1], "{:?}", tau);
        }
        prop_assert!(tau.iter().all(|t| (0.0..=1.0).contains(t)));
    }
}
