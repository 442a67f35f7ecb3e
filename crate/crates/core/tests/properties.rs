use parisdiv_core::firstpassage::upcross_transform;
use parisdiv_core::gridmath::{convolve, dickson_commutation_residual};
use parisdiv_core::lundberg::{lundberg_root, psi_r};
use parisdiv_core::simulator::simulate_value;
use parisdiv_core::valuation::value_barrier;
use parisdiv_core::*;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (1.0..20.0f64, 0.05..1.0f64, 0.0..1.0f64, 0.0..3.0f64).prop_map(|(lambda, q, r, d)| {
        // loading between 10% and 100%
        let c = lambda * (1.1 + 0.9 * r);
        ModelParams { lambda, c, sigma: 0.0, q, r, d }
    })
}

fn model(p: ModelParams) -> ValidatedModel {
    validate(p, ClaimDistribution::exponential(1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lundberg_root_solves_equation(p in params(), sigma in 0.0..1.0f64) {
        let m = model(ModelParams { sigma, ..p });
        let root = lundberg_root(&m).unwrap();
        prop_assert!(root.rho > 0.0);
        prop_assert!((psi_r(&m, root.rho) - m.q()).abs() <= 1e-10 * (1.0 + m.lambda()));
    }

    #[test]
    fn h_is_a_normalised_increasing_profile(p in params(), a in 0.1..2.0f64) {
        let m = model(p);
        let h = HFunction::build(&m, a, HOptions { extent: a + 1.0, ..HOptions::default() }).unwrap();
        prop_assert!((h.h(a).unwrap() - 1.0).abs() < 1e-12);
        let mut prev = h.h(0.0).unwrap();
        prop_assert!(prev >= 0.0);
        for i in 1..=20 {
            let x = a * i as f64 / 20.0;
            let v = h.h(x).unwrap();
            prop_assert!(v + 1e-12 >= prev, "h decreasing at {}", x);
            prev = v;
        }
    }

    #[test]
    fn value_is_linear_above_barrier(p in params(), a in 0.0..1.5f64, dx in 0.0..5.0f64) {
        let m = model(p);
        let h = HFunction::build(&m, a, HOptions { extent: a + 1.0, ..HOptions::default() }).unwrap();
        let va = value_barrier(&h, a, a).unwrap();
        let vx = value_barrier(&h, a, a + dx).unwrap();
        prop_assert!((vx - va - dx).abs() <= 1e-10 * (1.0 + vx.abs()));
    }

    #[test]
    fn upcross_below_no_ruin_limit(p in params(), y in 0.05..2.0f64) {
        let m = model(p);
        let rho = lundberg_root(&m).unwrap().rho;
        let short = upcross_transform(&m, y, 0.1).unwrap().value;
        let long = upcross_transform(&m, y, 1.0).unwrap().value;
        prop_assert!(short >= 0.0);
        prop_assert!(short <= long + 1e-12);
        prop_assert!(long <= (-rho * y).exp() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dickson_commutes(s in 0.05..1.0f64, gap in 0.05..1.0f64) {
        let g = GridFunction::from_fn(0.0, 40.0, 1e-3, |x| (-x).exp()).unwrap();
        prop_assert!(dickson_commutation_residual(s, s + gap, &g).unwrap() <= 1e-8);
    }

    #[test]
    fn convolution_commutes(k1 in 0.5..3.0f64, k2 in 0.5..3.0f64) {
        let f = GridFunction::from_fn(0.0, 5.0, 1e-2, |x| (-k1 * x).exp()).unwrap();
        let g = GridFunction::from_fn(0.0, 5.0, 1e-2, |x| x * (-k2 * x).exp()).unwrap();
        let fg = convolve(&f, &g).unwrap();
        let gf = convolve(&g, &f).unwrap();
        prop_assert!(fg.sub(&gf).unwrap().sup_norm() <= 1e-12);
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), x in 0.0..1.0f64) {
        let m = model(ModelParams::example(1.0));
        let cfg = SimConfig { n_paths: 300, seed, ..SimConfig::default() };
        let a = simulate_value(&m, 0.8, x, &cfg).unwrap();
        let b = simulate_value(&m, 0.8, x, &cfg).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert!(a.mean >= 0.0 && a.mean <= m.c() / m.q());
    }
}
