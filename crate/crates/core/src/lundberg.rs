//! The Lundberg fundamental equation and the claim-count-discounted
//! Laplace exponent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ValidatedModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LundbergRoot {
    pub rho: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// ψ_r(α) = σ²α²/2 + cα − λ + λ r f̂(α).
pub fn psi_r(model: &ValidatedModel, alpha: f64) -> f64 {
    let s2 = model.sigma() * model.sigma();
    0.5 * s2 * alpha * alpha + model.c() * alpha - model.lambda()
        + model.lambda() * model.r() * model.claims().laplace(alpha)
}

fn psi_r_deriv(model: &ValidatedModel, alpha: f64) -> f64 {
    let s2 = model.sigma() * model.sigma();
    s2 * alpha + model.c() - model.lambda() * model.r() * model.claims().laplace_neg_deriv(alpha)
}

const RESIDUAL_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;

/// Unique nonnegative root of ψ_r(s) = q.
pub fn lundberg_root(model: &ValidatedModel) -> Result<LundbergRoot> {
    let q = model.q();
    let g = |s: f64| psi_r(model, s) - q;
    let mut lo = 0.0;
    let mut hi = 1.0_f64.max((model.lambda() + q) / model.c());
    let mut iterations = 0;
    while g(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > 200 || !hi.is_finite() {
            return Err(Error::NonConvergence {
                what: "lundberg_root",
                detail: "no sign change found while doubling the bracket".into(),
            });
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        iterations += 1;
        let v = g(s);
        if v.abs() <= RESIDUAL_TOL {
            return Ok(LundbergRoot { rho: s, residual: v, iterations });
        }
        if v > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let dv = psi_r_deriv(model, s);
        let newton = s - v / dv;
        s = if dv > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < f64::EPSILON * hi.max(1e-300) {
            let v = g(s);
            return Ok(LundbergRoot { rho: s, residual: v, iterations });
        }
    }
    Err(Error::NonConvergence { what: "lundberg_root", detail: format!("residual {:.3e}", g(s)) })
}

/// Φ_r(q): the right inverse of ψ_r at q, identical to the Lundberg root.
#[allow(non_snake_case)]
pub fn Phi_r_of_q(model: &ValidatedModel) -> Result<LundbergRoot> {
    lundberg_root(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ClaimDistribution, ModelParams};

    fn m(r: f64, sigma: f64) -> ValidatedModel {
        validate(ModelParams::example(0.0).with_r(r).with_sigma(sigma), ClaimDistribution::exponential(1.0)).unwrap()
    }

    #[test]
    fn example_root() {
        let root = lundberg_root(&m(0.8, 0.0)).unwrap();
        assert!((root.rho - 0.24493).abs() < 5e-5);
        assert!((root.rho - 0.244_928_565_180_081_4).abs() < 1e-12);
        assert!(root.residual.abs() <= 1e-12);
        assert!((psi_r(&m(0.8, 0.0), 0.24493) - 0.1).abs() < 2e-4);
    }

    #[test]
    fn r_one_matches_quadratic() {
        let model = m(1.0, 0.0);
        let exact = (-4.9 + 30.01f64.sqrt()) / 30.0;
        assert!((psi_r(&model, exact) - 0.1).abs() < 1e-12);
        let root = lundberg_root(&model).unwrap();
        assert!((root.rho - exact).abs() < 1e-12);
        assert!(lundberg_root(&m(0.8, 0.0)).unwrap().rho > root.rho);
    }

    #[test]
    fn psi_at_zero() {
        assert!((psi_r(&m(0.8, 0.0), 0.0) - 10.0 * (0.8 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn diffusive_root() {
        let model = m(0.8, 1.0);
        let root = Phi_r_of_q(&model).unwrap();
        assert!(root.rho > 0.0 && root.residual.abs() <= 1e-12);
    }

    #[test]
    fn lundberg_identity_exponential() {
        let root = lundberg_root(&m(0.8, 0.0)).unwrap().rho;
        let lhs = root + 10.0 * 0.8 / (15.0 * (root + 1.0));
        assert!((lhs - 10.1 / 15.0).abs() < 1e-10);
    }

    #[test]
    fn psi_convex() {
        let model = m(0.8, 0.5);
        let h = 0.05;
        for i in 1..400 {
            let a = i as f64 * 0.025;
            let d2 = (psi_r(&model, a + h) - 2.0 * psi_r(&model, a) + psi_r(&model, a - h)) / (h * h);
            assert!(d2 >= -1e-9);
        }
    }
}
