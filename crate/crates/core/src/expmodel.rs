//! Closed forms for exponential claims without diffusion: u(d), ϑ, ϱ and
//! their derivatives, and the resulting optimal barrier and value function.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::firstpassage::upcross_transform;
use crate::lundberg::lundberg_root;
use crate::model::ValidatedModel;
use crate::special::{ln_factorial, ln_reg_lower_gamma, lower_gamma_moments};

const TERM_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct ExpClosedForms {
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub d: f64,
    pub u_d: f64,
    /// Terms used by the u(d) series.
    pub series_truncation: usize,
    pub tail_bound: f64,
}

fn require_exp_sigma0(model: &ValidatedModel) -> Result<f64> {
    let mu = model
        .claims()
        .exp_rate()
        .ok_or_else(|| Error::invalid("closed forms need exponential claims"))?;
    if model.sigma() != 0.0 {
        return Err(Error::invalid("closed forms need sigma = 0"));
    }
    Ok(mu)
}

/// u(d) = Σ_k rᵏλᵏ(μc)^{k+1}/(k!(k+1)!) ∫₀^d t^{2k} e^{−(λ+q+μc)t} dt,
/// returned with the number of terms used and a bound on the dropped tail.
pub fn u_of_d_detailed(model: &ValidatedModel, d: f64) -> Result<(f64, usize, f64)> {
    let mu = require_exp_sigma0(model)?;
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("u(d) needs d >= 0 (got {d})")));
    }
    if d == 0.0 {
        return Ok((0.0, 0, 0.0));
    }
    let (lam, c, q, r) = (model.lambda(), model.c(), model.q(), model.r());
    let a = lam + q + mu * c;
    let ln_rl = (r * lam).ln();
    let ln_mc = (mu * c).ln();
    let ln_a = a.ln();
    let ad = a * d;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for k in 0..100_000usize {
        let kf = k as f64;
        let n = 2 * k + 1;
        let ln_p = if d.is_infinite() { 0.0 } else { ln_reg_lower_gamma(n, ad) };
        let ln_term = kf * ln_rl + (kf + 1.0) * ln_mc - ln_factorial(k) - ln_factorial(k + 1) + ln_factorial(2 * k)
            - (n as f64) * ln_a
            + ln_p;
        let term = ln_term.exp();
        sum += term;
        let ratio = term / prev;
        prev = term;
        if k > 0 && ratio < 1.0 {
            let tail = term * ratio / (1.0 - ratio);
            if tail < 1e-17 * sum.max(1e-300) || term == 0.0 {
                return Ok((sum, k + 1, tail));
            }
        }
    }
    Err(Error::NonConvergence { what: "u_of_d", detail: "series did not settle".into() })
}

pub fn u_of_d(model: &ValidatedModel, d: f64) -> Result<f64> {
    Ok(u_of_d_detailed(model, d)?.0)
}

impl ExpClosedForms {
    pub fn new(model: &ValidatedModel) -> Result<Self> {
        let mu = require_exp_sigma0(model)?;
        let rho = lundberg_root(model)?.rho;
        let (u_d, series_truncation, tail_bound) = u_of_d_detailed(model, model.d())?;
        Ok(ExpClosedForms {
            mu,
            rho,
            lambda: model.lambda(),
            c: model.c(),
            q: model.q(),
            r: model.r(),
            d: model.d(),
            u_d,
            series_truncation,
            tail_bound,
        })
    }

    fn k_coeff(&self, u: f64) -> f64 {
        self.lambda * self.r * u / (self.c * (self.rho + self.mu))
    }

    /// (value, first, second derivative) of the series with correction weight K.
    fn eval(&self, x: f64, k: f64) -> [f64; 3] {
        let (mu, rho) = (self.mu, self.rho);
        let b = rho + mu;
        let ln_a = (self.lambda * self.r * mu / (self.c * b)).ln();
        let er = (rho * x).exp();
        let em = (-mu * x).exp();
        let mut out = [
            er - k * (er - em),
            rho * er - k * (rho * er + mu * em),
            rho * rho * er - k * (rho * rho * er - mu * mu * em),
        ];
        if x <= 0.0 {
            // At the origin only n = 1 (first derivative) and n ≤ 2 (second) survive.
            let c1 = ln_a.exp();
            let c2 = c1 * c1;
            out[1] += c1;
            out[2] += c1 * ((1.0 - k) * (rho - mu) - 2.0 * k * mu) + c2;
            return out;
        }
        let lx = x.ln();
        let mut n_max = 32;
        loop {
            let moments = lower_gamma_moments(b, x, n_max);
            let mut acc = [0.0; 3];
            let mut last = 0.0;
            for n in 1..=n_max {
                let nf = n as f64;
                let cn = (nf * ln_a - ln_factorial(n - 1)).exp();
                let i_n = moments[n - 1];
                let p_n = ((nf - 1.0) * lx - mu * x).exp();
                let q_n = x * p_n;
                let r_n = if n >= 2 { ((nf - 2.0) * lx - mu * x).exp() } else { 0.0 };
                let v = cn * ((1.0 - k) * er * i_n + k / nf * q_n);
                let d1 = cn * ((1.0 - k) * (rho * er * i_n + p_n) + k / nf * (nf * p_n - mu * q_n));
                let d2 = cn
                    * ((1.0 - k) * (rho * rho * er * i_n + rho * p_n + (nf - 1.0) * r_n - mu * p_n)
                        + k / nf * (nf * (nf - 1.0) * r_n - 2.0 * mu * nf * p_n + mu * mu * q_n));
                acc[0] += v;
                acc[1] += d1;
                acc[2] += d2;
                last = v.abs().max(d1.abs()).max(d2.abs());
            }
            if last < TERM_TOL || n_max >= 4096 {
                for j in 0..3 {
                    out[j] += acc[j];
                }
                return out;
            }
            n_max *= 2;
        }
    }

    pub fn vartheta(&self, x: f64) -> f64 {
        self.eval(x, 0.0)[0]
    }
    pub fn vartheta_d1(&self, x: f64) -> f64 {
        self.eval(x, 0.0)[1]
    }
    pub fn vartheta_d2(&self, x: f64) -> f64 {
        self.eval(x, 0.0)[2]
    }
    pub fn varrho(&self, x: f64) -> f64 {
        self.eval(x, self.k_coeff(self.u_d))[0]
    }
    pub fn varrho_d1(&self, x: f64) -> f64 {
        self.eval(x, self.k_coeff(self.u_d))[1]
    }
    pub fn varrho_d2(&self, x: f64) -> f64 {
        self.eval(x, self.k_coeff(self.u_d))[2]
    }

    /// ξ and its first two derivatives: ϑ for d = 0, ϱ otherwise.
    pub fn xi_all(&self, x: f64) -> [f64; 3] {
        let k = if self.d == 0.0 { 0.0 } else { self.k_coeff(self.u_d) };
        self.eval(x, k)
    }

    /// Smallest zero of ξ'' on [0, a_max] where ξ'' turns from negative to
    /// positive; `None` means ξ' has no interior minimum there.
    pub fn interior_barrier(&self, a_max: f64) -> Option<f64> {
        let step = 1e-3;
        let n = (a_max / step).ceil() as usize;
        let f = |x: f64| self.xi_all(x)[2];
        let mut prev = f(0.0);
        for i in 1..=n {
            let x = (i as f64 * step).min(a_max);
            let cur = f(x);
            if prev < 0.0 && cur >= 0.0 {
                let (mut lo, mut hi) = (x - step, x);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            prev = cur;
        }
        None
    }

    /// Optimal barrier: the interior zero of ξ'' if any, else the boundary 0
    /// when ξ' is increasing from the origin.
    pub fn optimal_barrier(&self) -> Result<(f64, bool)> {
        if let Some(a) = self.interior_barrier(20.0) {
            return Ok((a, false));
        }
        if self.xi_all(0.0)[2] >= 0.0 {
            Ok((0.0, true))
        } else {
            Err(Error::AMaxTooSmall { a_max: 20.0 })
        }
    }

    /// Value of the barrier strategy at level a, for x ≥ 0.
    pub fn value_at_barrier(&self, a: f64, x: f64) -> f64 {
        let [xa, xpa, _] = self.xi_all(a);
        if x <= a {
            self.xi_all(x)[0] / xpa
        } else {
            x - a + xa / xpa
        }
    }
}

/// Optimal-barrier value function for exponential claims and sigma = 0.
/// Levels in (−cd, 0) use the continuation h(0)·Φ_d(−x).
pub fn exp_value_function(model: &ValidatedModel, d: f64, x: f64) -> Result<f64> {
    let m = model.with_d(d)?;
    let forms = ExpClosedForms::new(&m)?;
    let (a, _) = forms.optimal_barrier()?;
    if x >= 0.0 {
        return Ok(forms.value_at_barrier(a, x));
    }
    if x <= -m.c() * d {
        return Ok(0.0);
    }
    let phi = upcross_transform(&m, -x, d)?.value;
    Ok(phi * forms.value_at_barrier(a, 0.0))
}
