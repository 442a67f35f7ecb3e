//! Model parameters, claim-size distributions and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError, Result};
use crate::special::ln_factorial;

/// The tuple (lambda, c, sigma, q, r, d). `d = f64::INFINITY` is the
/// no-ruin sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub c: f64,
    pub sigma: f64,
    pub q: f64,
    pub r: f64,
    pub d: f64,
}

impl ModelParams {
    /// Numerical-example parameters: lambda=10, c=15, q=0.1, r=0.8, sigma=0.
    pub fn example(d: f64) -> Self {
        ModelParams { lambda: 10.0, c: 15.0, sigma: 0.0, q: 0.1, r: 0.8, d }
    }

    pub fn with_d(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }
}

/// Claim density sampled on a uniform grid [0, x_max], linearly
/// interpolated between nodes and zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    step: f64,
    values: Vec<f64>,
    cum: Vec<f64>,
    cum_first: Vec<f64>,
    mean: f64,
}

impl TabulatedDensity {
    pub fn new(step: f64, values: Vec<f64>) -> std::result::Result<Self, ModelError> {
        let bad = |m: String| ModelError::InvalidDensity(m);
        if !(step.is_finite() && step > 0.0) {
            return Err(bad(format!("step must be positive (got {step})")));
        }
        if values.len() < 3 {
            return Err(bad("need at least 3 grid values".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad("density values must be finite and non-negative".into()));
        }
        let n = values.len();
        let mass = trapezoid(&values, step);
        if (mass - 1.0).abs() > 1e-4 {
            return Err(bad(format!("trapezoid mass {mass} differs from 1 by more than 1e-4")));
        }
        let fl = values[n - 1];
        let fp = values[n - 2];
        if fl > 0.0 && fp > fl {
            let kappa = (fp / fl).ln() / step;
            let tail = fl / kappa;
            if tail >= 1e-10 {
                return Err(bad(format!(
                    "estimated mass beyond x_max is {tail:.3e} (must be < 1e-10); extend the table"
                )));
            }
        }
        let values: Vec<f64> = values.into_iter().map(|v| v / mass).collect();
        let mut cum = vec![0.0; n];
        let mut cum_first = vec![0.0; n];
        for i in 1..n {
            let (x0, x1) = ((i - 1) as f64 * step, i as f64 * step);
            cum[i] = cum[i - 1] + 0.5 * step * (values[i - 1] + values[i]);
            cum_first[i] = cum_first[i - 1] + 0.5 * step * (x0 * values[i - 1] + x1 * values[i]);
        }
        let mean = cum_first[n - 1];
        Ok(TabulatedDensity { step, values, cum, cum_first, mean })
    }

    /// Samples `f` on [0, x_max] with the given step.
    pub fn from_fn(step: f64, x_max: f64, f: impl Fn(f64) -> f64) -> std::result::Result<Self, ModelError> {
        let n = (x_max / step).round() as usize + 1;
        Self::new(step, (0..n).map(|i| f(i as f64 * step)).collect())
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if x < 0.0 || x > self.x_max() {
            return None;
        }
        let s = x / self.step;
        let i = (s.floor() as usize).min(self.values.len() - 2);
        Some((i, s - i as f64))
    }

    pub fn density(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((i, t)) => self.values[i] * (1.0 - t) + self.values[i + 1] * t,
            None => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.locate(x) {
            Some((i, t)) => {
                let (f0, f1) = (self.values[i], self.values[i + 1]);
                let h = self.step * t;
                self.cum[i] + h * f0 + 0.5 * h * t * (f1 - f0)
            }
            None => 1.0,
        }
    }

    /// ∫₀^x y f(y) dy (trapezoid at nodes, linear within the last panel).
    pub fn partial_mean(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.locate(x) {
            Some((i, _)) => {
                let x0 = i as f64 * self.step;
                self.cum_first[i] + 0.5 * (x - x0) * (x0 * self.values[i] + x * self.density(x))
            }
            None => self.mean,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Inverse of the piecewise-quadratic cdf.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = *self.cum.last().unwrap();
        let u = u.clamp(0.0, 1.0) * total;
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&u)) {
            Ok(i) => return i as f64 * self.step,
            Err(i) => i.clamp(1, self.cum.len() - 1) - 1,
        };
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let target = u - self.cum[i];
        let slope = (f1 - f0) / self.step;
        let dx = if slope.abs() < 1e-300 {
            if f0 > 0.0 { target / f0 } else { 0.0 }
        } else {
            let disc = (f0 * f0 + 2.0 * slope * target).max(0.0);
            2.0 * target / (f0 + disc.sqrt())
        };
        (i as f64 * self.step + dx.clamp(0.0, self.step)).min(self.x_max())
    }
}

fn trapezoid(v: &[f64], step: f64) -> f64 {
    let n = v.len();
    step * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimDistribution {
    Exponential { mu: f64 },
    Tabulated(TabulatedDensity),
}

impl ClaimDistribution {
    pub fn exponential(mu: f64) -> Self {
        ClaimDistribution::Exponential { mu }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ClaimDistribution::Exponential { .. } => "exponential",
            ClaimDistribution::Tabulated(_) => "tabulated",
        }
    }

    pub fn exp_rate(&self) -> Option<f64> {
        match self {
            ClaimDistribution::Exponential { mu } => Some(*mu),
            ClaimDistribution::Tabulated(_) => None,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => {
                if x < 0.0 { 0.0 } else { mu * (-mu * x).exp() }
            }
            ClaimDistribution::Tabulated(t) => t.density(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => {
                if x <= 0.0 { 0.0 } else { -(-mu * x).exp_m1() }
            }
            ClaimDistribution::Tabulated(t) => t.cdf(x),
        }
    }

    /// ∫₀^x y f(y) dy.
    pub fn partial_mean(&self, x: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => {
                if x <= 0.0 {
                    0.0
                } else {
                    (1.0 - (1.0 + mu * x) * (-mu * x).exp()) / mu
                }
            }
            ClaimDistribution::Tabulated(t) => t.partial_mean(x),
        }
    }

    /// f̂(s) = ∫₀^∞ e^{-sx} f(x) dx; trapezoid on the table grid for the tabulated kind.
    pub fn laplace(&self, s: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => mu / (mu + s),
            ClaimDistribution::Tabulated(t) => {
                let h = t.step;
                let v = &t.values;
                let n = v.len();
                let decay = (-s * h).exp();
                let mut e = 1.0;
                let mut acc = 0.0;
                for (i, fi) in v.iter().enumerate() {
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    acc += w * e * fi;
                    e *= decay;
                }
                acc * h
            }
        }
    }

    /// -d/ds f̂(s) = ∫ x e^{-sx} f(x) dx.
    pub fn laplace_neg_deriv(&self, s: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => mu / ((mu + s) * (mu + s)),
            ClaimDistribution::Tabulated(t) => {
                let h = t.step;
                let n = t.values.len();
                let mut acc = 0.0;
                for (i, fi) in t.values.iter().enumerate() {
                    let x = i as f64 * h;
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    acc += w * x * (-s * x).exp() * fi;
                }
                acc * h
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => 1.0 / mu,
            ClaimDistribution::Tabulated(t) => t.mean(),
        }
    }

    /// Level beyond which the remaining claim mass is below `tol`.
    pub fn effective_support(&self, tol: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => -tol.ln() / mu,
            ClaimDistribution::Tabulated(t) => t.x_max(),
        }
    }

    pub fn max_density(&self) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => *mu,
            ClaimDistribution::Tabulated(t) => t.values.iter().cloned().fold(0.0, f64::max),
        }
    }

    /// n-fold convolution density f^{*n}(x), n ≥ 1.
    pub fn conv_power(&self, n: usize, x: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid(
                "conv_power(0, .) is the point mass at zero; special-case it",
            ));
        }
        match self {
            ClaimDistribution::Exponential { mu } => Ok(exp_conv_power(*mu, n, x)),
            ClaimDistribution::Tabulated(t) => {
                if x < 0.0 {
                    return Ok(0.0);
                }
                let h = t.step;
                let m = (x / h).ceil() as usize + 2;
                let base: Vec<f64> = (0..m).map(|i| t.density(i as f64 * h)).collect();
                let mut cur = base.clone();
                for _ in 1..n {
                    cur = trapezoid_convolve(&cur, &base, h);
                }
                let s = x / h;
                let i = (s.floor() as usize).min(m - 2);
                let w = s - i as f64;
                Ok(cur[i] * (1.0 - w) + cur[i + 1] * w)
            }
        }
    }

    /// Inverse-cdf sampling from a uniform draw u in (0, 1).
    pub fn sample_from_uniform(&self, u: f64) -> f64 {
        match self {
            ClaimDistribution::Exponential { mu } => -(-u).ln_1p() / mu,
            ClaimDistribution::Tabulated(t) => t.quantile(u),
        }
    }
}

pub(crate) fn trapezoid_convolve(f: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let n = f.len().min(g.len());
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate().skip(1) {
        let mut acc = 0.5 * (f[i] * g[0] + f[0] * g[i]);
        for j in 1..i {
            acc += f[i - j] * g[j];
        }
        *o = acc * h;
    }
    out
}

/// Erlang density μⁿ xⁿ⁻¹ e^{-μx}/(n-1)!.
pub fn exp_conv_power(mu: f64, n: usize, x: f64) -> f64 {
    assert!(n >= 1, "exp_conv_power: n = 0 is the point mass at zero");
    if x < 0.0 {
        return 0.0;
    }
    if n == 1 {
        return mu * (-mu * x).exp();
    }
    if x == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    (nf * mu.ln() + (nf - 1.0) * x.ln() - mu * x - ln_factorial(n - 1)).exp()
}

/// A parameter set that passed validation, with its claim distribution.
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    params: ModelParams,
    claims: ClaimDistribution,
    theta: f64,
}

impl ValidatedModel {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn claims(&self) -> &ClaimDistribution {
        &self.claims
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }
    pub fn c(&self) -> f64 {
        self.params.c
    }
    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }
    pub fn q(&self) -> f64 {
        self.params.q
    }
    pub fn r(&self) -> f64 {
        self.params.r
    }
    pub fn d(&self) -> f64 {
        self.params.d
    }

    /// Same model with a different delay (re-validated).
    pub fn with_d(&self, d: f64) -> Result<ValidatedModel> {
        validate(self.params.with_d(d), self.claims.clone())
    }
}

pub fn validate(params: ModelParams, dist: ClaimDistribution) -> Result<ValidatedModel> {
    let p = params;
    for (name, v) in [
        ("lambda", p.lambda),
        ("c", p.c),
        ("sigma", p.sigma),
        ("q", p.q),
        ("r", p.r),
    ] {
        if !v.is_finite() {
            return Err(ModelError::NonFinite(name).into());
        }
    }
    if p.d.is_nan() {
        return Err(ModelError::NonFinite("d").into());
    }
    if p.lambda <= 0.0 {
        return Err(ModelError::NonPositiveRate(p.lambda).into());
    }
    if p.c <= 0.0 {
        return Err(ModelError::NonPositivePremium(p.c).into());
    }
    if p.sigma < 0.0 {
        return Err(ModelError::NegativeSigma(p.sigma).into());
    }
    if p.q <= 0.0 {
        return Err(ModelError::NonPositiveDiscount(p.q).into());
    }
    if !(p.r > 0.0 && p.r <= 1.0) {
        return Err(ModelError::RNotInUnitInterval(p.r).into());
    }
    if p.d < 0.0 {
        return Err(ModelError::NegativeDelay(p.d).into());
    }
    if let ClaimDistribution::Exponential { mu } = dist {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(ModelError::InvalidDensity(format!("exponential rate must be > 0 (got {mu})")).into());
        }
    }
    let theta = p.c / (p.lambda * dist.mean()) - 1.0;
    if theta <= 0.0 {
        return Err(ModelError::NegativeLoading { theta }.into());
    }
    Ok(ValidatedModel { params, claims: dist, theta })
}
