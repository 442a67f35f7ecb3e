//! First up-crossing densities v_y(k, t) and the finite-horizon discounted
//! up-crossing transform Φ_d(y) = E[r^N e^{−qτ_y⁺}; τ_y⁺ < d] from level 0.
//!
//! Both branches rest on the Kendall identity Σ_k r^k v_y(k,t) = (y/t)·p_t(y),
//! where p_t is the claim-count-weighted density of X_t − X_0.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridmath::GridFunction;
use crate::lundberg::lundberg_root;
use crate::model::{exp_conv_power, trapezoid_convolve, ClaimDistribution, ValidatedModel};
use crate::quad::integrate;
use crate::special::ln_factorial;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpcrossTransform {
    pub y: f64,
    pub d: f64,
    pub value: f64,
    /// Largest claim count retained in the Kendall sums.
    pub truncation_k: usize,
    pub tail_bound: f64,
}

/// Convolution powers f^{*k}(s), k ≥ 1: closed form for exponential claims,
/// Richardson-extrapolated trapezoid tables otherwise.
#[derive(Debug, Clone)]
pub(crate) enum ConvPowers {
    Exp { mu: f64 },
    Table { step: f64, tables: Vec<Vec<f64>> },
}

impl ConvPowers {
    pub(crate) fn new(dist: &ClaimDistribution, k_max: usize, s_max: f64) -> Self {
        match dist {
            ClaimDistribution::Exponential { mu } => ConvPowers::Exp { mu: *mu },
            ClaimDistribution::Tabulated(t) => {
                let base = t.step();
                let s_max = s_max.max(4.0 * base);
                // fine grid has at most ~6000 nodes; coarse = 2·fine
                let mult = ((s_max / base / 6000.0).ceil() as usize).max(1);
                let hf = base * mult as f64;
                let hc = 2.0 * hf;
                let nc = (s_max / hc).ceil() as usize + 4;
                let nf = 2 * nc - 1;
                let ff: Vec<f64> = (0..nf).map(|i| dist.density(i as f64 * hf)).collect();
                let fc: Vec<f64> = (0..nc).map(|i| dist.density(i as f64 * hc)).collect();
                let mut tables = Vec::with_capacity(k_max);
                let (mut pf, mut pc) = (ff.clone(), fc.clone());
                for k in 1..=k_max.max(1) {
                    if k > 1 {
                        pf = trapezoid_convolve(&pf, &ff, hf);
                        pc = trapezoid_convolve(&pc, &fc, hc);
                    }
                    let ext: Vec<f64> = (0..nc)
                        .map(|i| if k == 1 { fc[i] } else { ((4.0 * pf[2 * i] - pc[i]) / 3.0).max(0.0) })
                        .collect();
                    tables.push(ext);
                }
                ConvPowers::Table { step: hc, tables }
            }
        }
    }

    pub(crate) fn k_max(&self) -> usize {
        match self {
            ConvPowers::Exp { .. } => usize::MAX,
            ConvPowers::Table { tables, .. } => tables.len(),
        }
    }

    fn table_value(step: f64, v: &[f64], s: f64) -> f64 {
        let n = v.len();
        let x = s / step;
        if x < 0.0 || x > (n - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(n - 2);
        let base = i.saturating_sub(1).min(n.saturating_sub(4));
        let t = x - base as f64;
        let p = &v[base..base + 4];
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        (l0 * p[0] + l1 * p[1] + l2 * p[2] + l3 * p[3]).max(0.0)
    }

    pub(crate) fn value(&self, k: usize, s: f64) -> f64 {
        match self {
            ConvPowers::Exp { mu } => exp_conv_power(*mu, k, s),
            ConvPowers::Table { step, tables } => match tables.get(k - 1) {
                Some(v) => Self::table_value(*step, v, s),
                None => 0.0,
            },
        }
    }

    /// Σ_{k≥1} e^{−λt}(λrt)^k/k! · f^{*k}(s); returns (sum, largest k used).
    pub(crate) fn kendall_sum(&self, lambda: f64, r: f64, t: f64, s: f64) -> (f64, usize) {
        if s < 0.0 || t <= 0.0 {
            return (0.0, 0);
        }
        let lrt = lambda * r * t;
        match self {
            ConvPowers::Exp { mu } => {
                if s == 0.0 {
                    return ((-lambda * t).exp() * lrt * mu, 1);
                }
                // term_{k+1}/term_k = z/(k(k+1))
                let z = lrt * mu * s;
                let km = ((((1.0 + 4.0 * z).sqrt() - 1.0) / 2.0).floor() as usize).max(1);
                let ln_t = |k: usize| {
                    let kf = k as f64;
                    -lambda * t + kf * lrt.ln() - ln_factorial(k) + kf * mu.ln() + (kf - 1.0) * s.ln()
                        - mu * s
                        - ln_factorial(k - 1)
                };
                let t0 = ln_t(km).exp();
                if t0 == 0.0 {
                    return (0.0, km);
                }
                let mut sum = t0;
                let mut term = t0;
                let mut k = km;
                loop {
                    term *= z / (k as f64 * (k + 1) as f64);
                    k += 1;
                    sum += term;
                    if term < 1e-17 * sum {
                        break;
                    }
                }
                let k_top = k;
                let mut term = t0;
                let mut k = km;
                while k > 1 {
                    term *= (k as f64 * (k - 1) as f64) / z;
                    k -= 1;
                    sum += term;
                    if term < 1e-17 * sum {
                        break;
                    }
                }
                (sum, k_top)
            }
            ConvPowers::Table { .. } => {
                let k_max = self.k_max();
                let mut w = (-lambda * t).exp();
                let mut sum = 0.0;
                let mut used = 0;
                for k in 1..=k_max {
                    w *= lrt / k as f64;
                    if w == 0.0 {
                        // underflow at small k: restart in log space
                        w = (-lambda * t + k as f64 * lrt.ln() - ln_factorial(k)).exp();
                    }
                    sum += w * self.value(k, s);
                    used = k;
                    if k as f64 > lrt && w < 1e-18 {
                        break;
                    }
                }
                (sum, used)
            }
        }
    }
}

/// Smallest K with Σ_{k>K} e^{−m} m^k/k! < tol.
pub(crate) fn poisson_cutoff(m: f64, tol: f64) -> usize {
    if m <= 0.0 {
        return 1;
    }
    let mut k = m.floor() as usize;
    loop {
        // tail above k bounded by term_{k+1}/(1 − m/(k+2))
        let kf = (k + 1) as f64;
        let ln_term = -m + kf * m.ln() - ln_factorial(k + 1);
        let ratio = m / (kf + 1.0);
        if ratio < 1.0 && ln_term.exp() / (1.0 - ratio) < tol {
            return k.max(1);
        }
        k += 1;
    }
}

fn gauss(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
}

fn check_level(y: f64) -> Result<()> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::invalid(format!("level y must be positive and finite (got {y})")));
    }
    Ok(())
}

/// v_y(k, t): density in t of the first passage above y with exactly k claims.
pub fn vy_density(model: &ValidatedModel, y: f64, k: usize, t: f64) -> Result<f64> {
    check_level(y)?;
    if !(t > 0.0) {
        return Err(Error::invalid(format!("time must be positive (got {t})")));
    }
    let (lam, c, sigma) = (model.lambda(), model.c(), model.sigma());
    let poi = (-lam * t + k as f64 * (lam * t).ln() - ln_factorial(k)).exp();
    if sigma == 0.0 {
        if k == 0 {
            return Err(Error::AtomNotDensity);
        }
        let s = c * t - y;
        if s < 0.0 {
            return Ok(0.0);
        }
        let fk = match model.claims() {
            ClaimDistribution::Exponential { mu } => exp_conv_power(*mu, k, s),
            dist => dist.conv_power(k, s)?,
        };
        return Ok(y / t * poi * fk);
    }
    let var = sigma * sigma * t;
    let m = y - c * t;
    if k == 0 {
        return Ok(y / t * poi * gauss(m, var));
    }
    let sd = var.sqrt();
    let (lo, hi) = ((-m - 8.0 * sd).max(0.0), -m + 8.0 * sd);
    if hi <= 0.0 {
        return Ok(0.0);
    }
    let powers = conv_powers_for(model, k, hi);
    let inner = integrate(|s| gauss(m + s, var) * powers.value(k, s), lo, hi, 1e-16, 1e-12, 400).value;
    Ok(y / t * poi * inner)
}

fn conv_powers_for(model: &ValidatedModel, k_max: usize, s_max: f64) -> ConvPowers {
    ConvPowers::new(model.claims(), k_max, s_max)
}

/// Reusable evaluator of Φ_d(y) for a fixed model and horizon.
pub struct UpcrossEngine<'a> {
    model: &'a ValidatedModel,
    d: f64,
    rho: f64,
    powers: ConvPowers,
    /// Time horizon beyond which the weighted Kendall mass is negligible.
    t_cap: f64,
}

impl<'a> UpcrossEngine<'a> {
    /// `y_max` bounds the levels that will be queried.
    pub fn new(model: &'a ValidatedModel, d: f64, y_max: f64) -> Result<Self> {
        if d.is_nan() || d < 0.0 {
            return Err(Error::invalid(format!("horizon d must be >= 0 (got {d})")));
        }
        let rho = lundberg_root(model)?.rho;
        let (lam, c, q, r, sigma) = (model.lambda(), model.c(), model.q(), model.r(), model.sigma());
        let mean = model.claims().mean();
        let drift = c - lam * r * mean;
        let decay = q + lam * (1.0 - r);
        // e^{-decay·t} below 1e-16, or the drift has carried the path far past y_max
        let t_decay = if decay > 0.0 { 37.0 / decay } else { f64::INFINITY };
        let spread = (sigma * sigma + lam * r * 2.0 * mean * mean).max(1e-12);
        let t_drift = {
            // (drift·t − y_max) > 12 sd(t)
            let a = drift;
            let b = 12.0 * spread.sqrt();
            let tt = (b + (b * b + 4.0 * a * y_max).sqrt()) / (2.0 * a);
            tt * tt
        };
        let t_cap = t_decay.min(t_drift.max(1.0) * 1.5 + 1.0);
        let needs_table = matches!(model.claims(), ClaimDistribution::Tabulated(_)) && d > 0.0;
        let powers = if needs_table {
            let t_hi = if d.is_finite() { d.max(0.0) } else { 0.0 }.max(if sigma > 0.0 { t_cap } else { 0.0 });
            let t_hi = if sigma > 0.0 { t_hi } else { d.min(t_cap) };
            let k_max = poisson_cutoff(lam * r * t_hi, 1e-14) + 1;
            let s_max = c * t_hi + 8.0 * sigma * t_hi.sqrt() + 1.0;
            conv_powers_for(model, k_max, s_max)
        } else {
            conv_powers_for(model, 1, 1.0)
        };
        Ok(UpcrossEngine { model, d, rho, powers, t_cap })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eval(&self, y: f64) -> Result<UpcrossTransform> {
        if y == 0.0 {
            return Ok(UpcrossTransform { y, d: self.d, value: 1.0, truncation_k: 0, tail_bound: 0.0 });
        }
        check_level(y)?;
        let d = self.d;
        if d.is_infinite() {
            return Ok(UpcrossTransform {
                y,
                d,
                value: (-self.rho * y).exp(),
                truncation_k: 0,
                tail_bound: 0.0,
            });
        }
        if d == 0.0 {
            return Ok(UpcrossTransform { y, d, value: 0.0, truncation_k: 0, tail_bound: 0.0 });
        }
        if self.model.sigma() == 0.0 {
            self.eval_sigma0(y)
        } else {
            self.eval_diffusive(y)
        }
    }

    fn eval_sigma0(&self, y: f64) -> Result<UpcrossTransform> {
        let m = self.model;
        let (lam, c, q, r) = (m.lambda(), m.c(), m.q(), m.r());
        let d = self.d;
        if y > c * d {
            return Ok(UpcrossTransform { y, d, value: 0.0, truncation_k: 0, tail_bound: 0.0 });
        }
        let atom = (-(lam + q) * y / c).exp();
        let t_end = d.min(self.t_cap.max(y / c));
        let s_end = c * t_end - y;
        let mut k_used = 0usize;
        let integrand = |s: f64| {
            let l = y + s;
            let t = l / c;
            let (g, k) = self.powers.kendall_sum(lam, r, t, s);
            k_used = k_used.max(k);
            (-q * t).exp() * (y / l) * g
        };
        let mut f = integrand;
        let res = panel_integrate(&mut f, 0.0, s_end, 1.0);
        let tail = if t_end < d { (-(q + lam * (1.0 - r)) * t_end).exp() } else { 0.0 };
        Ok(UpcrossTransform {
            y,
            d,
            value: (atom + res).clamp(0.0, 1.0),
            truncation_k: k_used,
            tail_bound: tail,
        })
    }

    /// Weighted density p_t(y) of X_t − X_0 (claims weighted by r).
    pub fn weighted_density(&self, t: f64, y: f64) -> (f64, usize) {
        let m = self.model;
        let (lam, c, r, sigma) = (m.lambda(), m.c(), m.r(), m.sigma());
        let var = sigma * sigma * t;
        let sd = var.sqrt();
        let mm = y - c * t;
        let k0 = (-lam * t).exp() * gauss(mm, var);
        let (lo, hi) = ((-mm - 8.0 * sd).max(0.0), -mm + 8.0 * sd);
        if hi <= 0.0 {
            return (k0, 0);
        }
        let mut k_used = 0;
        let inner = integrate(
            |s| {
                let (g, k) = self.powers.kendall_sum(lam, r, t, s);
                k_used = k_used.max(k);
                gauss(mm + s, var) * g
            },
            lo,
            hi,
            1e-18,
            1e-12,
            200,
        )
        .value;
        (k0 + inner, k_used)
    }

    fn eval_diffusive(&self, y: f64) -> Result<UpcrossTransform> {
        let m = self.model;
        let (lam, q, r) = (m.lambda(), m.q(), m.r());
        let d = self.d;
        let t_end = self.t_cap.max(d + 1.0);
        let mut k_used = 0;
        let mut f = |t: f64| {
            let (p, k) = self.weighted_density(t, y);
            k_used = k_used.max(k);
            (-q * t).exp() * p / t
        };
        let rem = y * panel_integrate(&mut f, d, t_end, 0.5);
        let tail = (-(q + lam * (1.0 - r)) * t_end).exp();
        let value = ((-self.rho * y).exp() - rem).clamp(0.0, 1.0);
        Ok(UpcrossTransform { y, d, value, truncation_k: k_used, tail_bound: tail })
    }
}

/// ∫_a^b with consecutive GK-adaptive panels of width `w0` doubling every
/// few panels; stops early once the running panels are negligible.
fn panel_integrate<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, w0: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    let mut lo = a;
    let mut w = w0;
    let mut quiet = 0;
    let mut n = 0;
    while lo < b {
        let hi = (lo + w).min(b);
        let v = integrate(&mut *f, lo, hi, 1e-17, 1e-12, 200).value;
        total += v;
        if v.abs() <= 1e-16 * total.abs().max(1e-300) || v == 0.0 {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        n += 1;
        if n % 4 == 0 {
            w *= 2.0;
        }
    }
    total
}

/// Φ_d on a uniform grid over [0, y_end] for σ = 0, all levels at once.
///
/// Convolution powers and the Kendall integral are evaluated by the trapezoid
/// rule on grids of step h and 2h and combined by Richardson extrapolation;
/// the result lives on the 2h grid.
pub fn upcross_grid_sigma0(model: &ValidatedModel, d: f64, y_end: f64) -> Result<GridFunction> {
    if model.sigma() != 0.0 {
        return Err(Error::invalid("upcross_grid_sigma0 requires sigma = 0"));
    }
    if !(d > 0.0) || !d.is_finite() || !(y_end > 0.0) {
        return Err(Error::invalid(format!("upcross grid needs 0 < d < inf and y_end > 0 (got d={d}, y_end={y_end})")));
    }
    let (lam, c, q, r) = (model.lambda(), model.c(), model.q(), model.r());
    let cd = c * d;
    let decay = q + lam * (1.0 - r);
    let t_neg = if decay > 0.0 { 37.0 / decay } else { f64::INFINITY };
    let y_end = y_end.min(cd);
    let s_top = cd.min(y_end + c * t_neg);
    let n2 = ((s_top / 0.02).ceil() as usize).clamp(64, 2000);
    let h2 = s_top / n2 as f64;
    let j2 = ((y_end / h2).ceil() as usize).min(n2);
    let coarse = kendall_grid(model, h2, n2, j2);
    let fine = kendall_grid(model, h2 / 2.0, 2 * n2, 2 * j2);
    let values = (0..=j2).map(|j| ((4.0 * fine[2 * j] - coarse[j]) / 3.0).clamp(0.0, 1.0)).collect();
    GridFunction::new(0.0, h2, values)
}

/// Trapezoid Kendall sums for levels y_j = j h, j ≤ j_max, with s ∈ [0, (n − j) h].
fn kendall_grid(model: &ValidatedModel, h: f64, n: usize, j_max: usize) -> Vec<f64> {
    let (lam, c, q, r) = (model.lambda(), model.c(), model.q(), model.r());
    let dist = model.claims();
    let t_max = n as f64 * h / c;
    let k_max = poisson_cutoff(lam * r * t_max, 1e-15) + 1;
    let f: Vec<f64> = (0..=n).map(|i| dist.density(i as f64 * h)).collect();
    let mut powers = Vec::with_capacity(k_max);
    powers.push(f.clone());
    for _ in 1..k_max {
        let next = trapezoid_convolve(powers.last().unwrap(), &f, h);
        powers.push(next);
    }
    // e^{−(λ+q)t}(λrt)^k/k! at t = m h / c, k = 1..k_max
    let weights: Vec<Vec<f64>> = (0..=n)
        .map(|m| {
            let t = m as f64 * h / c;
            (1..=k_max)
                .map(|k| {
                    if t == 0.0 {
                        0.0
                    } else {
                        (-(lam + q) * t + k as f64 * (lam * r * t).ln() - ln_factorial(k)).exp()
                    }
                })
                .collect()
        })
        .collect();
    (0..=j_max)
        .map(|j| {
            if j == 0 {
                return 1.0;
            }
            let y = j as f64 * h;
            let m = n - j;
            let mut acc = 0.0;
            for i in 0..=m {
                let w = &weights[j + i];
                let mut g = 0.0;
                for k in 0..k_max {
                    g += w[k] * powers[k][i];
                }
                let s = i as f64 * h;
                let term = y / (y + s) * g;
                acc += if i == 0 || i == m { 0.5 * term } else { term };
            }
            (-(lam + q) * y / c).exp() + acc * h
        })
        .collect()
}

/// Φ_d(y) = E[r^N e^{−qτ_y⁺}; τ_y⁺ < d]; `d = f64::INFINITY` gives e^{−ρy}.
pub fn upcross_transform(model: &ValidatedModel, y: f64, d: f64) -> Result<UpcrossTransform> {
    UpcrossEngine::new(model, d, y)?.eval(y)
}
