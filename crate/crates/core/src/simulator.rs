//! Monte Carlo oracle for the barrier value, h^d and the up-crossing transform.
//!
//! σ = 0 paths are simulated exactly from claim epoch to claim epoch. σ > 0
//! paths use Euler steps between exact claim epochs, with linear interpolation
//! of crossing times and an optional Brownian-bridge crossing correction.
//! Each path draws from its own ChaCha8 stream, and partial sums are reduced
//! over fixed-size chunks in path order, so results do not depend on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ValidatedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscountMode {
    /// Each dividend is weighted by e^{−qt} r^{N_t} at its payment time.
    PerPayment,
    /// The discounted dividend total is multiplied by r^N at ruin (the
    /// ruin-causing claim included).
    TerminalFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Euler step for σ > 0.
    pub dt: f64,
    /// Horizon cap; None picks e^{−q t_max} c/q = 1e−10.
    pub t_max: Option<f64>,
    pub discount_mode: DiscountMode,
    /// Brownian-bridge crossing correction for σ > 0.
    pub bridge: bool,
    /// Paths stop once their remaining contribution is bounded by this.
    pub weight_cutoff: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 100_000,
            seed: 1,
            dt: 1e-4,
            t_max: None,
            discount_mode: DiscountMode::PerPayment,
            bridge: false,
            weight_cutoff: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Mean over paths of the bound on the contribution dropped at truncation.
    pub truncation_bias_bound: f64,
    pub t_max: f64,
}

impl SimEstimate {
    /// (estimate − reference)/stderr; infinite when a zero-variance estimate misses.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.mean - reference;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff.abs() <= 1e-12 * reference.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

const CHUNK: usize = 1024;

fn check_cfg(model: &ValidatedModel, cfg: &SimConfig) -> Result<f64> {
    if cfg.n_paths == 0 {
        return Err(Error::invalid("n_paths must be >= 1"));
    }
    if model.sigma() > 0.0 && !(cfg.dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0 when sigma > 0 (got {})", cfg.dt)));
    }
    let t_max = match cfg.t_max {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(Error::invalid(format!("t_max must be > 0 (got {t})"))),
        None => (model.c() / model.q() / 1e-10).ln() / model.q(),
    };
    Ok(t_max)
}

/// (value, truncation bound) per path, aggregated deterministically.
fn run_paths<F>(cfg: &SimConfig, t_max: f64, path: F) -> SimEstimate
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64) + Sync,
{
    let n = cfg.n_paths;
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<(f64, f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let (mut s, mut s2, mut b) = (0.0, 0.0, 0.0);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let (v, bound) = path(&mut rng);
                s += v;
                s2 += v * v;
                b += bound;
            }
            (s, s2, b)
        })
        .collect();
    let (mut s, mut s2, mut b) = (0.0, 0.0, 0.0);
    for (a, a2, ab) in parts {
        s += a;
        s2 += a2;
        b += ab;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = if n > 1 { ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    SimEstimate { mean, stderr: (var / nf).sqrt(), n_paths: n, truncation_bias_bound: b / nf, t_max }
}

fn claim(model: &ValidatedModel, rng: &mut ChaCha8Rng) -> f64 {
    model.claims().sample_from_uniform(rng.random::<f64>())
}

/// ∫_{t1}^{t2} c e^{−qs} ds.
fn annuity(c: f64, q: f64, t1: f64, t2: f64) -> f64 {
    c * ((-q * t1).exp() - (-q * t2).exp()) / q
}

/// Dividend bookkeeping for the two discount modes.
struct Ledger {
    mode: DiscountMode,
    r: f64,
    weight: f64,
    total: f64,
}

impl Ledger {
    fn new(mode: DiscountMode, r: f64) -> Self {
        Ledger { mode, r, weight: 1.0, total: 0.0 }
    }
    /// `amount` is already time-discounted.
    fn pay(&mut self, amount: f64) {
        self.total += match self.mode {
            DiscountMode::PerPayment => self.weight * amount,
            DiscountMode::TerminalFactor => amount,
        };
    }
    fn on_claim(&mut self) {
        self.weight *= self.r;
    }
    fn result(&self) -> f64 {
        match self.mode {
            DiscountMode::PerPayment => self.total,
            DiscountMode::TerminalFactor => self.weight * self.total,
        }
    }
    /// Bound on what stopping now can change.
    fn remainder_bound(&self, c_over_q_disc: f64) -> f64 {
        match self.mode {
            DiscountMode::PerPayment => self.weight * c_over_q_disc,
            DiscountMode::TerminalFactor => {
                let drift = if self.r < 1.0 { self.weight * self.total } else { 0.0 };
                drift + self.weight * c_over_q_disc
            }
        }
    }
}

/// Discounted dividends of the barrier strategy at level a from x.
pub fn simulate_value(model: &ValidatedModel, a: f64, x: f64, cfg: &SimConfig) -> Result<SimEstimate> {
    let t_max = check_cfg(model, cfg)?;
    if !(a >= 0.0) {
        return Err(Error::invalid(format!("barrier must be >= 0 (got {a})")));
    }
    let cd = model.c() * model.d();
    if x < -cd || (model.d() == 0.0 && x < 0.0) {
        return Ok(SimEstimate { mean: 0.0, stderr: 0.0, n_paths: cfg.n_paths, truncation_bias_bound: 0.0, t_max });
    }
    let exp = Exp::new(model.lambda()).map_err(|e| Error::invalid(e.to_string()))?;
    let sigma = model.sigma();
    Ok(run_paths(cfg, t_max, |rng| {
        if sigma == 0.0 {
            value_path_exact(model, a, x, cfg, t_max, &exp, rng)
        } else {
            value_path_euler(model, a, x, cfg, t_max, &exp, rng)
        }
    }))
}

fn value_path_exact(
    model: &ValidatedModel,
    a: f64,
    x0: f64,
    cfg: &SimConfig,
    t_max: f64,
    exp: &Exp<f64>,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let (c, q, d) = (model.c(), model.q(), model.d());
    let mut led = Ledger::new(cfg.discount_mode, model.r());
    let mut x = x0;
    let mut t = 0.0;
    if x > a {
        led.pay(x - a);
        x = a;
    }
    // start of the current sub-zero excursion
    let mut s0 = if x < 0.0 { 0.0 } else { f64::NAN };
    loop {
        let bound = led.remainder_bound((-q * t).exp() * c / q);
        if bound < cfg.weight_cutoff || t >= t_max {
            return (led.result(), bound);
        }
        let tau = t + exp.sample(rng);
        if x < 0.0 {
            let t_rec = t + (-x) / c;
            let t_ruin = s0 + d;
            if t_ruin <= tau.min(t_rec) {
                return (led.result(), 0.0);
            }
            if tau < t_rec {
                x += c * (tau - t);
                t = tau;
            } else {
                t = t_rec;
                x = 0.0;
                s0 = f64::NAN;
                drift_up(&mut led, &mut x, &mut t, tau, a, c, q);
            }
        } else {
            drift_up(&mut led, &mut x, &mut t, tau, a, c, q);
        }
        // claim at tau
        x -= claim(model, rng);
        led.on_claim();
        if x < 0.0 {
            if d == 0.0 {
                return (led.result(), 0.0);
            }
            if s0.is_nan() {
                s0 = t;
            }
        }
    }
}

/// Drift from x ≥ 0 at time t to the claim epoch tau, paying c while at a.
fn drift_up(led: &mut Ledger, x: &mut f64, t: &mut f64, tau: f64, a: f64, c: f64, q: f64) {
    let t_hit = *t + (a - *x) / c;
    if t_hit < tau {
        led.pay(annuity(c, q, t_hit, tau));
        *x = a;
    } else {
        *x += c * (tau - *t);
    }
    *t = tau;
}

/// Probability that a Brownian bridge over a step of variance v between
/// u0 and u1, both on the same side of `level`, touches the level.
fn bridge_touch(u0: f64, u1: f64, level: f64, v: f64) -> f64 {
    (-2.0 * (u0 - level) * (u1 - level) / v).exp()
}

fn value_path_euler(
    model: &ValidatedModel,
    a: f64,
    x0: f64,
    cfg: &SimConfig,
    t_max: f64,
    exp: &Exp<f64>,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let (c, q, d, sigma) = (model.c(), model.q(), model.d(), model.sigma());
    let mut led = Ledger::new(cfg.discount_mode, model.r());
    let mut x = x0;
    let mut t = 0.0;
    if x > a {
        led.pay(x - a);
        x = a;
    }
    let mut s0 = if x < 0.0 { 0.0 } else { f64::NAN };
    let mut tau = exp.sample(rng);
    loop {
        let bound = led.remainder_bound((-q * t).exp() * c / q);
        if bound < cfg.weight_cutoff || t >= t_max {
            return (led.result(), bound);
        }
        let step = cfg.dt.min(tau - t);
        let z: f64 = rng.sample(StandardNormal);
        let var = sigma * sigma * step;
        let mut xn = x + c * step + var.sqrt() * z;
        let tn = t + step;
        if x >= 0.0 && xn < 0.0 {
            if d == 0.0 {
                return (led.result(), 0.0);
            }
            s0 = t + step * x / (x - xn);
        } else if x < 0.0 && xn >= 0.0 {
            let t_up = t + step * (-x) / (xn - x);
            if s0 + d <= t_up {
                return (led.result(), 0.0);
            }
            s0 = f64::NAN;
        } else if x < 0.0 {
            let touched = cfg.bridge && rng.random::<f64>() < bridge_touch(x, xn, 0.0, var);
            if touched {
                let t_touch = t + 0.5 * step;
                if s0 + d <= t_touch {
                    return (led.result(), 0.0);
                }
                s0 = t_touch;
            } else if s0 + d <= tn {
                return (led.result(), 0.0);
            }
        } else if cfg.bridge && d == 0.0 && rng.random::<f64>() < bridge_touch(x, xn, 0.0, var) {
            return (led.result(), 0.0);
        }
        if xn > a {
            led.pay((-q * tn).exp() * (xn - a));
            xn = a;
        }
        x = xn;
        t = tn;
        if t >= tau {
            x -= claim(model, rng);
            led.on_claim();
            if x < 0.0 {
                if d == 0.0 {
                    return (led.result(), 0.0);
                }
                if s0.is_nan() {
                    s0 = t;
                }
            }
            tau = t + exp.sample(rng);
        }
    }
}

/// h^d(x) = E_x[r^N e^{−qτ_a⁺}; τ_a⁺ < Parisian ruin].
pub fn simulate_h(model: &ValidatedModel, a: f64, x: f64, cfg: &SimConfig) -> Result<SimEstimate> {
    let t_max = check_cfg(model, cfg)?;
    let cd = model.c() * model.d();
    if !(x <= a) {
        return Err(Error::invalid(format!("simulate_h needs x <= a (got x={x}, a={a})")));
    }
    let zero = SimEstimate { mean: 0.0, stderr: 0.0, n_paths: cfg.n_paths, truncation_bias_bound: 0.0, t_max };
    if x < -cd || (model.d() == 0.0 && x < 0.0) {
        return Ok(zero);
    }
    if x == a {
        return Ok(SimEstimate { mean: 1.0, ..zero });
    }
    let exp = Exp::new(model.lambda()).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(run_paths(cfg, t_max, |rng| hit_path(model, x, a, true, f64::INFINITY, cfg, t_max, &exp, rng)))
}

/// Φ_d(y) = E_0[r^N e^{−qτ_y⁺}; τ_y⁺ < d].
pub fn simulate_upcross(model: &ValidatedModel, y: f64, d: f64, cfg: &SimConfig) -> Result<SimEstimate> {
    let t_max = check_cfg(model, cfg)?;
    if !(y > 0.0) {
        return Err(Error::invalid(format!("level y must be > 0 (got {y})")));
    }
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("d must be >= 0 (got {d})")));
    }
    let exp = Exp::new(model.lambda()).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(run_paths(cfg, t_max, |rng| hit_path(model, 0.0, y, false, d, cfg, t_max, &exp, rng)))
}

/// Weighted first passage to `level` from x0. With `parisian` the path is
/// killed by Parisian ruin; `horizon` kills it at a fixed time.
#[allow(clippy::too_many_arguments)]
fn hit_path(
    model: &ValidatedModel,
    x0: f64,
    level: f64,
    parisian: bool,
    horizon: f64,
    cfg: &SimConfig,
    t_max: f64,
    exp: &Exp<f64>,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let (c, q, r, d, sigma) = (model.c(), model.q(), model.r(), model.d(), model.sigma());
    let t_end = horizon.min(t_max);
    let mut x = x0;
    let mut t = 0.0;
    let mut w = 1.0;
    let mut s0 = if x < 0.0 { 0.0 } else { f64::NAN };
    let mut tau = exp.sample(rng);
    loop {
        let bound = w * (-q * t).exp();
        if bound < cfg.weight_cutoff {
            return (0.0, bound);
        }
        if t >= t_end {
            return (0.0, if horizon <= t_max { 0.0 } else { bound });
        }
        if sigma == 0.0 {
            let t_stop = tau.min(t_end);
            if parisian && x < 0.0 {
                let t_rec = t + (-x) / c;
                if s0 + d <= t_stop.min(t_rec) {
                    return (0.0, 0.0);
                }
                if t_rec <= t_stop {
                    s0 = f64::NAN;
                }
            }
            let t_hit = t + (level - x) / c;
            if t_hit <= t_stop {
                return (w * (-q * t_hit).exp(), 0.0);
            }
            x += c * (t_stop - t);
            t = t_stop;
        } else {
            let step = cfg.dt.min(tau - t).min(t_end - t);
            let var = sigma * sigma * step;
            let z: f64 = rng.sample(StandardNormal);
            let xn = x + c * step + var.sqrt() * z;
            let tn = t + step;
            if xn >= level {
                let t_hit = t + step * (level - x) / (xn - x);
                return (w * (-q * t_hit).exp(), 0.0);
            }
            if cfg.bridge && rng.random::<f64>() < bridge_touch(x, xn, level, var) {
                return (w * (-q * (t + 0.5 * step)).exp(), 0.0);
            }
            if parisian {
                if x >= 0.0 && xn < 0.0 {
                    if d == 0.0 {
                        return (0.0, 0.0);
                    }
                    s0 = t + step * x / (x - xn);
                } else if x < 0.0 && xn >= 0.0 {
                    let t_up = t + step * (-x) / (xn - x);
                    if s0 + d <= t_up {
                        return (0.0, 0.0);
                    }
                    s0 = f64::NAN;
                } else if x < 0.0 {
                    let touched = cfg.bridge && rng.random::<f64>() < bridge_touch(x, xn, 0.0, var);
                    if touched {
                        let t_touch = t + 0.5 * step;
                        if s0 + d <= t_touch {
                            return (0.0, 0.0);
                        }
                        s0 = t_touch;
                    } else if s0 + d <= tn {
                        return (0.0, 0.0);
                    }
                } else if cfg.bridge && d == 0.0 && rng.random::<f64>() < bridge_touch(x, xn, 0.0, var) {
                    return (0.0, 0.0);
                }
            }
            x = xn;
            t = tn;
        }
        if t >= tau {
            x -= claim(model, rng);
            w *= r;
            if parisian && x < 0.0 {
                if d == 0.0 {
                    return (0.0, 0.0);
                }
                if s0.is_nan() {
                    s0 = t;
                }
            }
            tau = t + exp.sample(rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ClaimDistribution, ModelParams};

    fn model(d: f64) -> ValidatedModel {
        validate(ModelParams::example(d), ClaimDistribution::exponential(1.0)).unwrap()
    }

    fn cfg(n: usize, mode: DiscountMode) -> SimConfig {
        SimConfig { n_paths: n, seed: 7, discount_mode: mode, ..SimConfig::default() }
    }

    #[test]
    fn renewal_semantics() {
        let m = model(0.0);
        let pp = simulate_value(&m, 0.0, 0.0, &cfg(40_000, DiscountMode::PerPayment)).unwrap();
        assert!(pp.z_score(15.0 / 10.1).abs() < 4.0, "{pp:?}");
        let tf = simulate_value(&m, 0.0, 0.0, &cfg(40_000, DiscountMode::TerminalFactor)).unwrap();
        assert!(tf.z_score(0.8 * 15.0 / 10.1).abs() < 4.0, "{tf:?}");
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let m = model(2.0);
        let c = cfg(3000, DiscountMode::PerPayment);
        let a = simulate_value(&m, 0.5, 0.2, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_value(&m, 0.5, 0.2, &c).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn h_at_barrier_is_one() {
        let e = simulate_h(&model(2.0), 0.5, 0.5, &cfg(10, DiscountMode::PerPayment)).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn unreachable_upcross_is_zero() {
        let e = simulate_upcross(&model(0.0), 40.0, 2.0, &cfg(500, DiscountMode::PerPayment)).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn pure_annuity() {
        let mut p = ModelParams::example(0.0).with_r(1.0);
        p.lambda = 1e-6;
        let m = validate(p, ClaimDistribution::exponential(1.0)).unwrap();
        let e = simulate_value(&m, 0.3, 0.3, &cfg(200, DiscountMode::PerPayment)).unwrap();
        assert!((e.mean - 150.0).abs() < 3.0 * e.stderr + 1e-6, "{e:?}");
    }

    #[test]
    fn terminal_factor_smaller() {
        let m = model(0.0);
        let a = simulate_value(&m, 0.5, 0.3, &cfg(5000, DiscountMode::PerPayment)).unwrap();
        let b = simulate_value(&m, 0.5, 0.3, &cfg(5000, DiscountMode::TerminalFactor)).unwrap();
        assert!(b.mean < a.mean);
    }
}
