//! The two-sided exit function h^d(x) = ξ(x)/ξ(a) and the auxiliary w_d.
//!
//! ξ is the solution of the integro-differential equation
//!   σ²/2 ξ'' + c ξ' − (λ+q) ξ + λr (f*ξ)(x) + λr w_d(x) ξ(0) = 0,  x ≥ 0,
//! normalised by ξ(0) = 1 (ξ'(0) = 1 when σ > 0 and d = 0, where h(0) = 0).
//! It does not depend on the barrier, so it is built once on [0, extent].

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expmodel::{u_of_d, ExpClosedForms};
use crate::firstpassage::{upcross_grid_sigma0, UpcrossEngine};
use crate::gridmath::{derivative, dickson_density, exp_kernel_convolve, grid_intervals, volterra_march, GridFunction};
use crate::lundberg::lundberg_root;
use crate::model::{ClaimDistribution, ValidatedModel};
use crate::quad::integrate;

/// w_d(x) = ∫₀^{cd} Φ_d(y) f(x+y) dy on a grid over [0, hi] (h vanishes below −cd).
#[derive(Debug, Clone, Serialize)]
pub struct WdFunction {
    pub grid: GridFunction,
}

impl WdFunction {
    pub fn build(model: &ValidatedModel, hi: f64, step: f64) -> Result<Self> {
        let d = model.d();
        let n = grid_intervals(0.0, hi, step)?;
        if d == 0.0 {
            return Ok(WdFunction { grid: GridFunction::new(0.0, step, vec![0.0; n + 1])? });
        }
        let dist = model.claims();
        if d.is_infinite() {
            let rho = lundberg_root(model)?.rho;
            return Ok(WdFunction { grid: dickson_density(rho, dist, hi, step)? });
        }
        if let ClaimDistribution::Exponential { mu } = dist {
            let u = exp_w_factor(model, *mu)?;
            return Ok(WdFunction { grid: GridFunction::from_fn(0.0, hi, step, |x| u * (-mu * x).exp())? });
        }
        let (ys, wts, phi) = tabulate_upcross(model)?;
        let values: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|i| {
                let x = i as f64 * step;
                let mut acc = 0.0;
                for j in 0..ys.len() {
                    acc += wts[j] * phi[j] * dist.density(x + ys[j]);
                }
                acc
            })
            .collect();
        Ok(WdFunction { grid: GridFunction::new(0.0, step, values)? })
    }

    /// Value at x, cubic between nodes; exact zero beyond the grid is not
    /// assumed, so callers must build the grid wide enough.
    pub fn eval(&self, x: f64) -> f64 {
        self.grid.eval_cubic(x)
    }

    fn resample(&self, hi: f64, step: f64) -> Result<GridFunction> {
        GridFunction::from_fn(0.0, hi, step, |x| self.grid.eval_cubic(x))
    }
}

/// ∫ μe^{−μy} Φ_d(y) dy, so that w_d(x) = e^{−μx} times this factor.
fn exp_w_factor(model: &ValidatedModel, mu: f64) -> Result<f64> {
    if model.sigma() == 0.0 {
        return u_of_d(model, model.d());
    }
    let y_max = (38.0 / mu).min(model.c() * model.d());
    let eng = UpcrossEngine::new(model, model.d(), y_max)?;
    let mut err = None;
    let v = integrate(
        |y| match eng.eval(y) {
            Ok(t) => mu * (-mu * y).exp() * t.value,
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        0.0,
        y_max,
        1e-13,
        1e-11,
        400,
    )
    .value;
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Φ_d on the quadrature nodes of the claim-table grid (trapezoid weights).
/// For σ = 0 the range stops at cd, where Φ_d drops to 0.
fn tabulate_upcross(model: &ValidatedModel) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let dist = model.claims();
    let hf = match dist {
        ClaimDistribution::Tabulated(t) => t.step(),
        ClaimDistribution::Exponential { mu } => 1e-3 / mu,
    };
    // Φ_d(y) ≤ e^{−ρy}, so levels with e^{−ρy}(1 − F(y)) negligible are dropped
    let rho = lundberg_root(model)?.rho;
    let mut y_end = dist.effective_support(1e-14);
    let mut y = 0.0;
    while y < y_end && (-rho * y).exp() * (1.0 - dist.cdf(y)) > 1e-14 {
        y += 0.25;
    }
    y_end = y_end.min(y.max(1.0)).min(model.c() * model.d());
    // coarse nodes for Φ, then cubic interpolation onto the fine quadrature grid
    let coarse = if model.sigma() == 0.0 {
        upcross_grid_sigma0(model, model.d(), y_end)?
    } else {
        let nc = ((y_end / 0.02).ceil() as usize).max(8);
        let hc = y_end / nc as f64;
        let eng = UpcrossEngine::new(model, model.d(), y_end)?;
        let vals: Vec<Result<f64>> = (0..=nc).into_par_iter().map(|j| eng.eval(j as f64 * hc).map(|t| t.value)).collect();
        GridFunction::new(0.0, hc, vals.into_iter().collect::<Result<Vec<_>>>()?)?
    };
    let nf = ((y_end / hf).ceil() as usize).clamp(1, 40_000);
    let h = y_end / nf as f64;
    let ys: Vec<f64> = (0..=nf).map(|j| j as f64 * h).collect();
    let wts: Vec<f64> = (0..=nf).map(|j| if j == 0 || j == nf { 0.5 * h } else { h }).collect();
    let phi: Vec<f64> = ys.iter().map(|&y| coarse.eval_cubic(y).clamp(0.0, 1.0)).collect();
    Ok((ys, wts, phi))
}

/// Pointwise w_d(x) for x ≥ 0.
pub fn w_d(model: &ValidatedModel, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("w_d: x must be >= 0 (got {x})")));
    }
    let d = model.d();
    if d == 0.0 {
        return Ok(0.0);
    }
    let dist = model.claims();
    if let ClaimDistribution::Exponential { mu } = dist {
        if d.is_infinite() {
            let rho = lundberg_root(model)?.rho;
            return Ok(mu / (rho + mu) * (-mu * x).exp());
        }
        return Ok(exp_w_factor(model, *mu)? * (-mu * x).exp());
    }
    if d.is_infinite() {
        let rho = lundberg_root(model)?.rho;
        let hi = dist.effective_support(1e-14);
        return Ok(integrate(|y| (-rho * y).exp() * dist.density(x + y), 0.0, hi, 1e-14, 1e-12, 2000).value);
    }
    let (ys, wts, phi) = tabulate_upcross(model)?;
    Ok((0..ys.len()).map(|j| wts[j] * phi[j] * dist.density(x + ys[j])).sum())
}

/// Construction knobs for ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HOptions {
    pub step: f64,
    /// ξ is built on [0, extent]; must cover every barrier and level of interest.
    pub extent: f64,
    /// Use the grid solver even where a closed form exists.
    pub force_numeric: bool,
}

impl Default for HOptions {
    fn default() -> Self {
        HOptions { step: 1e-3, extent: 12.0, force_numeric: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HMethod {
    ClosedForm,
    Volterra,
}

/// ξ on [0, extent] with its derivatives, normalised at the barrier a.
#[derive(Debug, Clone)]
pub struct HFunction {
    model: ValidatedModel,
    xi: GridFunction,
    xi1: GridFunction,
    xi2: GridFunction,
    w: WdFunction,
    a: f64,
    xi_a: f64,
    xi_prime_zero: Option<f64>,
    /// Φ_d(step): the continuation ratio h(−step)/h(0).
    cont_step: f64,
    residual: GridFunction,
    /// Residual profiles of ξ₀ and ξ₁ (σ > 0 shooting).
    shoot: Option<(GridFunction, GridFunction)>,
    method: HMethod,
}

impl HFunction {
    /// Builds ξ for the model (σ = 0 or σ > 0) and normalises at `a`.
    pub fn build(model: &ValidatedModel, a: f64, opts: HOptions) -> Result<Self> {
        if model.sigma() == 0.0 {
            h_d_sigma0(model, a, opts)
        } else {
            h_d_sigma_pos(model, a, opts)
        }
    }

    /// Same ξ, normalised at a different barrier.
    pub fn at_barrier(&self, a: f64) -> Result<Self> {
        if !(a >= 0.0) || a > self.xi.hi + 1e-12 {
            return Err(Error::invalid(format!("barrier {a} outside the constructed range [0, {}]", self.xi.hi)));
        }
        let xi_a = self.xi.eval_cubic(a);
        if !(xi_a > 0.0) {
            return Err(Error::Degenerate(format!("ξ(a) = {xi_a} is not positive at a = {a}")));
        }
        Ok(HFunction { a, xi_a, ..self.clone() })
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn step(&self) -> f64 {
        self.xi.step
    }
    pub fn extent(&self) -> f64 {
        self.xi.hi
    }
    pub fn method(&self) -> HMethod {
        self.method
    }
    /// Φ_d(step), the continuation ratio used by the x = 0 stencil.
    pub fn continuation_step(&self) -> f64 {
        self.cont_step
    }
    /// ξ'(0) of the unnormalised solution (σ > 0 only).
    pub fn xi_prime_zero(&self) -> Option<f64> {
        self.xi_prime_zero
    }
    pub fn wd(&self) -> &WdFunction {
        &self.w
    }
    /// Unnormalised ξ, ξ', ξ'' on [0, extent].
    pub fn xi_grids(&self) -> (&GridFunction, &GridFunction, &GridFunction) {
        (&self.xi, &self.xi1, &self.xi2)
    }
    pub fn xi(&self, x: f64) -> f64 {
        self.xi.eval_cubic(x)
    }
    pub fn xi_d1(&self, x: f64) -> f64 {
        self.xi1.eval_cubic(x)
    }
    pub fn xi_d2(&self, x: f64) -> f64 {
        self.xi2.eval_cubic(x)
    }

    /// h^d(x) for x ∈ [0, extent]; 0 below −cd; h(0)·Φ_d(−x) in between.
    pub fn h(&self, x: f64) -> Result<f64> {
        if x >= 0.0 {
            return Ok(self.xi(x) / self.xi_a);
        }
        let cd = self.model.c() * self.model.d();
        if x < -cd {
            return Ok(0.0);
        }
        let phi = UpcrossEngine::new(&self.model, self.model.d(), -x)?.eval(-x)?.value;
        Ok(self.xi.values[0] / self.xi_a * phi)
    }
    pub fn hp(&self, x: f64) -> f64 {
        self.xi_d1(x) / self.xi_a
    }
    pub fn hpp(&self, x: f64) -> f64 {
        self.xi_d2(x) / self.xi_a
    }

    /// Grid nodes in [0, a]; the last node is a when a lies on the grid.
    fn upto_a(&self, g: &GridFunction) -> Result<GridFunction> {
        let n = ((self.a / self.xi.step + 1e-9).floor() as usize).min(g.len() - 1);
        let vals: Vec<f64> = g.values[..=n].iter().map(|v| v / self.xi_a).collect();
        GridFunction::new(0.0, self.xi.step, vals)
    }
    /// h^d on the grid nodes in [0, a].
    pub fn grid(&self) -> Result<GridFunction> {
        let mut g = self.upto_a(&self.xi)?;
        let n = g.len() - 1;
        if (g.x(n) - self.a).abs() <= 1e-9 * self.xi.step {
            g.values[n] = 1.0;
        }
        Ok(g)
    }
    pub fn hp_grid(&self) -> Result<GridFunction> {
        self.upto_a(&self.xi1)
    }
    pub fn hpp_grid(&self) -> Result<GridFunction> {
        self.upto_a(&self.xi2)
    }

    /// Rows (x, h, h', h'') on the grid nodes in [0, a], closed by x = a.
    pub fn curve(&self) -> Result<Vec<[f64; 4]>> {
        let (g, g1, g2) = (self.grid()?, self.hp_grid()?, self.hpp_grid()?);
        let mut rows: Vec<[f64; 4]> = (0..g.len()).map(|i| [g.x(i), g.values[i], g1.values[i], g2.values[i]]).collect();
        let last = rows[rows.len() - 1][0];
        if self.a - last > 1e-9 * self.xi.step {
            rows.push([self.a, 1.0, self.hp(self.a), self.hpp(self.a)]);
        }
        Ok(rows)
    }

    /// IDE residual profile of ξ (unnormalised) on [0, extent].
    pub fn residual_profile(&self) -> &GridFunction {
        &self.residual
    }

    /// sup |residual of h| over the grid on (0, a]; includes x = 0 when σ > 0.
    pub fn ide_residual(&self) -> f64 {
        let i_a = ((self.a / self.xi.step).round() as usize).min(self.residual.len() - 1);
        let start = if self.model.sigma() > 0.0 { 0 } else { 1 };
        let mut worst: f64 = 0.0;
        for i in start..=i_a.max(start) {
            worst = worst.max(self.residual.values[i].abs());
        }
        worst / self.xi_a
    }
}

/// sup-norm IDE residual of a constructed h on its barrier interval.
pub fn ide_residual(_model: &ValidatedModel, h: &HFunction) -> f64 {
    h.ide_residual()
}

fn check_build_args(model: &ValidatedModel, a: f64, opts: &HOptions) -> Result<()> {
    if !(opts.step > 0.0) || !(opts.extent > 0.0) || opts.extent < 8.0 * opts.step {
        return Err(Error::invalid(format!("bad h grid: step {} extent {}", opts.step, opts.extent)));
    }
    if !(a >= 0.0) || a > opts.extent {
        return Err(Error::invalid(format!("barrier a = {a} outside [0, extent = {}]", opts.extent)));
    }
    if model.sigma() > 0.0 && model.d() == 0.0 && a == 0.0 {
        return Err(Error::Degenerate("with sigma > 0 and d = 0, h(0) = 0: a barrier at 0 is degenerate".into()));
    }
    Ok(())
}

fn grid_extent(opts: &HOptions) -> f64 {
    (opts.extent / opts.step).round() * opts.step
}

/// Solution at steps h and h/2 combined by Richardson extrapolation at the coarse nodes.
fn richardson(coarse: &GridFunction, fine: &GridFunction) -> GridFunction {
    let values = (0..coarse.len()).map(|i| (4.0 * fine.values[2 * i] - coarse.values[i]) / 3.0).collect();
    GridFunction { values, ..coarse.clone() }
}

fn triple(xi: GridFunction) -> Result<[GridFunction; 3]> {
    let d1 = derivative(&xi, 1)?;
    let d2 = derivative(&xi, 2)?;
    Ok([xi, d1, d2])
}

fn richardson_triple(coarse: [GridFunction; 3], fine: [GridFunction; 3]) -> [GridFunction; 3] {
    [richardson(&coarse[0], &fine[0]), richardson(&coarse[1], &fine[1]), richardson(&coarse[2], &fine[2])]
}

/// σ = 0: ξ = φ₀ + (λr/c) T_ρf * ξ with φ₀ = ζ − (λr/c) ζ*w_d, ζ = e^{ρx}.
pub fn h_d_sigma0(model: &ValidatedModel, a: f64, opts: HOptions) -> Result<HFunction> {
    if model.sigma() != 0.0 {
        return Err(Error::invalid("h_d_sigma0 requires sigma = 0"));
    }
    check_build_args(model, a, &opts)?;
    let hi = grid_extent(&opts);
    let step = opts.step;
    let rho = lundberg_root(model)?.rho;
    let d = model.d();
    let (lam, c, r) = (model.lambda(), model.c(), model.r());
    let w = WdFunction::build(model, hi, step)?;

    let closed = !opts.force_numeric && (d.is_infinite() || model.claims().exp_rate().is_some());
    let (grids, method) = if closed && d.is_infinite() {
        let f = |k: f64| GridFunction::from_fn(0.0, hi, step, |x| k * (rho * x).exp());
        ([f(1.0)?, f(rho)?, f(rho * rho)?], HMethod::ClosedForm)
    } else if closed {
        let forms = ExpClosedForms::new(model)?;
        let all: Vec<[f64; 3]> = (0..=grid_intervals(0.0, hi, step)?)
            .into_par_iter()
            .map(|i| forms.xi_all(i as f64 * step))
            .collect();
        let g = |j: usize| GridFunction::new(0.0, step, all.iter().map(|v| v[j]).collect());
        ([g(0)?, g(1)?, g(2)?], HMethod::ClosedForm)
    } else {
        let coeff = lam * r / c;
        let solve = |hh: f64| -> Result<[GridFunction; 3]> {
            let wg = w.resample(hi, hh)?;
            let kernel = dickson_density(rho, model.claims(), hi, hh)?;
            let zw = exp_kernel_convolve(-rho, &wg);
            let forcing = GridFunction::from_fn(0.0, hi, hh, |x| (rho * x).exp())?.axpy(-coeff, &zw)?;
            triple(volterra_march(&kernel, &forcing, coeff)?)
        };
        (richardson_triple(solve(step)?, solve(step / 2.0)?), HMethod::Volterra)
    };
    let [xi, xi1, xi2] = grids;
    finish(model, a, xi, xi1, xi2, w, None, 1.0, None, method)
}

/// σ > 0: ξ = φ + κ₂ (β*T_ρf) * ξ with κ₂ = 2λr/σ², β = e^{−κx}, κ = ρ + 2c/σ² and
/// φ = β + (κ + ξ'(0)) ζ*β − κ₂ ζ*β*w_d. ξ is affine in ξ'(0), which is shot.
pub fn h_d_sigma_pos(model: &ValidatedModel, a: f64, opts: HOptions) -> Result<HFunction> {
    if !(model.sigma() > 0.0) {
        return Err(Error::invalid("h_d_sigma_pos requires sigma > 0"));
    }
    check_build_args(model, a, &opts)?;
    let hi = grid_extent(&opts);
    let step = opts.step;
    let rho = lundberg_root(model)?.rho;
    let d = model.d();
    let w = WdFunction::build(model, hi, step)?;

    if d.is_infinite() && !opts.force_numeric {
        let f = |k: f64| GridFunction::from_fn(0.0, hi, step, |x| k * (rho * x).exp());
        let cont = (-rho * step).exp();
        return finish(model, a, f(1.0)?, f(rho)?, f(rho * rho)?, w, Some(rho), cont, None, HMethod::ClosedForm);
    }

    let (lam, c, r, s2) = (model.lambda(), model.c(), model.r(), model.sigma() * model.sigma());
    let kappa = rho + 2.0 * c / s2;
    let k2 = 2.0 * lam * r / s2;
    // ζ*β = (e^{ρx} − e^{−κx})/(ρ+κ)
    let zb = |x: f64| ((rho * x).exp() - (-kappa * x).exp()) / (rho + kappa);
    let solve = |hh: f64| -> Result<([GridFunction; 3], [GridFunction; 3])> {
        let wg = w.resample(hi, hh)?;
        let tf = dickson_density(rho, model.claims(), hi, hh)?;
        let kernel = exp_kernel_convolve(kappa, &tf);
        let zbw = exp_kernel_convolve(kappa, &exp_kernel_convolve(-rho, &wg));
        let phi1 = GridFunction::from_fn(0.0, hi, hh, zb)?;
        let phi0 = GridFunction::from_fn(0.0, hi, hh, |x| (-kappa * x).exp() + kappa * zb(x))?.axpy(-k2, &zbw)?;
        let x0 = triple(volterra_march(&kernel, &phi0, k2)?)?;
        let x1 = triple(volterra_march(&kernel, &phi1, k2)?)?;
        Ok((x0, x1))
    };
    let (c0, c1) = solve(step)?;
    let (f0, f1) = solve(step / 2.0)?;
    let [a0, a1, a2] = richardson_triple(c0, f0);
    let [b0, b1, b2] = richardson_triple(c1, f1);

    if d == 0.0 {
        // h(0) = 0: ξ(0) = 0, ξ'(0) = 1, which is exactly the second solution.
        return finish(model, a, b0, b1, b2, w, Some(1.0), 0.0, None, HMethod::Volterra);
    }

    let cont = UpcrossEngine::new(model, d, step)?.eval(step)?.value;
    let r0 = residual_grid(model, &a0, &a1, &a2, &w.grid, a0.values[0], cont);
    let r1 = residual_grid(model, &b0, &b1, &b2, &w.grid, 0.0, 0.0);
    let p = shoot_on_profiles(&r0, &r1, 1e-4, rho, kappa)?;
    let xi = a0.axpy(p, &b0)?;
    let xi1 = a1.axpy(p, &b1)?;
    let xi2 = a2.axpy(p, &b2)?;
    finish(model, a, xi, xi1, xi2, w, Some(p), cont, Some((r0, r1)), HMethod::Volterra)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &ValidatedModel,
    a: f64,
    xi: GridFunction,
    xi1: GridFunction,
    xi2: GridFunction,
    w: WdFunction,
    xi_prime_zero: Option<f64>,
    cont_step: f64,
    shoot: Option<(GridFunction, GridFunction)>,
    method: HMethod,
) -> Result<HFunction> {
    let residual = residual_grid(model, &xi, &xi1, &xi2, &w.grid, xi.values[0], cont_step);
    let base = HFunction {
        model: model.clone(),
        xi,
        xi1,
        xi2,
        w,
        a: 0.0,
        xi_a: 1.0,
        xi_prime_zero,
        cont_step,
        residual,
        shoot,
        method,
    };
    base.at_barrier(a)
}

/// Residual of the IDE on each node. At x = 0 with σ > 0 the central stencils
/// use the continuation value ξ(−h) = ξ(0)·Φ_d(h) (`cont` is Φ_d(h)).
fn residual_grid(
    model: &ValidatedModel,
    xi: &GridFunction,
    xi1: &GridFunction,
    xi2: &GridFunction,
    w: &GridFunction,
    xi0: f64,
    cont: f64,
) -> GridFunction {
    let (lam, c, q, r, sigma) = (model.lambda(), model.c(), model.q(), model.r(), model.sigma());
    let s2h = 0.5 * sigma * sigma;
    let conv = claim_convolution(model.claims(), xi, xi1);
    let h = xi.step;
    let mut out: Vec<f64> = (0..xi.len())
        .map(|i| {
            s2h * xi2.values[i] + c * xi1.values[i] - (lam + q) * xi.values[i]
                + lam * r * (conv[i] + w.values[i] * xi0)
        })
        .collect();
    if sigma > 0.0 && xi.len() > 1 {
        let (v0, v1, vm) = (xi.values[0], xi.values[1], xi0 * cont);
        let d2 = (v1 - 2.0 * v0 + vm) / (h * h);
        let d1 = (v1 - vm) / (2.0 * h);
        out[0] = s2h * d2 + c * d1 - (lam + q) * v0 + lam * r * w.values[0] * xi0;
    }
    GridFunction { values: out, ..xi.clone() }
}

fn density_slope(dist: &ClaimDistribution, x: f64) -> f64 {
    match dist {
        ClaimDistribution::Exponential { mu } => -mu * dist.density(x),
        ClaimDistribution::Tabulated(t) => {
            let e = t.step();
            if x < e {
                (dist.density(x + e) - dist.density(x)) / e
            } else {
                (dist.density(x + e) - dist.density(x - e)) / (2.0 * e)
            }
        }
    }
}

/// (f*ξ)(x_i) = ∫₀^{x_i} ξ(x_i − y) f(y) dy by the trapezoid rule with the
/// Euler-Maclaurin end correction.
pub(crate) fn claim_convolution(dist: &ClaimDistribution, xi: &GridFunction, xi1: &GridFunction) -> Vec<f64> {
    let h = xi.step;
    let n = xi.len();
    let f: Vec<f64> = (0..n).map(|i| dist.density(i as f64 * h)).collect();
    let fp: Vec<f64> = (0..n).map(|i| density_slope(dist, i as f64 * h)).collect();
    let v = &xi.values;
    let v1 = &xi1.values;
    (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            let mut acc = 0.5 * (v[i] * f[0] + v[0] * f[i]);
            for j in 1..i {
                acc += v[i - j] * f[j];
            }
            let g0 = -v1[i] * f[0] + v[i] * fp[0];
            let gx = -v1[0] * f[i] + v[0] * fp[i];
            acc * h - h * h / 12.0 * (gx - g0)
        })
        .collect()
}

/// Golden-section minimisation of sup_i |r0_i + p r1_i| over the grid.
fn shoot_on_profiles(r0: &GridFunction, r1: &GridFunction, tol: f64, rho: f64, kappa: f64) -> Result<f64> {
    let obj = |p: f64| sup_affine(r0, r1, p);
    let (mut lo, mut hi_p) = (0.0, 2.0 * (rho + kappa) + 1.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi_p - g * (hi_p - lo);
    let mut x2 = lo + g * (hi_p - lo);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..200 {
        if hi_p - lo < 1e-14 * (1.0 + hi_p.abs()) {
            break;
        }
        if f1 <= f2 {
            hi_p = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi_p - g * (hi_p - lo);
            f1 = obj(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi_p - lo);
            f2 = obj(x2);
        }
    }
    let p = 0.5 * (lo + hi_p);
    let floor = obj(p);
    if floor > tol {
        return Err(Error::NonConvergence {
            what: "shoot_xi_prime_zero",
            detail: format!("residual floor {floor:.3e} above tolerance {tol:.1e} at xi'(0) = {p}"),
        });
    }
    Ok(p)
}

/// ξ'(0) for σ > 0, selected by residual-minimising shooting.
pub fn shoot_xi_prime_zero(model: &ValidatedModel, a: f64) -> Result<f64> {
    let opts = HOptions { extent: (a + 2.0).max(4.0), ..HOptions::default() };
    let h = h_d_sigma_pos(model, a, opts)?;
    h.xi_prime_zero().ok_or_else(|| Error::Degenerate("no shooting parameter".into()))
}

/// Shooting objective sup_x |IDE residual| of ξ₀ + p ξ₁ over [0, extent].
pub fn shooting_objective(h: &HFunction, p: f64) -> Result<f64> {
    let (r0, r1) = h
        .shoot
        .as_ref()
        .ok_or_else(|| Error::invalid("shooting objective needs sigma > 0 and 0 < d < inf"))?;
    Ok(sup_affine(r0, r1, p))
}

fn sup_affine(r0: &GridFunction, r1: &GridFunction, p: f64) -> f64 {
    r0.values.iter().zip(&r1.values).fold(0.0f64, |m, (a, b)| m.max((a + p * b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, ModelParams, TabulatedDensity};

    fn model(d: f64, sigma: f64) -> ValidatedModel {
        validate(ModelParams::example(d).with_sigma(sigma), ClaimDistribution::exponential(1.0)).unwrap()
    }

    fn tab_model(d: f64) -> ValidatedModel {
        let t = TabulatedDensity::from_fn(1e-3, 40.0, |x| (-x).exp()).unwrap();
        validate(ModelParams::example(d), ClaimDistribution::Tabulated(t)).unwrap()
    }

    fn numeric(extent: f64) -> HOptions {
        HOptions { extent, force_numeric: true, ..HOptions::default() }
    }

    #[test]
    fn normalised_at_barrier() {
        let h = HFunction::build(&model(2.0, 0.0), 0.8, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
        assert!((h.h(0.8).unwrap() - 1.0).abs() < 1e-14);
        let g = h.grid().unwrap();
        assert_eq!(*g.values.last().unwrap(), 1.0);
        assert!(g.values.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn sigma0_numeric_matches_vartheta() {
        let m = model(0.0, 0.0);
        let forms = ExpClosedForms::new(&m).unwrap();
        let h = h_d_sigma0(&m, 1.0, numeric(3.0)).unwrap();
        assert_eq!(h.method(), HMethod::Volterra);
        let xa = forms.vartheta(1.0);
        for i in 0..=100 {
            let x = i as f64 * 0.01;
            let e = (h.h(x).unwrap() - forms.vartheta(x) / xa).abs();
            assert!(e < 1e-8, "x={x} err={e}");
        }
    }

    #[test]
    fn sigma0_numeric_matches_varrho() {
        let m = model(2.0, 0.0);
        let forms = ExpClosedForms::new(&m).unwrap();
        let h = h_d_sigma0(&m, 1.0, numeric(3.0)).unwrap();
        let xa = forms.varrho(1.0);
        for i in 0..=100 {
            let x = i as f64 * 0.01;
            let e = (h.h(x).unwrap() - forms.varrho(x) / xa).abs();
            assert!(e < 1e-6, "x={x} err={e}");
        }
        let e = (h.h(0.3).unwrap() - forms.varrho(0.3) / xa).abs();
        assert!(e <= 1e-6);
    }

    #[test]
    fn tabulated_matches_closed_form() {
        for d in [0.0, 2.0] {
            let forms = ExpClosedForms::new(&model(d, 0.0)).unwrap();
            let h = h_d_sigma0(&tab_model(d), 1.0, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
            let xa = forms.xi_all(1.0)[0];
            for i in 0..=20 {
                let x = i as f64 * 0.05;
                let e = (h.h(x).unwrap() - forms.xi_all(x)[0] / xa).abs();
                assert!(e < 1e-6, "d={d} x={x} err={e}");
            }
        }
    }

    #[test]
    fn wd_exponential_and_tabulated() {
        let m = model(2.0, 0.0);
        let u = u_of_d(&m, 2.0).unwrap();
        assert!((w_d(&m, 0.3).unwrap() - u * (-0.3f64).exp()).abs() < 1e-14);
        let wt = w_d(&tab_model(2.0), 0.3).unwrap();
        assert!((wt - u * (-0.3f64).exp()).abs() < 1e-6, "{wt}");
        let w0 = WdFunction::build(&tab_model(2.0), 1.0, 1e-3).unwrap();
        assert!((w0.grid.values[0] - u).abs() < 1e-6);
        assert_eq!(w_d(&model(0.0, 0.0), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn residual_small_for_closed_forms() {
        for d in [0.0, 2.0] {
            let h = HFunction::build(&model(d, 0.0), 1.0, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
            assert!(h.ide_residual() <= 1e-5, "d={d}: {}", h.ide_residual());
        }
    }

    #[test]
    fn residual_detects_constant() {
        let m = model(0.0, 0.0);
        let g = GridFunction::from_fn(0.0, 2.0, 1e-3, |_| 1.0).unwrap();
        let z = g.zeros_like();
        let res = residual_grid(&m, &g, &z, &z, &z, 1.0, 1.0);
        // −(λ+q) + λr F(x): at small x close to −(λ+q)
        assert!(res.values[1].abs() > 10.0 - 8.0);
    }

    #[test]
    fn no_ruin_limit_sigma_pos() {
        let m = model(f64::INFINITY, 0.5);
        let rho = lundberg_root(&m).unwrap().rho;
        let h = h_d_sigma_pos(&m, 1.0, numeric(3.0)).unwrap();
        for x in [0.0, 0.2, 0.5, 0.9] {
            let e = (h.h(x).unwrap() - (-rho * (1.0 - x)).exp()).abs();
            assert!(e <= 1e-6, "x={x}: {e}");
        }
        assert!((h.xi_prime_zero().unwrap() - rho).abs() < 1e-4);
    }

    #[test]
    fn sigma_pos_shooting() {
        let m = model(1.0, 0.5);
        let h = h_d_sigma_pos(&m, 1.0, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
        let p = h.xi_prime_zero().unwrap();
        assert!(h.ide_residual() <= 1e-4, "{}", h.ide_residual());
        let base = shooting_objective(&h, p).unwrap();
        assert!(shooting_objective(&h, 1.1 * p).unwrap() > base);
        assert!(shooting_objective(&h, 0.9 * p).unwrap() > base);
        let g = h.grid().unwrap();
        assert!(g.values.iter().all(|v| *v >= 0.0 && *v <= 1.0 + 1e-12));
        assert!(g.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn monotone_in_d_and_r() {
        let o = HOptions { extent: 3.0, ..HOptions::default() };
        let h0 = HFunction::build(&model(0.0, 0.0), 1.0, o).unwrap();
        let h1 = HFunction::build(&model(0.5, 0.0), 1.0, o).unwrap();
        let h2 = HFunction::build(&model(2.0, 0.0), 1.0, o).unwrap();
        let mr = validate(ModelParams::example(2.0).with_r(0.9), ClaimDistribution::exponential(1.0)).unwrap();
        let h3 = HFunction::build(&mr, 1.0, o).unwrap();
        for i in 0..=10 {
            let x = i as f64 * 0.1;
            let (a, b, c, e) = (h0.h(x).unwrap(), h1.h(x).unwrap(), h2.h(x).unwrap(), h3.h(x).unwrap());
            assert!(a <= b + 1e-12 && b <= c + 1e-12, "x={x}");
            assert!(c <= e + 1e-12, "x={x}");
        }
    }
}
