//! Barrier value function, optimal barrier, generator and HJB certificate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridmath::{derivative, GridFunction};
use crate::hfun::{HFunction, HOptions};
use crate::model::{ClaimDistribution, ValidatedModel};
use crate::quad::gauss_legendre;

/// v(x) for the barrier strategy at level a: ξ(x)/ξ'(a) below a, slope 1
/// above, the continuation ξ(0)Φ_d(−x)/ξ'(a) on (−cd, 0) and 0 below −cd.
pub fn value_barrier(h: &HFunction, a: f64, x: f64) -> Result<f64> {
    let xpa = barrier_slope(h, a)?;
    if x > a {
        return Ok(x - a + h.xi(a) / xpa);
    }
    if x >= 0.0 {
        return Ok(h.xi(x) / xpa);
    }
    // h(x) carries the normalisation 1/ξ(a); undo it
    Ok(h.h(x)? * h.xi(h.a()) / xpa)
}

fn barrier_slope(h: &HFunction, a: f64) -> Result<f64> {
    if !(a >= 0.0) || a > h.extent() {
        return Err(Error::invalid(format!("barrier {a} outside the constructed range [0, {}]", h.extent())));
    }
    let xpa = h.xi_d1(a);
    if !(xpa > 0.0) {
        return Err(Error::Degenerate(format!("h'(a) = {xpa} is not positive at a = {a}")));
    }
    Ok(xpa)
}

/// A function with two derivatives that the generator can act on.
pub trait GeneratorTarget {
    fn value(&self, x: f64) -> Result<f64>;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    /// ∫₀^∞ g(x−y) f(y) dy.
    fn claim_average(&self, model: &ValidatedModel, x: f64) -> Result<f64>;
}

/// A grid function with its derivatives; g = 0 below the grid when
/// `zero_below` is set, otherwise the claim support must fit on the grid.
pub struct GridTarget {
    pub g: GridFunction,
    pub g1: GridFunction,
    pub g2: GridFunction,
    pub zero_below: bool,
}

impl GridTarget {
    pub fn new(g: GridFunction, zero_below: bool) -> Result<Self> {
        let g1 = derivative(&g, 1)?;
        let g2 = derivative(&g, 2)?;
        Ok(GridTarget { g, g1, g2, zero_below })
    }
}

impl GeneratorTarget for GridTarget {
    fn value(&self, x: f64) -> Result<f64> {
        Ok(self.g.eval_cubic(x))
    }
    fn d1(&self, x: f64) -> f64 {
        self.g1.eval_cubic(x)
    }
    fn d2(&self, x: f64) -> f64 {
        self.g2.eval_cubic(x)
    }
    fn claim_average(&self, model: &ValidatedModel, x: f64) -> Result<f64> {
        let dist = model.claims();
        let support = dist.effective_support(1e-15);
        let y_top = if self.zero_below { (x - self.g.lo).min(support) } else { support };
        if !self.zero_below && x - support < self.g.lo {
            return Err(Error::InsufficientSupport { needed: x - support, available: self.g.lo });
        }
        if y_top <= 0.0 {
            return Ok(0.0);
        }
        Ok(panel_gl(|y| self.g.eval_cubic(x - y) * dist.density(y), 0.0, y_top, self.g.step))
    }
}

/// Composite 4-point Gauss-Legendre with panels no wider than `width`.
fn panel_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, width: f64) -> f64 {
    let (xs, ws) = gl4();
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let lo = a + i as f64 * h;
        let mut p = 0.0;
        for k in 0..4 {
            p += ws[k] * f(lo + 0.5 * h * (xs[k] + 1.0));
        }
        acc += 0.5 * h * p;
    }
    acc
}

fn gl4() -> ([f64; 4], [f64; 4]) {
    let (x, w) = gauss_legendre(4);
    ([x[0], x[1], x[2], x[3]], [w[0], w[1], w[2], w[3]])
}

/// The barrier value function as a generator target.
pub struct ValueTarget<'a> {
    pub h: &'a HFunction,
    pub a: f64,
    xpa: f64,
}

impl<'a> ValueTarget<'a> {
    pub fn new(h: &'a HFunction, a: f64) -> Result<Self> {
        let xpa = barrier_slope(h, a)?;
        Ok(ValueTarget { h, a, xpa })
    }
}

impl GeneratorTarget for ValueTarget<'_> {
    fn value(&self, x: f64) -> Result<f64> {
        value_barrier(self.h, self.a, x)
    }
    /// Left derivative at a.
    fn d1(&self, x: f64) -> f64 {
        if x > self.a {
            1.0
        } else {
            self.h.xi_d1(x) / self.xpa
        }
    }
    fn d2(&self, x: f64) -> f64 {
        if x > self.a {
            0.0
        } else {
            self.h.xi_d2(x) / self.xpa
        }
    }
    /// Split at the barrier and at 0: the linear part in closed form via F and
    /// the partial mean, the ξ part by Gauss-Legendre, the continuation via w_d.
    fn claim_average(&self, model: &ValidatedModel, x: f64) -> Result<f64> {
        if x < 0.0 || x > self.h.extent() {
            return Err(Error::InsufficientSupport { needed: x, available: self.h.extent() });
        }
        let dist = model.claims();
        let (a, xpa) = (self.a, self.xpa);
        let mut acc = 0.0;
        if x > a {
            let va = self.h.xi(a) / xpa;
            let u = x - a;
            acc += (u + va) * dist.cdf(u) - dist.partial_mean(u);
        }
        let top = a.min(x);
        if top > 0.0 {
            acc += panel_gl(|z| self.h.xi(z) * dist.density(x - z), 0.0, top, self.h.step()) / xpa;
        }
        acc += self.h.xi(0.0) * self.h.wd().eval(x) / xpa;
        Ok(acc)
    }
}

/// Γg(x) = σ²/2 g''(x) + c g'(x) − λ g(x) + λr ∫₀^∞ g(x−y) f(y) dy.
pub fn generator_apply(model: &ValidatedModel, g: &dyn GeneratorTarget, x: f64) -> Result<f64> {
    let s2 = model.sigma() * model.sigma();
    let avg = g.claim_average(model, x)?;
    Ok(0.5 * s2 * g.d2(x) + model.c() * g.d1(x) - model.lambda() * g.value(x)? + model.lambda() * model.r() * avg)
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSolution {
    pub a_star: f64,
    /// True when ξ'' has no sign change and the optimum is at the argmin of ξ'.
    pub boundary: bool,
    /// Further −→+ zeros of ξ'' in (a_star, a_max].
    pub alternative_roots: Vec<f64>,
    pub a_max: f64,
    #[serde(skip)]
    pub h: HFunction,
    pub hjb_report: Option<HjbReport>,
}

impl BarrierSolution {
    pub fn value(&self, x: f64) -> Result<f64> {
        value_barrier(&self.h, self.a_star, x)
    }
}

/// Scans ξ'' on [0, a_max], bisects each −→+ sign change to 1e−9 on the cubic
/// interpolant, and falls back to the argmin of ξ' when there is none.
pub fn optimal_barrier(model: &ValidatedModel, a_max: f64, opts: HOptions) -> Result<BarrierSolution> {
    if !(a_max > 0.0) {
        return Err(Error::invalid(format!("a_max must be > 0 (got {a_max})")));
    }
    let extent = opts.extent.max(a_max + 1.0);
    let probe = HFunction::build(model, a_max.min(1.0).max(opts.step), HOptions { extent, ..opts })?;
    let (_, xi1, xi2) = probe.xi_grids();
    let n = ((a_max / xi2.step).round() as usize).min(xi2.len() - 1);
    let mut roots = Vec::new();
    for i in 0..n {
        let (l, r) = (xi2.values[i], xi2.values[i + 1]);
        if l < 0.0 && r >= 0.0 {
            let (mut lo, mut hi) = (xi2.x(i), xi2.x(i + 1));
            while hi - lo > 1e-9 {
                let mid = 0.5 * (lo + hi);
                if xi2.eval_cubic(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    let (a_star, boundary, alternative_roots) = if let Some((&first, rest)) = roots.split_first() {
        (first, false, rest.to_vec())
    } else {
        let (mut best, mut arg) = (f64::INFINITY, 0);
        for i in 0..=n {
            if xi1.values[i] < best {
                best = xi1.values[i];
                arg = i;
            }
        }
        if arg == n {
            return Err(Error::AMaxTooSmall { a_max });
        }
        (xi1.x(arg), true, Vec::new())
    };
    let h = probe.at_barrier(a_star)?;
    Ok(BarrierSolution { a_star, boundary, alternative_roots, a_max, h, hjb_report: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HjbTolerances {
    /// (Γ−q)v ≤ upper on [a*, x_max].
    pub upper: f64,
    /// |(Γ−q)v| ≤ interior on (0, a*).
    pub interior: f64,
    /// v' ≥ 1 − slope on (0, a*].
    pub slope: f64,
}

impl Default for HjbTolerances {
    fn default() -> Self {
        HjbTolerances { upper: 1e-6, interior: 1e-5, slope: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbCheck {
    pub name: &'static str,
    pub passed: bool,
    pub tolerance: f64,
    pub worst_x: f64,
    pub worst_value: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct HjbReport {
    pub a: f64,
    pub x_max: f64,
    pub step: f64,
    pub checks: Vec<HjbCheck>,
    pub passed: bool,
    /// (x, (Γ−q)v(x)) on the verification grid.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

impl HjbReport {
    pub fn check(&self, name: &str) -> Option<&HjbCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// (Γ−q)v on the grid over (0, x_max] for the barrier strategy at `a`.
pub fn hjb_curve(h: &HFunction, a: f64, x_max: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    let model = h.model();
    let target = ValueTarget::new(h, a)?;
    let n = (x_max / step).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let x = i as f64 * step;
        let g = generator_apply(model, &target, x)? - model.q() * target.value(x)?;
        out.push((x, g));
    }
    Ok(out)
}

/// HJB certificate for the barrier at `a` (usually a*).
pub fn hjb_verify_at(h: &HFunction, a: f64, x_max: f64, tol: HjbTolerances) -> Result<HjbReport> {
    if x_max > h.extent() {
        return Err(Error::InsufficientSupport { needed: x_max, available: h.extent() });
    }
    let step = h.step();
    let curve = hjb_curve(h, a, x_max, step)?;
    let below = |x: f64| x < a - 0.5 * step;
    let mut upper = HjbCheck { name: "upper", passed: true, tolerance: tol.upper, worst_x: f64::NAN, worst_value: f64::NEG_INFINITY, points: 0 };
    let mut interior = HjbCheck { name: "interior", passed: true, tolerance: tol.interior, worst_x: f64::NAN, worst_value: 0.0, points: 0 };
    for &(x, g) in &curve {
        if below(x) {
            interior.points += 1;
            if g.abs() > interior.worst_value.abs() || interior.worst_x.is_nan() {
                interior.worst_value = g;
                interior.worst_x = x;
            }
        } else {
            upper.points += 1;
            if g > upper.worst_value {
                upper.worst_value = g;
                upper.worst_x = x;
            }
        }
    }
    interior.passed = interior.worst_value.abs() <= tol.interior;
    upper.passed = upper.points == 0 || upper.worst_value <= tol.upper;
    let target = ValueTarget::new(h, a)?;
    let mut slope = HjbCheck { name: "slope", passed: true, tolerance: tol.slope, worst_x: f64::NAN, worst_value: f64::INFINITY, points: 0 };
    let n_a = (a / step).round() as usize;
    for i in 1..=n_a {
        let x = (i as f64 * step).min(a);
        let d = target.d1(x);
        slope.points += 1;
        if d < slope.worst_value {
            slope.worst_value = d;
            slope.worst_x = x;
        }
    }
    if slope.points == 0 {
        slope.worst_value = 1.0;
    }
    slope.passed = slope.worst_value >= 1.0 - tol.slope;
    let passed = upper.passed && interior.passed && slope.passed;
    Ok(HjbReport { a, x_max, step, checks: vec![upper, interior, slope], passed, curve })
}

/// HJB certificate for an optimal-barrier solution on (0, x_max].
pub fn hjb_verify(sol: &BarrierSolution, x_max: f64, tol: HjbTolerances) -> Result<HjbReport> {
    hjb_verify_at(&sol.h, sol.a_star, x_max, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneReport {
    pub passed: bool,
    /// max over a* ≤ a ≤ b of g'(a) − g'(b).
    pub worst_violation: f64,
    pub worst_a: f64,
    pub worst_b: f64,
    pub tolerance: f64,
}

/// Checks g'(a) ≤ g'(b) for all a_star ≤ a ≤ b on the grid of `gp`.
pub fn gprime_monotone_on_grid(gp: &GridFunction, a_star: f64, tol: f64) -> MonotoneReport {
    let start = (((a_star - gp.lo) / gp.step).round().max(0.0) as usize).min(gp.len() - 1);
    let (mut run_max, mut run_arg) = (f64::NEG_INFINITY, start);
    let mut rep = MonotoneReport { passed: true, worst_violation: 0.0, worst_a: a_star, worst_b: a_star, tolerance: tol };
    for i in start..gp.len() {
        let v = gp.values[i];
        if v > run_max {
            run_max = v;
            run_arg = i;
        }
        let viol = run_max - v;
        if viol > rep.worst_violation {
            rep.worst_violation = viol;
            rep.worst_a = gp.x(run_arg);
            rep.worst_b = gp.x(i);
        }
    }
    rep.passed = rep.worst_violation <= tol;
    rep
}

/// Monotonicity of (g^d)' on [a_star, b_max] for the unnormalised g^d = ξ.
pub fn gprime_monotone_check(model: &ValidatedModel, a_star: f64, b_max: f64, opts: HOptions) -> Result<MonotoneReport> {
    if !(b_max > a_star) {
        return Err(Error::invalid(format!("b_max ({b_max}) must exceed a_star ({a_star})")));
    }
    let h = HFunction::build(model, a_star, HOptions { extent: opts.extent.max(b_max), ..opts })?;
    let (_, xi1, _) = h.xi_grids();
    let n = ((b_max / xi1.step).round() as usize).min(xi1.len() - 1);
    let gp = xi1.truncate(n + 1);
    let scale = gp.sup_norm().max(1.0);
    Ok(gprime_monotone_on_grid(&gp, a_star, 1e-9 * scale))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SlopeShape {
    Nonincreasing,
    Nondecreasing,
    Constant,
    NotMonotone,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityAdvisory {
    pub shape: SlopeShape,
    pub guaranteed: bool,
    pub message: String,
}

pub const ADVISORY_GUARANTEED: &str = "barrier optimality guaranteed by the monotone density condition";
pub const ADVISORY_INCONCLUSIVE: &str = "inconclusive: rely on hjb_verify";

/// Reports whether f' is monotone on the density grid.
pub fn density_shape_advisory(dist: &ClaimDistribution) -> DensityAdvisory {
    let shape = match dist {
        // f' = −μ² e^{−μx} increases
        ClaimDistribution::Exponential { .. } => SlopeShape::Nondecreasing,
        ClaimDistribution::Tabulated(t) => {
            let v = t.values();
            let h = t.step();
            let fp: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]) / h).collect();
            let scale = fp.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let tol = 1e-9 * scale.max(1e-300);
            let (mut up, mut down) = (false, false);
            for w in fp.windows(2) {
                let dd = w[1] - w[0];
                if dd > tol {
                    up = true;
                }
                if dd < -tol {
                    down = true;
                }
            }
            match (up, down) {
                (false, false) => SlopeShape::Constant,
                (true, false) => SlopeShape::Nondecreasing,
                (false, true) => SlopeShape::Nonincreasing,
                (true, true) => SlopeShape::NotMonotone,
            }
        }
    };
    let guaranteed = shape != SlopeShape::NotMonotone;
    let message = if guaranteed { ADVISORY_GUARANTEED } else { ADVISORY_INCONCLUSIVE }.to_string();
    DensityAdvisory { shape, guaranteed, message }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expmodel::ExpClosedForms;
    use crate::model::{validate, ModelParams, TabulatedDensity};

    fn model(d: f64) -> ValidatedModel {
        validate(ModelParams::example(d), ClaimDistribution::exponential(1.0)).unwrap()
    }

    fn opts() -> HOptions {
        HOptions { extent: 12.0, ..HOptions::default() }
    }

    #[test]
    fn renewal_value_at_zero_barrier() {
        let h = HFunction::build(&model(0.0), 0.0, opts()).unwrap();
        let v = value_barrier(&h, 0.0, 0.0).unwrap();
        assert!((v - 15.0 / 10.1).abs() < 1e-10, "{v}");
        assert_eq!(value_barrier(&h, 0.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn value_shape_at_barrier() {
        let h = HFunction::build(&model(2.0), 0.6, opts()).unwrap();
        let va = value_barrier(&h, 0.6, 0.6).unwrap();
        assert!((va - 1.0 / h.hp(0.6)).abs() < 1e-10);
        let v1 = value_barrier(&h, 0.6, 1.6).unwrap();
        assert!((v1 - va - 1.0).abs() < 1e-12);
        assert_eq!(value_barrier(&h, 0.6, -2.0 * 30.0).unwrap(), 0.0);
        let below = value_barrier(&h, 0.6, -0.5).unwrap();
        assert!(below > 0.0 && below < value_barrier(&h, 0.6, 0.0).unwrap());
    }

    #[test]
    fn optimal_barrier_d0() {
        let sol = optimal_barrier(&model(0.0), 5.0, opts()).unwrap();
        assert!(!sol.boundary);
        assert!((sol.a_star - 0.769_315_058_4).abs() < 1e-6, "{}", sol.a_star);
        let x = 0.3;
        let v = sol.value(x).unwrap();
        for da in [-0.1, 0.1] {
            assert!(v >= value_barrier(&sol.h, sol.a_star + da, x).unwrap());
        }
    }

    #[test]
    fn optimal_barrier_matches_closed_form_scan() {
        for d in [0.5, 2.0] {
            let sol = optimal_barrier(&model(d), 5.0, opts()).unwrap();
            let (a, boundary) = ExpClosedForms::new(&model(d)).unwrap().optimal_barrier().unwrap();
            assert_eq!(sol.boundary, boundary);
            assert!((sol.a_star - a).abs() < 1e-6);
        }
    }

    #[test]
    fn a_max_too_small_reported() {
        // ξ' decreasing on [0, 0.3] for d = 0
        assert!(matches!(optimal_barrier(&model(0.0), 0.3, opts()), Err(Error::AMaxTooSmall { .. })));
    }

    #[test]
    fn generator_on_constants_and_exponential() {
        let m = model(0.0);
        let g = GridTarget::new(GridFunction::from_fn(-40.0, 5.0, 1e-3, |_| 1.0).unwrap(), false).unwrap();
        let v = generator_apply(&m, &g, 1.0).unwrap() - m.q();
        assert!((v - (-10.0 * 0.2 - 0.1)).abs() < 1e-9, "{v}");
        let rho = crate::lundberg::lundberg_root(&m).unwrap().rho;
        let e = GridTarget::new(GridFunction::from_fn(-40.0, 5.0, 1e-3, |x| (rho * x).exp()).unwrap(), false).unwrap();
        let v = generator_apply(&m, &e, 1.0).unwrap() - m.q() * (rho).exp();
        assert!(v.abs() < 1e-6, "{v}");
        let short = GridTarget::new(GridFunction::from_fn(0.0, 5.0, 1e-3, |_| 1.0).unwrap(), false).unwrap();
        assert!(matches!(generator_apply(&m, &short, 1.0), Err(Error::InsufficientSupport { .. })));
    }

    #[test]
    fn hjb_passes_at_optimum_d0() {
        let sol = optimal_barrier(&model(0.0), 5.0, opts()).unwrap();
        let rep = hjb_verify(&sol, sol.a_star + 10.0, HjbTolerances::default()).unwrap();
        assert!(rep.passed, "{:?}", rep.checks);
    }

    #[test]
    fn hjb_fails_for_suboptimal_barrier() {
        let sol = optimal_barrier(&model(0.0), 5.0, opts()).unwrap();
        let rep = hjb_verify_at(&sol.h, sol.a_star + 0.5, sol.a_star + 10.0, HjbTolerances::default()).unwrap();
        assert!(!rep.check("upper").unwrap().passed || !rep.check("slope").unwrap().passed);
    }

    #[test]
    fn gprime_monotone() {
        for d in [0.0, 2.0] {
            let sol = optimal_barrier(&model(d), 5.0, opts()).unwrap();
            let rep = gprime_monotone_check(&model(d), sol.a_star, 6.0, opts()).unwrap();
            assert!(rep.passed, "d={d}: {rep:?}");
        }
        let bumpy = GridFunction::from_fn(0.0, 3.0, 1e-2, |x| 1.0 + 0.5 * (5.0 * x).sin()).unwrap();
        assert!(!gprime_monotone_on_grid(&bumpy, 0.0, 1e-9).passed);
    }

    #[test]
    fn advisory() {
        let e = density_shape_advisory(&ClaimDistribution::exponential(1.0));
        assert_eq!(e.shape, SlopeShape::Nondecreasing);
        assert_eq!(e.message, ADVISORY_GUARANTEED);
        let u = TabulatedDensity::from_fn(1e-3, 2.0, |_| 0.5).unwrap();
        assert_eq!(density_shape_advisory(&ClaimDistribution::Tabulated(u)).shape, SlopeShape::Constant);
        let bi = TabulatedDensity::from_fn(1e-3, 12.0, |x| {
            let g = |m: f64| (-(x - m) * (x - m) / 0.5).exp() / (0.5 * std::f64::consts::PI).sqrt();
            0.5 * g(2.0) + 0.5 * g(6.0)
        })
        .unwrap();
        let a = density_shape_advisory(&ClaimDistribution::Tabulated(bi));
        assert_eq!(a.shape, SlopeShape::NotMonotone);
        assert_eq!(a.message, ADVISORY_INCONCLUSIVE);
    }
}
