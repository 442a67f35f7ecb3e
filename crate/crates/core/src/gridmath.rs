//! Functions on uniform grids: convolution, Dickson operator, finite
//! differences and second-kind Volterra solves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ClaimDistribution;
use crate::quad::gauss_legendre;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GridFunction {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lo: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid(format!("grid step must be positive (got {step})")));
        }
        if values.is_empty() {
            return Err(Error::invalid("grid function needs at least one value"));
        }
        let hi = lo + step * (values.len() - 1) as f64;
        Ok(GridFunction { lo, hi, step, values })
    }

    /// Samples `f` on [lo, hi]; (hi - lo)/step must be an integer within 1e-12 (relative).
    pub fn from_fn(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid_intervals(lo, hi, step)?;
        Self::new(lo, step, (0..=n).map(|i| f(lo + i as f64 * step)).collect())
    }

    pub fn zeros_like(&self) -> Self {
        GridFunction { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.x(i))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.lo == other.lo && self.step == other.step && self.values.len() == other.values.len()
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{}, {}] step {} (n={}) vs [{}, {}] step {} (n={})",
                self.lo,
                self.hi,
                self.step,
                self.len(),
                other.lo,
                other.hi,
                other.step,
                other.len()
            )))
        }
    }

    /// Nearest grid index to x, if x lies within half a step of a node.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let s = (x - self.lo) / self.step;
        let i = s.round();
        if (s - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.len() {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Linear interpolation; zero outside [lo, hi].
    pub fn eval_linear(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi || self.len() < 2 {
            return if self.len() == 1 && x == self.lo { self.values[0] } else { 0.0 };
        }
        let s = (x - self.lo) / self.step;
        let i = (s.floor() as usize).min(self.len() - 2);
        let t = s - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Local 4-point Lagrange (cubic) interpolation, clamped to [lo, hi].
    pub fn eval_cubic(&self, x: f64) -> f64 {
        let n = self.len();
        if n < 4 {
            return self.eval_linear(x);
        }
        let s = ((x - self.lo) / self.step).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let base = i.saturating_sub(1).min(n - 4);
        let t = s - base as f64;
        let v = &self.values[base..base + 4];
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        l0 * v[0] + l1 * v[1] + l2 * v[2] + l3 * v[3]
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.values.iter().enumerate().map(|(i, v)| f(self.x(i), *v)).collect();
        GridFunction { values, ..self.clone() }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|_, v| k * v)
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// self + k·other
    pub fn axpy(&self, k: f64, other: &GridFunction) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + k * b).collect();
        Ok(GridFunction { values, ..self.clone() })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoid integral over [lo, hi].
    pub fn integral(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        self.step * (self.values.iter().sum::<f64>() - 0.5 * (self.values[0] + self.values[n - 1]))
    }

    pub fn l1_norm(&self) -> f64 {
        self.map(|_, v| v.abs()).integral()
    }

    /// Restriction to the first `n` nodes.
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        GridFunction {
            lo: self.lo,
            hi: self.lo + self.step * (n - 1) as f64,
            step: self.step,
            values: self.values[..n].to_vec(),
        }
    }
}

/// Number of intervals between lo and hi.
pub fn grid_intervals(lo: f64, hi: f64, step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0) || !(hi >= lo) {
        return Err(Error::invalid(format!("bad grid [{lo}, {hi}] step {step}")));
    }
    let s = (hi - lo) / step;
    let n = s.round();
    if (s - n).abs() > 1e-12 * s.max(1.0) * 1e3 {
        return Err(Error::invalid(format!(
            "(hi - lo)/step = {s} is not an integer for [{lo}, {hi}] step {step}"
        )));
    }
    Ok(n as usize)
}

fn dot_rev(a: &[f64], b: &[f64]) -> f64 {
    // Σ a[k]·b[len-1-k] in fixed order.
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[n - 1 - k];
        acc[1] += a[k + 1] * b[n - 2 - k];
        acc[2] += a[k + 2] * b[n - 3 - k];
        acc[3] += a[k + 3] * b[n - 4 - k];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..n {
        s += a[k] * b[n - 1 - k];
    }
    s
}

/// Trapezoid convolution value at index i: ∫₀^{x_i} f(x_i - y) g(y) dy.
pub(crate) fn conv_at(f: &[f64], g: &[f64], i: usize, h: f64) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let interior = if i >= 2 { dot_rev(&g[1..i], &f[1..i]) } else { 0.0 };
    h * (0.5 * (f[i] * g[0] + f[0] * g[i]) + interior)
}

/// (f*g)(x) = ∫₀^x f(x−y)g(y)dy by trapezoid panels on a grid starting at 0.
pub fn convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    f.check_same_grid(g)?;
    if f.lo != 0.0 {
        return Err(Error::invalid("convolve needs grids starting at 0"));
    }
    let h = f.step;
    let values: Vec<f64> = (0..f.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| conv_at(&f.values, &g.values, i, h))
        .collect();
    Ok(GridFunction { values, ..f.clone() })
}

/// n-fold convolution power f^{*n}, n ≥ 1.
pub fn conv_power(f: &GridFunction, n: usize) -> Result<GridFunction> {
    if n == 0 {
        return Err(Error::invalid("conv_power: n = 0 is the point mass at zero"));
    }
    let mut out = f.clone();
    for _ in 1..n {
        out = convolve(&out, f)?;
    }
    Ok(out)
}

/// Panel weights ∫₀^h e^{−ρu} L_k(u) du for the cubic through the
/// stencil nodes at offsets `offs` (in steps, panel spans [0, 1]).
fn cubic_exp_weights(rho_h: f64, h: f64, offs: [f64; 4], gl: &(Vec<f64>, Vec<f64>)) -> [f64; 4] {
    let mut w = [0.0; 4];
    for (node, wt) in gl.0.iter().zip(&gl.1) {
        let t = 0.5 * (node + 1.0);
        let e = (-rho_h * t).exp() * 0.5 * wt;
        for k in 0..4 {
            let mut l = 1.0;
            for j in 0..4 {
                if j != k {
                    l *= (t - offs[j]) / (offs[k] - offs[j]);
                }
            }
            w[k] += e * l;
        }
    }
    w.map(|v| v * h)
}

/// T_ρ g(x) = ∫_x^∞ e^{−ρ(u−x)} g(u) du on the grid of `g`, with g = 0 beyond hi.
///
/// Backward recursion T(x) = e^{−ρh} T(x+h) + panel integral, where each panel
/// integrates e^{−ρ(u−x)} exactly against the local cubic through four nodes.
pub fn dickson(rho: f64, g: &GridFunction) -> Result<GridFunction> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("dickson: rho must be >= 0 (got {rho})")));
    }
    let n = g.len();
    let h = g.step;
    let v = &g.values;
    let mut out = vec![0.0; n];
    if n < 4 {
        for i in (0..n.saturating_sub(1)).rev() {
            out[i] = (-rho * h).exp() * out[i + 1] + 0.5 * h * (v[i] + (-rho * h).exp() * v[i + 1]);
        }
        return GridFunction::new(g.lo, h, out);
    }
    let gl = gauss_legendre(8);
    let rh = rho * h;
    let w_mid = cubic_exp_weights(rh, h, [-1.0, 0.0, 1.0, 2.0], &gl);
    let w_first = cubic_exp_weights(rh, h, [0.0, 1.0, 2.0, 3.0], &gl);
    let w_last = cubic_exp_weights(rh, h, [-2.0, -1.0, 0.0, 1.0], &gl);
    let decay = (-rh).exp();
    for i in (0..n - 1).rev() {
        let panel = if i == 0 {
            w_first[0] * v[0] + w_first[1] * v[1] + w_first[2] * v[2] + w_first[3] * v[3]
        } else if i == n - 2 {
            w_last[0] * v[i - 2] + w_last[1] * v[i - 1] + w_last[2] * v[i] + w_last[3] * v[i + 1]
        } else {
            w_mid[0] * v[i - 1] + w_mid[1] * v[i] + w_mid[2] * v[i + 1] + w_mid[3] * v[i + 2]
        };
        out[i] = decay * out[i + 1] + panel;
    }
    GridFunction::new(g.lo, h, out)
}

/// T_ρ f for a claim density on [0, hi] with the given step: closed form for
/// the exponential kind, grid Dickson over the full claim support otherwise.
pub fn dickson_density(rho: f64, dist: &ClaimDistribution, hi: f64, step: f64) -> Result<GridFunction> {
    if !(rho >= 0.0) {
        return Err(Error::invalid(format!("dickson: rho must be >= 0 (got {rho})")));
    }
    match dist {
        ClaimDistribution::Exponential { mu } => {
            let k = mu / (rho + mu);
            GridFunction::from_fn(0.0, hi, step, |x| k * (-mu * x).exp())
        }
        ClaimDistribution::Tabulated(_) => {
            let n_out = grid_intervals(0.0, hi, step)? + 1;
            let support = dist.effective_support(1e-12);
            let n_full = n_out.max((support / step).ceil() as usize + 2);
            let g = GridFunction::new(0.0, step, (0..n_full).map(|i| dist.density(i as f64 * step)).collect())?;
            Ok(dickson(rho, &g)?.truncate(n_out))
        }
    }
}

/// max over the grid of |T_s T_r g − (T_s g − T_r g)/(r − s)|.
pub fn dickson_commutation_residual(s: f64, r: f64, g: &GridFunction) -> Result<f64> {
    if s == r {
        return Err(Error::invalid("dickson commutation identity is undefined at s = r"));
    }
    let tr = dickson(r, g)?;
    let ts = dickson(s, g)?;
    let tstr = dickson(s, &tr)?;
    let rhs = ts.sub(&tr)?.scale(1.0 / (r - s));
    Ok(tstr.sub(&rhs)?.sup_norm())
}

/// Finite-difference derivative of order 1 or 2: central in the interior,
/// one-sided second-order stencils at both ends.
pub fn derivative(g: &GridFunction, order: u8) -> Result<GridFunction> {
    let n = g.len();
    if n < 5 {
        return Err(Error::invalid("derivative needs at least 5 grid points"));
    }
    let h = g.step;
    let v = &g.values;
    let mut out = vec![0.0; n];
    match order {
        1 => {
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
            out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
        }
        2 => {
            let h2 = h * h;
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
            }
            out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
            out[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
        }
        _ => return Err(Error::invalid(format!("derivative order must be 1 or 2 (got {order})"))),
    }
    GridFunction::new(g.lo, h, out)
}

#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub solution: GridFunction,
    /// Number of series terms used; 0 when the marching solver ran.
    pub terms: usize,
    pub last_term_norm: f64,
    pub marched: bool,
}

pub const NEUMANN_MAX_TERMS: usize = 200;

/// Solves ξ = coeff·kernel*ξ + forcing. Uses the Neumann series
/// Σ coeffⁿ kernel^{*n}*forcing when coeff·‖kernel‖₁ < 1 and the marching
/// solver otherwise.
pub fn neumann_series(
    kernel: &GridFunction,
    forcing: &GridFunction,
    coeff: f64,
    tol: f64,
) -> Result<VolterraSolution> {
    kernel.check_same_grid(forcing)?;
    if coeff < 0.0 {
        return Err(Error::invalid("neumann_series: coeff must be >= 0"));
    }
    if coeff == 0.0 {
        return Ok(VolterraSolution { solution: forcing.clone(), terms: 0, last_term_norm: 0.0, marched: false });
    }
    if coeff * kernel.l1_norm() >= 1.0 {
        return Ok(VolterraSolution {
            solution: volterra_march(kernel, forcing, coeff)?,
            terms: 0,
            last_term_norm: 0.0,
            marched: true,
        });
    }
    let mut sum = forcing.clone();
    let mut term = forcing.clone();
    for n in 1..=NEUMANN_MAX_TERMS {
        term = convolve(kernel, &term)?.scale(coeff);
        let norm = term.sup_norm();
        sum = sum.add(&term)?;
        if norm < tol {
            return Ok(VolterraSolution { solution: sum, terms: n, last_term_norm: norm, marched: false });
        }
    }
    Err(Error::NonConvergence {
        what: "neumann_series",
        detail: format!("{NEUMANN_MAX_TERMS} terms, last-term norm {:.3e}", term.sup_norm()),
    })
}

/// Left-to-right trapezoid marching for ξ = coeff·kernel*ξ + forcing.
pub fn volterra_march(kernel: &GridFunction, forcing: &GridFunction, coeff: f64) -> Result<GridFunction> {
    kernel.check_same_grid(forcing)?;
    let h = kernel.step;
    let k = &kernel.values;
    let f = &forcing.values;
    let n = f.len();
    let mut xi = vec![0.0; n];
    xi[0] = f[0];
    let denom = 1.0 - 0.5 * coeff * h * k[0];
    if denom <= 0.0 {
        return Err(Error::invalid("volterra_march: step too large for kernel (1 - coeff·h·K(0)/2 <= 0)"));
    }
    for i in 1..n {
        let interior = if i >= 2 { dot_rev(&xi[1..i], &k[1..i]) } else { 0.0 };
        let known = 0.5 * k[i] * xi[0] + interior;
        xi[i] = (f[i] + coeff * h * known) / denom;
    }
    GridFunction::new(forcing.lo, h, xi)
}

/// ∫₀^x e^{−κ(x−y)} g(y) dy with g linear on each panel and the exponential
/// integrated exactly (κ may be negative).
pub fn exp_kernel_convolve(kappa: f64, g: &GridFunction) -> GridFunction {
    let h = g.step;
    let z = kappa * h;
    let e = (-z).exp();
    // w1 = ∫₀^h e^{−κ(h−v)} (v/h) dv, w0 = ∫₀^h e^{−κ(h−v)} (1 − v/h) dv
    let (w0, w1) = if z.abs() < 1e-4 {
        let w1 = h * (0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0);
        let w0 = h * (0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0);
        (w0, w1)
    } else {
        let one_m_e = -(-z).exp_m1();
        let w1 = (z - one_m_e) / (kappa * z);
        let w0 = one_m_e / kappa - w1;
        (w0, w1)
    };
    let mut out = vec![0.0; g.len()];
    for i in 1..g.len() {
        out[i] = e * out[i - 1] + w0 * g.values[i - 1] + w1 * g.values[i];
    }
    GridFunction { values: out, ..g.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::exp_conv_power;

    fn exp_grid(mu: f64, hi: f64, step: f64) -> GridFunction {
        GridFunction::from_fn(0.0, hi, step, |x| mu * (-mu * x).exp()).unwrap()
    }

    #[test]
    fn grid_shape_checks() {
        assert!(GridFunction::from_fn(0.0, 1.0, 0.3, |x| x).is_err());
        let g = GridFunction::from_fn(-1.0, 1.0, 0.5, |x| x).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.index_of(0.5), Some(3));
        let h = GridFunction::from_fn(0.0, 1.0, 0.25, |x| x).unwrap();
        assert!(matches!(g.add(&h), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn convolution_gives_erlang() {
        let f = exp_grid(1.0, 5.0, 1e-3);
        let c = convolve(&f, &f).unwrap();
        let i = c.index_of(1.0).unwrap();
        assert!((c.values[i] - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn convolution_with_delta_approximation() {
        let h = 1e-3;
        let f = GridFunction::from_fn(0.0, 2.0, h, |x| (x * 3.0).sin() + 1.0).unwrap();
        let mut delta = f.zeros_like();
        delta.values[0] = 2.0 / h;
        let c = convolve(&f, &delta).unwrap();
        for i in (10..f.len()).step_by(97) {
            assert!((c.values[i] - f.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dickson_closed_form_and_laplace() {
        let rho = 0.244_928_565_180_081_4;
        let f = exp_grid(1.0, 40.0, 1e-3);
        let t = dickson(rho, &f).unwrap();
        for x in [0.0, 0.5, 1.0, 3.0] {
            let i = t.index_of(x).unwrap();
            let exact = 1.0 / (rho + 1.0) * (-x).exp();
            assert!((t.values[i] - exact).abs() < 1e-10, "x={x}");
        }
        let t0 = dickson(0.0, &f).unwrap();
        assert!((t0.values[0] - 1.0).abs() < 1e-10);
        // Erlang(2) Laplace transform at s: (1/(1+s))^2.
        let e2 = GridFunction::from_fn(0.0, 50.0, 1e-3, |x| exp_conv_power(1.0, 2, x)).unwrap();
        for s in [0.1, 0.7, 2.0] {
            let v = dickson(s, &e2).unwrap().values[0];
            assert!((v - (1.0 / (1.0 + s)).powi(2)).abs() < 1e-8);
        }
        assert!(dickson(-0.1, &f).is_err());
    }

    #[test]
    fn dickson_commutation() {
        let f = exp_grid(1.0, 40.0, 1e-3);
        assert!(dickson_commutation_residual(0.1, 0.3, &f).unwrap() <= 1e-8);
        assert!(dickson_commutation_residual(0.5, 0.5, &f).is_err());
        let e2 = GridFunction::from_fn(0.0, 50.0, 1e-3, |x| exp_conv_power(1.0, 2, x)).unwrap();
        assert!(dickson_commutation_residual(0.2, 1.0, &e2).unwrap() <= 1e-8);
    }

    #[test]
    fn dickson_power_convolution_closed_form() {
        let rho = 0.244_928_565_180_081_4;
        let t = dickson_density(rho, &ClaimDistribution::exponential(1.0), 5.0, 1e-3).unwrap();
        let c = convolve(&t, &t).unwrap();
        let k = (1.0 / (rho + 1.0)).powi(2);
        let err = c.xs().zip(&c.values).map(|(x, v)| (v - k * x * (-x).exp()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn derivatives() {
        let rho = 0.25;
        let g = GridFunction::from_fn(0.0, 2.0, 1e-3, |x| (rho * x).exp()).unwrap();
        let d1 = derivative(&g, 1).unwrap();
        let err = d1.xs().zip(&d1.values).map(|(x, v)| (v - rho * (rho * x).exp()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
        let sq = GridFunction::from_fn(0.0, 1.0, 1e-2, |x| x * x).unwrap();
        let d2 = derivative(&sq, 2).unwrap();
        assert!(d2.values.iter().all(|v| (v - 2.0).abs() < 1e-8));
        assert!(derivative(&sq, 3).is_err());
    }

    #[test]
    fn neumann_matches_marching() {
        let k = exp_grid(1.0, 5.0, 1e-3);
        let one = k.map(|_, _| 1.0);
        let s = neumann_series(&k, &one, 0.5, 1e-14).unwrap();
        assert!(!s.marched);
        let m = volterra_march(&k, &one, 0.5).unwrap();
        assert!(s.solution.sub(&m).unwrap().sup_norm() < 1e-8);
        // fixed-point residual
        let res = s.solution.sub(&convolve(&k, &s.solution).unwrap().scale(0.5)).unwrap().sub(&one).unwrap();
        assert!(res.sup_norm() <= 10.0 * 1e-14 * 10.0);
        let z = neumann_series(&k, &one, 0.0, 1e-14).unwrap();
        assert_eq!(z.solution, one);
    }

    #[test]
    fn exp_kernel_convolution_exact_for_linear() {
        let g = GridFunction::from_fn(0.0, 1.0, 0.01, |x| 1.0 + 2.0 * x).unwrap();
        for kappa in [120.0, 1.0, -0.3, 1e-6] {
            let c = exp_kernel_convolve(kappa, &g);
            let x: f64 = 1.0;
            let exact = if kappa.abs() < 1e-3 {
                x + x * x
            } else {
                let e = (-kappa * x).exp();
                (1.0 - e) / kappa + 2.0 * (x / kappa - (1.0 - e) / (kappa * kappa))
            };
            assert!((c.values[100] - exact).abs() < 1e-6 * exact.abs().max(1.0), "kappa={kappa}");
        }
    }
}
