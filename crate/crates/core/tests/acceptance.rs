//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exit status is 0 when every failure is a documented deviation (listed in
//! `DOCUMENTED`), nonzero otherwise.

use std::time::{Duration, Instant};

use parisdiv_core::expmodel::ExpClosedForms;
use parisdiv_core::firstpassage::upcross_transform;
use parisdiv_core::gridmath::dickson_commutation_residual;
use parisdiv_core::lundberg::lundberg_root;
use parisdiv_core::model::exp_conv_power;
use parisdiv_core::simulator::{simulate_h, simulate_value};
use parisdiv_core::valuation::{hjb_verify, hjb_verify_at, optimal_barrier, value_barrier};
use parisdiv_core::*;

const RHO_TARGET: f64 = 0.24493;
const A_STAR_D0: f64 = 0.7693;
const B_STAR_D2: f64 = 0.52202;
const A_MAX: f64 = 3.0;

/// Criteria whose failure is an analysed, recorded deviation.
const DOCUMENTED: &[&str] = &["2b"];

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn record(&mut self, id: &str, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else if DOCUMENTED.contains(&id) { "FAIL (documented)" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {detail}");
        self.lines.push((id.to_string(), passed));
    }
    fn note(&self, text: String) {
        println!("        note: {text}");
    }
}

fn model(d: f64) -> ValidatedModel {
    validate(ModelParams::example(d), ClaimDistribution::exponential(1.0)).unwrap()
}

fn secs(t: Duration) -> f64 {
    t.as_secs_f64()
}

fn crit1(rep: &mut Report) {
    let m = model(0.0);
    let t = Instant::now();
    let root = lundberg_root(&m).unwrap();
    let el = t.elapsed();
    let ok = (root.rho - RHO_TARGET).abs() <= 5e-5 && el < Duration::from_millis(10);
    rep.record("1", ok, format!("rho={:.10} (target {RHO_TARGET} ± 5e-5), {:.3} ms", root.rho, secs(el) * 1e3));
}

fn crit2(rep: &mut Report) -> (f64, f64) {
    let mut out = [0.0; 2];
    for (k, (id, d, target)) in [("2a", 0.0, A_STAR_D0), ("2b", 2.0, B_STAR_D2)].into_iter().enumerate() {
        let t = Instant::now();
        let sol = optimal_barrier(&model(d), A_MAX, HOptions::default()).unwrap();
        let el = t.elapsed();
        let ok = (sol.a_star - target).abs() <= 2e-3 && el < Duration::from_secs(30);
        rep.record(
            id,
            ok,
            format!(
                "d={d}: a*={:.6} (target {target} ± 2e-3, boundary={}), {:.2} s",
                sol.a_star,
                sol.boundary,
                secs(el)
            ),
        );
        out[k] = sol.a_star;
    }
    if (out[1] - B_STAR_D2).abs() > 2e-3 {
        let m = model(2.0);
        let forms = ExpClosedForms::new(&m).unwrap();
        let [_, x1, x2] = forms.xi_all(B_STAR_D2);
        rep.note(format!(
            "d=2: xi''({B_STAR_D2})={x2:.6e} (a zero there would be an interior optimum), xi'({B_STAR_D2})={x1:.6}, xi'(0)={:.6}",
            forms.xi_all(0.0)[1]
        ));
        rep.note(format!(
            "d=2: v(0) at a=0 is {:.6}; at a={B_STAR_D2} it is {:.6}",
            forms.value_at_barrier(0.0, 0.0),
            forms.value_at_barrier(B_STAR_D2, 0.0)
        ));
    }
    (out[0], out[1])
}

fn crit3(rep: &mut Report) {
    let tol = HjbTolerances::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for d in [0.0, 2.0] {
        let m = model(d);
        let sol = optimal_barrier(&m, A_MAX, HOptions::default()).unwrap();
        let r = hjb_verify(&sol, sol.a_star + 10.0, tol).unwrap();
        let up = r.check("upper").unwrap();
        let int = r.check("interior").unwrap();
        let pass = up.passed && int.passed;
        ok &= pass;
        parts.push(format!(
            "d={d} a*={:.5}: max (G-q)v on [a*,a*+10]={:.3e}, max |(G-q)v| on (0,a*)={:.3e} ({} pts)",
            sol.a_star, up.worst_value, int.worst_value.abs(), int.points
        ));
        if d == 2.0 {
            let h = HFunction::build(&m, B_STAR_D2, HOptions::default()).unwrap();
            let neg = hjb_verify_at(&h, B_STAR_D2, B_STAR_D2 + 10.0, tol).unwrap();
            let s = neg.check("slope").unwrap();
            rep.note(format!(
                "negative control a={B_STAR_D2}, d=2: certificate passed={} (min v' on (0,a)={:.4} at x={:.3})",
                neg.passed, s.worst_value, s.worst_x
            ));
        }
    }
    rep.record("3", ok, parts.join("; "));
}

fn crit4(rep: &mut Report) {
    let m = model(0.0);
    let forms = ExpClosedForms::new(&m).unwrap();
    let got = forms.vartheta_d1(0.0);
    let want = (m.lambda() + m.q()) / m.c();
    let err = (got - want).abs();
    rep.record("4", err <= 1e-10, format!("vartheta'(0)={got:.15}, (lambda+q)/c={want:.15}, |diff|={err:.2e}"));
}

fn crit5(rep: &mut Report) {
    let m = model(0.0);
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (mode, target) in [
        (DiscountMode::PerPayment, m.c() / (m.lambda() + m.q())),
        (DiscountMode::TerminalFactor, m.r() * m.c() / (m.lambda() + m.q())),
    ] {
        let cfg = SimConfig { n_paths: 200_000, seed: 20_251, discount_mode: mode, ..SimConfig::default() };
        let e = simulate_value(&m, 0.0, 0.0, &cfg).unwrap();
        let z = e.z_score(target);
        ok &= z.abs() <= 3.0;
        parts.push(format!("{mode:?} mean={:.6} se={:.5} target={target:.6} z={z:.2}", e.mean, e.stderr));
    }
    let el = t.elapsed();
    ok &= el < Duration::from_secs(60);
    rep.record("5", ok, format!("{}; {:.2} s", parts.join("; "), secs(el)));
}

fn crit6(rep: &mut Report, a_stars: (f64, f64)) {
    let t = Instant::now();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (d, a) in [(0.0, a_stars.0), (2.0, a_stars.1)] {
        let m = model(d);
        let h = HFunction::build(&m, a, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
        let mut xs = vec![0.0, 0.5];
        if !xs.contains(&a) {
            xs.push(a);
        }
        for x in xs {
            let an = value_barrier(&h, a, x).unwrap();
            let cfg = SimConfig { n_paths: 200_000, seed: 31_337, ..SimConfig::default() };
            let e = simulate_value(&m, a, x, &cfg).unwrap();
            let z = e.z_score(an);
            ok &= z.abs() <= 3.0;
            worst = worst.max(z.abs());
            parts.push(format!("d={d} x={x:.4}: {an:.6} vs {:.6}±{:.5}", e.mean, e.stderr));
        }
    }
    let el = t.elapsed();
    ok &= el < Duration::from_secs(300);
    rep.record("6", ok, format!("max |z|={worst:.2}, {:.1} s [{}]", secs(el), parts.join("; ")));

    // the d=2 reference barrier against the engine optimum, common random numbers
    let m = model(2.0);
    let cfg = SimConfig { n_paths: 200_000, seed: 31_337, ..SimConfig::default() };
    let v0 = simulate_value(&m, a_stars.1, 0.0, &cfg).unwrap();
    let vb = simulate_value(&m, B_STAR_D2, 0.0, &cfg).unwrap();
    rep.note(format!(
        "d=2 MC v(0): a={:.5} gives {:.5}±{:.5}; a={B_STAR_D2} gives {:.5}±{:.5}",
        a_stars.1, v0.mean, v0.stderr, vb.mean, vb.stderr
    ));
}

fn crit7(rep: &mut Report) {
    let m = model(0.0);
    let rho = lundberg_root(&m).unwrap().rho;
    let (mut worst, mut numeric): (f64, f64) = (0.0, 0.0);
    for y in [0.1, 0.5, 1.0, 2.0] {
        let t = upcross_transform(&m, y, f64::INFINITY).unwrap();
        worst = worst.max((t.value - (-rho * y).exp()).abs());
        // a long finite horizon runs the Kendall integral instead of the closed form
        let t = upcross_transform(&m, y, 100.0).unwrap();
        numeric = numeric.max((t.value - (-rho * y).exp()).abs());
    }
    rep.record(
        "7",
        worst <= 1e-6 && numeric <= 1e-6,
        format!("max |Phi(y) - e^(-rho y)| over y in {{0.1,0.5,1,2}}: d=inf {worst:.2e}, d=100 (Kendall integral) {numeric:.2e}"),
    );
}

fn crit8(rep: &mut Report) {
    let exp = GridFunction::from_fn(0.0, 40.0, 1e-3, |x| (-x).exp()).unwrap();
    let erl = GridFunction::from_fn(0.0, 50.0, 1e-3, |x| exp_conv_power(1.0, 2, x)).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, g) in [("exponential", &exp), ("erlang2", &erl)] {
        for (s, r) in [(0.1, 0.3), (0.2, 1.0)] {
            let res = dickson_commutation_residual(s, r, g).unwrap();
            worst = worst.max(res);
            parts.push(format!("{name}({s},{r})={res:.2e}"));
        }
    }
    rep.record("8", worst <= 1e-8, parts.join(", "));
}

fn crit9(rep: &mut Report, a_stars: (f64, f64)) {
    let table = TabulatedDensity::from_fn(1e-3, 40.0, |x| (-x).exp()).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (d, a_star) in [(0.0, a_stars.0), (2.0, a_stars.1)] {
        let forms = ExpClosedForms::new(&model(d)).unwrap();
        let tm = validate(ModelParams::example(d), ClaimDistribution::Tabulated(table.clone())).unwrap();
        // the d=2 engine optimum is a boundary; the reference barrier is checked too
        let barriers: Vec<f64> = if d == 2.0 { vec![a_star, B_STAR_D2] } else { vec![a_star] };
        for a in barriers {
            let h = HFunction::build(&tm, a, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
            let xa = forms.xi_all(a)[0];
            let n = (a / 1e-3).round() as usize;
            let mut e: f64 = 0.0;
            for i in 0..=n {
                let x = (i as f64 * 1e-3).min(a);
                e = e.max((h.h(x).unwrap() - forms.xi_all(x)[0] / xa).abs());
            }
            worst = worst.max(e);
            parts.push(format!("d={d} a={a:.5}: {e:.2e}"));
        }
    }
    rep.record("9", worst <= 1e-6, format!("sup |h_tab - h_closed| on [0,a]: {}", parts.join(", ")));
}

fn crit10(rep: &mut Report) {
    let m = validate(ModelParams::example(1.0).with_sigma(0.5), ClaimDistribution::exponential(1.0)).unwrap();
    let a = 1.0;
    let t = Instant::now();
    let h = HFunction::build(&m, a, HOptions { extent: 3.0, ..HOptions::default() }).unwrap();
    let res = h.ide_residual();
    let mut ok = res <= 1e-4;
    let mut parts = vec![format!("residual={res:.2e} (xi'(0)={:.8})", h.xi_prime_zero().unwrap_or(f64::NAN))];
    for x in [0.3, 0.7] {
        let cfg = SimConfig { n_paths: 200_000, seed: 4_242, bridge: true, ..SimConfig::default() };
        let e = simulate_h(&m, a, x, &cfg).unwrap();
        let an = h.h(x).unwrap();
        let z = e.z_score(an);
        ok &= z.abs() <= 3.0;
        parts.push(format!("h({x})={an:.6} vs MC {:.6}±{:.5} (z={z:.2})", e.mean, e.stderr));
    }
    rep.record("10", ok, format!("sigma=0.5 d=1 a={a}: {}; {:.1} s", parts.join("; "), secs(t.elapsed())));
}

fn main() {
    let mut rep = Report { lines: Vec::new() };
    crit1(&mut rep);
    let a_stars = crit2(&mut rep);
    crit3(&mut rep);
    crit4(&mut rep);
    crit5(&mut rep);
    crit6(&mut rep, a_stars);
    crit7(&mut rep);
    crit8(&mut rep);
    crit9(&mut rep, a_stars);
    crit10(&mut rep);

    let failed: Vec<&str> = rep.lines.iter().filter(|(_, p)| !*p).map(|(id, _)| id.as_str()).collect();
    let unexpected: Vec<&str> = failed.iter().copied().filter(|id| !DOCUMENTED.contains(id)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} documented deviation(s), {} unexpected)",
        rep.lines.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        unexpected.len()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
