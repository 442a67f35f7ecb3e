//! One function per subcommand.

use std::path::PathBuf;

use parisdiv_core::firstpassage::UpcrossEngine;
use parisdiv_core::lundberg::lundberg_root;
use parisdiv_core::simulator::{simulate_h, simulate_upcross, simulate_value};
use parisdiv_core::valuation::{
    density_shape_advisory, hjb_curve, hjb_verify_at, optimal_barrier, value_barrier, BarrierSolution,
};
use parisdiv_core::{
    validate, HFunction, HOptions, HjbTolerances, SimConfig, SimEstimate, ValidatedModel,
};
use serde_json::json;

use crate::config::{Mode, Settings, Target};
use crate::output::{io_fail, num, Csv, Outcome};
use crate::Failure;

/// Grid margin kept beyond the furthest point a command evaluates.
const EXTENT_MARGIN: f64 = 1.0;

fn model(s: &Settings) -> Result<ValidatedModel, Failure> {
    Ok(validate(s.params, s.claim_distribution()?)?)
}

fn h_options(s: &Settings, reach: f64) -> HOptions {
    HOptions { step: s.grid_step, extent: (reach + EXTENT_MARGIN).max(2.0), ..HOptions::default() }
}

fn sim_config(s: &Settings) -> SimConfig {
    SimConfig {
        n_paths: s.paths,
        seed: s.seed,
        dt: s.dt,
        t_max: s.t_max,
        discount_mode: s.mode.into(),
        bridge: s.bridge,
        ..SimConfig::default()
    }
}

fn barrier_for(s: &Settings, m: &ValidatedModel, reach: f64) -> Result<(f64, Option<BarrierSolution>), Failure> {
    match s.a {
        Some(a) if a >= 0.0 => Ok((a, None)),
        Some(a) => Err(Failure::Input(format!("barrier a must be >= 0 (got {a})"))),
        None => {
            let sol = optimal_barrier(m, s.a_max, h_options(s, s.a_max + reach))?;
            Ok((sol.a_star, Some(sol)))
        }
    }
}

fn h_curve(h: &HFunction) -> Result<Csv, Failure> {
    let mut csv = Csv::new("x,h,hprime,hprimeprime");
    for row in h.curve()? {
        csv.push(&row);
    }
    Ok(csv)
}

/// {0, 0.5, a} without repeats.
fn default_points(a: f64) -> Vec<f64> {
    let mut xs = vec![0.0];
    for x in [0.5, a] {
        if !xs.contains(&x) {
            xs.push(x);
        }
    }
    xs
}

fn model_json(m: &ValidatedModel, s: &Settings) -> serde_json::Value {
    json!({ "params": m.params(), "claims": s.claims, "theta": m.theta(), "grid_step": s.grid_step })
}

pub fn root(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let root = lundberg_root(&m)?;
    let mut o = Outcome::new("root", json!({ "model": model_json(&m, s), "root": root }));
    o.line(format!("rho={}", root.rho));
    o.line(format!("residual={:.3e}", root.residual));
    o.line(format!("iterations={}", root.iterations));
    Ok(o)
}

pub fn transform(s: &Settings) -> Result<Outcome, Failure> {
    if s.y.is_empty() {
        return Err(Failure::Input("transform needs --y".into()));
    }
    let m = model(s)?;
    let y_max = s.y.iter().cloned().fold(0.0, f64::max);
    let engine = UpcrossEngine::new(&m, s.params.d, y_max)?;
    let mut rows = Vec::new();
    let mut csv = Csv::new("y,phi,truncation_k,tail_bound");
    for &y in &s.y {
        let t = engine.eval(y)?;
        csv.rows.push(vec![num(y), num(t.value), t.truncation_k.to_string(), num(t.tail_bound)]);
        rows.push(t);
    }
    let mut o = Outcome::new("transform", json!({ "model": model_json(&m, s), "rho": engine.rho(), "values": rows }));
    o.line(format!("rho={}", engine.rho()));
    o.csv = Some(csv);
    Ok(o)
}

pub fn h(s: &Settings) -> Result<Outcome, Failure> {
    let a = s.a.ok_or_else(|| Failure::Input("h needs --a".into()))?;
    let m = model(s)?;
    let h = HFunction::build(&m, a, h_options(s, a))?;
    let residual = h.ide_residual();
    let mut o = Outcome::new(
        "h",
        json!({
            "model": model_json(&m, s),
            "a": a,
            "method": format!("{:?}", h.method()),
            "h0": h.h(0.0)?,
            "xi_prime_zero": h.xi_prime_zero(),
            "ide_residual": residual,
        }),
    );
    o.line(format!("a={a}"));
    o.line(format!("method={:?}", h.method()));
    o.line(format!("h(0)={}", h.h(0.0)?));
    o.line(format!("ide_residual={residual:.3e}"));
    o.csv = Some(h_curve(&h)?);
    Ok(o)
}

pub fn value(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let (a, sol) = barrier_for(s, &m, 0.0)?;
    let xs = if s.x.is_empty() { default_points(a) } else { s.x.clone() };
    let h = match sol {
        Some(sol) => sol.h,
        None => HFunction::build(&m, a, h_options(s, a))?,
    };
    let mut csv = Csv::new("x,value");
    let mut vals = Vec::new();
    for &x in &xs {
        let v = value_barrier(&h, a, x)?;
        csv.push(&[x, v]);
        vals.push(json!({ "x": x, "value": v }));
    }
    let mut o = Outcome::new("value", json!({ "model": model_json(&m, s), "a": a, "optimal": s.a.is_none(), "values": vals }));
    o.line(format!("a={a}{}", if s.a.is_none() { " (optimal)" } else { "" }));
    o.csv = Some(csv);
    Ok(o)
}

pub fn barrier(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let sol = optimal_barrier(&m, s.a_max, h_options(s, s.a_max))?;
    let v0 = sol.value(0.0)?;
    let advisory = density_shape_advisory(m.claims());
    let mut o = Outcome::new(
        "barrier",
        json!({ "model": model_json(&m, s), "solution": sol, "value_at_zero": v0, "advisory": advisory }),
    );
    o.line(format!("a_star={}", sol.a_star));
    o.line(format!("boundary={}", sol.boundary));
    if !sol.alternative_roots.is_empty() {
        o.line(format!("alternative_roots={:?}", sol.alternative_roots));
    }
    o.line(format!("value_at_zero={v0}"));
    o.line(format!("advisory={}", advisory.message));
    if s.out.is_some() {
        o.csv = Some(h_curve(&sol.h)?);
    }
    Ok(o)
}

fn hjb_csv(curve: &[(f64, f64)], from: f64, step: f64) -> Csv {
    let mut csv = Csv::new("x,generator_minus_q_v");
    for &(x, g) in curve.iter().filter(|(x, _)| *x >= from - 0.5 * step) {
        csv.push(&[x, g]);
    }
    csv
}

pub fn verify(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let (a, sol) = barrier_for(s, &m, s.x_span)?;
    let x_max = a + s.x_span;
    let h = match sol {
        Some(sol) => sol.h,
        None => HFunction::build(&m, a, h_options(s, x_max))?,
    };
    let h = if h.extent() < x_max { HFunction::build(&m, a, h_options(s, x_max))? } else { h };
    let report = hjb_verify_at(&h, a, x_max, HjbTolerances::default())?;
    let advisory = density_shape_advisory(m.claims());
    let mut o = Outcome::new(
        "verify",
        json!({ "model": model_json(&m, s), "a": a, "optimal": s.a.is_none(), "report": report, "advisory": advisory }),
    );
    o.line(format!("a={a}"));
    for c in &report.checks {
        o.line(format!(
            "{}: {} (worst {:.6e} at x={:.6}, tolerance {:.1e}, {} points)",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.worst_value,
            c.worst_x,
            c.tolerance,
            c.points
        ));
    }
    o.line(format!("advisory={}", advisory.message));
    o.line(format!("verdict={}", if report.passed { "PASS" } else { "FAIL" }));
    o.exit = if report.passed { 0 } else { 1 };
    if s.out.is_some() {
        o.csv = Some(hjb_csv(&report.curve, 0.0, report.step));
    }
    Ok(o)
}

pub fn figures(s: &Settings) -> Result<Outcome, Failure> {
    let dir = s.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
    std::fs::create_dir_all(&dir).map_err(|e| io_fail(&dir, e))?;
    let mut entries = Vec::new();
    let mut o = Outcome::new("figures", json!({}));
    let mut all_ok = true;
    for d in [0.0, 2.0] {
        let mut sd = s.clone();
        sd.params.d = d;
        let m = model(&sd)?;
        let sol = optimal_barrier(&m, s.a_max, h_options(&sd, s.a_max + s.x_span))?;
        let a = sol.a_star;
        let h_path = dir.join(format!("h_d{d}.csv"));
        h_curve(&sol.h)?.write(&h_path)?;
        let curve = hjb_curve(&sol.h, a, a + s.x_span, sol.h.step())?;
        let csv = hjb_csv(&curve, a, sol.h.step());
        let hjb_path = dir.join(format!("hjb_d{d}.csv"));
        csv.write(&hjb_path)?;
        let max_g = curve.iter().filter(|(x, _)| *x >= a - 0.5 * sol.h.step()).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let ok = max_g <= HjbTolerances::default().upper;
        all_ok &= ok;
        o.line(format!(
            "d={d}: a_star={a} boundary={} max (G-q)v on [a*, a*+{}]={max_g:.3e} {} -> {}, {}",
            sol.boundary,
            s.x_span,
            if ok { "ok" } else { "POSITIVE" },
            h_path.display(),
            hjb_path.display()
        ));
        entries.push(json!({
            "d": d,
            "a_star": a,
            "boundary": sol.boundary,
            "max_generator_minus_q_v": max_g,
            "nonpositive": ok,
            "h_curve": h_path,
            "hjb_curve": hjb_path,
        }));
    }
    o.report = json!({ "x_span": s.x_span, "curves": entries, "all_nonpositive": all_ok });
    Ok(o)
}

fn estimate_json(x: f64, e: &SimEstimate) -> serde_json::Value {
    json!({ "x": x, "estimate": e })
}

pub fn simulate(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let cfg = sim_config(s);
    let mut rows = Vec::new();
    let mut o = Outcome::new("simulate", json!({}));
    let mut csv = Csv::new("point,mc_mean,mc_stderr,truncation_bias_bound");
    let mut a_used = None;
    match s.target {
        Target::Upcross => {
            if s.y.is_empty() {
                return Err(Failure::Input("simulate --target upcross needs --y".into()));
            }
            for &y in &s.y {
                let e = simulate_upcross(&m, y, s.params.d, &cfg)?;
                csv.push(&[y, e.mean, e.stderr, e.truncation_bias_bound]);
                rows.push(json!({ "y": y, "estimate": e }));
            }
        }
        Target::Value | Target::H => {
            let (a, _) = match (s.target, s.a) {
                (Target::H, None) => return Err(Failure::Input("simulate --target h needs --a".into())),
                _ => barrier_for(s, &m, 0.0)?,
            };
            a_used = Some(a);
            let xs = if s.x.is_empty() { vec![0.0] } else { s.x.clone() };
            for &x in &xs {
                let e = if s.target == Target::H { simulate_h(&m, a, x, &cfg)? } else { simulate_value(&m, a, x, &cfg)? };
                csv.push(&[x, e.mean, e.stderr, e.truncation_bias_bound]);
                rows.push(estimate_json(x, &e));
            }
        }
    }
    o.report = json!({
        "model": model_json(&m, s),
        "target": format!("{:?}", s.target).to_lowercase(),
        "a": a_used,
        "config": cfg,
        "estimates": rows,
    });
    if let Some(a) = a_used {
        o.line(format!("a={a}"));
    }
    o.line(format!("target={:?} mode={:?} paths={} seed={}", s.target, s.mode, s.paths, s.seed));
    o.csv = Some(csv);
    Ok(o)
}

pub fn compare(s: &Settings) -> Result<Outcome, Failure> {
    let m = model(s)?;
    let (a, sol) = barrier_for(s, &m, 0.0)?;
    let h = match sol {
        Some(sol) => sol.h,
        None => HFunction::build(&m, a, h_options(s, a))?,
    };
    let xs = if s.x.is_empty() { default_points(a) } else { s.x.clone() };
    let cfg = sim_config(s);
    let mut csv = Csv::new("x,analytic,mc_mean,mc_stderr,z");
    let mut rows = Vec::new();
    let mut max_z: f64 = 0.0;
    for &x in &xs {
        let an = value_barrier(&h, a, x)?;
        let e = simulate_value(&m, a, x, &cfg)?;
        let z = e.z_score(an);
        max_z = max_z.max(z.abs());
        csv.push(&[x, an, e.mean, e.stderr, z]);
        rows.push(json!({ "x": x, "analytic": an, "estimate": e, "z": z }));
    }
    let variant = s.mode == Mode::TerminalFactor;
    let mut o = Outcome::new(
        "compare",
        json!({
            "model": model_json(&m, s),
            "a": a,
            "config": cfg,
            "rows": rows,
            "max_abs_z": max_z,
            "semantics_variant": variant,
        }),
    );
    o.line(format!("a={a} paths={} seed={} max|z|={max_z:.3}", s.paths, s.seed));
    if variant {
        o.line("note: TerminalFactor is a semantics variant; the analytic column is the PerPayment value");
    }
    o.csv = Some(csv);
    Ok(o)
}
