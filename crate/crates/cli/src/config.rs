//! Flags, the flat JSON config file and their merge (flags win).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use parisdiv_core::{ClaimDistribution, DiscountMode, ModelParams, TabulatedDensity};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "parisdiv", version, about = "Dividend barrier valuation under Parisian ruin with claim-count discounting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Lundberg equation for rho.
    Root,
    /// Up-crossing transform Phi_d(y) at the requested levels (horizon --d).
    Transform(TransformArgs),
    /// h^d and its first two derivatives on [0, a].
    H(HArgs),
    /// Value of the barrier strategy at the requested capitals.
    Value(ValueArgs),
    /// Optimal barrier a*, optionally writing the h-curve on [0, a*].
    Barrier(BarrierArgs),
    /// HJB certificate for the barrier strategy (exit 1 when it fails).
    Verify(VerifyArgs),
    /// Curve data for d in {0, 2}: h on [0, a*] and (G-q)v on [a*, a*+x_span].
    Figures(FiguresArgs),
    /// Monte Carlo estimate of the value, h^d or the up-crossing transform.
    Simulate(SimulateArgs),
    /// Analytic value against Monte Carlo with z-scores.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Parisian delay; "inf" disables ruin.
    #[arg(long, global = true)]
    pub d: Option<f64>,
    /// exponential:<mu> or table:<path>
    #[arg(long, global = true)]
    pub claims: Option<String>,
    #[arg(long = "grid-step", global = true)]
    pub grid_step: Option<f64>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct HArgs {
    #[arg(long)]
    pub a: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValueArgs {
    /// Barrier level; defaults to the optimal barrier.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BarrierArgs {
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
    #[arg(long = "x-span")]
    pub x_span: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
    #[arg(long = "x-span")]
    pub x_span: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    /// Brownian-bridge crossing correction (sigma > 0).
    #[arg(long)]
    pub bridge: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub target: Option<Target>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Vec<f64>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PerPayment,
    TerminalFactor,
}

impl From<Mode> for DiscountMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PerPayment => DiscountMode::PerPayment,
            Mode::TerminalFactor => DiscountMode::TerminalFactor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Value,
    H,
    Upcross,
}

/// A number, or the string "inf".
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Real {
    Num(f64),
    Text(InfText),
}

#[derive(Debug, Clone, Copy, Deserialize)]
enum InfText {
    #[serde(rename = "inf")]
    Inf,
}

impl Real {
    fn get(self) -> f64 {
        match self {
            Real::Num(v) => v,
            Real::Text(InfText::Inf) => f64::INFINITY,
        }
    }
}

/// Flat config file: keys mirror the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    lambda: Option<f64>,
    c: Option<f64>,
    sigma: Option<f64>,
    q: Option<f64>,
    r: Option<f64>,
    d: Option<Real>,
    claims: Option<String>,
    grid_step: Option<f64>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    paths: Option<usize>,
    format: Option<Format>,
    a: Option<f64>,
    a_max: Option<f64>,
    x: Option<Vec<f64>>,
    y: Option<Vec<f64>>,
    x_span: Option<f64>,
    target: Option<Target>,
    mode: Option<Mode>,
    dt: Option<f64>,
    t_max: Option<f64>,
    bridge: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("config {}: {e}", path.display())))
    }
}

/// Fully merged settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub params: ModelParams,
    pub claims: String,
    pub grid_step: f64,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub paths: usize,
    pub format: Format,
    pub a: Option<f64>,
    pub a_max: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_span: f64,
    pub target: Target,
    pub mode: Mode,
    pub dt: f64,
    pub t_max: Option<f64>,
    pub bridge: bool,
}

fn list(flag: &[f64], file: &Option<Vec<f64>>) -> Vec<f64> {
    if flag.is_empty() {
        file.clone().unwrap_or_default()
    } else {
        flag.to_vec()
    }
}

impl Settings {
    pub fn merge(cli: &Cli, file: FileConfig) -> Settings {
        let c = &cli.common;
        let base = ModelParams::example(0.0);
        let params = ModelParams {
            lambda: c.lambda.or(file.lambda).unwrap_or(base.lambda),
            c: c.c.or(file.c).unwrap_or(base.c),
            sigma: c.sigma.or(file.sigma).unwrap_or(base.sigma),
            q: c.q.or(file.q).unwrap_or(base.q),
            r: c.r.or(file.r).unwrap_or(base.r),
            d: c.d.or(file.d.map(Real::get)).unwrap_or(base.d),
        };
        let mut s = Settings {
            params,
            claims: c.claims.clone().or(file.claims).unwrap_or_else(|| "exponential:1".into()),
            grid_step: c.grid_step.or(file.grid_step).unwrap_or(1e-3),
            out: c.out.clone().or(file.out),
            seed: c.seed.or(file.seed).unwrap_or(1),
            paths: c.paths.or(file.paths).unwrap_or(100_000),
            format: c.format.or(file.format).unwrap_or(Format::Text),
            a: file.a,
            a_max: file.a_max.unwrap_or(3.0),
            x: file.x.clone().unwrap_or_default(),
            y: file.y.clone().unwrap_or_default(),
            x_span: file.x_span.unwrap_or(10.0),
            target: file.target.unwrap_or(Target::Value),
            mode: file.mode.unwrap_or(Mode::PerPayment),
            dt: file.dt.unwrap_or(1e-4),
            t_max: file.t_max,
            bridge: file.bridge.unwrap_or(false),
        };
        let sim = |s: &mut Settings, a: &SimArgs| {
            s.mode = a.mode.unwrap_or(s.mode);
            s.dt = a.dt.unwrap_or(s.dt);
            s.t_max = a.t_max.or(s.t_max);
            s.bridge |= a.bridge;
        };
        match &cli.command {
            Command::Root => {}
            Command::Transform(a) => s.y = list(&a.y, &file.y),
            Command::H(a) => s.a = a.a.or(s.a),
            Command::Value(a) => {
                s.a = a.a.or(s.a);
                s.a_max = a.a_max.unwrap_or(s.a_max);
                s.x = list(&a.x, &file.x);
            }
            Command::Barrier(a) => s.a_max = a.a_max.unwrap_or(s.a_max),
            Command::Verify(a) => {
                s.a = a.a.or(s.a);
                s.a_max = a.a_max.unwrap_or(s.a_max);
                s.x_span = a.x_span.unwrap_or(s.x_span);
            }
            Command::Figures(a) => {
                s.a_max = a.a_max.unwrap_or(s.a_max);
                s.x_span = a.x_span.unwrap_or(s.x_span);
            }
            Command::Simulate(a) => {
                s.target = a.target.unwrap_or(s.target);
                s.a = a.a.or(s.a);
                s.a_max = a.a_max.unwrap_or(s.a_max);
                s.x = list(&a.x, &file.x);
                s.y = list(&a.y, &file.y);
                sim(&mut s, &a.sim);
            }
            Command::Compare(a) => {
                s.a = a.a.or(s.a);
                s.a_max = a.a_max.unwrap_or(s.a_max);
                s.x = list(&a.x, &file.x);
                sim(&mut s, &a.sim);
            }
        }
        s
    }

    pub fn claim_distribution(&self) -> Result<ClaimDistribution, Failure> {
        parse_claims(&self.claims)
    }
}

/// `exponential:<mu>` or `table:<path>`.
pub fn parse_claims(spec: &str) -> Result<ClaimDistribution, Failure> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| Failure::Input(format!("--claims expects exponential:<mu> or table:<path> (got {spec:?})")))?;
    match kind {
        "exponential" => {
            let mu: f64 = arg
                .trim()
                .parse()
                .map_err(|_| Failure::Input(format!("exponential rate {arg:?} is not a number")))?;
            Ok(ClaimDistribution::exponential(mu))
        }
        "table" => load_table(Path::new(arg)),
        _ => Err(Failure::Input(format!("unknown claims kind {kind:?}; use exponential or table"))),
    }
}

/// Two columns `x,density` on a uniform grid starting at 0. A header line and
/// lines starting with '#' are skipped.
pub fn load_table(path: &Path) -> Result<ClaimDistribution, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read claims table {}: {e}", path.display())))?;
    let bad = |m: String| Failure::Input(format!("claims table {}: {m}", path.display()));
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad(format!("line {} must have two columns", ln + 1)));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(f)) => {
                xs.push(x);
                fs.push(f);
            }
            _ if xs.is_empty() => continue,
            _ => return Err(bad(format!("line {} is not numeric", ln + 1))),
        }
    }
    if xs.len() < 3 {
        return Err(bad("need at least 3 rows".into()));
    }
    if xs[0].abs() > 1e-12 {
        return Err(bad(format!("grid must start at 0 (starts at {})", xs[0])));
    }
    let step = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    for (i, x) in xs.iter().enumerate() {
        if (x - i as f64 * step).abs() > 1e-9 * step.max(1.0) {
            return Err(bad(format!("grid is not uniform at row {}", i + 1)));
        }
    }
    let t = TabulatedDensity::new(step, fs).map_err(|e| Failure::Core(e.into()))?;
    Ok(ClaimDistribution::Tabulated(t))
}
