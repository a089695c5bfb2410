//! Command-line front end: configuration layering, dispatch and report output.
//!
//! Parameters come from (lowest to highest precedence) built-in defaults, a
//! JSON config file given with `--config`, and command-line flags. The
//! default seed can be overridden through the `LOCKRACE_SEED` environment
//! variable.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analytic::{self, UtilityReport};
use crate::equilibrium::{self, Certification, EquilibriumResult};
use crate::error::{Error, Result};
use crate::hjb::{self, HjbGrid, Numerical, ResidualReport};
use crate::model::{validate_params, GameParams, PiecewiseConstantControl, ThresholdPolicy, TwoStagePolicy};
use crate::oracle::{self, GridSpec};
use crate::simulate::{self, RngSpec};

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "LOCKRACE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Human,
    Json,
    Csv,
}

/// Keys accepted in a config file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub beta_i: Option<f64>,
    pub beta_j: Option<f64>,
    pub nu: Option<f64>,
    pub horizon: Option<f64>,
    pub locks: Option<u8>,
    pub n_agents: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub n_segments: Option<usize>,
    pub grid_h: Option<f64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `top` win.
    fn overlay(self, top: ConfigFile) -> ConfigFile {
        ConfigFile {
            beta_i: top.beta_i.or(self.beta_i),
            beta_j: top.beta_j.or(self.beta_j),
            nu: top.nu.or(self.nu),
            horizon: top.horizon.or(self.horizon),
            locks: top.locks.or(self.locks),
            n_agents: top.n_agents.or(self.n_agents),
            reps: top.reps.or(self.reps),
            seed: top.seed.or(self.seed),
            n_segments: top.n_segments.or(self.n_segments),
            grid_h: top.grid_h.or(self.grid_h),
            format: top.format.or(self.format),
            out: top.out.or(self.out),
        }
    }
}

/// Effective settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: GameParams,
    pub reps: usize,
    pub seed: u64,
    pub n_segments: usize,
    pub grid_h: f64,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be a 64-bit unsigned integer, got '{v}'"))),
        Err(_) => Ok(42),
    }
}

impl RunConfig {
    /// Applies defaults and validates.
    pub fn resolve(c: ConfigFile) -> Result<Self> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("missing required key '{key}'")));
        let beta_i = c.beta_i.unwrap_or(1.0);
        let params = validate_params(GameParams {
            beta_i,
            beta_j: c.beta_j.unwrap_or(beta_i),
            nu: need(c.nu, "nu")?,
            horizon: need(c.horizon, "horizon")?,
            locks: c.locks.unwrap_or(1),
            n_agents: c.n_agents.unwrap_or(2),
        })?;
        let cfg = RunConfig {
            params,
            reps: c.reps.unwrap_or(1_000_000),
            seed: match c.seed {
                Some(s) => s,
                None => default_seed()?,
            },
            n_segments: c.n_segments.unwrap_or(40),
            grid_h: c.grid_h.unwrap_or(1e-3),
            format: c.format.unwrap_or_default(),
            out: c.out,
        };
        if cfg.reps == 0 {
            return Err(crate::error::invalid("reps", "must be at least 1"));
        }
        if cfg.n_segments == 0 {
            return Err(crate::error::invalid("n_segments", "must be at least 1"));
        }
        if !(cfg.grid_h > 0.0) {
            return Err(crate::error::invalid("grid_h", "must be positive"));
        }
        Ok(cfg)
    }
}

/// Reads a config file and fills defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::resolve(ConfigFile::read(path)?)
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file with flat keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "beta-i")]
    pub beta_i: Option<f64>,
    #[arg(long = "beta-j")]
    pub beta_j: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub locks: Option<u8>,
    #[arg(long = "n-agents")]
    pub n_agents: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n-segments")]
    pub n_segments: Option<usize>,
    #[arg(long = "grid-h")]
    pub grid_h: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn layer(&self) -> ConfigFile {
        ConfigFile {
            beta_i: self.beta_i,
            beta_j: self.beta_j,
            nu: self.nu,
            horizon: self.horizon,
            locks: self.locks,
            n_agents: self.n_agents,
            reps: self.reps,
            seed: self.seed,
            n_segments: self.n_segments,
            grid_h: self.grid_h,
            format: self.format,
            out: self.out.clone(),
        }
    }

    fn merged(&self) -> Result<ConfigFile> {
        let file = match &self.config {
            Some(path) => ConfigFile::read(path)?,
            None => ConfigFile::default(),
        };
        Ok(file.overlay(self.layer()))
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.merged()?)
    }
}

/// Threshold pair for commands that take a policy profile.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct ProfileArgs {
    /// Threshold of agent i (defaults to its equilibrium threshold)
    #[arg(long = "psi-i")]
    pub psi_i: Option<f64>,
    /// Threshold of agent j (defaults to its equilibrium threshold)
    #[arg(long = "psi-j")]
    pub psi_j: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HjbCase {
    Silent,
    Threshold,
}

#[derive(Debug, Clone, Args)]
pub struct HjbArgs {
    #[arg(long, value_enum, default_value = "silent")]
    pub case: HjbCase,
    /// Reward per contact (silent case)
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Rate bound (silent case; defaults to beta_i)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Residual horizon (silent case; defaults to horizon)
    #[arg(long = "U")]
    pub u: Option<f64>,
    /// Opponent threshold (threshold case)
    #[arg(long)]
    pub psi: Option<f64>,
    /// Use central differences instead of the closed-form partials
    #[arg(long = "finite-difference")]
    pub finite_difference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Nu,
    BetaI,
    BetaJ,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepTarget {
    Solve,
    Br,
    Eval,
    Simulate,
    VerifyHjb,
    Certify,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    /// Number of points, endpoints included
    #[arg(long)]
    pub steps: usize,
    /// Command evaluated at every point
    #[arg(long, value_enum, default_value = "solve")]
    pub run: SweepTarget,
}

#[derive(Debug, Parser)]
#[command(name = "lockrace", version, about = "Equilibria, oracles and simulation for lock acquisition races")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form Nash equilibrium with oracle certification
    #[command(allow_negative_numbers = true)]
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Best response of agent i to agent j's threshold policy
    #[command(allow_negative_numbers = true)]
    Br {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Skip the grid search
        #[arg(long = "no-grid")]
        no_grid: bool,
    },
    /// Utilities of a threshold profile, closed form and quadrature
    #[command(allow_negative_numbers = true)]
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Monte Carlo utility estimates
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// HJB residual of a candidate value function
    #[command(allow_negative_numbers = true)]
    VerifyHjb {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        hjb: HjbArgs,
    },
    /// Run a command over a parameter range, one CSV row per point
    #[command(allow_negative_numbers = true)]
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Equilibrium, oracle deviation search and Monte Carlo confirmation
    #[command(allow_negative_numbers = true)]
    Certify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub segments: usize,
    pub stage1: PiecewiseConstantControl,
    /// Switch time when the control is full-then-off.
    pub switch: Option<f64>,
    pub bang_bang: bool,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrReport {
    pub locks: u8,
    pub opponent_psi: f64,
    pub closed_form: Option<ThresholdPolicy>,
    pub closed_form_utility: Option<f64>,
    pub grid: Option<GridSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub locks: u8,
    pub thresholds: Vec<f64>,
    pub closed_form: Vec<UtilityReport>,
    pub quadrature: Vec<UtilityReport>,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub locks: u8,
    pub reps: usize,
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub estimates: Vec<UtilityReport>,
    /// Closed-form utilities, two-agent games only.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbReport {
    pub case: HjbCase,
    pub nu: f64,
    pub horizon: f64,
    pub switch_time: f64,
    pub residual: ResidualReport,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    /// No profitable deviation found, but the closed-form sufficient
    /// conditions do not hold.
    OracleOnly,
    DeviationFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub psi: f64,
    pub gain: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub equilibrium: EquilibriumResult,
    pub tolerance: f64,
    pub max_gain: f64,
    pub monte_carlo: Vec<UtilityReport>,
    pub reference: Option<Vec<f64>>,
    pub mc_consistent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probe: Vec<ProbePoint>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

/// Everything a subcommand can emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum Report {
    Solve(EquilibriumResult),
    Br(BrReport),
    Eval(EvalReport),
    Simulate(SimulateReport),
    VerifyHjb(HjbReport),
    Sweep(SweepReport),
    Certify(CertifyReport),
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        match self {
            Report::Certify(c) if c.verdict == Verdict::DeviationFound => 2,
            Report::Sweep(s) => s.rows.iter().map(|r| r.report.exit_code()).max().unwrap_or(0),
            _ => 0,
        }
    }
}

fn policy(p: &GameParams, psi: f64, rate: f64) -> Result<TwoStagePolicy> {
    if p.locks == 2 {
        TwoStagePolicy::gamma2(psi, rate, p.horizon)
    } else {
        Ok(TwoStagePolicy::from((ThresholdPolicy::new(psi, rate, p.horizon)?, p.horizon)))
    }
}

fn solve_quick(p: &GameParams) -> Result<EquilibriumResult> {
    solve_with(p, &Certification::skip())
}

fn solve_with(p: &GameParams, cert: &Certification) -> Result<EquilibriumResult> {
    if p.n_agents > 2 {
        let symmetric = GameParams { beta_j: p.beta_i, ..*p };
        if p.beta_i != p.beta_j {
            return Err(Error::Regime("N-agent profiles are only available for symmetric rates".into()));
        }
        return equilibrium::nash_n_player_conjecture(&symmetric, p.n_agents, p.locks);
    }
    Ok(match p.locks {
        1 => equilibrium::nash_one_lock_with(p, cert),
        _ => equilibrium::nash_two_lock_with(p, cert),
    })
}

fn profile_thresholds(p: &GameParams, args: &ProfileArgs) -> Result<Vec<f64>> {
    let n = p.n_agents;
    if let (Some(a), Some(b), 2) = (args.psi_i, args.psi_j, n) {
        return Ok(vec![a, b]);
    }
    let mut thresholds = solve_quick(p)?.thresholds;
    if let Some(psi) = args.psi_i {
        thresholds[0] = psi;
    }
    if let Some(psi) = args.psi_j {
        thresholds[1..].iter_mut().for_each(|t| *t = psi);
    }
    Ok(thresholds)
}

fn profile_policies(p: &GameParams, thresholds: &[f64]) -> Result<Vec<TwoStagePolicy>> {
    thresholds
        .iter()
        .enumerate()
        .map(|(k, &psi)| policy(p, psi, if k == 0 { p.beta_i } else { p.beta_j }))
        .collect()
}

fn run_solve(cfg: &RunConfig) -> Result<Report> {
    let cert = Certification {
        segments: cfg.n_segments,
        tolerance: Certification::tolerance_for(cfg.n_segments),
    };
    Ok(Report::Solve(solve_with(&cfg.params, &cert)?))
}

fn run_br(cfg: &RunConfig, profile: &ProfileArgs, no_grid: bool) -> Result<Report> {
    let p = &cfg.params;
    let psi_j = match profile.psi_j {
        Some(psi) => psi,
        None => solve_quick(p)?.thresholds[1],
    };
    let opponent = policy(&p.swapped(), psi_j, p.beta_j)?;
    let (closed_form, closed_form_utility) = if p.locks == 1 {
        let br = equilibrium::best_response_one_lock(psi_j, p);
        let u = analytic::utility_one_lock(&br.control(p.horizon), &opponent.stage1, p).utility;
        (Some(br), Some(u))
    } else {
        (None, None)
    };
    let grid = if no_grid {
        None
    } else {
        let g = GridSpec::bang_bang(cfg.n_segments, p.beta_i);
        let (stage1, utility) = if p.locks == 1 {
            let r = oracle::grid_best_response(&opponent.stage1, p, &g)?;
            (r.control, r.utility.utility)
        } else {
            let r = oracle::grid_best_response_two_stage(&opponent, p, &g)?;
            (r.policy.stage1, r.utility.utility)
        };
        Some(GridSummary {
            segments: cfg.n_segments,
            switch: oracle::threshold_switch(&stage1),
            bang_bang: oracle::is_bang_bang(&stage1, p.beta_i),
            stage1,
            utility,
        })
    };
    Ok(Report::Br(BrReport {
        locks: p.locks,
        opponent_psi: psi_j,
        closed_form,
        closed_form_utility,
        grid,
    }))
}

fn pair_utilities(p: &GameParams, pis: &[TwoStagePolicy]) -> Result<(Vec<UtilityReport>, Vec<UtilityReport>)> {
    let mut closed = Vec::new();
    let mut quad = Vec::new();
    for (me, other, q) in [(0usize, 1usize, *p), (1, 0, p.swapped())] {
        let (a, b) = (&pis[me], &pis[other]);
        if p.locks == 1 {
            closed.push(analytic::utility_one_lock(&a.stage1, &b.stage1, &q));
            quad.push(oracle::quadrature_utility(&a.stage1, &b.stage1, &q)?);
        } else {
            closed.push(analytic::utility_two_lock(a, b, &q));
            quad.push(oracle::two_stage_utility(a, b, &q)?);
        }
    }
    Ok((closed, quad))
}

fn two_agents(p: &GameParams, what: &str) -> Result<()> {
    if p.n_agents != 2 {
        return Err(Error::Config(format!("{what} is defined for two agents only")));
    }
    Ok(())
}

fn run_eval(cfg: &RunConfig, profile: &ProfileArgs) -> Result<Report> {
    let p = &cfg.params;
    two_agents(p, "eval")?;
    let thresholds = profile_thresholds(p, profile)?;
    let pis = profile_policies(p, &thresholds)?;
    let (closed_form, quadrature) = pair_utilities(p, &pis)?;
    let max_abs_diff = closed_form
        .iter()
        .zip(&quadrature)
        .map(|(a, b)| (a.utility - b.utility).abs())
        .fold(0.0, f64::max);
    Ok(Report::Eval(EvalReport {
        locks: p.locks,
        thresholds,
        closed_form,
        quadrature,
        max_abs_diff,
    }))
}

fn run_simulate(cfg: &RunConfig, profile: &ProfileArgs) -> Result<Report> {
    let p = &cfg.params;
    let thresholds = profile_thresholds(p, profile)?;
    let pis = profile_policies(p, &thresholds)?;
    let estimates = simulate::estimate_utilities(&pis, p, cfg.reps, RngSpec::new(cfg.seed));
    let reference = if p.n_agents == 2 {
        Some(pair_utilities(p, &pis)?.0.iter().map(|u| u.utility).collect())
    } else {
        None
    };
    Ok(Report::Simulate(SimulateReport {
        locks: p.locks,
        reps: cfg.reps,
        seed: cfg.seed,
        thresholds,
        estimates,
        reference,
    }))
}

fn run_verify_hjb(common: &CommonArgs, args: &HjbArgs) -> Result<Report> {
    let mut layer = common.merged()?;
    if layer.horizon.is_none() {
        layer.horizon = args.u;
    }
    if layer.beta_i.is_none() {
        layer.beta_i = args.beta;
    }
    let cfg = RunConfig::resolve(layer)?;
    let p = cfg.params;
    let report = |case, w: &dyn hjb::CandidateValue, beta: f64, horizon: f64| -> Result<Report> {
        let grid = HjbGrid::new(cfg.grid_h, beta, horizon);
        let residual = if args.finite_difference {
            hjb::hjb_residual(&Numerical(w), &grid)?
        } else {
            hjb::hjb_residual(w, &grid)?
        };
        let tol = if args.finite_difference { 1e-4 } else { 1e-10 };
        Ok(Report::VerifyHjb(HjbReport {
            case,
            nu: w.nu(),
            horizon,
            switch_time: w.switch_time(),
            passed: residual.passed(tol),
            residual,
        }))
    };
    match args.case {
        HjbCase::Silent => {
            let beta = args.beta.unwrap_or(p.beta_i);
            let u = args.u.unwrap_or(p.horizon);
            if !(beta > 0.0 && u > 0.0) {
                return Err(crate::error::invalid("beta", "and U must be positive"));
            }
            let w = hjb::candidate_w_silent(args.c, p.nu, beta, u);
            report(HjbCase::Silent, &w, beta, u)
        }
        HjbCase::Threshold => {
            let psi = args
                .psi
                .ok_or_else(|| Error::Config("threshold case needs --psi".into()))?;
            let w = hjb::candidate_against(&p, psi)?;
            report(HjbCase::Threshold, &w, p.beta_i, p.horizon)
        }
    }
}

fn run_certify(cfg: &RunConfig) -> Result<Report> {
    let p = &cfg.params;
    let tolerance = Certification::tolerance_for(cfg.n_segments);
    let cert = Certification {
        segments: cfg.n_segments,
        tolerance,
    };
    let eq = solve_with(p, &cert)?;
    let pis = profile_policies(p, &eq.thresholds)?;
    let monte_carlo = simulate::estimate_utilities(&pis, p, cfg.reps, RngSpec::new(cfg.seed));
    let mut probe = Vec::new();
    let (reference, mc_consistent, max_gain, deviation) = if p.n_agents == 2 {
        let reference: Vec<f64> = pair_utilities(p, &pis)?.0.iter().map(|u| u.utility).collect();
        let consistent = monte_carlo
            .iter()
            .zip(&reference)
            .all(|(m, r)| (m.utility - r).abs() <= 3.0 * m.stderr.unwrap_or(0.0));
        let gains = eq.oracle.as_ref().map(|o| o.gains.clone()).unwrap_or_default();
        let max_gain = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (Some(reference), consistent, max_gain, max_gain > tolerance)
    } else {
        let mut found = false;
        let mut max_gain = f64::NEG_INFINITY;
        let stream_rng = RngSpec::new(cfg.seed).with_stream(1);
        for k in 0..21 {
            let psi = p.horizon * k as f64 / 20.0;
            let dev = policy(p, psi, p.beta_i)?;
            let est = simulate::estimate_deviation(&pis, 0, &dev, p, cfg.reps, stream_rng);
            found |= est.gain > tolerance + 3.0 * est.stderr;
            max_gain = max_gain.max(est.gain);
            probe.push(ProbePoint {
                psi,
                gain: est.gain,
                stderr: est.stderr,
            });
        }
        (None, true, max_gain, found)
    };
    let verdict = if deviation {
        Verdict::DeviationFound
    } else if eq.certified {
        Verdict::Certified
    } else {
        Verdict::OracleOnly
    };
    Ok(Report::Certify(CertifyReport {
        equilibrium: eq,
        tolerance,
        max_gain,
        monte_carlo,
        reference,
        mc_consistent,
        probe,
        verdict,
    }))
}

fn run_sweep(common: &CommonArgs, sweep: &SweepArgs, profile: &ProfileArgs) -> Result<Report> {
    if sweep.steps == 0 {
        return Err(crate::error::invalid("steps", "must be at least 1"));
    }
    let base = common.merged()?;
    let mut rows = Vec::with_capacity(sweep.steps);
    for k in 0..sweep.steps {
        let value = if sweep.steps == 1 {
            sweep.from
        } else {
            sweep.from + (sweep.to - sweep.from) * k as f64 / (sweep.steps - 1) as f64
        };
        let mut layer = base.clone();
        match sweep.param {
            SweepParam::Nu => layer.nu = Some(value),
            SweepParam::BetaI => layer.beta_i = Some(value),
            SweepParam::BetaJ => layer.beta_j = Some(value),
            SweepParam::Horizon => layer.horizon = Some(value),
        }
        let cfg = RunConfig::resolve(layer.clone())?;
        let report = match sweep.run {
            SweepTarget::Solve => run_solve(&cfg)?,
            SweepTarget::Br => run_br(&cfg, profile, false)?,
            SweepTarget::Eval => run_eval(&cfg, profile)?,
            SweepTarget::Simulate => run_simulate(&cfg, profile)?,
            SweepTarget::Certify => run_certify(&cfg)?,
            SweepTarget::VerifyHjb => {
                let args = HjbArgs {
                    case: HjbCase::Silent,
                    c: 1.0,
                    beta: None,
                    u: None,
                    psi: None,
                    finite_difference: false,
                };
                let point = CommonArgs {
                    config: None,
                    ..common_from(&layer)
                };
                run_verify_hjb(&point, &args)?
            }
        };
        rows.push(SweepRow { value, report });
    }
    Ok(Report::Sweep(SweepReport {
        param: sweep.param,
        rows,
    }))
}

fn common_from(c: &ConfigFile) -> CommonArgs {
    CommonArgs {
        config: None,
        beta_i: c.beta_i,
        beta_j: c.beta_j,
        nu: c.nu,
        horizon: c.horizon,
        locks: c.locks,
        n_agents: c.n_agents,
        reps: c.reps,
        seed: c.seed,
        n_segments: c.n_segments,
        grid_h: c.grid_h,
        format: c.format,
        out: c.out.clone(),
    }
}

/// Executes a parsed command, returning the report and the output settings.
pub fn execute(command: &Command) -> Result<(Report, Format, Option<PathBuf>)> {
    let settings = |common: &CommonArgs| -> Result<(Format, Option<PathBuf>)> {
        let merged = common.merged()?;
        Ok((merged.format.unwrap_or_default(), merged.out))
    };
    let (report, common) = match command {
        Command::Solve { common } => (run_solve(&common.resolve()?)?, common),
        Command::Br {
            common,
            profile,
            no_grid,
        } => (run_br(&common.resolve()?, profile, *no_grid)?, common),
        Command::Eval { common, profile } => (run_eval(&common.resolve()?, profile)?, common),
        Command::Simulate { common, profile } => (run_simulate(&common.resolve()?, profile)?, common),
        Command::VerifyHjb { common, hjb } => (run_verify_hjb(common, hjb)?, common),
        Command::Sweep {
            common,
            sweep,
            profile,
        } => (run_sweep(common, sweep, profile)?, common),
        Command::Certify { common } => (run_certify(&common.resolve()?)?, common),
    };
    let (format, out) = settings(common)?;
    Ok((report, format, out))
}

/// Renders a report in the requested format.
pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => serde_json::to_string_pretty(report)
            .map(|s| s + "\n")
            .map_err(|e| Error::Config(e.to_string())),
        Format::Csv => render_csv(report),
        Format::Human => Ok(render_human(report)),
    }
}

/// Parses `argv`, runs the command and writes its report. Returns the exit
/// status: 0 on success, 1 on invalid input, 2 when certification finds a
/// profitable deviation.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command).and_then(|(report, format, out)| {
        let text = render(&report, format)?;
        match out {
            Some(path) => fs::write(&path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::Config(e.to_string()))?,
        }
        Ok(report.exit_code())
    }) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Nine significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn opt(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

fn agent_names(n: usize) -> Vec<String> {
    if n == 2 {
        vec!["i".into(), "j".into()]
    } else {
        (0..n).map(|k| k.to_string()).collect()
    }
}

fn table(report: &Report) -> Table {
    let h = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match report {
        Report::Solve(r) => {
            let mut header = h(&["locks", "regime", "certified", "conjectural", "max_gain"]);
            header.extend(agent_names(r.thresholds.len()).iter().map(|a| format!("psi_{a}")));
            let gain = r.oracle.as_ref().map(|o| o.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let mut row = vec![
                r.locks.to_string(),
                serde_json::to_value(r.regime).unwrap().as_str().unwrap_or("").to_string(),
                r.certified.to_string(),
                r.conjectural.to_string(),
                opt(gain),
            ];
            row.extend(r.thresholds.iter().map(|&t| sig9(t)));
            Table { header, rows: vec![row] }
        }
        Report::Br(r) => Table {
            header: h(&["locks", "opponent_psi", "closed_form_psi", "closed_form_utility", "grid_switch", "grid_utility"]),
            rows: vec![vec![
                r.locks.to_string(),
                sig9(r.opponent_psi),
                opt(r.closed_form.map(|c| c.psi)),
                opt(r.closed_form_utility),
                opt(r.grid.as_ref().and_then(|g| g.switch)),
                opt(r.grid.as_ref().map(|g| g.utility)),
            ]],
        },
        Report::Eval(r) => Table {
            header: h(&["agent", "psi", "success_prob", "expected_cost", "utility", "quadrature_utility"]),
            rows: (0..r.closed_form.len())
                .map(|k| {
                    vec![
                        agent_names(r.closed_form.len())[k].clone(),
                        sig9(r.thresholds[k]),
                        sig9(r.closed_form[k].success_prob),
                        sig9(r.closed_form[k].expected_cost),
                        sig9(r.closed_form[k].utility),
                        sig9(r.quadrature[k].utility),
                    ]
                })
                .collect(),
        },
        Report::Simulate(r) => Table {
            header: h(&["agent", "psi", "success_prob", "expected_cost", "utility", "stderr", "reference"]),
            rows: (0..r.estimates.len())
                .map(|k| {
                    let e = &r.estimates[k];
                    vec![
                        agent_names(r.estimates.len())[k].clone(),
                        sig9(r.thresholds[k]),
                        sig9(e.success_prob),
                        sig9(e.expected_cost),
                        sig9(e.utility),
                        opt(e.stderr),
                        opt(r.reference.as_ref().map(|v| v[k])),
                    ]
                })
                .collect(),
        },
        Report::VerifyHjb(r) => Table {
            header: h(&["case", "max_residual", "boundary_error", "sign_violations", "non_finite", "h_t", "h_x", "passed"]),
            rows: vec![vec![
                serde_json::to_value(r.case).unwrap().as_str().unwrap_or("").to_string(),
                sig9(r.residual.max_residual),
                sig9(r.residual.boundary_error),
                r.residual.sign_violations.to_string(),
                r.residual.non_finite.to_string(),
                sig9(r.residual.h_t),
                sig9(r.residual.h_x),
                r.passed.to_string(),
            ]],
        },
        Report::Certify(r) => {
            let mut header = h(&["verdict", "max_gain", "tolerance", "mc_consistent"]);
            header.extend(agent_names(r.equilibrium.thresholds.len()).iter().map(|a| format!("psi_{a}")));
            let mut row = vec![
                serde_json::to_value(r.verdict).unwrap().as_str().unwrap_or("").to_string(),
                sig9(r.max_gain),
                sig9(r.tolerance),
                r.mc_consistent.to_string(),
            ];
            row.extend(r.equilibrium.thresholds.iter().map(|&t| sig9(t)));
            Table { header, rows: vec![row] }
        }
        Report::Sweep(s) => {
            let param = serde_json::to_value(s.param).unwrap().as_str().unwrap_or("").to_string();
            let mut header = vec![param];
            let mut rows = Vec::new();
            for (k, row) in s.rows.iter().enumerate() {
                let inner = table(&row.report);
                if k == 0 {
                    header.extend(inner.header);
                }
                for r in inner.rows {
                    let mut line = vec![sig9(row.value)];
                    line.extend(r);
                    rows.push(line);
                }
            }
            Table { header, rows }
        }
    }
}

fn render_csv(report: &Report) -> Result<String> {
    let t = table(report);
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(&t.header).map_err(err)?;
    for row in &t.rows {
        w.write_record(row).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn render_human(report: &Report) -> String {
    let mut s = String::new();
    match report {
        Report::Solve(r) => {
            s += &format!("regime: {}\n", r.regime.describe());
            let names = agent_names(r.thresholds.len());
            let kind = if r.locks == 2 { "Γ₂" } else { "Γ" };
            for (k, psi) in r.thresholds.iter().enumerate() {
                s += &format!("agent {}: {kind}({}) at rate {}\n", names[k], sig9(*psi), sig9(r.rates[k]));
            }
            for c in &r.conditions_checked {
                s += &format!(
                    "condition '{}': lhs {} rhs {} -> {}\n",
                    c.name,
                    sig9(c.lhs),
                    opt(c.rhs),
                    match c.satisfied {
                        Some(true) => "pass",
                        Some(false) => "fail",
                        None => "not applicable",
                    }
                );
            }
            if let Some(o) = &r.oracle {
                let gains: Vec<String> = o.gains.iter().map(|&g| sig9(g)).collect();
                s += &format!("oracle ({} segments, tol {}): gains [{}]\n", o.segments, sig9(o.tolerance), gains.join(", "));
            }
            s += &format!(
                "certified: {}{}\n",
                r.certified,
                if r.conjectural { " (conjectural)" } else { "" }
            );
            for n in &r.notes {
                s += &format!("note: {n}\n");
            }
        }
        Report::VerifyHjb(r) => {
            s += &format!(
                "case {:?}: max residual {} ({:?}), boundary error {}, sign violations {}, non-finite {}, {} nodes\npassed: {}\n",
                r.case,
                sig9(r.residual.max_residual),
                r.residual.partials,
                sig9(r.residual.boundary_error),
                r.residual.sign_violations,
                r.residual.non_finite,
                r.residual.nodes,
                r.passed
            );
        }
        Report::Certify(r) => {
            s += &render_human(&Report::Solve(r.equilibrium.clone()));
            for p in &r.probe {
                s += &format!("probe psi {}: gain {} ± {}\n", sig9(p.psi), sig9(p.gain), sig9(p.stderr));
            }
            for (k, m) in r.monte_carlo.iter().enumerate() {
                s += &format!(
                    "monte carlo agent {}: {} ± {}{}\n",
                    k,
                    sig9(m.utility),
                    opt(m.stderr),
                    r.reference.as_ref().map(|v| format!(" (closed form {})", sig9(v[k]))).unwrap_or_default()
                );
            }
            let verdict = serde_json::to_value(r.verdict).unwrap();
            s += &format!(
                "verdict: {}, max gain {} (tol {})\n",
                verdict.as_str().unwrap_or(""),
                sig9(r.max_gain),
                sig9(r.tolerance)
            );
        }
        other => {
            let t = table(other);
            let widths: Vec<usize> = (0..t.header.len())
                .map(|c| t.rows.iter().map(|r| r[c].len()).chain([t.header[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    + "\n"
            };
            s += &line(&t.header);
            for r in &t.rows {
                s += &line(r);
            }
        }
    }
    s
}
