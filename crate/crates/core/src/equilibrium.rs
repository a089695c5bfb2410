//! Best responses and Nash equilibria among threshold policies.
//!
//! One lock: against `Γ(ψ)` the best response is `Γ(T)` while the opponent's
//! frozen survival `e^{−β_j ψ}` still exceeds `ν`, otherwise `Γ(θ)` with
//! `θ = min{−ln ν / β_j, T}`. Two locks: profiles of `Γ₂(ψ)` policies, with
//! the interior thresholds given by a scalar fixed point solved by bisection.
//!
//! Internally agents are ordered so that `β_j ≥ β_i`; results are reported
//! in the caller's labels.

use serde::{Deserialize, Serialize};

use crate::analytic::{self, silent_value};
use crate::error::{Error, Result};
use crate::model::{GameParams, StageFlag, StageState, ThresholdPolicy, TwoStagePolicy};
use crate::oracle::{self, GridSpec};

/// Which case of the equilibrium characterization produced a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Cost too high for any effort to pay (`ν ≥ 1` one lock, `ν ≥ 1/2` two locks).
    NuSilence,
    /// One lock, `ν < 1`: threshold pair.
    OneLockThreshold,
    /// Two locks: even the faster agent cannot profit against silence.
    Silence,
    /// Two locks: the slower agent is silent, the faster one stops early.
    OneSilent,
    /// Two locks: both thresholds solve the interior fixed point.
    Interior,
}

impl Regime {
    pub fn describe(self) -> &'static str {
        match self {
            Regime::NuSilence => "nu above bound: silence",
            Regime::OneLockThreshold => "one-lock threshold pair",
            Regime::Silence => "silence",
            Regime::OneSilent => "one agent silent",
            Regime::Interior => "interior thresholds",
        }
    }
}

/// One evaluated sufficient condition `lhs > rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub lhs: f64,
    /// `None` when the condition's denominator is not positive.
    pub rhs: Option<f64>,
    /// `None` when the condition is not applicable.
    pub satisfied: Option<bool>,
}

/// Grid deviation gains recorded while certifying a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCertificate {
    pub segments: usize,
    pub tolerance: f64,
    /// Best unilateral grid improvement, per agent.
    pub gains: Vec<f64>,
}

impl OracleCertificate {
    pub fn passed(&self) -> bool {
        self.gains.iter().all(|&g| g <= self.tolerance)
    }
}

/// A threshold profile with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub locks: u8,
    /// Threshold of each agent, in input order (`i`, `j`, then any others).
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
    pub horizon: f64,
    pub regime: Regime,
    pub conditions_checked: Vec<ConditionCheck>,
    pub certified: bool,
    pub conjectural: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCertificate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EquilibriumResult {
    pub fn threshold_policy(&self, agent: usize) -> ThresholdPolicy {
        ThresholdPolicy {
            psi: self.thresholds[agent],
            rate: self.rates[agent],
        }
    }

    /// The agent's policy as a two-stage policy (`Γ₂(ψ)` for two locks).
    pub fn policy(&self, agent: usize) -> TwoStagePolicy {
        let tp = self.threshold_policy(agent);
        if self.locks == 2 {
            TwoStagePolicy::gamma2(tp.psi, tp.rate, self.horizon)
                .expect("thresholds lie in [0, T]")
        } else {
            TwoStagePolicy::from((tp, self.horizon))
        }
    }
}

/// Oracle settings used to certify a closed-form profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    /// Grid segments for the deviation search; zero disables it.
    pub segments: usize,
    pub tolerance: f64,
}

impl Certification {
    pub fn one_lock() -> Self {
        Certification {
            segments: 80,
            tolerance: 2e-3,
        }
    }

    pub fn two_lock() -> Self {
        Certification {
            segments: 80,
            tolerance: 2e-3,
        }
    }

    pub fn skip() -> Self {
        Certification {
            segments: 0,
            tolerance: 0.0,
        }
    }

    /// Deviation tolerance for a grid of `segments`.
    pub fn tolerance_for(segments: usize) -> f64 {
        if segments >= 80 {
            2e-3
        } else {
            5e-3
        }
    }
}

/// Agent selector for the two-lock fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    I,
    J,
}

/// `min{−ln ν / β_opp, T}`.
pub fn theta(nu: f64, beta_opp: f64, horizon: f64) -> f64 {
    (-nu.ln() / beta_opp).min(horizon)
}

/// Best response of agent `i` to the opponent's `Γ(psi_j)` in the one-lock race.
/// At `ν = e^{−β_j ψ}` both branches tie and the shorter threshold is returned.
pub fn best_response_one_lock(psi_j: f64, p: &GameParams) -> ThresholdPolicy {
    if p.nu >= 1.0 {
        return ThresholdPolicy::silent(p.beta_i);
    }
    let psi = if p.nu < (-p.beta_j * psi_j).exp() {
        p.horizon
    } else {
        theta(p.nu, p.beta_j, p.horizon)
    };
    ThresholdPolicy {
        psi,
        rate: p.beta_i,
    }
}

fn swap_back(mut r: EquilibriumResult) -> EquilibriumResult {
    r.thresholds.swap(0, 1);
    r.rates.swap(0, 1);
    if let Some(o) = r.oracle.as_mut() {
        o.gains.swap(0, 1);
    }
    r
}

/// One-lock equilibrium with the default certification grid.
pub fn nash_one_lock(p: &GameParams) -> EquilibriumResult {
    nash_one_lock_with(p, &Certification::one_lock())
}

pub fn nash_one_lock_with(p: &GameParams, cert: &Certification) -> EquilibriumResult {
    if p.beta_i > p.beta_j {
        return swap_back(nash_one_lock_with(&p.swapped(), cert));
    }
    let t = p.horizon;
    let (thresholds, regime) = if p.nu >= 1.0 {
        ([0.0, 0.0], Regime::NuSilence)
    } else {
        let theta_i = theta(p.nu, p.beta_j, t);
        let psi_j = if p.beta_j == p.beta_i {
            theta(p.nu, p.beta_i, t)
        } else {
            t
        };
        ([theta_i, psi_j], Regime::OneLockThreshold)
    };
    let mut result = EquilibriumResult {
        locks: 1,
        thresholds: thresholds.to_vec(),
        rates: vec![p.beta_i, p.beta_j],
        horizon: t,
        regime,
        conditions_checked: Vec::new(),
        certified: false,
        conjectural: false,
        oracle: None,
        notes: Vec::new(),
    };
    let mutual = mutual_best_response_one_lock(&result, p);
    result.conditions_checked.extend(mutual);
    let mutual_ok = result
        .conditions_checked
        .iter()
        .all(|c| c.satisfied == Some(true));
    certify(&mut result, p, cert);
    result.certified = mutual_ok && result.oracle.as_ref().is_none_or(|o| o.passed());
    result
}

fn mutual_best_response_one_lock(r: &EquilibriumResult, p: &GameParams) -> Vec<ConditionCheck> {
    let t = p.horizon;
    let sides = [(0usize, 1usize, *p), (1, 0, p.swapped())];
    sides
        .iter()
        .map(|&(me, other, q)| {
            let own = r.threshold_policy(me).control(t);
            let opp = r.threshold_policy(other).control(t);
            let br = best_response_one_lock(r.thresholds[other], &q).control(t);
            let at_profile = analytic::utility_one_lock(&own, &opp, &q).utility;
            let at_br = analytic::utility_one_lock(&br, &opp, &q).utility;
            ConditionCheck {
                name: format!("agent {} best response value", if me == 0 { "i" } else { "j" }),
                lhs: at_profile,
                rhs: Some(at_br),
                satisfied: Some((at_profile - at_br).abs() < 1e-10),
            }
        })
        .collect()
}

fn certify(r: &mut EquilibriumResult, p: &GameParams, cert: &Certification) {
    if cert.segments == 0 {
        return;
    }
    let mut gains = Vec::with_capacity(2);
    for (me, other, q) in [(0usize, 1usize, *p), (1, 0, p.swapped())] {
        let grid = GridSpec::bang_bang(cert.segments, q.beta_i);
        let own = r.policy(me);
        let opp = r.policy(other);
        let check = if r.locks == 1 {
            oracle::one_lock_deviation(&own.stage1, &opp.stage1, &q, &grid)
        } else {
            oracle::two_lock_deviation(&own, &opp, &q, &grid)
        };
        match check {
            Ok(c) => gains.push(c.gain),
            Err(e) => {
                r.notes.push(format!("oracle failed: {e}"));
                gains.push(f64::MAX);
            }
        }
    }
    r.oracle = Some(OracleCertificate {
        segments: cert.segments,
        tolerance: cert.tolerance,
        gains,
    });
}

/// Continuation value at the second decision epoch when the opponent plays
/// a `Γ₂` policy: a lone race for lock 2 after success, nothing after failure.
pub fn stage2_value(z2: StageState, p: &GameParams) -> Result<f64> {
    match z2.flag {
        StageFlag::Failure => Ok(0.0),
        StageFlag::Success => {
            let residual = (p.horizon - z2.contact_time).max(0.0);
            Ok(silent_value(1.0, p.nu, p.beta_i, residual, 0.0).value)
        }
        StageFlag::Start => Err(Error::Regime(
            "stage-two value needs a post-contact state".into(),
        )),
    }
}

fn two_lock_regime(p: &GameParams) -> Regime {
    if p.nu >= 0.5 {
        return Regime::NuSilence;
    }
    let ratio = p.two_lock_ratio();
    let (lo, hi) = (p.beta_i.min(p.beta_j), p.beta_i.max(p.beta_j));
    if (-hi * p.horizon).exp() >= ratio {
        Regime::Silence
    } else if (-lo * p.horizon).exp() >= ratio {
        Regime::OneSilent
    } else {
        Regime::Interior
    }
}

/// `F(ψ) = e^{−β_opp ψ} − e^{−β_own (T−ψ) − β_opp ψ} − ν/(1−ν)` for the
/// selected agent; strictly decreasing on `[0, T]`.
pub fn fixed_point_residual(p: &GameParams, agent: Agent, psi: f64) -> f64 {
    let (own, opp) = match agent {
        Agent::I => (p.beta_i, p.beta_j),
        Agent::J => (p.beta_j, p.beta_i),
    };
    let t = p.horizon;
    (-opp * psi).exp() - (-own * (t - psi) - opp * psi).exp() - p.nu / (1.0 - p.nu)
}

/// Interior two-lock threshold of `agent`, by bisection on [`fixed_point_residual`].
pub fn solve_psi_fixed_point(p: &GameParams, agent: Agent) -> Result<f64> {
    match two_lock_regime(p) {
        Regime::Interior => {}
        other => {
            return Err(Error::Regime(format!(
                "interior fixed point undefined; parameters fall in the '{}' regime",
                other.describe()
            )))
        }
    }
    let f = |psi: f64| fixed_point_residual(p, agent, psi);
    let (mut lo, mut hi) = (0.0, p.horizon);
    if f(lo) <= 0.0 {
        return Ok(0.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if value.abs() <= 1e-12 || hi - lo <= f64::EPSILON * p.horizon {
            return Ok(mid);
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sufficient conditions for the interior two-lock profile, in the ordered
/// frame `β_j ≥ β_i`.
pub fn check_ne_conditions(psi_i: f64, psi_j: f64, p: &GameParams) -> Vec<ConditionCheck> {
    let t = p.horizon;
    let nu = p.nu;
    let condition = |name: &str, lhs: f64, survive: f64| {
        let denominator = survive - nu;
        if denominator > 0.0 {
            let rhs = (survive - 2.0 * nu) / denominator;
            ConditionCheck {
                name: name.into(),
                lhs,
                rhs: Some(rhs),
                satisfied: Some(lhs > rhs),
            }
        } else {
            ConditionCheck {
                name: name.into(),
                lhs,
                rhs: None,
                satisfied: None,
            }
        }
    };
    vec![
        condition(
            "agent i at opponent threshold",
            (-p.beta_i * (t - psi_j)).exp(),
            (-p.beta_j * psi_j).exp(),
        ),
        condition(
            "agent j at opponent threshold",
            (-p.beta_j * (t - psi_i)).exp(),
            (-p.beta_i * psi_i).exp(),
        ),
    ]
}

/// Two-lock equilibrium with the default certification grid.
pub fn nash_two_lock(p: &GameParams) -> EquilibriumResult {
    nash_two_lock_with(p, &Certification::two_lock())
}

pub fn nash_two_lock_with(p: &GameParams, cert: &Certification) -> EquilibriumResult {
    if p.beta_i > p.beta_j {
        return swap_back(nash_two_lock_with(&p.swapped(), cert));
    }
    let t = p.horizon;
    let regime = two_lock_regime(p);
    let mut notes = Vec::new();
    let mut conditions = Vec::new();
    let thresholds = match regime {
        Regime::NuSilence | Regime::Silence => vec![0.0, 0.0],
        Regime::OneSilent => {
            let psi_j = (t + p.two_lock_ratio().ln() / p.beta_j).clamp(0.0, t);
            if ((-p.beta_i * t).exp() - p.two_lock_ratio()).abs() < 1e-12 {
                notes.push("slower agent sits on the regime boundary".into());
            }
            vec![0.0, psi_j]
        }
        Regime::Interior => {
            let psi_i = solve_psi_fixed_point(p, Agent::I).expect("interior regime");
            let psi_j = solve_psi_fixed_point(p, Agent::J).expect("interior regime");
            conditions = check_ne_conditions(psi_i, psi_j, p);
            if conditions.iter().any(|c| c.satisfied != Some(true)) {
                notes.push(
                    "sufficient conditions fail: candidate left uncertified, see oracle gains"
                        .into(),
                );
            }
            vec![psi_i, psi_j]
        }
        Regime::OneLockThreshold => unreachable!(),
    };
    let conditions_ok = conditions.iter().all(|c| c.satisfied == Some(true));
    let mut result = EquilibriumResult {
        locks: 2,
        thresholds,
        rates: vec![p.beta_i, p.beta_j],
        horizon: t,
        regime,
        conditions_checked: conditions,
        certified: false,
        conjectural: false,
        oracle: None,
        notes,
    };
    certify(&mut result, p, cert);
    result.certified = conditions_ok && result.oracle.as_ref().is_none_or(|o| o.passed());
    result
}

/// Conjectured symmetric `N`-agent profile. Always flagged conjectural; the
/// two-lock case treats the `N − 1` opponents as one agent of rate `(N−1)β`.
pub fn nash_n_player_conjecture(p: &GameParams, n: usize, locks: u8) -> Result<EquilibriumResult> {
    if p.beta_i != p.beta_j {
        return Err(Error::Regime(
            "N-agent profiles are only available for symmetric rates".into(),
        ));
    }
    if n < 2 {
        return Err(crate::error::invalid("n_agents", "must be at least 2"));
    }
    let beta = p.beta_i;
    let t = p.horizon;
    let others = (n - 1) as f64;
    let (psi, regime, mut notes) = match locks {
        1 if p.nu >= 1.0 => (0.0, Regime::NuSilence, vec![]),
        1 => {
            let psi = if (-beta * others * t).exp() <= p.nu {
                -p.nu.ln() / (others * beta)
            } else {
                t
            };
            (psi, Regime::OneLockThreshold, vec![])
        }
        2 => {
            let q = GameParams {
                beta_j: others * beta,
                ..*p
            };
            match two_lock_regime(&q) {
                Regime::Interior => (solve_psi_fixed_point(&q, Agent::I)?, Regime::Interior, vec![]),
                r => (
                    0.0,
                    r,
                    vec!["threshold of the single agent against the pooled opponents".to_string()],
                ),
            }
        }
        _ => return Err(crate::error::invalid("locks", "must be 1 or 2")),
    };
    notes.push("conjectural profile; probe with Monte Carlo deviations".into());
    Ok(EquilibriumResult {
        locks,
        thresholds: vec![psi; n],
        rates: vec![beta; n],
        horizon: t,
        regime,
        conditions_checked: Vec::new(),
        certified: false,
        conjectural: true,
        oracle: None,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn gp(bi: f64, bj: f64, nu: f64, t: f64, locks: u8) -> GameParams {
        GameParams::new(bi, bj, nu, t, locks).unwrap()
    }

    #[test]
    fn best_response_branches() {
        let p = gp(1.0, 1.0, 0.5, 2.0, 1);
        assert_eq!(best_response_one_lock(0.2, &p).psi, 2.0);
        assert!((best_response_one_lock(1.0, &p).psi - LN_2).abs() < 1e-15);
        let costly = gp(1.0, 1.0, 1.2, 2.0, 1);
        assert_eq!(best_response_one_lock(0.5, &costly).psi, 0.0);
    }

    #[test]
    fn best_response_tie_takes_shorter_threshold() {
        let p = gp(1.0, 1.0, 0.5, 2.0, 1);
        let psi = -(0.5f64).ln();
        assert!(best_response_one_lock(psi, &p).psi < 2.0);
    }

    #[test]
    fn one_lock_symmetric() {
        let r = nash_one_lock(&gp(1.0, 1.0, 0.5, 2.0, 1));
        assert!((r.thresholds[0] - LN_2).abs() < 1e-15);
        assert!((r.thresholds[1] - LN_2).abs() < 1e-15);
        assert!(r.certified, "{r:?}");
    }

    #[test]
    fn one_lock_asymmetric_and_relabeled() {
        let r = nash_one_lock(&gp(1.0, 2.0, 0.5, 3.0, 1));
        assert!((r.thresholds[0] - LN_2 / 2.0).abs() < 1e-15);
        assert_eq!(r.thresholds[1], 3.0);
        assert!(r.certified);
        let s = nash_one_lock(&gp(2.0, 1.0, 0.5, 3.0, 1));
        assert_eq!(s.thresholds, vec![3.0, r.thresholds[0]]);
        assert_eq!(s.rates, vec![2.0, 1.0]);
    }

    #[test]
    fn one_lock_clamped_horizon() {
        let r = nash_one_lock(&gp(1.0, 1.0, 0.5, 0.4, 1));
        assert_eq!(r.thresholds, vec![0.4, 0.4]);
        assert!(r.certified);
    }

    #[test]
    fn one_lock_costly_silence() {
        let r = nash_one_lock(&gp(1.0, 1.0, 1.2, 2.0, 1));
        assert_eq!(r.thresholds, vec![0.0, 0.0]);
        assert_eq!(r.regime, Regime::NuSilence);
    }

    #[test]
    fn stage2_values() {
        let p = gp(1.0, 1.0, 0.25, 3.0, 2);
        assert_eq!(stage2_value(StageState::failure(1.0), &p).unwrap(), 0.0);
        let v = stage2_value(StageState::success(0.0), &p).unwrap();
        assert!((v - 0.75 * (1.0 - (-3.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.7126596).abs() < 1e-6);
        assert_eq!(stage2_value(StageState::success(3.0), &p).unwrap(), 0.0);
        assert!(stage2_value(StageState::start(), &p).is_err());
    }

    #[test]
    fn symmetric_fixed_point() {
        let p = gp(1.0, 1.0, 0.25, 3.0, 2);
        let psi = solve_psi_fixed_point(&p, Agent::I).unwrap();
        let closed = -((-3.0f64).exp() + 1.0 / 3.0).ln();
        assert!((psi - closed).abs() < 1e-9);
        assert!((psi - 0.959406).abs() < 1e-6);
    }

    #[test]
    fn residual_at_horizon() {
        for p in [gp(1.0, 1.0, 0.25, 3.0, 2), gp(0.8, 1.0, 0.2, 3.0, 2), gp(0.3, 2.0, 0.1, 5.0, 2)] {
            for agent in [Agent::I, Agent::J] {
                let f = fixed_point_residual(&p, agent, p.horizon);
                assert!((f + p.nu / (1.0 - p.nu)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fixed_point_outside_interior_names_regime() {
        let err = solve_psi_fixed_point(&gp(1.0, 1.0, 0.4, 0.1, 2), Agent::I).unwrap_err();
        assert!(err.to_string().contains("silence"), "{err}");
        let err = solve_psi_fixed_point(&gp(0.5, 1.0, 0.4, 1.2, 2), Agent::I).unwrap_err();
        assert!(err.to_string().contains("one agent silent"), "{err}");
    }

    #[test]
    fn symmetric_conditions_pass() {
        let p = gp(1.0, 1.0, 0.25, 3.0, 2);
        let psi = solve_psi_fixed_point(&p, Agent::I).unwrap();
        let checks = check_ne_conditions(psi, psi, &p);
        for c in &checks {
            assert_eq!(c.satisfied, Some(true));
            assert!((c.lhs - 0.129951).abs() < 1e-6);
            assert!(c.rhs.unwrap() < 0.0);
        }
    }

    #[test]
    fn two_lock_regimes() {
        let r = nash_two_lock(&gp(1.0, 1.0, 0.4, 0.1, 2));
        assert_eq!(r.regime, Regime::Silence);
        assert_eq!(r.thresholds, vec![0.0, 0.0]);
        assert!(r.certified);

        let r = nash_two_lock(&gp(0.5, 1.0, 0.4, 1.2, 2));
        assert_eq!(r.regime, Regime::OneSilent);
        assert_eq!(r.thresholds[0], 0.0);
        assert!((r.thresholds[1] - (1.2 + (1.0f64 / 3.0).ln())).abs() < 1e-12);
        assert!((r.thresholds[1] - 0.101388).abs() < 1e-6);
        assert!(r.certified, "{r:?}");

        let r = nash_two_lock(&gp(1.0, 1.0, 0.25, 3.0, 2));
        assert_eq!(r.regime, Regime::Interior);
        assert!((r.thresholds[0] - 0.959406).abs() < 1e-6);
        assert!(r.certified, "{r:?}");

        let r = nash_two_lock(&gp(1.0, 1.0, 0.6, 3.0, 2));
        assert_eq!(r.regime, Regime::NuSilence);
        assert_eq!(r.thresholds, vec![0.0, 0.0]);
    }

    #[test]
    fn n_player_formulas() {
        let p = gp(1.0, 1.0, 0.5, 2.0, 1);
        let r = nash_n_player_conjecture(&p, 3, 1).unwrap();
        assert!(r.conjectural);
        assert_eq!(r.thresholds.len(), 3);
        assert!((r.thresholds[0] - LN_2 / 2.0).abs() < 1e-15);
        let two = nash_n_player_conjecture(&p, 2, 1).unwrap();
        assert_eq!(two.thresholds, nash_one_lock(&p).thresholds);

        let p2 = gp(1.0, 1.0, 0.25, 3.0, 2);
        let two = nash_n_player_conjecture(&p2, 2, 2).unwrap();
        assert_eq!(two.thresholds, nash_two_lock(&p2).thresholds);
        let three = nash_n_player_conjecture(&p2, 3, 2).unwrap();
        let q = GameParams { beta_j: 2.0, ..p2 };
        assert!(fixed_point_residual(&q, Agent::I, three.thresholds[0]).abs() <= 1e-12);
        assert!(nash_n_player_conjecture(&gp(1.0, 2.0, 0.5, 2.0, 1), 3, 1).is_err());
    }
}
