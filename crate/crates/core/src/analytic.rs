//! Closed-form success probabilities, expected costs and utilities.
//!
//! Every quantity is an integral of exponentials of a piecewise-linear
//! cumulative rate, so it is evaluated segment by segment on the merged grid
//! of both agents' controls. The only numerical step is the outer integral of
//! the two-lock success probability when a stage-two rule has no closed form.

use serde::{Deserialize, Serialize};

use crate::model::{GameParams, PiecewiseConstantControl, Stage2Rule, TwoStagePolicy};
use crate::quadrature;

/// How a [`UtilityReport`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// Success probability, expected cost and utility `J = P − ν·cost` of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub success_prob: f64,
    pub expected_cost: f64,
    pub utility: f64,
    pub method: Method,
    /// Standard error of `utility`; Monte Carlo only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

impl UtilityReport {
    pub fn exact(success_prob: f64, expected_cost: f64, nu: f64, method: Method) -> Self {
        UtilityReport {
            success_prob,
            expected_cost,
            utility: success_prob - nu * expected_cost,
            method,
            stderr: None,
        }
    }

    pub fn silent(method: Method) -> Self {
        UtilityReport::exact(0.0, 0.0, 0.0, method)
    }
}

/// `∫₀^len e^{−k u} du` for any real `k`.
pub(crate) fn exp_integral(k: f64, len: f64) -> f64 {
    let z = k * len;
    if z.abs() < 1e-10 {
        len * (1.0 - 0.5 * z)
    } else {
        -(-z).exp_m1() / k
    }
}

/// A sub-interval on which both controls (and any extra cut) are constant.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Piece {
    pub start: f64,
    pub len: f64,
    pub rate_i: f64,
    pub rate_j: f64,
    pub base_i: f64,
    pub base_j: f64,
}

pub(crate) fn merged_cuts(
    a_i: &PiecewiseConstantControl,
    a_j: Option<&PiecewiseConstantControl>,
    end: f64,
    extra: &[f64],
) -> Vec<f64> {
    let mut cuts: Vec<f64> = a_i
        .breakpoints()
        .iter()
        .chain(a_j.map_or(&[][..], |c| c.breakpoints()))
        .chain(extra)
        .copied()
        .filter(|&t| t > 0.0 && t < end)
        .collect();
    cuts.push(0.0);
    cuts.push(end);
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();
    cuts
}

pub(crate) fn merged_pieces(
    a_i: &PiecewiseConstantControl,
    a_j: Option<&PiecewiseConstantControl>,
    end: f64,
    extra: &[f64],
) -> Vec<Piece> {
    if end <= 0.0 {
        return Vec::new();
    }
    merged_cuts(a_i, a_j, end, extra)
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            Piece {
                start: w[0],
                len: w[1] - w[0],
                rate_i: a_i.rate_at(mid),
                rate_j: a_j.map_or(0.0, |c| c.rate_at(mid)),
                base_i: a_i.cumulative_rate(w[0]),
                base_j: a_j.map_or(0.0, |c| c.cumulative_rate(w[0])),
            }
        })
        .collect()
}

/// Density of the first contact time, `f(t) = e^{−ā(t)} a(t)`.
pub fn contact_density(a: &PiecewiseConstantControl, t: f64) -> f64 {
    (-a.cumulative_rate(t)).exp() * a.rate_at(t)
}

/// Probability that the opponent has not contacted the lock by `s`.
pub fn opponent_survival(a_j: &PiecewiseConstantControl, s: f64) -> f64 {
    (-a_j.cumulative_rate(s)).exp()
}

/// `E[ā(min(τ, U))]`: the terminal charge `ā(U)e^{−ā(U)}` for no contact plus
/// `∫₀^U ā e^{−ā} a ds`, integrated per segment through `u = ā(s)`.
pub fn expected_cost(a: &PiecewiseConstantControl, horizon: f64) -> f64 {
    let tail = |x: f64| (x + 1.0) * (-x).exp();
    let mut running = 0.0;
    for seg in a.segments() {
        if seg.start >= horizon {
            break;
        }
        let end = seg.end.min(horizon);
        let top = seg.base + seg.level * (end - seg.start);
        running += tail(seg.base) - tail(top);
    }
    let x_end = a.cumulative_rate(horizon);
    x_end * (-x_end).exp() + running
}

/// Probability that agent `i` contacts the single lock first and before `t_end`.
pub fn success_prob_one_lock(
    a_i: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    t_end: f64,
) -> f64 {
    merged_pieces(a_i, Some(a_j), t_end, &[])
        .iter()
        .filter(|p| p.rate_i > 0.0)
        .map(|p| {
            p.rate_i * (-(p.base_i + p.base_j)).exp() * exp_integral(p.rate_i + p.rate_j, p.len)
        })
        .sum()
}

/// One-lock utility of agent `i` as success probability minus `ν` times cost.
pub fn utility_one_lock(
    a_i: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    p: &GameParams,
) -> UtilityReport {
    let success = success_prob_one_lock(a_i, a_j, p.horizon);
    let cost = expected_cost(a_i, p.horizon);
    UtilityReport::exact(success, cost, p.nu, Method::ClosedForm)
}

/// The same utility through the running-reward form
/// `∫₀ᵀ (e^{−ā_j} − ν ā_i) e^{−ā_i} a_i ds − ν ā_i(T) e^{−ā_i(T)}`.
pub fn utility_one_lock_running(
    a_i: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    nu: f64,
    t_end: f64,
) -> f64 {
    let tail = |x: f64| (x + 1.0) * (-x).exp();
    let mut total = 0.0;
    for p in merged_pieces(a_i, Some(a_j), t_end, &[]) {
        if p.rate_i == 0.0 {
            continue;
        }
        let reward =
            p.rate_i * (-(p.base_i + p.base_j)).exp() * exp_integral(p.rate_i + p.rate_j, p.len);
        let top = p.base_i + p.rate_i * p.len;
        total += reward - nu * (tail(p.base_i) - tail(top));
    }
    let x_end = a_i.cumulative_rate(t_end);
    total - nu * x_end * (-x_end).exp()
}

/// Value and maximizing action of the lone-agent problem with reward `c`
/// over residual horizon `u`, starting from accumulated rate `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilentValue {
    pub value: f64,
    /// Optimal constant rate: `beta` when `ν ≤ c`, otherwise zero.
    pub action: f64,
}

/// Best response against a silent opponent.
pub fn silent_value(c: f64, nu: f64, beta: f64, u: f64, x: f64) -> SilentValue {
    if nu <= c {
        SilentValue {
            value: ((c - nu) * -(-beta * u).exp_m1() - nu * x) * (-x).exp(),
            action: beta,
        }
    } else {
        SilentValue {
            value: -nu * x * (-x).exp(),
            action: 0.0,
        }
    }
}

/// Weight applied to the first-contact density in the two-lock integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Weight {
    /// Opponent has not yet contacted lock 1: `e^{−ā_j(s)}`.
    Survive,
    /// No weighting.
    All,
}

/// `∫₀ᵀ f_i(s) w(s) (1 − e^{−ā_rule(s)(T−s)}) ds`, where `ā_rule(s)` is the
/// stage-two cumulative rate chosen after contact at `s`.
///
/// The bracket is both the probability of a second contact in time and the
/// expected stage-two cost, so the same integral serves both.
fn stage_two_integral(
    stage1: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    weight: Weight,
    rule: &Stage2Rule,
    t_end: f64,
) -> f64 {
    if let Some(value) = stage_two_integral_exact(stage1, a_j, weight, rule, t_end) {
        return value;
    }
    let integrand = |s: f64| {
        let density = contact_density(stage1, s);
        if density == 0.0 {
            return 0.0;
        }
        let w = match weight {
            Weight::Survive => opponent_survival(a_j, s),
            Weight::All => 1.0,
        };
        let residual = t_end - s;
        let second = rule.control(s, residual);
        density * w * -(-second.cumulative_rate(residual)).exp_m1()
    };
    let cuts = merged_cuts(stage1, Some(a_j), t_end, &[]);
    quadrature::integrate_pieces(integrand, 0.0, t_end, &cuts, 1e-13)
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

fn stage_two_integral_exact(
    stage1: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    weight: Weight,
    rule: &Stage2Rule,
    t_end: f64,
) -> Option<f64> {
    let (rate, knee) = match *rule {
        Stage2Rule::Silent => return Some(0.0),
        Stage2Rule::FullEffort { rate } => (rate, 0.0),
        Stage2Rule::Threshold { rate, duration } => (rate, (t_end - duration).max(0.0)),
        Stage2Rule::Custom(_) => return None,
    };
    let w = if weight == Weight::Survive { 1.0 } else { 0.0 };
    let mut total = 0.0;
    for p in merged_pieces(stage1, Some(a_j), t_end, &[knee]) {
        if p.rate_i == 0.0 {
            continue;
        }
        // e^{−ā_rule(T−s)} = e^{−g0} e^{ρu} on this piece
        let g0 = rule.total_rate(t_end - p.start)?;
        let rho = if p.start + 0.5 * p.len >= knee { rate } else { 0.0 };
        let k = p.rate_i + w * p.rate_j;
        let front = p.rate_i * (-(p.base_i + w * p.base_j)).exp();
        total += front * (exp_integral(k, p.len) - (-g0).exp() * exp_integral(k - rho, p.len));
    }
    Some(total)
}

/// Probability that agent `i` wins lock 1 and then reaches lock 2 by `t_end`.
pub fn success_prob_two_lock(
    pi_i: &TwoStagePolicy,
    a_j_stage1: &PiecewiseConstantControl,
    t_end: f64,
) -> f64 {
    stage_two_integral(&pi_i.stage1, a_j_stage1, Weight::Survive, &pi_i.on_success, t_end)
}

/// Expected stage-two cost, averaged over the first-contact flag and time.
pub fn expected_stage_two_cost(
    pi_i: &TwoStagePolicy,
    a_j_stage1: &PiecewiseConstantControl,
    t_end: f64,
) -> f64 {
    let s = &pi_i.stage1;
    let success = stage_two_integral(s, a_j_stage1, Weight::Survive, &pi_i.on_success, t_end);
    let failure = stage_two_integral(s, a_j_stage1, Weight::All, &pi_i.on_failure, t_end)
        - stage_two_integral(s, a_j_stage1, Weight::Survive, &pi_i.on_failure, t_end);
    success + failure
}

/// Two-lock utility of agent `i`. Only the opponent's stage-one control
/// matters: agent `j` reaching lock 2 never changes agent `i`'s reward.
pub fn utility_two_lock(
    pi_i: &TwoStagePolicy,
    pi_j: &TwoStagePolicy,
    p: &GameParams,
) -> UtilityReport {
    let t = p.horizon;
    let success = success_prob_two_lock(pi_i, &pi_j.stage1, t);
    let cost = expected_cost(&pi_i.stage1, t) + expected_stage_two_cost(pi_i, &pi_j.stage1, t);
    let method = if pi_i.on_success.is_closed_form() && pi_i.on_failure.is_closed_form() {
        Method::ClosedForm
    } else {
        Method::Quadrature
    };
    UtilityReport::exact(success, cost, p.nu, method)
}

/// Dispatches on `p.locks`.
pub fn utility(pi_i: &TwoStagePolicy, pi_j: &TwoStagePolicy, p: &GameParams) -> UtilityReport {
    if p.locks == 1 {
        utility_one_lock(&pi_i.stage1, &pi_j.stage1, p)
    } else {
        utility_two_lock(pi_i, pi_j, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_threshold_control;

    const E1: f64 = 0.36787944117144233;

    fn ctrl(rate: f64, span: f64) -> PiecewiseConstantControl {
        PiecewiseConstantControl::constant(rate, span).unwrap()
    }

    #[test]
    fn density_examples() {
        assert_eq!(contact_density(&ctrl(1.0, 2.0), 0.0), 1.0);
        assert!((contact_density(&ctrl(1.0, 2.0), 1.0) - E1).abs() < 1e-15);
        assert_eq!(contact_density(&PiecewiseConstantControl::silent(2.0), 0.7), 0.0);
    }

    #[test]
    fn survival_examples() {
        assert_eq!(opponent_survival(&PiecewiseConstantControl::silent(2.0), 1.3), 1.0);
        let g = make_threshold_control(1.0, 1.0, 2.0).unwrap();
        assert!((opponent_survival(&g, 0.5) - 0.6065306597126334).abs() < 1e-12);
        assert!((opponent_survival(&g, 2.0) - E1).abs() < 1e-12);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(expected_cost(&PiecewiseConstantControl::silent(1.0), 1.0), 0.0);
        // E[min(τ, 1)] for a unit-rate clock
        assert!((expected_cost(&ctrl(1.0, 1.0), 1.0) - (1.0 - E1)).abs() < 1e-15);
        let long = expected_cost(&ctrl(2.0, 10.0), 10.0);
        assert!(long <= 1.0 && long > 0.999_999_99);
    }

    #[test]
    fn one_lock_success_examples() {
        let on = ctrl(1.0, 1.0);
        let off = PiecewiseConstantControl::silent(1.0);
        assert_eq!(success_prob_one_lock(&off, &on, 1.0), 0.0);
        assert!((success_prob_one_lock(&on, &off, 1.0) - 0.6321205588285577).abs() < 1e-14);
        assert!((success_prob_one_lock(&on, &on, 1.0) - 0.43233235838169365).abs() < 1e-14);
    }

    #[test]
    fn one_lock_utility_examples() {
        let p = GameParams::new(1.0, 1.0, 0.5, 1.0, 1).unwrap();
        let on = ctrl(1.0, 1.0);
        let off = PiecewiseConstantControl::silent(1.0);
        assert_eq!(utility_one_lock(&off, &on, &p).utility, 0.0);
        let alone = utility_one_lock(&on, &off, &p).utility;
        assert!((alone - 0.31606027941427883).abs() < 1e-14);
        assert!((alone - silent_value(1.0, 0.5, 1.0, 1.0, 0.0).value).abs() < 1e-12);
        let both = utility_one_lock(&on, &on, &p).utility;
        assert!((both - (0.43233235838169365 - 0.5 * 0.6321205588285577)).abs() < 1e-14);
        assert!((both - utility_one_lock_running(&on, &on, 0.5, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn silent_value_branches() {
        let v = silent_value(0.4, 0.5, 1.0, 1.0, 0.0);
        assert_eq!((v.value, v.action), (0.0, 0.0));
        let v = silent_value(1.0, 0.5, 1.0, 1.0, 0.0);
        assert!((v.value - 0.31606027941427883).abs() < 1e-14);
        assert_eq!(v.action, 1.0);
        // tie: both branches agree
        let tie = silent_value(0.5, 0.5, 1.0, 1.0, 0.3);
        assert!((tie.value - (-0.5 * 0.3 * (-0.3f64).exp())).abs() < 1e-15);
        assert_eq!(silent_value(0.5, 0.5, 1.0, 1.0, 0.0).value, 0.0);
    }

    #[test]
    fn two_lock_success_examples() {
        let off = PiecewiseConstantControl::silent(2.0);
        let silent_stage1 = TwoStagePolicy::gamma2(0.0, 1.0, 2.0).unwrap();
        assert_eq!(success_prob_two_lock(&silent_stage1, &off, 2.0), 0.0);
        let full = TwoStagePolicy::gamma2(2.0, 1.0, 2.0).unwrap();
        // ∫₀² (1 − e^{−(2−s)}) e^{−s} ds = 1 − 3e^{−2}
        let expected = 1.0 - 3.0 * (-2.0f64).exp();
        assert!((success_prob_two_lock(&full, &off, 2.0) - expected).abs() < 1e-14);
        let never = TwoStagePolicy {
            on_success: Stage2Rule::Silent,
            ..full.clone()
        };
        assert_eq!(success_prob_two_lock(&never, &off, 2.0), 0.0);
    }

    #[test]
    fn custom_rule_matches_closed_form_rule() {
        let full = TwoStagePolicy::gamma2(1.3, 1.0, 2.0).unwrap();
        let custom = TwoStagePolicy {
            on_success: Stage2Rule::Custom(std::sync::Arc::new(|_tau, residual| {
                PiecewiseConstantControl::constant(1.0, residual).unwrap()
            })),
            ..full.clone()
        };
        let opp = make_threshold_control(0.8, 1.5, 2.0).unwrap();
        let a = success_prob_two_lock(&full, &opp, 2.0);
        let b = success_prob_two_lock(&custom, &opp, 2.0);
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
    }

    #[test]
    fn mutual_silence_is_worthless() {
        let p = GameParams::new(1.0, 1.0, 0.25, 2.0, 2).unwrap();
        let s = TwoStagePolicy::gamma2(0.0, 1.0, 2.0).unwrap();
        let r = utility_two_lock(&s, &s, &p);
        assert_eq!(r.utility, 0.0);
    }

    #[test]
    fn two_lock_against_silence() {
        let p = GameParams::new(1.0, 1.0, 0.25, 2.0, 2).unwrap();
        let me = TwoStagePolicy::gamma2(2.0, 1.0, 2.0).unwrap();
        let opp = TwoStagePolicy::gamma2(0.0, 1.0, 2.0).unwrap();
        let r = utility_two_lock(&me, &opp, &p);
        let e2 = (-2.0f64).exp();
        let success = 1.0 - 3.0 * e2;
        // stage one: 1 − e^{−2}; stage two after success at s: 1 − e^{−(2−s)}
        let cost = (1.0 - e2) + success;
        assert!((r.success_prob - success).abs() < 1e-14);
        assert!((r.expected_cost - cost).abs() < 1e-14);
        assert!((r.utility - (success - 0.25 * cost)).abs() < 1e-14);
    }

    #[test]
    fn threshold_rule_has_knee() {
        let p = GameParams::new(1.0, 1.0, 0.3, 2.0, 2).unwrap();
        let base = TwoStagePolicy::gamma2(1.5, 1.0, 2.0).unwrap();
        let rule = Stage2Rule::Threshold { rate: 1.0, duration: 0.7 };
        let custom_rule = Stage2Rule::Custom(std::sync::Arc::new(|_tau, residual: f64| {
            make_threshold_control(0.7f64.min(residual), 1.0, residual).unwrap()
        }));
        let a = TwoStagePolicy { on_success: rule.clone(), on_failure: rule, ..base.clone() };
        let b = TwoStagePolicy { on_success: custom_rule.clone(), on_failure: custom_rule, ..base.clone() };
        let ua = utility_two_lock(&a, &base, &p);
        let ub = utility_two_lock(&b, &base, &p);
        assert!((ua.utility - ub.utility).abs() < 1e-11);
        assert_eq!(ua.method, Method::ClosedForm);
        assert_eq!(ub.method, Method::Quadrature);
    }
}
