//! Numerical oracles: quadrature utilities for arbitrary controls and
//! best-response search over discretized control spaces.
//!
//! These paths never call the closed forms in [`crate::analytic`] for the
//! quantities they certify; they integrate the raw densities and cost
//! integrands with adaptive Simpson.
//!
//! The grid search exploits the structure of the stage problem. Writing
//! `x = ā_i`, the utility of any stage-one control is `∫ m(t) e^{−x(t)} a(t) dt`
//! for a continuation payoff `m(t)` that does not depend on `a`, so over a
//! grid of constant segments the objective obeys the backward recursion
//! `V_k = max_r { ∫_0^Δ m(t_k+u) r e^{−ru} du + e^{−rΔ} V_{k+1} }`. Solving it
//! is an exhaustive search over all `|levels|^n` grid controls.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, silent_value, Method, UtilityReport};
use crate::error::{invalid, Error, Result};
use crate::model::{GameParams, PiecewiseConstantControl, Stage2Rule, TwoStagePolicy};
use crate::quadrature::{integrate_pieces, DEFAULT_TOL};

/// Limit for brute-force enumeration in [`exhaustive_best_response`].
pub const EXHAUSTIVE_LIMIT: usize = 1 << 20;

const INNER_TOL: f64 = 1e-12;

/// How stage-two behaviour is chosen in the two-stage search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// Full effort after a successful contact iff `ν < 1`, silence after a failure.
    TheoremOne,
    /// Stage two solved on its own grid for every contact time.
    FullGrid,
}

/// Discretization of the control space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_segments: usize,
    pub levels: Vec<f64>,
    pub stage2_mode: Stage2Mode,
}

impl GridSpec {
    /// Levels `{0, β}`.
    pub fn bang_bang(n_segments: usize, beta: f64) -> Self {
        GridSpec {
            n_segments,
            levels: vec![0.0, beta],
            stage2_mode: Stage2Mode::TheoremOne,
        }
    }

    /// Levels `{0, β/2, β}`, offering an interior rate to the search.
    pub fn with_midpoint(n_segments: usize, beta: f64) -> Self {
        GridSpec {
            levels: vec![0.0, 0.5 * beta, beta],
            ..Self::bang_bang(n_segments, beta)
        }
    }

    pub fn full_stage2(mut self) -> Self {
        self.stage2_mode = Stage2Mode::FullGrid;
        self
    }

    fn checked_levels(&self, beta: f64) -> Result<Vec<f64>> {
        if self.n_segments == 0 {
            return Err(invalid("n_segments", "must be at least 1"));
        }
        if self.levels.is_empty() {
            return Err(invalid("levels", "must not be empty"));
        }
        if self.levels.iter().any(|l| !(0.0..=beta).contains(l)) {
            return Err(invalid("levels", format!("must lie in [0, {beta}]")));
        }
        let mut levels = self.levels.clone();
        levels.sort_by(|a, b| a.total_cmp(b));
        levels.dedup();
        Ok(levels)
    }
}

fn stage_integrals(
    a: &PiecewiseConstantControl,
    weight: impl Fn(f64) -> f64,
    span: f64,
    extra_cuts: &[f64],
    tol: f64,
) -> Result<(f64, f64)> {
    // (∫ w e^{−x} a, ∫ x e^{−x} a) over [0, span]
    let mut cuts = a.breakpoints().to_vec();
    cuts.extend_from_slice(extra_cuts);
    let reward = integrate_pieces(
        |s| {
            let x = a.cumulative_rate(s);
            weight(s) * (-x).exp() * a.rate_at(s)
        },
        0.0,
        span,
        &cuts,
        tol,
    )?;
    let running = integrate_pieces(
        |s| {
            let x = a.cumulative_rate(s);
            x * (-x).exp() * a.rate_at(s)
        },
        0.0,
        span,
        &cuts,
        tol,
    )?;
    Ok((reward.value, running.value))
}

/// One-lock utility by quadrature of the running reward
/// `(h(s) − νx(s)) e^{−x(s)} a_i(s)` plus terminal cost `−νx(T)e^{−x(T)}`,
/// with `h = e^{−ā_j}` and state `x = ā_i`.
pub fn quadrature_utility(
    a_i: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    p: &GameParams,
) -> Result<UtilityReport> {
    let t = p.horizon;
    let (success, running) =
        stage_integrals(a_i, |s| (-a_j.cumulative_rate(s)).exp(), t, a_j.breakpoints(), DEFAULT_TOL * 0.1)?;
    let x_end = a_i.cumulative_rate(t);
    let terminal = x_end * (-x_end).exp();
    Ok(UtilityReport {
        success_prob: success,
        expected_cost: terminal + running,
        utility: success - p.nu * running - p.nu * terminal,
        method: Method::Quadrature,
        stderr: None,
    })
}

/// `(P(second contact within residual), expected stage-two cost)` by quadrature.
fn stage_two_by_quadrature(rule: &Stage2Rule, tau: f64, residual: f64) -> (f64, f64) {
    if residual <= 0.0 {
        return (0.0, 0.0);
    }
    let ctrl = rule.control(tau, residual);
    if ctrl.is_silent() {
        return (0.0, 0.0);
    }
    match stage_integrals(&ctrl, |_| 1.0, residual, &[], INNER_TOL) {
        Ok((reach, running)) => {
            let x_end = ctrl.cumulative_rate(residual);
            (reach, running + x_end * (-x_end).exp())
        }
        Err(_) => (f64::NAN, f64::NAN),
    }
}

type StageTwo = ((f64, f64), (f64, f64));

fn rule_cuts(rule: &Stage2Rule, horizon: f64) -> Vec<f64> {
    match rule {
        Stage2Rule::Threshold { duration, .. } => vec![horizon - duration],
        _ => vec![],
    }
}

/// Two-lock utility of agent `i` by backward evaluation: stage-two values per
/// contact time computed by quadrature, then integrated against the
/// stage-one outcome distribution.
pub fn two_stage_utility(
    pi_i: &TwoStagePolicy,
    pi_j: &TwoStagePolicy,
    p: &GameParams,
) -> Result<UtilityReport> {
    let t = p.horizon;
    let a1 = &pi_i.stage1;
    let aj = &pi_j.stage1;
    let mut cuts = a1.breakpoints().to_vec();
    cuts.extend_from_slice(aj.breakpoints());
    cuts.extend(rule_cuts(&pi_i.on_success, t));
    cuts.extend(rule_cuts(&pi_i.on_failure, t));

    // both outer passes visit largely the same nodes; memoize stage two
    let memo: RefCell<HashMap<u64, StageTwo>> = RefCell::new(HashMap::new());
    let stage_two = |s: f64| -> StageTwo {
        if let Some(v) = memo.borrow().get(&s.to_bits()) {
            return *v;
        }
        let v = (
            stage_two_by_quadrature(&pi_i.on_success, s, t - s),
            stage_two_by_quadrature(&pi_i.on_failure, s, t - s),
        );
        memo.borrow_mut().insert(s.to_bits(), v);
        v
    };
    let outer = |f: &dyn Fn(f64, f64, (f64, f64), (f64, f64)) -> f64| {
        integrate_pieces(
            |s| {
                let density = (-a1.cumulative_rate(s)).exp() * a1.rate_at(s);
                if density == 0.0 {
                    return 0.0;
                }
                let h = (-aj.cumulative_rate(s)).exp();
                let (won, lost) = stage_two(s);
                density * f(s, h, won, lost)
            },
            0.0,
            t,
            &cuts,
            1e-11,
        )
    };
    let success = outer(&|_, h, won, _| h * won.0)?.value;
    let stage2_cost = outer(&|_, h, won, lost| h * won.1 + (1.0 - h) * lost.1)?.value;
    let (_, running) = stage_integrals(a1, |_| 0.0, t, &[], 1e-11)?;
    let x_end = a1.cumulative_rate(t);
    let cost = running + x_end * (-x_end).exp() + stage2_cost;
    Ok(UtilityReport::exact(success, cost, p.nu, Method::Quadrature))
}

/// Result of a one-stage grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResponse {
    pub control: PiecewiseConstantControl,
    /// Quadrature utility of `control`.
    pub utility: UtilityReport,
    /// Optimal value of the grid recursion (same quantity, other route).
    pub objective: f64,
}

/// Backward recursion over equal segments of `[0, span]` for the objective
/// `∫ m(t) e^{−x(t)} a(t) dt`. Ties keep the lower level.
fn segment_recursion(
    m: &dyn Fn(f64) -> f64,
    m_cuts: &[f64],
    span: f64,
    levels: &[f64],
    n: usize,
) -> Result<(Vec<f64>, f64)> {
    let dt = span / n as f64;
    let mut value = 0.0;
    let mut chosen = vec![0.0; n];
    for k in (0..n).rev() {
        let t0 = span * k as f64 / n as f64;
        let t1 = span * (k + 1) as f64 / n as f64;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &r in levels {
            let candidate = if r == 0.0 {
                value
            } else {
                let gain = integrate_pieces(
                    |t| m(t) * r * (-r * (t - t0)).exp(),
                    t0,
                    t1,
                    m_cuts,
                    1e-14,
                )?
                .value;
                gain + (-r * dt).exp() * value
            };
            if candidate > best.0 {
                best = (candidate, r);
            }
        }
        chosen[k] = best.1;
        value = best.0;
    }
    Ok((chosen, value))
}

/// Best one-lock response on a grid against an arbitrary opponent control.
pub fn grid_best_response(
    a_j: &PiecewiseConstantControl,
    p: &GameParams,
    g: &GridSpec,
) -> Result<GridResponse> {
    let levels = g.checked_levels(p.beta_i)?;
    let nu = p.nu;
    let m = |t: f64| (-a_j.cumulative_rate(t)).exp() - nu;
    let (chosen, objective) =
        segment_recursion(&m, a_j.breakpoints(), p.horizon, &levels, g.n_segments)?;
    let control = PiecewiseConstantControl::uniform(&chosen, p.horizon, p.beta_i)?;
    let utility = quadrature_utility(&control, a_j, p)?;
    Ok(GridResponse {
        control,
        utility,
        objective,
    })
}

/// Brute-force enumeration of every grid control, ranked by the closed-form
/// utility; ties resolve to the lexicographically smallest level vector.
pub fn exhaustive_best_response(
    a_j: &PiecewiseConstantControl,
    p: &GameParams,
    g: &GridSpec,
) -> Result<GridResponse> {
    let levels = g.checked_levels(p.beta_i)?;
    let n = g.n_segments;
    let size = (levels.len() as f64).powi(n as i32);
    if size > EXHAUSTIVE_LIMIT as f64 {
        return Err(Error::SearchSpace {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut digits = vec![0usize; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let candidate: Vec<f64> = digits.iter().map(|&d| levels[d]).collect();
        let control = PiecewiseConstantControl::uniform(&candidate, p.horizon, p.beta_i)?;
        let u = analytic::utility_one_lock(&control, a_j, p).utility;
        if best.as_ref().is_none_or(|(b, _)| u > *b) {
            best = Some((u, candidate));
        }
        // odometer, last digit fastest => lexicographic order
        let mut pos = n;
        loop {
            if pos == 0 {
                let (objective, chosen) = best.expect("non-empty grid");
                let control = PiecewiseConstantControl::uniform(&chosen, p.horizon, p.beta_i)?;
                let utility = quadrature_utility(&control, a_j, p)?;
                return Ok(GridResponse {
                    control,
                    utility,
                    objective,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < levels.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Result of a two-stage grid search.
#[derive(Debug, Clone)]
pub struct TwoStageResponse {
    pub policy: TwoStagePolicy,
    /// Quadrature utility of `policy`.
    pub utility: UtilityReport,
    pub objective: f64,
}

fn stage2_grid_rule(levels: Vec<f64>, n: usize, nu: f64, beta: f64) -> Stage2Rule {
    Stage2Rule::Custom(Arc::new(move |_tau, residual| {
        if residual <= 0.0 {
            return PiecewiseConstantControl::silent(0.0);
        }
        let m = |_t: f64| 1.0 - nu;
        match segment_recursion(&m, &[], residual, &levels, n) {
            Ok((chosen, _)) => PiecewiseConstantControl::uniform(&chosen, residual, beta)
                .unwrap_or_else(|_| PiecewiseConstantControl::silent(residual)),
            Err(_) => PiecewiseConstantControl::silent(residual),
        }
    }))
}

/// Best two-lock response on a grid against an opponent two-stage policy.
///
/// After a failed first contact the agent is silent (no reward remains).
/// After a success it faces a lone race for lock 2, solved in closed form or
/// on a grid depending on `g.stage2_mode`. The stage-one control is then
/// searched against the induced continuation value.
pub fn grid_best_response_two_stage(
    pi_j: &TwoStagePolicy,
    p: &GameParams,
    g: &GridSpec,
) -> Result<TwoStageResponse> {
    let levels = g.checked_levels(p.beta_i)?;
    let (nu, beta, horizon) = (p.nu, p.beta_i, p.horizon);
    let n = g.n_segments;
    let on_success = match g.stage2_mode {
        Stage2Mode::TheoremOne if nu < 1.0 => Stage2Rule::FullEffort { rate: beta },
        Stage2Mode::TheoremOne => Stage2Rule::Silent,
        Stage2Mode::FullGrid => stage2_grid_rule(levels.clone(), n, nu, beta),
    };
    let won_value = |t: f64| -> f64 {
        let residual = horizon - t;
        match g.stage2_mode {
            Stage2Mode::TheoremOne => silent_value(1.0, nu, beta, residual, 0.0).value,
            Stage2Mode::FullGrid => {
                if residual <= 0.0 {
                    return 0.0;
                }
                let m = |_t: f64| 1.0 - nu;
                segment_recursion(&m, &[], residual, &levels, n)
                    .map(|(_, v)| v)
                    .unwrap_or(f64::NAN)
            }
        }
    };
    let aj = &pi_j.stage1;
    let m = |t: f64| (-aj.cumulative_rate(t)).exp() * won_value(t) - nu;
    let (chosen, objective) = segment_recursion(&m, aj.breakpoints(), horizon, &levels, n)?;
    let policy = TwoStagePolicy {
        stage1: PiecewiseConstantControl::uniform(&chosen, horizon, beta)?,
        on_success,
        on_failure: Stage2Rule::Silent,
    };
    let utility = two_stage_utility(&policy, pi_j, p)?;
    Ok(TwoStageResponse {
        policy,
        utility,
        objective,
    })
}

/// Switch time of a control shaped `β…β 0…0`, or `None` for other shapes.
pub fn threshold_switch(control: &PiecewiseConstantControl) -> Option<f64> {
    let top = control.max_level();
    let mut switch = None;
    for seg in control.segments() {
        match (seg.level, switch) {
            (l, None) if l == top && top > 0.0 => {}
            (0.0, None) => switch = Some(seg.start),
            (0.0, Some(_)) => {}
            _ => return None,
        }
    }
    Some(switch.unwrap_or(if top > 0.0 { control.span() } else { 0.0 }))
}

/// True when every level is `0` or `beta`.
pub fn is_bang_bang(control: &PiecewiseConstantControl, beta: f64) -> bool {
    control.levels().iter().all(|&l| l == 0.0 || l == beta)
}

/// Largest utility gain a unilateral grid deviation achieves for agent `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationCheck {
    pub profile_utility: f64,
    pub best_grid_utility: f64,
    pub gain: f64,
}

/// Grid deviation check for agent `i` in the one-lock game.
pub fn one_lock_deviation(
    a_i: &PiecewiseConstantControl,
    a_j: &PiecewiseConstantControl,
    p: &GameParams,
    g: &GridSpec,
) -> Result<DeviationCheck> {
    let profile_utility = analytic::utility_one_lock(a_i, a_j, p).utility;
    let best = grid_best_response(a_j, p, g)?.utility.utility;
    Ok(DeviationCheck {
        profile_utility,
        best_grid_utility: best,
        gain: best - profile_utility,
    })
}

/// Grid deviation check for agent `i` in the two-lock game.
pub fn two_lock_deviation(
    pi_i: &TwoStagePolicy,
    pi_j: &TwoStagePolicy,
    p: &GameParams,
    g: &GridSpec,
) -> Result<DeviationCheck> {
    let profile_utility = analytic::utility_two_lock(pi_i, pi_j, p).utility;
    let best = grid_best_response_two_stage(pi_j, p, g)?.utility.utility;
    Ok(DeviationCheck {
        profile_utility,
        best_grid_utility: best,
        gain: best - profile_utility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_threshold_control;

    fn params(nu: f64, t: f64, locks: u8) -> GameParams {
        GameParams::new(1.0, 1.0, nu, t, locks).unwrap()
    }

    #[test]
    fn quadrature_silent_is_zero() {
        let p = params(0.5, 2.0, 1);
        let off = PiecewiseConstantControl::silent(2.0);
        let on = PiecewiseConstantControl::constant(1.0, 2.0).unwrap();
        assert_eq!(quadrature_utility(&off, &on, &p).unwrap().utility, 0.0);
    }

    #[test]
    fn quadrature_matches_closed_form_at_threshold_pair() {
        let p = params(0.5, 2.0, 1);
        let g = make_threshold_control(std::f64::consts::LN_2, 1.0, 2.0).unwrap();
        let q = quadrature_utility(&g, &g, &p).unwrap();
        let c = analytic::utility_one_lock(&g, &g, &p);
        assert!((q.utility - c.utility).abs() < 1e-8);
        assert!((q.success_prob - c.success_prob).abs() < 1e-8);
        assert!((q.expected_cost - c.expected_cost).abs() < 1e-8);
    }

    #[test]
    fn two_stage_matches_closed_form() {
        let p = GameParams::new(1.0, 1.3, 0.25, 3.0, 2).unwrap();
        let a = TwoStagePolicy::gamma2(0.9, 1.0, 3.0).unwrap();
        let b = TwoStagePolicy::gamma2(1.4, 1.3, 3.0).unwrap();
        let q = two_stage_utility(&a, &b, &p).unwrap();
        let c = analytic::utility_two_lock(&a, &b, &p);
        assert!((q.utility - c.utility).abs() < 1e-8, "{} {}", q.utility, c.utility);
    }

    #[test]
    fn mutual_silence_two_stage() {
        let p = params(0.25, 3.0, 2);
        let s = TwoStagePolicy::gamma2(0.0, 1.0, 3.0).unwrap();
        assert_eq!(two_stage_utility(&s, &s, &p).unwrap().utility, 0.0);
    }

    #[test]
    fn grid_br_against_threshold_is_threshold() {
        let p = params(0.5, 2.0, 1);
        let opp = make_threshold_control(1.0, 1.0, 2.0).unwrap();
        let br = grid_best_response(&opp, &p, &GridSpec::bang_bang(40, 1.0)).unwrap();
        let switch = threshold_switch(&br.control).expect("threshold shape");
        assert!((switch - std::f64::consts::LN_2).abs() <= 0.05 + 1e-12, "{switch}");
        assert!((br.objective - br.utility.utility).abs() < 1e-9);
    }

    #[test]
    fn grid_br_against_silence_is_all_on() {
        let p = params(0.5, 2.0, 1);
        let off = PiecewiseConstantControl::silent(2.0);
        let br = grid_best_response(&off, &p, &GridSpec::bang_bang(40, 1.0)).unwrap();
        assert_eq!(threshold_switch(&br.control), Some(2.0));
    }

    #[test]
    fn grid_br_expensive_is_silent() {
        let p = params(1.5, 2.0, 1);
        let off = PiecewiseConstantControl::silent(2.0);
        let br = grid_best_response(&off, &p, &GridSpec::with_midpoint(40, 1.0)).unwrap();
        assert!(br.control.is_silent());
        assert_eq!(br.utility.utility, 0.0);
    }

    #[test]
    fn recursion_equals_enumeration() {
        let p = GameParams::new(1.0, 1.7, 0.35, 1.5, 1).unwrap();
        let opp = PiecewiseConstantControl::new(vec![0.0, 0.4, 0.9, 1.5], vec![1.7, 0.3, 1.2], 1.7)
            .unwrap();
        let g = GridSpec::with_midpoint(7, 1.0);
        let dp = grid_best_response(&opp, &p, &g).unwrap();
        let brute = exhaustive_best_response(&opp, &p, &g).unwrap();
        assert!((dp.utility.utility - brute.utility.utility).abs() < 1e-10);
        assert!((dp.objective - brute.objective).abs() < 1e-10);
    }

    #[test]
    fn exhaustive_refuses_huge_grids() {
        let p = params(0.5, 2.0, 1);
        let off = PiecewiseConstantControl::silent(2.0);
        let err = exhaustive_best_response(&off, &p, &GridSpec::bang_bang(40, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SearchSpace { .. }));
    }

    #[test]
    fn two_stage_br_failure_branch_silent() {
        let p = params(0.25, 3.0, 2);
        let opp = TwoStagePolicy::gamma2(1.0, 1.0, 3.0).unwrap();
        for g in [GridSpec::bang_bang(20, 1.0), GridSpec::bang_bang(20, 1.0).full_stage2()] {
            let br = grid_best_response_two_stage(&opp, &p, &g).unwrap();
            for tau in [0.0, 1.0, 2.5] {
                assert!(br.policy.on_failure.control(tau, 3.0 - tau).is_silent());
            }
        }
    }

    #[test]
    fn two_stage_br_silent_when_costly() {
        let p = params(0.6, 3.0, 2);
        let opp = TwoStagePolicy::gamma2(0.0, 1.0, 3.0).unwrap();
        let br = grid_best_response_two_stage(&opp, &p, &GridSpec::bang_bang(40, 1.0)).unwrap();
        assert!(br.policy.stage1.is_silent());
        assert_eq!(br.utility.utility, 0.0);
    }

    #[test]
    fn threshold_switch_shapes() {
        let c = PiecewiseConstantControl::uniform(&[1.0, 1.0, 0.0, 0.0], 2.0, 1.0).unwrap();
        assert_eq!(threshold_switch(&c), Some(1.0));
        let c = PiecewiseConstantControl::uniform(&[0.0, 1.0], 2.0, 1.0).unwrap();
        assert_eq!(threshold_switch(&c), None);
        let c = PiecewiseConstantControl::uniform(&[0.0, 0.0], 2.0, 1.0).unwrap();
        assert_eq!(threshold_switch(&c), Some(0.0));
    }
}
