//! Domain types shared by every other module: game parameters, open-loop
//! rate controls and the threshold / two-stage policies built from them.
//!
//! A control is piecewise constant on a finite grid, so its cumulative rate
//! `ā(t) = ∫₀ᵗ a(s) ds` is piecewise linear and every integral the rest of
//! the crate needs can be taken exactly, segment by segment.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameters of the acquisition race.
///
/// `beta_i`/`beta_j` are the maximal contact rates of the tagged agent and
/// its opponent, `nu` prices one unit of time-integrated rate against the unit
/// reward, `horizon` is the deadline and `locks` the number of locks that must
/// be contacted in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub beta_i: f64,
    pub beta_j: f64,
    pub nu: f64,
    pub horizon: f64,
    pub locks: u8,
    pub n_agents: usize,
}

impl GameParams {
    /// Two-agent parameters, validated.
    pub fn new(beta_i: f64, beta_j: f64, nu: f64, horizon: f64, locks: u8) -> Result<Self> {
        validate_params(GameParams {
            beta_i,
            beta_j,
            nu,
            horizon,
            locks,
            n_agents: 2,
        })
    }

    pub fn with_agents(mut self, n_agents: usize) -> Result<Self> {
        self.n_agents = n_agents;
        validate_params(self)
    }

    pub fn with_locks(mut self, locks: u8) -> Result<Self> {
        self.locks = locks;
        validate_params(self)
    }

    /// The same game seen from the opponent's side.
    pub fn swapped(&self) -> Self {
        GameParams {
            beta_i: self.beta_j,
            beta_j: self.beta_i,
            ..*self
        }
    }

    /// `(1 − 2ν)/(1 − ν)`, the cut-off that separates the two-lock regimes.
    pub fn two_lock_ratio(&self) -> f64 {
        (1.0 - 2.0 * self.nu) / (1.0 - self.nu)
    }
}

/// Checks every [`GameParams`] invariant and returns the value unchanged.
pub fn validate_params(raw: GameParams) -> Result<GameParams> {
    positive("beta_i", raw.beta_i)?;
    positive("beta_j", raw.beta_j)?;
    positive("nu", raw.nu)?;
    positive("horizon", raw.horizon)?;
    if raw.locks != 1 && raw.locks != 2 {
        return Err(invalid("locks", "must be 1 or 2"));
    }
    if raw.n_agents < 2 {
        return Err(invalid("n_agents", "must be at least 2"));
    }
    Ok(raw)
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be positive"))
    }
}

/// An open-loop rate process on `[0, span]`, constant on each grid segment.
///
/// Evaluation is right-continuous: at a breakpoint the level of the segment
/// that starts there applies. Outside `[0, span)` the rate is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControlRepr", into = "ControlRepr")]
pub struct PiecewiseConstantControl {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ControlRepr {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl TryFrom<ControlRepr> for PiecewiseConstantControl {
    type Error = Error;

    fn try_from(repr: ControlRepr) -> Result<Self> {
        if repr.breakpoints == [0.0] && repr.levels.is_empty() {
            return Ok(Self::silent(0.0));
        }
        Self::new(repr.breakpoints, repr.levels, f64::MAX)
    }
}

impl From<PiecewiseConstantControl> for ControlRepr {
    fn from(c: PiecewiseConstantControl) -> Self {
        ControlRepr {
            breakpoints: c.breakpoints,
            levels: c.levels,
        }
    }
}

impl PiecewiseConstantControl {
    /// Builds a control from `n + 1` strictly increasing breakpoints starting
    /// at zero and `n` levels, each within `[0, max_rate]`.
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>, max_rate: f64) -> Result<Self> {
        if breakpoints.first() != Some(&0.0) {
            return Err(Error::InvalidControl("first breakpoint must be 0".into()));
        }
        if breakpoints.len() != levels.len() + 1 {
            return Err(Error::InvalidControl(format!(
                "{} breakpoints for {} levels",
                breakpoints.len(),
                levels.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidControl("breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidControl(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for &level in &levels {
            if !(0.0..=max_rate).contains(&level) {
                return Err(Error::InvalidControl(format!(
                    "level {level} outside [0, {max_rate}]"
                )));
            }
        }
        Ok(Self::from_parts(breakpoints, levels))
    }

    fn from_parts(breakpoints: Vec<f64>, levels: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (w, level) in breakpoints.windows(2).zip(&levels) {
            acc += level * (w[1] - w[0]);
            cumulative.push(acc);
        }
        PiecewiseConstantControl {
            breakpoints,
            levels,
            cumulative,
        }
    }

    /// Zero rate on `[0, span]`.
    pub fn silent(span: f64) -> Self {
        Self::constant_unchecked(0.0, span)
    }

    /// Constant `rate` on `[0, span]`.
    pub fn constant(rate: f64, span: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(invalid("rate", "must be non-negative"));
        }
        if !(span >= 0.0 && span.is_finite()) {
            return Err(invalid("span", "must be non-negative"));
        }
        Ok(Self::constant_unchecked(rate, span))
    }

    fn constant_unchecked(rate: f64, span: f64) -> Self {
        if span > 0.0 {
            Self::from_parts(vec![0.0, span], vec![rate])
        } else {
            Self::from_parts(vec![0.0], vec![])
        }
    }

    /// Equal-length segments on `[0, span]` carrying `levels` in order.
    pub fn uniform(levels: &[f64], span: f64, max_rate: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidControl("at least one segment required".into()));
        }
        let n = levels.len();
        let breakpoints = (0..=n).map(|k| span * k as f64 / n as f64).collect();
        Self::new(breakpoints, levels.to_vec(), max_rate)
    }

    pub fn span(&self) -> f64 {
        *self.breakpoints.last().unwrap_or(&0.0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn max_level(&self) -> f64 {
        self.levels.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_silent(&self) -> bool {
        self.levels.iter().all(|&l| l == 0.0)
    }

    /// Segments as `(start, end, level, ā(start))`.
    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.levels)
            .zip(&self.cumulative)
            .map(|((w, &level), &base)| Segment {
                start: w[0],
                end: w[1],
                level,
                base,
            })
    }

    fn segment_index(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t >= self.span() || self.levels.is_empty() {
            return None;
        }
        // last breakpoint <= t
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        Some(idx - 1)
    }

    /// Rate at time `t` (right-continuous, zero outside `[0, span)`).
    pub fn rate_at(&self, t: f64) -> f64 {
        self.segment_index(t).map_or(0.0, |k| self.levels[k])
    }

    /// `ā(t) = ∫₀^{min(t, span)} a(s) ds`, exact.
    pub fn cumulative_rate(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.span() {
            return *self.cumulative.last().unwrap_or(&0.0);
        }
        let k = self.breakpoints.partition_point(|&b| b <= t) - 1;
        self.cumulative[k] + self.levels[k] * (t - self.breakpoints[k])
    }

    /// Total rate integral over the whole span.
    pub fn total_rate(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Earliest `t` with `ā(t) = level`, or `None` when the span ends first.
    pub fn inverse_cumulative(&self, level: f64) -> Option<f64> {
        if level <= 0.0 {
            // first instant with positive rate
            return self.segments().find(|s| s.level > 0.0).map(|s| s.start);
        }
        if level > self.total_rate() {
            return None;
        }
        let k = self.cumulative.partition_point(|&c| c < level);
        // cumulative[k-1] < level <= cumulative[k]; segment k-1 has positive rate
        let seg = k - 1;
        let t = self.breakpoints[seg] + (level - self.cumulative[seg]) / self.levels[seg];
        Some(t.min(self.breakpoints[seg + 1]))
    }

    /// The control seen from time `s` onwards, re-based to start at zero.
    pub fn restrict_from(&self, s: f64) -> Self {
        let span = self.span();
        if s <= 0.0 {
            return self.clone();
        }
        if s >= span {
            return Self::silent(0.0);
        }
        let mut breakpoints = vec![0.0];
        let mut levels = Vec::new();
        for seg in self.segments() {
            if seg.end <= s {
                continue;
            }
            levels.push(seg.level);
            breakpoints.push(seg.end - s);
        }
        Self::from_parts(breakpoints, levels)
    }
}

/// One constant piece of a [`PiecewiseConstantControl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub level: f64,
    /// Cumulative rate at `start`.
    pub base: f64,
}

/// Free-function form of [`PiecewiseConstantControl::cumulative_rate`].
pub fn cumulative_rate(a: &PiecewiseConstantControl, t: f64) -> f64 {
    a.cumulative_rate(t)
}

/// `β` on `[0, ψ)`, zero on `[ψ, span]`.
pub fn make_threshold_control(psi: f64, beta: f64, span: f64) -> Result<PiecewiseConstantControl> {
    if !(psi >= 0.0) || !psi.is_finite() {
        return Err(invalid("psi", "must be non-negative"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid("beta", "must be non-negative"));
    }
    if !(span >= 0.0) || !span.is_finite() {
        return Err(invalid("span", "must be non-negative"));
    }
    if psi > span {
        return Err(invalid("psi", format!("{psi} exceeds span {span}")));
    }
    Ok(threshold_unchecked(psi, beta, span))
}

fn threshold_unchecked(psi: f64, beta: f64, span: f64) -> PiecewiseConstantControl {
    if span <= 0.0 {
        PiecewiseConstantControl::silent(0.0)
    } else if psi <= 0.0 || beta == 0.0 {
        PiecewiseConstantControl::silent(span)
    } else if psi >= span {
        PiecewiseConstantControl::constant_unchecked(beta, span)
    } else {
        PiecewiseConstantControl::from_parts(vec![0.0, psi, span], vec![beta, 0.0])
    }
}

/// `Γ(ψ)`: full rate until `psi`, silence afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub psi: f64,
    pub rate: f64,
}

impl ThresholdPolicy {
    pub fn new(psi: f64, rate: f64, horizon: f64) -> Result<Self> {
        make_threshold_control(psi, rate, horizon)?;
        Ok(ThresholdPolicy { psi, rate })
    }

    pub fn silent(rate: f64) -> Self {
        ThresholdPolicy { psi: 0.0, rate }
    }

    /// The induced control on `[0, span]`; `psi` is clipped to the span.
    pub fn control(&self, span: f64) -> PiecewiseConstantControl {
        threshold_unchecked(self.psi.clamp(0.0, span.max(0.0)), self.rate, span)
    }
}

/// Builds a stage-two control from the first contact time and residual span.
pub type Stage2Builder = dyn Fn(f64, f64) -> PiecewiseConstantControl + Send + Sync;

/// What an agent runs after its first-lock contact, as a function of the
/// contact time `τ`; every control produced spans the residual `T − τ`.
#[derive(Clone)]
pub enum Stage2Rule {
    /// `Γ(0)`.
    Silent,
    /// `Γ(T − τ)`: full rate for the rest of the horizon.
    FullEffort { rate: f64 },
    /// Full rate for at most `duration` after contact.
    Threshold { rate: f64, duration: f64 },
    /// Arbitrary τ-dependent control.
    Custom(Arc<Stage2Builder>),
}

impl Stage2Rule {
    pub fn control(&self, tau: f64, residual: f64) -> PiecewiseConstantControl {
        let residual = residual.max(0.0);
        match self {
            Stage2Rule::Silent => PiecewiseConstantControl::silent(residual),
            Stage2Rule::FullEffort { rate } => threshold_unchecked(residual, *rate, residual),
            Stage2Rule::Threshold { rate, duration } => {
                threshold_unchecked(duration.clamp(0.0, residual), *rate, residual)
            }
            Stage2Rule::Custom(build) => build(tau, residual),
        }
    }

    /// `ā(residual)` of the produced control, when it has a closed form.
    pub fn total_rate(&self, residual: f64) -> Option<f64> {
        let residual = residual.max(0.0);
        match self {
            Stage2Rule::Silent => Some(0.0),
            Stage2Rule::FullEffort { rate } => Some(rate * residual),
            Stage2Rule::Threshold { rate, duration } => Some(rate * duration.clamp(0.0, residual)),
            Stage2Rule::Custom(_) => None,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, Stage2Rule::Custom(_))
    }
}

impl fmt::Debug for Stage2Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage2Rule::Silent => write!(f, "Silent"),
            Stage2Rule::FullEffort { rate } => write!(f, "FullEffort {{ rate: {rate} }}"),
            Stage2Rule::Threshold { rate, duration } => {
                write!(f, "Threshold {{ rate: {rate}, duration: {duration} }}")
            }
            Stage2Rule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// A policy for the two-lock race: a stage-one control used from time zero
/// and stage-two rules keyed on the outcome of the first contact.
///
/// Stage two sees only the agent's own flag and contact time.
#[derive(Debug, Clone)]
pub struct TwoStagePolicy {
    pub stage1: PiecewiseConstantControl,
    pub on_success: Stage2Rule,
    pub on_failure: Stage2Rule,
}

impl TwoStagePolicy {
    /// `Γ₂(ψ)`: `Γ(ψ)` at start, `Γ(T − τ)` after a successful contact and
    /// silence after an unsuccessful one.
    pub fn gamma2(psi: f64, rate: f64, horizon: f64) -> Result<Self> {
        Ok(TwoStagePolicy {
            stage1: make_threshold_control(psi, rate, horizon)?,
            on_success: Stage2Rule::FullEffort { rate },
            on_failure: Stage2Rule::Silent,
        })
    }

    /// One-lock use of a single control; stage two is never reached.
    pub fn single(stage1: PiecewiseConstantControl) -> Self {
        TwoStagePolicy {
            stage1,
            on_success: Stage2Rule::Silent,
            on_failure: Stage2Rule::Silent,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.stage1.span()
    }

    pub fn stage2_control(&self, state: StageState) -> PiecewiseConstantControl {
        let residual = self.horizon() - state.contact_time;
        match state.flag {
            StageFlag::Success => self.on_success.control(state.contact_time, residual),
            StageFlag::Failure => self.on_failure.control(state.contact_time, residual),
            StageFlag::Start => self.stage1.clone(),
        }
    }
}

impl From<(ThresholdPolicy, f64)> for TwoStagePolicy {
    fn from((policy, horizon): (ThresholdPolicy, f64)) -> Self {
        TwoStagePolicy::single(policy.control(horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageFlag {
    Start,
    Success,
    Failure,
}

/// Information available at a decision epoch: own flag and contact time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub flag: StageFlag,
    pub contact_time: f64,
}

impl StageState {
    pub fn start() -> Self {
        StageState {
            flag: StageFlag::Start,
            contact_time: 0.0,
        }
    }

    pub fn success(tau: f64) -> Self {
        StageState {
            flag: StageFlag::Success,
            contact_time: tau,
        }
    }

    pub fn failure(tau: f64) -> Self {
        StageState {
            flag: StageFlag::Failure,
            contact_time: tau,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_valid_params() {
        let p = GameParams::new(1.0, 1.0, 0.5, 2.0, 1).unwrap();
        assert_eq!(p.n_agents, 2);
    }

    #[test]
    fn rejects_bad_params_naming_field() {
        let err = GameParams::new(0.0, 1.0, 0.5, 2.0, 1).unwrap_err();
        assert_eq!(err.to_string(), "beta_i must be positive");
        let err = GameParams::new(1.0, 1.0, 0.5, 2.0, 3).unwrap_err();
        assert_eq!(err.to_string(), "locks must be 1 or 2");
        let err = GameParams::new(1.0, 1.0, -0.1, 2.0, 1).unwrap_err();
        assert_eq!(err.to_string(), "nu must be positive");
        let err = GameParams::new(1.0, 1.0, 0.5, f64::NAN, 1).unwrap_err();
        assert_eq!(err.to_string(), "horizon must be positive");
        assert!(GameParams::new(1.0, 1.0, 0.5, 2.0, 1)
            .unwrap()
            .with_agents(1)
            .is_err());
    }

    #[test]
    fn cumulative_rate_examples() {
        let g = make_threshold_control(0.5, 1.0, 2.0).unwrap();
        assert_eq!(g.cumulative_rate(2.0), 0.5);
        assert_eq!(g.cumulative_rate(0.0), 0.0);
        let a = PiecewiseConstantControl::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0], 2.0).unwrap();
        assert_eq!(a.cumulative_rate(1.5), 2.0);
        assert_eq!(a.cumulative_rate(7.0), 3.0);
    }

    #[test]
    fn threshold_control_examples() {
        let silent = make_threshold_control(0.0, 1.0, 2.0).unwrap();
        assert!(silent.is_silent());
        let full = make_threshold_control(2.0, 1.0, 2.0).unwrap();
        assert_eq!(full.levels(), &[1.0]);
        let half = make_threshold_control(0.5, 2.0, 1.0).unwrap();
        assert_eq!(half.cumulative_rate(1.0), 1.0);
        assert!(make_threshold_control(3.0, 1.0, 2.0).is_err());
        assert!(make_threshold_control(-1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn rate_is_right_continuous_and_zero_after_span() {
        let a = PiecewiseConstantControl::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0], 2.0).unwrap();
        assert_eq!(a.rate_at(0.0), 1.0);
        assert_eq!(a.rate_at(1.0), 2.0);
        assert_eq!(a.rate_at(2.0), 0.0);
        assert_eq!(a.rate_at(-0.1), 0.0);
    }

    #[test]
    fn rejects_malformed_controls() {
        assert!(PiecewiseConstantControl::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0], 1.0).is_err());
        assert!(PiecewiseConstantControl::new(vec![0.5, 1.0], vec![1.0], 1.0).is_err());
        assert!(PiecewiseConstantControl::new(vec![0.0, 1.0], vec![1.5], 1.0).is_err());
        assert!(PiecewiseConstantControl::new(vec![0.0, 1.0], vec![-0.1], 1.0).is_err());
    }

    #[test]
    fn inverse_cumulative_finds_first_hit() {
        let a = PiecewiseConstantControl::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, 2.0], 2.0)
            .unwrap();
        assert_eq!(a.inverse_cumulative(0.5), Some(0.5));
        assert_eq!(a.inverse_cumulative(1.0), Some(1.0));
        assert_eq!(a.inverse_cumulative(2.0), Some(2.5));
        assert_eq!(a.inverse_cumulative(3.5), None);
    }

    #[test]
    fn restriction_keeps_tail() {
        let a = PiecewiseConstantControl::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0], 2.0).unwrap();
        let r = a.restrict_from(0.5);
        assert_eq!(r.span(), 1.5);
        assert_eq!(r.cumulative_rate(1.5), a.cumulative_rate(2.0) - a.cumulative_rate(0.5));
        assert!(r.max_level() <= 2.0);
    }

    #[test]
    fn gamma2_stage_two_rules() {
        let pi = TwoStagePolicy::gamma2(1.0, 1.0, 3.0).unwrap();
        let s = pi.stage2_control(StageState::success(1.0));
        assert_eq!(s.span(), 2.0);
        assert_eq!(s.total_rate(), 2.0);
        let f = pi.stage2_control(StageState::failure(1.0));
        assert!(f.is_silent());
        assert_eq!(pi.stage2_control(StageState::success(3.0)).span(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn control() -> impl Strategy<Value = PiecewiseConstantControl> {
            proptest::collection::vec((0.01f64..1.0, 0.0f64..2.0), 1..8).prop_map(|segs| {
                let mut bps = vec![0.0];
                let mut levels = vec![];
                for (len, level) in segs {
                    bps.push(bps.last().unwrap() + len);
                    levels.push(level);
                }
                PiecewiseConstantControl::new(bps, levels, 2.0).unwrap()
            })
        }

        proptest! {
            #[test]
            fn cumulative_is_monotone_and_additive(a in control(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
                let span = a.span();
                let (t1, t2) = if u < v { (u * span, v * span) } else { (v * span, u * span) };
                prop_assert!(a.cumulative_rate(t1) <= a.cumulative_rate(t2) + 1e-15);
                let tail = a.restrict_from(t1);
                let direct = a.cumulative_rate(t2) - a.cumulative_rate(t1);
                prop_assert!((tail.cumulative_rate(t2 - t1) - direct).abs() < 1e-12);
            }

            #[test]
            fn threshold_cumulative_is_clipped_line(psi in 0.0f64..2.0, beta in 0.0f64..3.0, t in 0.0f64..2.0) {
                let g = make_threshold_control(psi, beta, 2.0).unwrap();
                prop_assert!((g.cumulative_rate(t) - beta * t.min(psi)).abs() < 1e-12);
            }

            #[test]
            fn inverse_cumulative_inverts(a in control(), u in 0.001f64..0.999) {
                let level = u * a.total_rate();
                if let Some(t) = a.inverse_cumulative(level) {
                    prop_assert!((a.cumulative_rate(t) - level).abs() < 1e-10);
                }
            }
        }
    }
}
