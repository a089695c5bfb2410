//! Verification of candidate value functions against the HJB equation
//!
//! ```text
//! W_t + sup_{a ∈ [0, β_i]} { L(t, x, a) + a W_x } = 0,   W(T, x) = −ν x e^{−x},
//! L(t, x, a) = (h_j(t) − ν x) e^{−x} a,
//! ```
//!
//! where `x = ā_i(t)` and `h_j` is the opponent's survival. The bracket is
//! affine in `a`, so the supremum is taken over the endpoints `{0, β_i}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::GameParams;

/// A value surface `W(t, x)` on `[0, T] × [0, x_max]` for one agent's
/// single-lock control problem.
pub trait CandidateValue: Sync {
    fn value(&self, t: f64, x: f64) -> f64;

    /// Closed-form `(W_t, W_x)`, when the candidate carries them.
    fn partials(&self, t: f64, x: f64) -> Option<(f64, f64)>;

    /// `L / a = (h_j(t) − ν x) e^{−x}`.
    fn reward_rate(&self, t: f64, x: f64) -> f64;

    fn nu(&self) -> f64;

    fn horizon(&self) -> f64;

    fn max_rate(&self) -> f64;

    /// Times where the surface is continuous but not differentiable.
    fn seams(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Declared switch time: full effort before, silence after.
    fn switch_time(&self) -> f64;

    fn terminal(&self, x: f64) -> f64 {
        -self.nu() * x * (-x).exp()
    }
}

/// Lone-agent candidate: reward `c` per contact, residual horizon `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilentCandidate {
    pub c: f64,
    pub nu: f64,
    pub beta: f64,
    pub horizon: f64,
    /// `e^{−βU}(ν − c)`; zero when `ν > c`.
    pub kappa: f64,
}

pub fn candidate_w_silent(c: f64, nu: f64, beta: f64, horizon: f64) -> SilentCandidate {
    let kappa = if nu <= c {
        (-beta * horizon).exp() * (nu - c)
    } else {
        0.0
    };
    SilentCandidate {
        c,
        nu,
        beta,
        horizon,
        kappa,
    }
}

impl SilentCandidate {
    fn active(&self) -> bool {
        self.nu <= self.c
    }
}

impl CandidateValue for SilentCandidate {
    fn value(&self, t: f64, x: f64) -> f64 {
        let e = (-x).exp();
        if self.active() {
            (-self.nu * x - self.nu + self.c) * e + self.kappa * (-x + self.beta * t).exp()
        } else {
            -self.nu * x * e
        }
    }

    fn partials(&self, t: f64, x: f64) -> Option<(f64, f64)> {
        let e = (-x).exp();
        Some(if self.active() {
            let k = self.kappa * (-x + self.beta * t).exp();
            (self.beta * k, (self.nu * x - self.c) * e - k)
        } else {
            (0.0, (self.nu * x - self.nu) * e)
        })
    }

    fn reward_rate(&self, _t: f64, x: f64) -> f64 {
        (self.c - self.nu * x) * (-x).exp()
    }

    fn nu(&self) -> f64 {
        self.nu
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn max_rate(&self) -> f64 {
        self.beta
    }

    fn switch_time(&self) -> f64 {
        if self.active() {
            self.horizon
        } else {
            0.0
        }
    }
}

/// Candidate for agent `i` facing `Γ(ψ)`, active until `t₁`.
///
/// Three time pieces: `t < min(t₁, ψ)` (opponent active, agent active),
/// `ψ ≤ t < t₁` (opponent frozen at survival `η = e^{−β_j ψ}`), and
/// `t ≥ t₁` (agent silent, `W = −ν x e^{−x}`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdCandidate {
    pub beta_i: f64,
    pub beta_j: f64,
    pub nu: f64,
    pub psi: f64,
    pub t1: f64,
    pub horizon: f64,
    pub kappa1: f64,
}

/// The switch time the case analysis prescribes against `Γ(ψ)`.
pub fn prescribed_switch(p: &GameParams, psi: f64) -> f64 {
    if (-p.beta_j * psi).exp() <= p.nu {
        (-p.nu.ln() / p.beta_j).clamp(0.0, p.horizon)
    } else {
        p.horizon
    }
}

pub fn candidate_w_threshold(p: &GameParams, psi: f64, t1: f64) -> Result<ThresholdCandidate> {
    let t = p.horizon;
    if !(0.0..=t).contains(&psi) {
        return Err(invalid("psi", format!("must lie in [0, {t}]")));
    }
    let eta = (-p.beta_j * psi).exp();
    let expected = prescribed_switch(p, psi);
    if (t1 - expected).abs() > 1e-12 * t.max(1.0) {
        let case = if eta <= p.nu {
            format!("e^(-beta_j psi) = {eta} <= nu requires t1 = min(-ln nu / beta_j, T) = {expected}")
        } else {
            format!("e^(-beta_j psi) = {eta} > nu requires t1 = T = {expected}")
        };
        return Err(Error::Candidate(format!("{case}, got t1 = {t1}")));
    }
    let (bi, bj, nu) = (p.beta_i, p.beta_j, p.nu);
    let b = bi / (bi + bj);
    let kappa1 = if nu >= eta {
        (-bi * t1).exp() * (nu - b * (-bj * t1).exp())
    } else {
        (-bi * t).exp() * (nu - eta) + bj / (bi + bj) * (-(bi + bj) * psi).exp()
    };
    Ok(ThresholdCandidate {
        beta_i: bi,
        beta_j: bj,
        nu,
        psi,
        t1,
        horizon: t,
        kappa1,
    })
}

/// Candidate for the opponent's `Γ(ψ)` with the prescribed switch time.
pub fn candidate_against(p: &GameParams, psi: f64) -> Result<ThresholdCandidate> {
    candidate_w_threshold(p, psi, prescribed_switch(p, psi))
}

enum Piece {
    Racing,
    Frozen,
    Idle,
}

impl ThresholdCandidate {
    fn piece(&self, t: f64) -> Piece {
        if t < self.t1.min(self.psi) {
            Piece::Racing
        } else if t < self.t1 {
            Piece::Frozen
        } else {
            Piece::Idle
        }
    }

    fn eta(&self) -> f64 {
        (-self.beta_j * self.psi).exp()
    }

    fn share(&self) -> f64 {
        self.beta_i / (self.beta_i + self.beta_j)
    }

    /// `L/a + W_x`, whose sign fixes the maximizing action.
    pub fn switching_function(&self, t: f64, x: f64) -> f64 {
        let (_, wx) = self.partials(t, x).expect("closed form");
        self.reward_rate(t, x) + wx
    }
}

impl CandidateValue for ThresholdCandidate {
    fn value(&self, t: f64, x: f64) -> f64 {
        let e = (-x).exp();
        let nu = self.nu;
        match self.piece(t) {
            Piece::Racing => {
                (-nu * x - nu) * e
                    + self.share() * (-x - self.beta_j * t).exp()
                    + self.kappa1 * (-x + self.beta_i * t).exp()
            }
            Piece::Frozen => {
                let d = self.eta() - nu;
                (-nu * x + d) * e - d * (-self.beta_i * self.t1).exp() * (-x + self.beta_i * t).exp()
            }
            Piece::Idle => -nu * x * e,
        }
    }

    fn partials(&self, t: f64, x: f64) -> Option<(f64, f64)> {
        let e = (-x).exp();
        let nu = self.nu;
        Some(match self.piece(t) {
            Piece::Racing => {
                let opp = self.share() * (-x - self.beta_j * t).exp();
                let own = self.kappa1 * (-x + self.beta_i * t).exp();
                (
                    -self.beta_j * opp + self.beta_i * own,
                    nu * x * e - opp - own,
                )
            }
            Piece::Frozen => {
                let eta = self.eta();
                let k = (eta - nu) * (-self.beta_i * self.t1).exp() * (-x + self.beta_i * t).exp();
                (-self.beta_i * k, (nu * x - eta) * e + k)
            }
            Piece::Idle => (0.0, (nu * x - nu) * e),
        })
    }

    fn reward_rate(&self, t: f64, x: f64) -> f64 {
        let h = (-self.beta_j * t.min(self.psi)).exp();
        (h - self.nu * x) * (-x).exp()
    }

    fn nu(&self) -> f64 {
        self.nu
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn max_rate(&self) -> f64 {
        self.beta_i
    }

    fn seams(&self) -> Vec<f64> {
        vec![self.psi, self.t1]
    }

    fn switch_time(&self) -> f64 {
        self.t1
    }
}

/// `W · (1 + ε x)`: a deliberately wrong surface for detector checks.
pub struct Perturbed<'a, C: CandidateValue + ?Sized> {
    pub inner: &'a C,
    pub eps: f64,
}

impl<C: CandidateValue + ?Sized> CandidateValue for Perturbed<'_, C> {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.inner.value(t, x) * (1.0 + self.eps * x)
    }

    fn partials(&self, t: f64, x: f64) -> Option<(f64, f64)> {
        let (wt, wx) = self.inner.partials(t, x)?;
        let s = 1.0 + self.eps * x;
        Some((wt * s, wx * s + self.eps * self.inner.value(t, x)))
    }

    fn reward_rate(&self, t: f64, x: f64) -> f64 {
        self.inner.reward_rate(t, x)
    }

    fn nu(&self) -> f64 {
        self.inner.nu()
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn max_rate(&self) -> f64 {
        self.inner.max_rate()
    }

    fn seams(&self) -> Vec<f64> {
        self.inner.seams()
    }

    fn switch_time(&self) -> f64 {
        self.inner.switch_time()
    }
}

/// Hides the closed-form partials of a candidate, forcing finite differences.
pub struct Numerical<'a, C: CandidateValue + ?Sized>(pub &'a C);

impl<C: CandidateValue + ?Sized> CandidateValue for Numerical<'_, C> {
    fn value(&self, t: f64, x: f64) -> f64 {
        self.0.value(t, x)
    }

    fn partials(&self, _t: f64, _x: f64) -> Option<(f64, f64)> {
        None
    }

    fn reward_rate(&self, t: f64, x: f64) -> f64 {
        self.0.reward_rate(t, x)
    }

    fn nu(&self) -> f64 {
        self.0.nu()
    }

    fn horizon(&self) -> f64 {
        self.0.horizon()
    }

    fn max_rate(&self) -> f64 {
        self.0.max_rate()
    }

    fn seams(&self) -> Vec<f64> {
        self.0.seams()
    }

    fn switch_time(&self) -> f64 {
        self.0.switch_time()
    }
}

/// Residual grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbGrid {
    pub h_t: f64,
    pub h_x: f64,
    pub x_max: f64,
}

impl HjbGrid {
    /// `h_t = h_x = h`, `x_max = β_i T + 1`.
    pub fn new(h: f64, beta_i: f64, horizon: f64) -> Self {
        HjbGrid {
            h_t: h,
            h_x: h,
            x_max: beta_i * horizon + 1.0,
        }
    }

    pub fn refined(self) -> Self {
        HjbGrid {
            h_t: self.h_t / 2.0,
            h_x: self.h_x / 2.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partials {
    ClosedForm,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub boundary_error: f64,
    pub sign_violations: usize,
    /// Nodes where the candidate produced NaN or infinity.
    pub non_finite: usize,
    pub nodes: usize,
    pub h_t: f64,
    pub h_x: f64,
    pub partials: Partials,
}

impl ResidualReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite == 0
            && self.max_residual < tol
            && self.boundary_error < 1e-12
            && self.sign_violations == 0
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    max_residual: f64,
    sign_violations: usize,
    non_finite: usize,
    nodes: usize,
}

impl Acc {
    fn merge(self, o: Acc) -> Acc {
        Acc {
            max_residual: self.max_residual.max(o.max_residual),
            sign_violations: self.sign_violations + o.sign_violations,
            non_finite: self.non_finite + o.non_finite,
            nodes: self.nodes + o.nodes,
        }
    }
}

const SIGN_TOL: f64 = 1e-12;

/// Evaluates the HJB residual of `w` over the grid. Closed-form partials are
/// used when available; otherwise central differences, skipping nodes within
/// one cell of a seam.
pub fn hjb_residual<C: CandidateValue + ?Sized>(w: &C, grid: &HjbGrid) -> Result<ResidualReport> {
    let t_end = w.horizon();
    let beta = w.max_rate();
    if !(grid.h_t > 0.0 && grid.h_x > 0.0) {
        return Err(invalid("grid", "spacings must be positive"));
    }
    if grid.x_max < beta * t_end {
        return Err(invalid("x_max", format!("must cover reachable states up to {}", beta * t_end)));
    }
    let n_t = (t_end / grid.h_t).round() as usize;
    let n_x = (grid.x_max / grid.h_x).round() as usize;
    let h_t = t_end / n_t.max(1) as f64;
    let h_x = grid.x_max / n_x.max(1) as f64;
    let closed = w.partials(0.0, 0.0).is_some();
    let seams = w.seams();
    let switch = w.switch_time();

    let acc = (0..n_t)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * h_t;
            let mut acc = Acc::default();
            if !closed {
                let near_seam = seams.iter().any(|&s| (t - s).abs() <= h_t * (1.0 + 1e-9));
                if k == 0 || near_seam {
                    return acc;
                }
            }
            let m_range = if closed { 0..=n_x } else { 1..=n_x - 1 };
            for m in m_range {
                let x = m as f64 * h_x;
                let (wt, wx) = match w.partials(t, x) {
                    Some(p) => p,
                    None => (
                        (w.value(t + h_t, x) - w.value(t - h_t, x)) / (2.0 * h_t),
                        (w.value(t, x + h_x) - w.value(t, x - h_x)) / (2.0 * h_x),
                    ),
                };
                let bracket = w.reward_rate(t, x) + wx;
                let residual = wt + (beta * bracket).max(0.0);
                if !residual.is_finite() {
                    acc.non_finite += 1;
                    continue;
                }
                acc.nodes += 1;
                acc.max_residual = acc.max_residual.max(residual.abs());
                if closed
                    && ((t < switch && bracket < -SIGN_TOL) || (t > switch && bracket > SIGN_TOL))
                {
                    acc.sign_violations += 1;
                }
            }
            acc
        })
        .reduce(Acc::default, Acc::merge);

    let mut boundary_error: f64 = 0.0;
    let mut non_finite = acc.non_finite;
    for m in 0..=n_x {
        let x = m as f64 * h_x;
        let err = (w.value(t_end, x) - w.terminal(x)).abs();
        if err.is_finite() {
            boundary_error = boundary_error.max(err);
        } else {
            non_finite += 1;
        }
    }
    Ok(ResidualReport {
        max_residual: acc.max_residual,
        boundary_error,
        sign_violations: acc.sign_violations,
        non_finite,
        nodes: acc.nodes,
        h_t,
        h_x,
        partials: if closed {
            Partials::ClosedForm
        } else {
            Partials::FiniteDifference
        },
    })
}

/// `β_j/(β_i+β_j) e^{−β_j t₁} − (ν − β_i/(β_i+β_j) e^{−β_j t₁})` at the switch
/// time; nonnegative whenever the agent stops at `θ`.
pub fn case_one_margin(p: &GameParams, t1: f64) -> f64 {
    let s = p.beta_i + p.beta_j;
    let e = (-p.beta_j * t1).exp();
    p.beta_j / s * e - (p.nu - p.beta_i / s * e)
}
