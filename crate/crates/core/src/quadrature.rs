//! Adaptive composite Simpson quadrature.
//!
//! Used as the independent numerical path against the closed-form
//! evaluations in [`crate::analytic`]. Integrands with jumps must be split at
//! their breakpoints by the caller (see [`integrate_pieces`]).

use crate::error::{Error, Result};

/// Default absolute tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default panel budget.
pub const MAX_PANELS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    pub panels: usize,
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Each accepted panel satisfies the Richardson estimate `|S₂ − S₁| ≤ 15·tol_panel`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panels: usize,
) -> Result<Integral> {
    if b <= a {
        return Ok(Integral {
            value: 0.0,
            error_estimate: 0.0,
            panels: 0,
        });
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let mut stack = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole: (b - a) / 6.0 * (fa + 4.0 * fm + fb),
        tol,
        depth: 0,
    }];
    let mut value = 0.0;
    let mut compensation = 0.0;
    let mut error_estimate = 0.0;
    let mut panels = 1usize;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        let converged = delta.abs() <= 15.0 * p.tol || p.depth >= 50 || (m - p.a) <= f64::EPSILON * p.a.abs();
        if !delta.is_finite() {
            return Err(Error::Quadrature {
                panels,
                estimate: f64::INFINITY,
            });
        }
        if converged {
            // Kahan summation keeps the total independent of panel count
            let y = left + right + delta / 15.0 - compensation;
            let t = value + y;
            compensation = (t - value) - y;
            value = t;
            error_estimate += delta.abs() / 15.0;
        } else {
            panels += 1;
            if panels > max_panels {
                return Err(Error::Quadrature {
                    panels,
                    estimate: error_estimate + delta.abs(),
                });
            }
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                tol: 0.5 * p.tol,
                depth: p.depth + 1,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol: 0.5 * p.tol,
                depth: p.depth + 1,
            });
        }
    }
    Ok(Integral {
        value,
        error_estimate,
        panels,
    })
}

/// Integrates over `[a, b]` split at every breakpoint strictly inside it,
/// sharing the tolerance between the pieces.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> Result<Integral> {
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&t| t > a && t < b)
        .collect();
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let piece_tol = tol / (edges.len() - 1) as f64;
    let mut total = Integral {
        value: 0.0,
        error_estimate: 0.0,
        panels: 0,
    };
    for w in edges.windows(2) {
        let part = adaptive_simpson(&f, w[0], w[1], piece_tol, MAX_PANELS)?;
        total.value += part.value;
        total.error_estimate += part.error_estimate;
        total.panels += part.panels;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_exponential() {
        let r = adaptive_simpson(|x: f64| (-x).exp(), 0.0, 1.0, 1e-12, MAX_PANELS).unwrap();
        assert!((r.value - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn cubic_is_exact() {
        let r = adaptive_simpson(|x: f64| x * x * x - 2.0 * x, -1.0, 3.0, 1e-14, MAX_PANELS).unwrap();
        assert!((r.value - 12.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        let r = adaptive_simpson(|x: f64| x, 1.0, 1.0, 1e-10, MAX_PANELS).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn pieces_handle_jumps() {
        let f = |x: f64| if x < 0.3 { 1.0 } else { 2.0 };
        let r = integrate_pieces(f, 0.0, 1.0, &[0.3], 1e-12).unwrap();
        assert!((r.value - 1.7).abs() < 1e-12);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let err = adaptive_simpson(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, 1e-14, 64).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
