#![allow(dead_code)]

use lockrace::model::{GameParams, PiecewiseConstantControl, TwoStagePolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn params(beta_i: f64, beta_j: f64, nu: f64, horizon: f64, locks: u8) -> GameParams {
    GameParams::new(beta_i, beta_j, nu, horizon, locks).unwrap()
}

pub fn random_params(r: &mut ChaCha8Rng, nu_max: f64, locks: u8) -> GameParams {
    params(
        r.random_range(0.3..2.0),
        r.random_range(0.3..2.0),
        r.random_range(0.05..nu_max),
        r.random_range(0.5..3.0),
        locks,
    )
}

/// Up to `max_segments` segments with random cut points; about a third of
/// the levels are zero.
pub fn random_control(r: &mut ChaCha8Rng, max_segments: usize, beta: f64, span: f64) -> PiecewiseConstantControl {
    let n = r.random_range(1..=max_segments);
    let mut cuts: Vec<f64> = (1..n).map(|_| r.random_range(0.0..span)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut breakpoints = vec![0.0];
    breakpoints.extend(cuts.into_iter().filter(|&c| c > 1e-9 && c < span - 1e-9));
    breakpoints.push(span);
    let levels = (1..breakpoints.len())
        .map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..=beta) })
        .collect();
    PiecewiseConstantControl::new(breakpoints, levels, beta).unwrap()
}

pub fn gamma2(psi: f64, beta: f64, horizon: f64) -> TwoStagePolicy {
    TwoStagePolicy::gamma2(psi, beta, horizon).unwrap()
}
