mod common;

use common::*;
use lockrace::analytic::utility_one_lock;
use lockrace::equilibrium::{best_response_one_lock, nash_two_lock, Certification};
use lockrace::oracle::{
    exhaustive_best_response, grid_best_response, grid_best_response_two_stage, is_bang_bang,
    quadrature_utility, threshold_switch, two_stage_utility, GridSpec,
};
use rand::Rng;

const PSI_STAR: f64 = 0.959406;

#[test]
fn recursion_is_exhaustive_search() {
    let mut r = rng(20);
    for _ in 0..15 {
        let p = random_params(&mut r, 0.99, 1);
        let opp = random_control(&mut r, 5, p.beta_j, p.horizon);
        let g = GridSpec::with_midpoint(8, p.beta_i);
        let dp = grid_best_response(&opp, &p, &g).unwrap();
        let brute = exhaustive_best_response(&opp, &p, &g).unwrap();
        assert!((dp.objective - brute.objective).abs() < 1e-10, "{p:?}");
        assert!((dp.utility.utility - dp.objective).abs() < 1e-9);
    }
}

#[test]
fn bang_bang_emerges_with_midpoint_levels() {
    // A rate of β/2 on a whole segment could stand in for a mid-segment
    // switch, so interior levels are allowed to appear; they may not buy more
    // than the grid error over the pure {0, β} search.
    let mut r = rng(21);
    let n = 40;
    let mut interior = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_params(&mut r, 1.5, 1);
        let opp = random_control(&mut r, 6, p.beta_j, p.horizon);
        let mid = grid_best_response(&opp, &p, &GridSpec::with_midpoint(n, p.beta_i)).unwrap();
        let bb = grid_best_response(&opp, &p, &GridSpec::bang_bang(n, p.beta_i)).unwrap();
        let gain = mid.utility.utility - bb.utility.utility;
        assert!(gain > -1e-10, "superset grid lost value: {gain}");
        assert!(gain < Certification::tolerance_for(n), "{p:?} gain={gain}");
        if !is_bang_bang(&mid.control, p.beta_i) {
            interior += 1;
            worst = worst.max(gain);
        }
    }
    eprintln!("finding: {interior}/50 midpoint-grid responses use β/2 somewhere; largest gain {worst:.3e}");
}

#[test]
fn grid_response_to_threshold_is_near_the_closed_form_threshold() {
    let mut r = rng(22);
    for _ in 0..20 {
        let p = random_params(&mut r, 0.99, 1);
        let psi_j = r.random_range(0.0..=p.horizon);
        let opp = gamma2(psi_j, p.beta_j, p.horizon).stage1;
        let g = grid_best_response(&opp, &p, &GridSpec::bang_bang(80, p.beta_i)).unwrap();
        let exact = best_response_one_lock(psi_j, &p);
        let ours = utility_one_lock(&exact.control(p.horizon), &opp, &p).utility;
        assert!(g.utility.utility <= ours + 1e-9);
        assert!(ours - g.utility.utility < 2e-3);
        let q = quadrature_utility(&exact.control(p.horizon), &opp, &p).unwrap();
        assert!((q.utility - ours).abs() < 1e-8);
        // a response of threshold shape switches within a segment of ψ unless
        // the objective is flat there
        if let Some(s) = threshold_switch(&g.control) {
            let flat = (p.nu - (-p.beta_j * psi_j).exp()).abs() < 1e-2;
            assert!(flat || (s - exact.psi).abs() <= p.horizon / 80.0 + 1e-9, "{p:?} s={s} ψ={}", exact.psi);
        }
    }
}

#[test]
fn two_stage_response_switches_within_one_segment_of_psi_star() {
    let p = params(1.0, 1.0, 0.25, 3.0, 2);
    let opp = gamma2(PSI_STAR, 1.0, 3.0);
    let n = 80;
    let br = grid_best_response_two_stage(&opp, &p, &GridSpec::bang_bang(n, 1.0)).unwrap();
    let s = threshold_switch(&br.policy.stage1).expect("threshold shape");
    assert!((s - PSI_STAR).abs() <= 3.0 / n as f64 + 1e-12, "switch at {s}");
}

#[test]
fn full_grid_stage_two_agrees_with_full_effort() {
    let p = params(1.0, 1.2, 0.25, 3.0, 2);
    let eq = nash_two_lock(&p);
    let opp = eq.policy(1);
    let g = GridSpec::bang_bang(30, 1.0);
    let closed = grid_best_response_two_stage(&opp, &p, &g).unwrap();
    let full = grid_best_response_two_stage(&opp, &p, &g.full_stage2()).unwrap();
    // full effort is on the grid and optimal after a success, so neither search wins
    assert!((closed.utility.utility - full.utility.utility).abs() < 1e-7,
        "{} vs {}", closed.utility.utility, full.utility.utility);
}

#[test]
fn two_stage_quadrature_matches_closed_form_for_random_thresholds() {
    let mut r = rng(23);
    for _ in 0..10 {
        let p = random_params(&mut r, 0.49, 2);
        let a = gamma2(r.random_range(0.0..=p.horizon), p.beta_i, p.horizon);
        let b = gamma2(r.random_range(0.0..=p.horizon), p.beta_j, p.horizon);
        let q = two_stage_utility(&a, &b, &p).unwrap().utility;
        let c = lockrace::analytic::utility_two_lock(&a, &b, &p).utility;
        assert!((q - c).abs() < 1e-8, "{q} {c}");
    }
}
