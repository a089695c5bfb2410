//! Closed-form utilities next to their quadrature counterparts for an
//! irregular control pair and a two-lock threshold pair.

use lockrace::analytic::{utility_one_lock, utility_two_lock};
use lockrace::model::{GameParams, PiecewiseConstantControl, TwoStagePolicy};
use lockrace::oracle::{quadrature_utility, two_stage_utility};

fn main() -> lockrace::Result<()> {
    let p = GameParams::new(1.0, 1.5, 0.3, 2.0, 1)?;
    let a = PiecewiseConstantControl::new(vec![0.0, 0.3, 1.1, 2.0], vec![1.0, 0.2, 0.7], 1.0)?;
    let b = PiecewiseConstantControl::new(vec![0.0, 0.8, 2.0], vec![1.5, 0.0], 1.5)?;
    let c = utility_one_lock(&a, &b, &p);
    let q = quadrature_utility(&a, &b, &p)?;
    println!("one lock: P = {:.12} / {:.12}", c.success_prob, q.success_prob);
    println!("          E[cost] = {:.12} / {:.12}", c.expected_cost, q.expected_cost);
    println!("          J = {:.12} / {:.12}", c.utility, q.utility);

    let p = GameParams::new(1.0, 1.3, 0.25, 3.0, 2)?;
    let x = TwoStagePolicy::gamma2(0.9, 1.0, 3.0)?;
    let y = TwoStagePolicy::gamma2(1.4, 1.3, 3.0)?;
    println!(
        "two locks: J = {:.12} / {:.12}",
        utility_two_lock(&x, &y, &p).utility,
        two_stage_utility(&x, &y, &p)?.utility
    );
    Ok(())
}
