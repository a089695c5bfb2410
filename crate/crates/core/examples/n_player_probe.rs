//! Monte Carlo deviation probe for the conjectured three-agent profile.

use lockrace::equilibrium::nash_n_player_conjecture;
use lockrace::model::{make_threshold_control, GameParams, TwoStagePolicy};
use lockrace::simulate::{estimate_deviation, RngSpec};

fn main() -> lockrace::Result<()> {
    let p = GameParams::new(1.0, 1.0, 0.5, 2.0, 1)?.with_agents(3)?;
    let eq = nash_n_player_conjecture(&p, 3, 1)?;
    println!("conjectured threshold {:.6} for each of 3 agents", eq.thresholds[0]);
    let profile: Vec<TwoStagePolicy> = eq
        .thresholds
        .iter()
        .map(|&psi| make_threshold_control(psi, 1.0, p.horizon).map(TwoStagePolicy::single))
        .collect::<lockrace::Result<_>>()?;
    for k in 0..=20 {
        let psi = p.horizon * k as f64 / 20.0;
        let dev = TwoStagePolicy::single(make_threshold_control(psi, 1.0, p.horizon)?);
        let est = estimate_deviation(&profile, 0, &dev, &p, 200_000, RngSpec::new(42).with_stream(7));
        let flag = if est.gain > 3.0 * est.stderr { "  <- profitable" } else { "" };
        println!("ψ = {psi:.1}: gain {:+.5} ± {:.5}{flag}", est.gain, est.stderr);
    }
    Ok(())
}
