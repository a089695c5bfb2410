//! Two-lock equilibria across the regimes, including a profile whose
//! sufficient conditions hold but which a grid deviation beats.

use lockrace::equilibrium::nash_two_lock;
use lockrace::model::GameParams;

fn main() -> lockrace::Result<()> {
    let cases = [
        (1.0, 1.0, 0.6, 3.0),
        (1.0, 1.0, 0.4, 0.1),
        (0.5, 1.0, 0.4, 1.2),
        (1.0, 1.0, 0.25, 3.0),
        (0.8, 1.0, 0.2, 3.0),
    ];
    for (bi, bj, nu, t) in cases {
        let eq = nash_two_lock(&GameParams::new(bi, bj, nu, t, 2)?);
        println!("β=({bi}, {bj}) ν={nu} T={t}: {}", eq.regime.describe());
        println!("  ψ = {:.6?}, certified {}", eq.thresholds, eq.certified);
        for c in &eq.conditions_checked {
            let rhs = c.rhs.map_or("n/a".to_string(), |r| format!("{r:.6}"));
            println!("  {}: {:.6} vs {rhs} -> {:?}", c.name, c.lhs, c.satisfied);
        }
        if let Some(o) = &eq.oracle {
            let gains: Vec<String> = o.gains.iter().map(|g| format!("{g:.2e}")).collect();
            println!("  grid gains [{}] (tolerance {:.0e}, {} segments)", gains.join(", "), o.tolerance, o.segments);
        }
    }
    Ok(())
}
