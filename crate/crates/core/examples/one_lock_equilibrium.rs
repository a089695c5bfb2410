//! One-lock equilibria for a few parameter sets, with oracle certificates.

use lockrace::equilibrium::nash_one_lock;
use lockrace::model::GameParams;

fn main() -> lockrace::Result<()> {
    for (bi, bj, nu, t) in [(1.0, 1.0, 0.5, 2.0), (1.0, 2.0, 0.5, 3.0), (1.0, 1.0, 1.2, 2.0)] {
        let eq = nash_one_lock(&GameParams::new(bi, bj, nu, t, 1)?);
        let gains: Vec<String> = eq.oracle.iter().flat_map(|o| &o.gains).map(|g| format!("{g:.1e}")).collect();
        println!(
            "β=({bi}, {bj}) ν={nu} T={t}: ψ = {:.6?}, {}, certified {} (grid gains {})",
            eq.thresholds,
            eq.regime.describe(),
            eq.certified,
            gains.join(", ")
        );
    }
    Ok(())
}
