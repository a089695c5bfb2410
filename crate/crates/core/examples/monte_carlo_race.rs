//! Simulated races at the symmetric equilibria against their exact
//! utilities, and a KS check of the contact-time law.

use lockrace::analytic::utility;
use lockrace::equilibrium::{nash_one_lock, nash_two_lock};
use lockrace::model::{make_threshold_control, GameParams};
use lockrace::simulate::{estimate_utilities, ks_test, RngSpec};

fn main() -> lockrace::Result<()> {
    let seed = std::env::var("LOCKRACE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(42);
    for p in [GameParams::new(1.0, 1.0, 0.5, 2.0, 1)?, GameParams::new(1.0, 1.0, 0.25, 3.0, 2)?] {
        let eq = if p.locks == 1 { nash_one_lock(&p) } else { nash_two_lock(&p) };
        let profile = [eq.policy(0), eq.policy(1)];
        let exact = utility(&profile[0], &profile[1], &p).utility;
        let est = estimate_utilities(&profile, &p, 1_000_000, RngSpec::new(seed));
        for (k, e) in est.iter().enumerate() {
            let se = e.stderr.unwrap_or(0.0);
            println!(
                "{} lock(s), agent {k}: {:.6} ± {:.6} (exact {exact:.6}, z = {:+.2})",
                p.locks,
                e.utility,
                se,
                (e.utility - exact) / se
            );
        }
    }
    let ks = ks_test(&make_threshold_control(1.0, 1.0, 3.0)?, 100_000, RngSpec::new(seed));
    println!("KS statistic {:.5}, 1% critical value {:.5}", ks.statistic, ks.critical);
    Ok(())
}
