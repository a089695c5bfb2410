//! Closed-form best response against a threshold opponent, next to the grid
//! search with and without an interior rate level.

use lockrace::analytic::utility_one_lock;
use lockrace::equilibrium::best_response_one_lock;
use lockrace::model::{make_threshold_control, GameParams};
use lockrace::oracle::{grid_best_response, is_bang_bang, threshold_switch, GridSpec};

fn main() -> lockrace::Result<()> {
    let p = GameParams::new(1.0, 1.0, 0.5, 2.0, 1)?;
    for psi_j in [0.2, 1.0, 1.8] {
        let opp = make_threshold_control(psi_j, p.beta_j, p.horizon)?;
        let br = best_response_one_lock(psi_j, &p);
        let exact = utility_one_lock(&br.control(p.horizon), &opp, &p).utility;
        println!("opponent ψ={psi_j}: closed form ψ={:.6}, J={exact:.8}", br.psi);
        for (name, g) in [("{0,β}", GridSpec::bang_bang(80, 1.0)), ("{0,β/2,β}", GridSpec::with_midpoint(80, 1.0))] {
            let r = grid_best_response(&opp, &p, &g)?;
            println!(
                "  grid {name:>9}: switch {:?}, bang-bang {}, J={:.8}",
                threshold_switch(&r.control),
                is_bang_bang(&r.control, 1.0),
                r.utility.utility
            );
        }
    }
    Ok(())
}
