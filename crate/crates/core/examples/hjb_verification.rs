//! HJB residuals of both candidate value functions, closed-form partials and
//! central differences at two grid spacings.

use lockrace::hjb::{candidate_against, candidate_w_silent, hjb_residual, CandidateValue, HjbGrid, Numerical};
use lockrace::model::GameParams;

fn show(name: &str, w: &dyn CandidateValue) -> lockrace::Result<()> {
    let grid = HjbGrid::new(1e-3, w.max_rate(), w.horizon());
    let exact = hjb_residual(w, &grid)?;
    println!(
        "{name}: switch at {:.4}, residual {:.2e}, boundary {:.2e}, sign violations {}",
        w.switch_time(),
        exact.max_residual,
        exact.boundary_error,
        exact.sign_violations
    );
    let coarse = hjb_residual(&Numerical(w), &grid)?;
    let fine = hjb_residual(&Numerical(w), &grid.refined())?;
    print!("  finite differences: {:.2e} at h=1e-3, {:.2e} at h=5e-4", coarse.max_residual, fine.max_residual);
    if fine.max_residual > 0.0 {
        print!(" (ratio {:.2})", coarse.max_residual / fine.max_residual);
    }
    println!();
    Ok(())
}

fn main() -> lockrace::Result<()> {
    show("silent, ν < c", &candidate_w_silent(1.0, 0.5, 1.0, 1.0))?;
    show("silent, ν > c", &candidate_w_silent(0.4, 0.5, 1.0, 1.0))?;
    let p = GameParams::new(1.0, 1.0, 0.5, 2.0, 1)?;
    show("threshold, opponent stops at 1.0", &candidate_against(&p, 1.0)?)?;
    show("threshold, opponent stops at 0.2", &candidate_against(&p, 0.2)?)?;
    Ok(())
}
