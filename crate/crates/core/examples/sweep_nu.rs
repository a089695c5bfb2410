//! Equilibrium thresholds as the trade-off factor grows, written as CSV
//! through the command-line front end.

fn main() {
    let code = lockrace::cli::run([
        "lockrace", "sweep", "--param", "nu", "--from", "0.05", "--to", "0.95", "--steps", "19", "--horizon", "3",
        "--n-segments", "20", "--format", "csv",
    ]);
    std::process::exit(code);
}
