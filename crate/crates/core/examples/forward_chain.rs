//! Iterating the one-step forward transition reproduces the closed-form
//! marginal. Prints Monte Carlo moments of both next to the analytic values.
//!
//!     cargo run --release --example forward_chain

use respan::verify::marginal_moments;
use respan::{build_schedule, ScheduleConfig};

fn main() -> respan::Result<()> {
    let tab = build_schedule(&ScheduleConfig::default())?;
    let n = 100_000;
    println!("e0 = 0.5, {n} chains");
    println!(
        "{:>3} {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9}",
        "t", "mean", "iter", "direct", "var", "iter", "direct"
    );
    for r in marginal_moments(&tab, 0.5, n, 7) {
        println!(
            "{:>3} {:>9.5} {:>9.5} {:>9.5} | {:>9.5} {:>9.5} {:>9.5}",
            r.t,
            r.expected_mean,
            r.iterated.0,
            r.direct.0,
            r.expected_var,
            r.iterated.1,
            r.direct.1
        );
    }
    Ok(())
}
