//! Cosine schedule for a few offsets, with the marginal coefficients.
//!
//!     cargo run --example schedule_table

use respan::{build_schedule, ScheduleConfig};

fn main() -> respan::Result<()> {
    for p in [8e-3, 8e-2, 8e-1] {
        let tab = build_schedule(&ScheduleConfig {
            steps: 15,
            p,
            kappa: 1.0,
        })?;
        println!("p = {p}");
        println!(
            "{:>3} {:>10} {:>10} {:>10} {:>10}",
            "t", "alpha", "alpha_bar", "coeff", "std"
        );
        for t in 1..=tab.steps() {
            let m = tab.marginal_params(t)?;
            println!(
                "{t:>3} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                tab.alpha(t),
                tab.alpha_bar(t),
                m.coeff,
                m.std
            );
        }
    }
    Ok(())
}
