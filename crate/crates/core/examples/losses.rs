//! The residual loss against L1/L2: values and derivatives along |h|, plus
//! the range penalty on an out-of-range prediction.
//!
//!     cargo run --example losses

use respan::loss::{
    boundary_penalty, full_loss, residual_elem, residual_elem_deriv, DEFAULT_GAMMA,
};
use respan::ImageTensor;

fn main() -> respan::Result<()> {
    println!(
        "{:>5} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
        "h", "res", "l1", "l2", "d res", "d l1", "d l2"
    );
    for k in 0..=12 {
        let h = k as f64 * 0.25;
        println!(
            "{h:>5.2} {:>8.4} {:>8.4} {:>8.4} | {:>8.4} {:>8.4} {:>8.4}",
            residual_elem(h),
            h,
            h * h,
            residual_elem_deriv(h),
            if h > 0.0 { 1.0 } else { 0.0 },
            2.0 * h
        );
    }
    let e0 = ImageTensor::new(1, 1, 4, vec![-0.25, 0.0, 0.25, 0.5])?;
    let pred = ImageTensor::filled(1, 1, 4, 0.75);
    let p = boundary_penalty(&pred, &e0)?;
    let full = full_loss(&pred, &e0, DEFAULT_GAMMA)?;
    println!(
        "penalty {:.4}, full loss with gamma {DEFAULT_GAMMA}: {:.4}",
        p.value, full.value
    );
    Ok(())
}
