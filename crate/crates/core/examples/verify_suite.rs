//! Runs the property suite and prints the PASS/FAIL table.
//!
//!     cargo run --release --example verify_suite [seed]

fn main() -> respan::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let checks = respan::verify::run_all(seed)?;
    respan::verify::write_table(&checks, std::io::stdout()).expect("stdout");
    Ok(())
}
