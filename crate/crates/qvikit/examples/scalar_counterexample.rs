//! The scalar sharpness counterexample: a plateau map whose every point of
//! `[a, b]` is fixed, approximated from below and above by shifted copies.
//! Approximation from below recovers only the minimal fixed point, from
//! above only the maximal one; the other endpoints stay stuck, which is why
//! one-sided stability results cannot be strengthened for free.
//!
//! Run with `cargo run --example scalar_counterexample`.

use qvikit::stability::run_scalar_counterexample;

fn main() -> qvikit::Result<()> {
    let (a, b) = (0.25, 0.75);
    let report = run_scalar_counterexample(a, b, &[10, 100, 1000])?;

    println!("base plateau map on [0, 1] with a = {a}, b = {b}");
    println!(
        "extremal fixed points of the base map: min = {}, max = {}",
        report.min_base, report.max_base
    );
    println!();
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "n", "min(lower)", "max(lower)", "min(upper)", "max(upper)");
    for row in &report.rows {
        println!(
            "{:>6} {:>12} {:>12} {:>12} {:>12}",
            row.n, row.min_lower, row.max_lower, row.min_upper, row.max_upper
        );
    }
    println!();
    println!(
        "lower approximations collapse both extremal points to a = {a}: the maximal point\n\
         never recovers b = {b}; dually the upper approximations stay at b. Identities {}.",
        if report.verified() { "verified exactly" } else { "FAILED" }
    );
    Ok(())
}
