//! The BR/DIST table of the original three vision tasks, with the relative
//! bit saving of the proposed scheme over the equal-distortion baseline.
//!
//! `cargo run --example table2`

fn main() -> tba::Result<()> {
    let report = tba::eval::table2();
    print!("{}", report.to_text()?);
    println!();
    print!("{}", report.to_csv()?);
    Ok(())
}
