//! Splits a simulated panel by loan and reports resolution-rate discrepancies.
//!
//! cargo run --release --example clustered_split -- [fraction] [seed]

use pd_term::resampling::{clustered_split, representativeness};
use pd_term::sim::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let fraction = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0.7);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);

    let (panel, _) = simulate(&SimConfig::demo(20_000, 3))?;
    let split = clustered_split(&panel, fraction, seed)?;
    println!(
        "train {} loans / {} rows, valid {} loans / {} rows",
        split.train.loan_ids().len(),
        split.train.len(),
        split.valid.loan_ids().len(),
        split.valid.len()
    );
    println!("{:<12} {:<16} {:>8}", "pair", "resolution", "AD");
    for e in representativeness(&panel, &split)? {
        println!("{:<12} {:<16} {:>7.3}%", e.pair, e.resolution.name(), 100.0 * e.ad);
    }
    Ok(())
}
