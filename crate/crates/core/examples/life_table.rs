//! Kaplan-Meier life table of a simulated constant-hazard panel next to the
//! geometric survivor it should track.
//!
//! cargo run --release --example life_table

use pd_term::life_table::{build_life_table, greenwood_ci};
use pd_term::sim::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h = 0.02;
    let mut cfg = SimConfig::constant_hazard(5_000, 60, h, 11);
    cfg.competing_risk_rates.settlement = 0.01;
    let (panel, _) = simulate(&cfg)?;
    let table = build_life_table(&panel, 36)?;
    let ci = greenwood_ci(&table, 0.95)?;
    println!(
        "{:>4} {:>6} {:>4} {:>5} {:>8} {:>8} {:>17}",
        "age", "n", "f", "c", "S", "true S", "95% CI"
    );
    for k in (0..table.len()).step_by(3) {
        let age = table.ages[k];
        println!(
            "{:>4} {:>6} {:>4} {:>5} {:>8.4} {:>8.4}  [{:.4}, {:.4}]",
            age,
            table.at_risk[k],
            table.failures[k],
            table.censored[k],
            table.survival[k],
            (1.0 - h).powi(age as i32),
            ci[k].0,
            ci[k].1
        );
    }
    Ok(())
}
