//! Empirical cohort term structure from a defaults table, for several
//! reference periods.
//!
//! cargo run --release --example breed_term_structure -- [table.csv]

use pd_term::baselines::{breed_term_structure, empirical_cohort_rate, load_defaults_table};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/breed_defaults.csv").to_string());
    let table = load_defaults_table(&path)?;
    println!("{} cohorts from {path}", table.cohorts.len());
    for r in [1, 3, table.cohorts.len()] {
        let ts = breed_term_structure(&table, r)?;
        let cells: Vec<String> = ts.iter().map(|(v, p)| format!("v{v}={:.3}%", 100.0 * p)).collect();
        println!("r={r}: {}", cells.join(" "));
    }
    let rates = empirical_cohort_rate(&table)?;
    let first = &table.cohorts[0].label;
    let cells: Vec<String> = rates
        .iter()
        .filter(|((c, _), _)| c == first)
        .map(|((_, v), p)| format!("v{v}={:.3}%", 100.0 * p))
        .collect();
    println!("one-month rates of cohort {first}: {}", cells.join(" "));
    Ok(())
}
