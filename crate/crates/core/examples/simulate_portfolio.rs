//! Simulates a portfolio and prints its resolution mix and censoring profile.
//!
//! cargo run --release --example simulate_portfolio -- [n_loans] [seed]

use pd_term::life_table::default_age_cap;
use pd_term::panel::{censoring_study, failure_time_histogram, ResolutionType};
use pd_term::sim::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_loans = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10_000);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(7);

    let (panel, truth) = simulate(&SimConfig::demo(n_loans, seed))?;
    let spells = panel.spells();
    println!("{} loans, {} spells, {} rows", n_loans, spells.len(), panel.len());
    let recurrent = spells.iter().filter(|s| s.spell_num > 1).count();
    println!("{recurrent} spells follow a cure");

    let cap = default_age_cap(&panel);
    let hist = failure_time_histogram(&panel, ResolutionType::Default, cap)?;
    for kind in ResolutionType::ALL {
        println!(
            "{:>16}: {:.1}%",
            kind.name(),
            100.0 * hist.shares[kind.code() as usize - 1]
        );
    }
    let study = censoring_study(&panel, cap)?;
    println!(
        "mean censoring rate over ages 1..={cap}: {:.1}%",
        100.0 * study.mean_rate
    );

    let mean_h = truth.hazards.iter().sum::<f64>() / truth.hazards.len() as f64;
    println!("mean generating hazard {mean_h:.5}");
    Ok(())
}
