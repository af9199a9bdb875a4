//! Fits a discrete-time hazard model to simulated data and compares the
//! estimates with the generating coefficients.
//!
//! cargo run --release --example fit_hazard_model

use pd_term::dth::{build_design, fit, Bin, CovariateTerm, FitOptions, ModelSpec};
use pd_term::sim::{logit, simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SimConfig::demo(30_000, 5);
    let (panel, truth) = simulate(&cfg)?;

    // time bins matching the generating baseline, unweighted so estimates are comparable
    let time_bins: Vec<Bin> = cfg
        .baseline_hazard
        .iter()
        .map(|b| Bin::new(b.upper.map_or("37+".into(), |u| format!("<={u}")), b.upper))
        .collect();
    let spec = ModelSpec {
        time_bins: time_bins.clone(),
        spell_bins: vec![Bin::new("all", None)],
        interaction: false,
        covariates: vec![
            CovariateTerm::Numeric { name: "ltv".into() },
            CovariateTerm::Numeric {
                name: "delinquent".into(),
            },
            CovariateTerm::Numeric {
                name: "unemployment".into(),
            },
            CovariateTerm::Dummy {
                name: "region".into(),
                reference: Some("A".into()),
            },
        ],
        event_weight: 1.0,
    };
    let design = build_design(&panel, &spec)?;
    let model = fit(&design, &FitOptions::default())?;
    println!(
        "{} rows, {} parameters, {} iterations, deviance {:.1}",
        design.len(),
        design.width(),
        model.iterations,
        model.deviance
    );

    let mut expected: Vec<(String, f64)> = time_bins
        .iter()
        .zip(&truth.baseline_hazard)
        .map(|(b, h)| (b.label.clone(), logit(h.hazard)))
        .collect();
    expected.extend(truth.coefficients.iter().map(|(k, v)| (k.clone(), *v)));
    println!("{:<14} {:>9} {:>9} {:>7} {:>6}", "term", "true", "estimate", "se", "z");
    for (name, t) in expected {
        let (est, se) = model.coefficient(&name).expect("column present");
        println!("{name:<14} {t:>9.4} {est:>9.4} {se:>7.4} {:>6.2}", (est - t) / se);
    }
    Ok(())
}
