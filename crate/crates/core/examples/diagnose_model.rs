//! Trains a covariate model and a time-bins-only model, then compares them on
//! the validation split: tAUC, IBS, term-structure MAE and 12-month rate MAE.
//!
//! cargo run --release --example diagnose_model

use pd_term::diagnostics::{
    default_rate_series, tbs_curve, term_structure_mae, threshold_grid, troc, MarkerPanel, DEFAULT_BANDWIDTH,
    GRID_POINTS,
};
use pd_term::dth::{
    build_design, fit, predict_hazard, standard_time_bins, term_structure_from_hazards, CovariateTerm, FitOptions,
    ModelSpec,
};
use pd_term::life_table::{build_life_table, default_age_cap, empirical_term_structure};
use pd_term::panel::SpellPanel;
use pd_term::resampling::clustered_split;
use pd_term::sim::{simulate, SimConfig};
use std::collections::BTreeMap;

fn report(
    name: &str,
    train: &SpellPanel,
    valid: &SpellPanel,
    spec: &ModelSpec,
) -> Result<(), Box<dyn std::error::Error>> {
    let model = fit(&build_design(train, spec)?, &FitOptions::default())?;
    let hazards = predict_hazard(&model, valid)?;
    let mp = MarkerPanel::from_panel(valid, &hazards)?;
    let grid = threshold_grid(&mp, GRID_POINTS);
    let aucs: Vec<String> = [3, 12, 24, 36]
        .iter()
        .map(|&t| troc(&mp, t, DEFAULT_BANDWIDTH, &grid).map(|c| format!("{:.3}", c.auc)))
        .collect::<Result<_, _>>()?;
    let ibs = tbs_curve(&mp, 36)?.ibs;
    let cap = default_age_cap(valid);
    let actual = empirical_term_structure(&build_life_table(valid, cap)?);
    let p = term_structure_from_hazards(valid, &hazards, cap)?.portfolio;
    let expected: BTreeMap<u32, f64> = p.ages.into_iter().zip(p.density).collect();
    let ts_mae = term_structure_mae(&actual, &expected, cap)?;
    let rate_mae = default_rate_series(valid, &hazards)?.mae;
    println!(
        "{name:<10} tAUC(3,12,24,36) = {}  IBS {ibs:.4}  term-structure MAE {:.4}%  12m-rate MAE {:.3}%",
        aucs.join("/"),
        100.0 * ts_mae,
        100.0 * rate_mae
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (panel, _) = simulate(&SimConfig::demo(30_000, 9))?;
    let split = clustered_split(&panel, 0.7, 9)?;
    let basic = ModelSpec {
        event_weight: 1.0,
        ..ModelSpec::default()
    };
    let advanced = ModelSpec {
        covariates: ["ltv", "delinquent", "unemployment"]
            .iter()
            .map(|n| CovariateTerm::Numeric { name: n.to_string() })
            .chain([CovariateTerm::Dummy {
                name: "region".into(),
                reference: None,
            }])
            .collect(),
        ..basic.clone()
    };
    println!("{} time bins, spell strata 1/2/3/4+", standard_time_bins().len());
    report("basic", &split.train, &split.valid, &basic)?;
    report("advanced", &split.train, &split.valid, &advanced)?;
    Ok(())
}
