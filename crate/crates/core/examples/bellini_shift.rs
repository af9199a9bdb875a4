//! Regresses the portfolio 12-month default rate on a macro series and shifts a
//! static PD along a stressed forecast.
//!
//! cargo run --release --example bellini_shift

use pd_term::baselines::{bellini_lifetime_pd, fit_macro_model, Link};
use pd_term::sim::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (panel, _) = simulate(&SimConfig::demo(20_000, 4))?;
    let vars = vec!["unemployment".to_string()];
    for link in [Link::Identity, Link::Logit] {
        let model = fit_macro_model(&panel, &vars, link)?;
        println!(
            "{link:?}: coefficients {:?}, anchor rate {:.4}, {} fitted months",
            model.coefficients,
            model.anchor,
            model.fitted.len()
        );
    }

    let model = fit_macro_model(&panel, &vars, Link::Logit)?;
    // a 12-month PD is shifted once per forecast year; unemployment peaks two
    // standard deviations above its mean in year two
    let path = [0.5, 2.0, 1.0, 0.0, 0.0];
    let forecast: Vec<f64> = path.iter().map(|&z| model.predict(&[z])).collect();
    let ts = bellini_lifetime_pd(0.02, &forecast, model.anchor)?;
    for (k, z) in path.iter().enumerate() {
        println!(
            "year {}: z {z:+.1}  forecast rate {:.4}  shifted PD {:.4}  cumulative PD {:.4}",
            k + 1,
            forecast[k],
            ts.shifted[k],
            1.0 - ts.survival[k]
        );
    }
    Ok(())
}
