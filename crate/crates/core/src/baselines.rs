//! Legacy lifetime-PD baselines: macro-shifted static PDs chained as hazards
//! (portfolio- and account-level), and empirical term structures pooled from a
//! cohort defaults table over a reference period.

use crate::diagnostics::{empirical_default_rates, DiagnosticsError};
use crate::dth::chain;
use crate::month::YearMonth;
use crate::panel::{CovariateValue, SpellPanel};
use crate::sim::logistic;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("anchor mean is zero")]
    ZeroAnchor,
    #[error("probability {0} must lie in (0, 1)")]
    InvalidProbability(f64),
    #[error("forecast horizon is empty")]
    EmptyForecast,
    #[error("covariate `{0}` is missing or not numeric")]
    UnknownCovariate(String),
    #[error("regression needs more months than coefficients ({months} <= {coefficients})")]
    TooFewMonths { months: usize, coefficients: usize },
    #[error("macro regression did not converge")]
    NotConverged,
    #[error("reference period must be at least 1 and at most the cohort count ({0})")]
    InvalidReference(usize),
    #[error("cohort `{cohort}`: {message}")]
    InvalidTable { cohort: String, message: String },
    #[error("cohort `{cohort}` has negative survivors at lifetime point {v}")]
    NegativeSurvivors { cohort: String, v: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `D_t`: share of accounts performing at `t` that default within `(t, t + 12]`.
pub fn portfolio_default_rate(panel: &SpellPanel) -> Result<BTreeMap<YearMonth, f64>, BaselineError> {
    Ok(empirical_default_rates(panel)?
        .into_iter()
        .map(|(m, (r, _))| (m, r))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

/// Regression of the portfolio default rate on macro variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroModel {
    pub link: Link,
    pub variables: Vec<String>,
    /// Intercept first, then one slope per variable.
    pub coefficients: Vec<f64>,
    pub fitted: BTreeMap<YearMonth, f64>,
    /// Fitted mean at the last observed month.
    pub anchor: f64,
    /// Fitted identity-link means outside `[0, 1]`.
    pub out_of_range: usize,
}

impl MacroModel {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let eta = self.coefficients[0] + self.coefficients[1..].iter().zip(z).map(|(b, x)| b * x).sum::<f64>();
        match self.link {
            Link::Identity => eta,
            Link::Logit => logistic(eta),
        }
    }
}

/// Per-month means of the named numeric covariates.
pub fn monthly_macro_values(
    panel: &SpellPanel,
    names: &[String],
) -> Result<BTreeMap<YearMonth, Vec<f64>>, BaselineError> {
    let mut sums: BTreeMap<YearMonth, (Vec<f64>, u64)> = BTreeMap::new();
    for name in names {
        if !matches!(panel.covariate(0, name), Some(CovariateValue::Numeric(_))) {
            return Err(BaselineError::UnknownCovariate(name.clone()));
        }
    }
    for (i, r) in panel.rows().iter().enumerate() {
        let e = sums.entry(r.date).or_insert_with(|| (vec![0.0; names.len()], 0));
        for (k, name) in names.iter().enumerate() {
            if let Some(CovariateValue::Numeric(x)) = panel.covariate(i, name) {
                e.0[k] += x;
            }
        }
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(m, (s, n))| (m, s.into_iter().map(|x| x / n as f64).collect()))
        .collect())
}

/// Fits `g(D_t) = b0 + b'z_t` over the months with a default rate. The identity
/// link uses least squares; the logit link a binomial GLM weighted by account counts.
pub fn fit_macro_model(panel: &SpellPanel, variables: &[String], link: Link) -> Result<MacroModel, BaselineError> {
    let rates = empirical_default_rates(panel)?;
    let z = monthly_macro_values(panel, variables)?;
    let months: Vec<YearMonth> = rates.keys().copied().collect();
    let p = variables.len() + 1;
    if months.len() <= p {
        return Err(BaselineError::TooFewMonths {
            months: months.len(),
            coefficients: p,
        });
    }
    let x = DMatrix::from_fn(months.len(), p, |i, j| if j == 0 { 1.0 } else { z[&months[i]][j - 1] });
    let y = DVector::from_iterator(months.len(), months.iter().map(|m| rates[m].0));
    let n = DVector::from_iterator(months.len(), months.iter().map(|m| rates[m].1 as f64));
    let beta = match link {
        Link::Identity => x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|_| BaselineError::NotConverged)?,
        Link::Logit => logit_glm(&x, &y, &n)?,
    };
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let mut model = MacroModel {
        link,
        variables: variables.to_vec(),
        coefficients,
        fitted: BTreeMap::new(),
        anchor: 0.0,
        out_of_range: 0,
    };
    for m in &months {
        let mu = model.predict(&z[m]);
        if !(0.0..=1.0).contains(&mu) {
            model.out_of_range += 1;
        }
        model.fitted.insert(*m, mu);
    }
    model.anchor = *model.fitted.values().last().expect("at least one month");
    if model.out_of_range > 0 {
        log::warn!("{} fitted default rates fall outside [0, 1]", model.out_of_range);
    }
    Ok(model)
}

fn logit_glm(x: &DMatrix<f64>, y: &DVector<f64>, n: &DVector<f64>) -> Result<DVector<f64>, BaselineError> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mean = y.dot(n) / n.sum();
    beta[0] = (mean.clamp(1e-6, 1.0 - 1e-6) / (1.0 - mean.clamp(1e-6, 1.0 - 1e-6))).ln();
    for _ in 0..100 {
        let eta = x * &beta;
        let mu = eta.map(logistic);
        let w = DVector::from_iterator(mu.len(), mu.iter().zip(n.iter()).map(|(m, k)| k * m * (1.0 - m)));
        let grad = x.transpose() * DVector::from_iterator(mu.len(), (0..mu.len()).map(|i| n[i] * (y[i] - mu[i])));
        let info = x.transpose() * DMatrix::from_diagonal(&w) * x;
        let step = info.cholesky().ok_or(BaselineError::NotConverged)?.solve(&grad);
        beta += &step;
        if step.amax() < 1e-10 {
            return Ok(beta);
        }
    }
    Err(BaselineError::NotConverged)
}

/// `x * mu_t / mu_anchor`, clipped to `[0, 1]`; the flag reports clipping.
pub fn proportional_shift(x: f64, mu_t: f64, mu_anchor: f64) -> Result<(f64, bool), BaselineError> {
    if mu_anchor == 0.0 {
        return Err(BaselineError::ZeroAnchor);
    }
    let v = x * mu_t / mu_anchor;
    let clipped = v.clamp(0.0, 1.0);
    Ok((clipped, clipped != v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BelliniTermStructure {
    /// Macro-shifted PDs used as hazards.
    pub shifted: Vec<f64>,
    pub survival: Vec<f64>,
    /// Lifetime PD per forecast month: `S(t-1) * shifted_t`.
    pub pd: Vec<f64>,
    pub clipped: usize,
}

/// Portfolio-level chaining of one static PD over the macro forecasts.
pub fn bellini_lifetime_pd(p: f64, forecasts: &[f64], anchor: f64) -> Result<BelliniTermStructure, BaselineError> {
    bellini_account_lifetime_pd(&vec![p; forecasts.len()], forecasts, anchor)
}

/// Account-level variant: `account_pd[t]` is the account model's mean at each forecast month.
pub fn bellini_account_lifetime_pd(
    account_pd: &[f64],
    forecasts: &[f64],
    anchor: f64,
) -> Result<BelliniTermStructure, BaselineError> {
    if forecasts.is_empty() {
        return Err(BaselineError::EmptyForecast);
    }
    let mut shifted = Vec::with_capacity(forecasts.len());
    let mut clipped = 0;
    for (&p, &mu) in account_pd.iter().zip(forecasts) {
        if !(p > 0.0 && p < 1.0) {
            return Err(BaselineError::InvalidProbability(p));
        }
        let (v, c) = proportional_shift(p, mu, anchor)?;
        clipped += usize::from(c);
        shifted.push(v);
    }
    let (survival, pd) = chain(&shifted);
    Ok(BelliniTermStructure {
        shifted,
        survival,
        pd,
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cohort {
    pub label: String,
    pub initial: u64,
    /// Defaults at lifetime points `v = 1, 2, ...` observed so far.
    pub defaults: Vec<u64>,
}

/// Cohorts in chronological order; later cohorts have no more lifetime points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultsTable {
    pub cohorts: Vec<Cohort>,
}

impl DefaultsTable {
    pub fn new(cohorts: Vec<Cohort>) -> Result<Self, BaselineError> {
        for (k, c) in cohorts.iter().enumerate() {
            let bad = |message: &str| BaselineError::InvalidTable {
                cohort: c.label.clone(),
                message: message.to_string(),
            };
            if c.defaults.iter().sum::<u64>() > c.initial {
                return Err(bad("more defaults than initial accounts"));
            }
            if k > 0 && c.defaults.len() > cohorts[k - 1].defaults.len() {
                return Err(bad("observes more lifetime points than an earlier cohort"));
            }
        }
        Ok(Self { cohorts })
    }

    /// First-spell defaults of loans observed from origination, with cohorts
    /// keyed by origination month and lifetime points by loan period.
    pub fn from_panel(panel: &SpellPanel) -> Result<Self, BaselineError> {
        let Some((_, last)) = panel.month_span() else {
            return DefaultsTable::new(Vec::new());
        };
        let mut by_cohort: BTreeMap<YearMonth, (u64, BTreeMap<u32, u64>)> = BTreeMap::new();
        for s in panel.spells().iter().filter(|s| s.spell_num == 1 && s.entry == 0) {
            let first = &panel.rows()[s.rows.start];
            if first.loan_period != 1 {
                continue;
            }
            let e = by_cohort.entry(first.date).or_default();
            e.0 += 1;
            if s.failed() {
                *e.1.entry(s.stop).or_insert(0) += 1;
            }
        }
        let cohorts = by_cohort
            .into_iter()
            .map(|(month, (initial, d))| {
                let points = (last.months_since(month) + 1) as u32;
                Cohort {
                    label: month.to_string(),
                    initial,
                    defaults: (1..=points).map(|v| d.get(&v).copied().unwrap_or(0)).collect(),
                }
            })
            .collect();
        DefaultsTable::new(cohorts)
    }
}

/// Empirical lifetime PD per horizon `v`: defaults at `v` summed over the `r`
/// cohorts ending `v - 1` cohorts before the last, over their initial volumes.
/// Horizons whose window leaves the table are omitted.
pub fn breed_term_structure(table: &DefaultsTable, r: usize) -> Result<BTreeMap<usize, f64>, BaselineError> {
    let m = table.cohorts.len();
    if r == 0 || r > m {
        return Err(BaselineError::InvalidReference(m));
    }
    let mut out = BTreeMap::new();
    for v in 1..=m {
        let Some(start) = (m - v + 1).checked_sub(r) else { break };
        let window = &table.cohorts[start..=m - v];
        let mut d = 0;
        let mut n = 0;
        let mut complete = true;
        for c in window {
            match c.defaults.get(v - 1) {
                Some(&x) => d += x,
                None => complete = false,
            }
            n += c.initial;
        }
        if complete && n > 0 {
            out.insert(v, d as f64 / n as f64);
        }
    }
    Ok(out)
}

/// Breed term structures per segment, with segments from a categorical covariate
/// read at each loan's first row.
pub fn segmented_breed(
    panel: &SpellPanel,
    segment: &str,
    r: usize,
) -> Result<BTreeMap<String, BTreeMap<usize, f64>>, BaselineError> {
    let mut seg_of: BTreeMap<u64, String> = BTreeMap::new();
    for s in panel.spells() {
        if let std::collections::btree_map::Entry::Vacant(e) = seg_of.entry(s.loan_id) {
            let level = match panel.covariate(s.rows.start, segment) {
                Some(CovariateValue::Categorical(l)) => l.to_string(),
                _ => return Err(BaselineError::UnknownCovariate(segment.to_string())),
            };
            e.insert(level);
        }
    }
    let levels: std::collections::BTreeSet<&String> = seg_of.values().collect();
    let mut out = BTreeMap::new();
    for level in levels {
        let part = panel.filter_loans(|id| seg_of.get(&id) == Some(level));
        let table = DefaultsTable::from_panel(&part)?;
        if table.cohorts.len() >= r {
            out.insert(level.clone(), breed_term_structure(&table, r)?);
        }
    }
    Ok(out)
}

/// One-month default rates `d_tv / n'_tv` with `n'_tv = n'_t0 - sum_{u<v} d_tu`.
/// Cells with no survivors and no defaults are skipped.
pub fn empirical_cohort_rate(table: &DefaultsTable) -> Result<BTreeMap<(String, usize), f64>, BaselineError> {
    let mut out = BTreeMap::new();
    for c in &table.cohorts {
        let mut survivors = c.initial as i64;
        for (k, &d) in c.defaults.iter().enumerate() {
            if survivors <= 0 {
                if d > 0 {
                    return Err(BaselineError::NegativeSurvivors {
                        cohort: c.label.clone(),
                        v: k + 1,
                    });
                }
                continue;
            }
            out.insert((c.label.clone(), k + 1), d as f64 / survivors as f64);
            survivors -= d as i64;
        }
    }
    Ok(out)
}

/// Reads `Cohort,InitialVolume,d_1,...,d_V`; trailing cells may be empty.
pub fn read_defaults_table<R: Read>(reader: R) -> Result<DefaultsTable, BaselineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut cohorts = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let parse = |s: &str, what: &str| {
            s.parse::<u64>().map_err(|_| BaselineError::Parse {
                line,
                message: format!("{what} `{s}` is not a non-negative integer"),
            })
        };
        let label = rec.get(0).unwrap_or("").to_string();
        let initial = parse(rec.get(1).unwrap_or(""), "InitialVolume")?;
        let mut defaults = Vec::new();
        let mut ended = false;
        for cell in rec.iter().skip(2) {
            if cell.is_empty() {
                ended = true;
            } else if ended {
                return Err(BaselineError::Parse {
                    line,
                    message: "defaults must be contiguous from v = 1".into(),
                });
            } else {
                defaults.push(parse(cell, "default count")?);
            }
        }
        cohorts.push(Cohort {
            label,
            initial,
            defaults,
        });
    }
    DefaultsTable::new(cohorts)
}

pub fn load_defaults_table(path: impl AsRef<Path>) -> Result<DefaultsTable, BaselineError> {
    read_defaults_table(std::fs::File::open(path)?)
}

pub fn write_defaults_table<W: Write>(table: &DefaultsTable, writer: W) -> Result<(), BaselineError> {
    let width = table.cohorts.iter().map(|c| c.defaults.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["Cohort".to_string(), "InitialVolume".to_string()];
    header.extend((1..=width).map(|v| format!("d_{v}")));
    w.write_record(&header)?;
    for c in &table.cohorts {
        let mut rec = vec![c.label.clone(), c.initial.to_string()];
        rec.extend((0..width).map(|k| c.defaults.get(k).map(u64::to_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    pub const BREED_TABLE_CSV: &str = "\
Cohort,InitialVolume,d_1,d_2,d_3,d_4,d_5,d_6,d_7
201501,500,10,5,4,8,6,3,3
201502,550,11,5,6,3,7,5,
201503,600,13,5,7,4,6,,
201504,650,14,6,6,5,,,
201505,700,15,5,7,,,,
201506,750,14,7,,,,,
201507,800,16,,,,,,
";
}

#[cfg(test)]
mod tests {
    use super::fixtures::BREED_TABLE_CSV;
    use super::*;
    use crate::panel::fixtures::panel_of;
    use crate::panel::ResolutionType::*;

    fn table() -> DefaultsTable {
        read_defaults_table(BREED_TABLE_CSV.as_bytes()).unwrap()
    }

    #[test]
    fn breed_reference_three() {
        let ts = breed_term_structure(&table(), 3).unwrap();
        let expected = [0.02000, 0.00857, 0.01026, 0.00667, 0.01152];
        assert_eq!(ts.len(), 5);
        for (v, e) in expected.iter().enumerate() {
            assert!((ts[&(v + 1)] * 100.0 - e * 100.0).abs() < 5e-4, "v={}", v + 1);
        }
        assert_eq!(ts[&1], 45.0 / 2250.0);
        assert_eq!(ts[&2], 18.0 / 2100.0);
        assert_eq!(ts[&4], 12.0 / 1800.0);
    }

    #[test]
    fn breed_single_cohort_window() {
        let ts = breed_term_structure(&table(), 1).unwrap();
        assert_eq!(ts[&1], 16.0 / 800.0);
        assert!(breed_term_structure(&table(), 0).is_err());
        assert!(breed_term_structure(&table(), 8).is_err());
    }

    #[test]
    fn breed_full_reference_uses_each_cohort_once() {
        let t = table();
        let ts = breed_term_structure(&t, 7).unwrap();
        // only v = 1 keeps all seven cohorts in the window
        assert_eq!(ts.keys().copied().collect::<Vec<_>>(), vec![1]);
        let d: u64 = t.cohorts.iter().map(|c| c.defaults[0]).sum();
        let n: u64 = t.cohorts.iter().map(|c| c.initial).sum();
        assert_eq!(ts[&1], d as f64 / n as f64);
    }

    #[test]
    fn cohort_rates() {
        let r = empirical_cohort_rate(&table()).unwrap();
        assert_eq!(r[&("201501".to_string(), 1)], 0.02);
        assert!((r[&("201501".to_string(), 2)] - 5.0 / 490.0).abs() < 1e-15);
        let zero = DefaultsTable::new(vec![Cohort {
            label: "a".into(),
            initial: 5,
            defaults: vec![0, 0],
        }])
        .unwrap();
        assert!(empirical_cohort_rate(&zero).unwrap().values().all(|&x| x == 0.0));
    }

    #[test]
    fn table_round_trip_and_validation() {
        let t = table();
        let mut buf = Vec::new();
        write_defaults_table(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), BREED_TABLE_CSV);
        assert!(DefaultsTable::new(vec![Cohort {
            label: "x".into(),
            initial: 1,
            defaults: vec![2]
        }])
        .is_err());
        let gap = "Cohort,InitialVolume,d_1,d_2\nx,5,,1\n";
        assert!(matches!(
            read_defaults_table(gap.as_bytes()),
            Err(BaselineError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn shift_rules() {
        assert_eq!(proportional_shift(0.3, 0.05, 0.05).unwrap(), (0.3, false));
        let (v, c) = proportional_shift(0.02, 1.5, 1.0).unwrap();
        assert!((v - 0.03).abs() < 1e-15 && !c);
        assert_eq!(proportional_shift(0.9, 2.0, 1.0).unwrap(), (1.0, true));
        assert!(matches!(
            proportional_shift(0.1, 1.0, 0.0),
            Err(BaselineError::ZeroAnchor)
        ));
    }

    #[test]
    fn bellini_flat_forecast_is_geometric() {
        let b = bellini_lifetime_pd(0.01, &[0.05; 3], 0.05).unwrap();
        let expected = [0.01, 0.0099, 0.009801];
        for (a, e) in b.pd.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        let total: f64 = b.pd.iter().sum::<f64>() + b.survival.last().unwrap();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(bellini_lifetime_pd(0.01, &[], 0.05).is_err());
        assert!(bellini_lifetime_pd(0.0, &[0.05], 0.05).is_err());
    }

    #[test]
    fn account_level_with_constant_mean_matches_portfolio_level() {
        let f = [0.04, 0.05, 0.07, 0.06];
        let a = bellini_account_lifetime_pd(&[0.02; 4], &f, 0.05).unwrap();
        let p = bellini_lifetime_pd(0.02, &f, 0.05).unwrap();
        assert_eq!(a, p);
        assert!(p.survival.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn panel_defaults_table() {
        // all loans originate 2020-01; defaults at loan periods 2 and 4
        let p = panel_of(&[(0, 2, Default), (0, 4, Default), (0, 20, Censored), (3, 6, Default)]);
        let t = DefaultsTable::from_panel(&p).unwrap();
        assert_eq!(t.cohorts.len(), 1);
        assert_eq!(t.cohorts[0].initial, 3);
        assert_eq!(t.cohorts[0].defaults.len(), 20);
        assert_eq!(t.cohorts[0].defaults[1], 1);
        assert_eq!(t.cohorts[0].defaults[3], 1);
        assert_eq!(t.cohorts[0].defaults.iter().sum::<u64>(), 2);
    }

    #[test]
    fn default_rate_matches_diagnostics_leg() {
        let p = panel_of(&[(0, 10, Default), (0, 30, Censored), (0, 18, Default)]);
        let a = portfolio_default_rate(&p).unwrap();
        let b = crate::diagnostics::default_rate_series(&p, &vec![0.0; p.len()]).unwrap();
        assert_eq!(a.values().copied().collect::<Vec<_>>(), b.empirical);
        let none = panel_of(&[(0, 20, Censored), (0, 25, Settled)]);
        assert!(portfolio_default_rate(&none).unwrap().values().all(|&d| d == 0.0));
    }

    #[test]
    fn macro_regression_tracks_the_macro_driver() {
        let (p, _) = crate::sim::simulate(&crate::sim::SimConfig::demo(4000, 21)).unwrap();
        let vars = vec!["unemployment".to_string()];
        for link in [Link::Identity, Link::Logit] {
            let m = fit_macro_model(&p, &vars, link).unwrap();
            assert!(m.coefficients[1] > 0.0, "{link:?}: {:?}", m.coefficients);
            assert_eq!(m.anchor, *m.fitted.values().last().unwrap());
            let z = [0.5];
            let (shifted, _) = proportional_shift(0.01, m.predict(&z), m.anchor).unwrap();
            assert!(shifted > 0.0);
        }
        assert!(matches!(
            fit_macro_model(&p, &["nope".to_string()], Link::Identity),
            Err(BaselineError::UnknownCovariate(_))
        ));
    }

    #[test]
    fn everyone_defaults_within_a_year() {
        // loans default at ages 2..=13: the panel spans exactly 13 months
        let spells: Vec<_> = (2..=13).map(|t| (0, t, Default)).collect();
        let d = portfolio_default_rate(&panel_of(&spells)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[&"2020-01".parse().unwrap()], 1.0);
    }
}
