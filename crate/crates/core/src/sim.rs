//! Synthetic loan portfolios with known default hazards.
//!
//! Every month an open performing spell first draws default with probability
//! `h*(t|x) = logistic(alpha(t) + beta'x)`, then settlement, then write-off,
//! then a non-informative drop-out; whichever fires first resolves the spell.
//! Spells still open at the end of the horizon are censored. A defaulted loan
//! cures with `cure_probability` after a geometric stay in default and opens
//! its next spell with the spell clock reset.
//!
//! Covariates:
//! * `ltv`: standard normal, fixed per loan;
//! * `delinquent`: 0/1 lagged delinquency flag following a two-state Markov chain;
//! * `region`: categorical, uniform over the configured levels;
//! * one column per macro series, a shared AR(1) path joined on calendar month.
//!
//! Each loan draws from its own ChaCha stream keyed by `(seed, loan_id)`, so the
//! output does not depend on thread count or scheduling.

use crate::month::YearMonth;
use crate::panel::{CategoricalBuilder, Column, CovariateSpec, PanelError, PanelRow, ResolutionType, SpellPanel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const LTV: &str = "ltv";
pub const DELINQUENT: &str = "delinquent";
pub const REGION: &str = "region";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("simulated panel failed validation: {0}")]
    Panel(#[from] PanelError),
}

/// Baseline hazard over spell ages `(previous upper, upper]`; `None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardBin {
    pub upper: Option<u32>,
    pub hazard: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetingRisks {
    pub settlement: f64,
    pub write_off: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSeriesSpec {
    pub name: String,
    pub mean: f64,
    pub persistence: f64,
    pub volatility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelinquencyKernel {
    /// P(0 -> 1) per month.
    pub onset: f64,
    /// P(1 -> 0) per month.
    pub recovery: f64,
}

impl Default for DelinquencyKernel {
    fn default() -> Self {
        Self {
            onset: 0.05,
            recovery: 0.3,
        }
    }
}

fn default_start() -> YearMonth {
    YearMonth::new(2007, 1).expect("valid month")
}
fn default_cure_delay() -> f64 {
    3.0
}
fn default_true() -> bool {
    true
}
fn default_max_seasoning() -> u32 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_loans: usize,
    /// Number of calendar months observed.
    pub horizon: u32,
    #[serde(default = "default_start")]
    pub start_month: YearMonth,
    pub seed: u64,
    pub baseline_hazard: Vec<HazardBin>,
    /// Keys: `ltv`, `delinquent`, macro series names, `region=<level>`.
    #[serde(default)]
    pub true_coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub competing_risk_rates: CompetingRisks,
    /// Monthly probability of leaving observation without resolution.
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub cure_probability: f64,
    #[serde(default = "default_cure_delay")]
    pub mean_cure_delay: f64,
    #[serde(default)]
    pub macro_series: Vec<MacroSeriesSpec>,
    /// Emit the `ltv`, `delinquent` (and `region`) columns.
    #[serde(default = "default_true")]
    pub account_covariates: bool,
    #[serde(default)]
    pub delinquency: DelinquencyKernel,
    #[serde(default)]
    pub regions: Vec<String>,
    /// Loans originate uniformly over the first `origination_spread` months
    /// (defaults to the whole horizon).
    #[serde(default)]
    pub origination_spread: Option<u32>,
    /// Share of loans already seasoned when observation starts (left-truncated).
    #[serde(default)]
    pub seasoned_share: f64,
    #[serde(default = "default_max_seasoning")]
    pub max_seasoning: u32,
}

impl SimConfig {
    /// Minimal config: constant baseline hazard, no covariates, no competing risks.
    pub fn constant_hazard(n_loans: usize, horizon: u32, hazard: f64, seed: u64) -> Self {
        Self {
            n_loans,
            horizon,
            start_month: default_start(),
            seed,
            baseline_hazard: vec![HazardBin { upper: None, hazard }],
            true_coefficients: BTreeMap::new(),
            competing_risk_rates: CompetingRisks::default(),
            dropout_rate: 0.0,
            cure_probability: 0.0,
            mean_cure_delay: default_cure_delay(),
            macro_series: Vec::new(),
            account_covariates: false,
            delinquency: DelinquencyKernel::default(),
            regions: Vec::new(),
            origination_spread: None,
            seasoned_share: 0.0,
            max_seasoning: default_max_seasoning(),
        }
    }

    /// A mortgage-flavoured portfolio with every covariate type switched on.
    pub fn demo(n_loans: usize, seed: u64) -> Self {
        let baseline = [
            (Some(3), 0.004),
            (Some(6), 0.006),
            (Some(12), 0.008),
            (Some(24), 0.007),
            (Some(36), 0.005),
            (None, 0.004),
        ]
        .into_iter()
        .map(|(upper, hazard)| HazardBin { upper, hazard })
        .collect();
        Self {
            n_loans,
            horizon: 96,
            start_month: default_start(),
            seed,
            baseline_hazard: baseline,
            true_coefficients: BTreeMap::from([
                (LTV.to_string(), 0.5),
                (DELINQUENT.to_string(), 2.0),
                ("unemployment".to_string(), 0.6),
                ("region=B".to_string(), 0.4),
                ("region=C".to_string(), -0.3),
            ]),
            competing_risk_rates: CompetingRisks {
                settlement: 0.012,
                write_off: 0.001,
            },
            dropout_rate: 0.0,
            cure_probability: 0.5,
            mean_cure_delay: 4.0,
            macro_series: vec![MacroSeriesSpec {
                name: "unemployment".to_string(),
                mean: 0.0,
                persistence: 0.95,
                volatility: 0.3,
            }],
            account_covariates: true,
            delinquency: DelinquencyKernel::default(),
            regions: vec!["A".into(), "B".into(), "C".into()],
            origination_spread: None,
            seasoned_share: 0.3,
            max_seasoning: 60,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_loans == 0 {
            return bad("n_loans must be positive".into());
        }
        if self.horizon < 24 {
            return bad(format!("horizon must be at least 24 months, got {}", self.horizon));
        }
        if self.baseline_hazard.is_empty() {
            return bad("baseline_hazard is empty".into());
        }
        let mut prev = 0;
        for (k, bin) in self.baseline_hazard.iter().enumerate() {
            if !(bin.hazard > 0.0 && bin.hazard < 1.0) {
                return bad(format!("baseline hazard {} not in (0, 1)", bin.hazard));
            }
            let last = k + 1 == self.baseline_hazard.len();
            match bin.upper {
                Some(u) if !last && u > prev => prev = u,
                None if last => {}
                _ => return bad("baseline bins must have increasing upper bounds and end open-ended".into()),
            }
        }
        let unit = |name: &str, p: f64| -> Result<(), SimError> {
            if (0.0..1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} = {p} not in [0, 1)")))
            }
        };
        unit("settlement", self.competing_risk_rates.settlement)?;
        unit("write_off", self.competing_risk_rates.write_off)?;
        unit("dropout_rate", self.dropout_rate)?;
        unit("cure_probability", self.cure_probability)?;
        unit("seasoned_share", self.seasoned_share)?;
        for (name, p) in [
            ("delinquency.onset", self.delinquency.onset),
            ("delinquency.recovery", self.delinquency.recovery),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} = {p} not in (0, 1)"));
            }
        }
        if self.mean_cure_delay.is_nan() || self.mean_cure_delay < 1.0 {
            return bad("mean_cure_delay must be at least 1".into());
        }
        if self.seasoned_share > 0.0 && self.max_seasoning == 0 {
            return bad("max_seasoning must be positive".into());
        }
        if self.origination_spread == Some(0) {
            return bad("origination_spread must be positive".into());
        }
        for m in &self.macro_series {
            if !(m.persistence > -1.0 && m.persistence < 1.0) {
                return bad(format!("persistence of `{}` not in (-1, 1)", m.name));
            }
            if m.volatility.is_nan() || m.volatility < 0.0 || !m.mean.is_finite() {
                return bad(format!("invalid volatility or mean for `{}`", m.name));
            }
        }
        let known = self.covariate_names();
        for (key, beta) in &self.true_coefficients {
            if !beta.is_finite() {
                return bad(format!("coefficient `{key}` is not finite"));
            }
            let ok = match key.split_once('=') {
                Some((REGION, level)) => self.account_covariates && self.regions.iter().any(|r| r == level),
                Some(_) => false,
                None => known.iter().any(|k| k == key && k != REGION),
            };
            if !ok {
                return bad(format!("coefficient `{key}` does not name a simulated covariate"));
            }
        }
        Ok(())
    }

    fn covariate_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.account_covariates {
            names.push(LTV.to_string());
            names.push(DELINQUENT.to_string());
            if !self.regions.is_empty() {
                names.push(REGION.to_string());
            }
        }
        names.extend(self.macro_series.iter().map(|m| m.name.clone()));
        names
    }

    /// Baseline hazard at spell age `age`.
    pub fn baseline_at(&self, age: u32) -> f64 {
        self.baseline_hazard
            .iter()
            .find(|b| b.upper.is_none_or(|u| age <= u))
            .map(|b| b.hazard)
            .expect("open-ended last bin")
    }

    fn coefficient(&self, key: &str) -> f64 {
        self.true_coefficients.get(key).copied().unwrap_or(0.0)
    }
}

/// The generating hazards, aligned with the panel's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub hazards: Vec<f64>,
    pub coefficients: BTreeMap<String, f64>,
    pub baseline_hazard: Vec<HazardBin>,
    /// Shared macro paths by calendar month offset.
    pub macro_paths: BTreeMap<String, Vec<f64>>,
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct LoanOutput {
    rows: Vec<PanelRow>,
    hazards: Vec<f64>,
    ltv: f64,
    delinquent: Vec<f64>,
    region: usize,
}

pub fn simulate(config: &SimConfig) -> Result<(SpellPanel, GroundTruth), SimError> {
    config.validate()?;
    let horizon = config.horizon as usize;
    let mut macro_rng = ChaCha8Rng::seed_from_u64(config.seed);
    macro_rng.set_stream(0);
    let macro_paths: Vec<Vec<f64>> = config
        .macro_series
        .iter()
        .map(|spec| ar1_path(spec, horizon, &mut macro_rng))
        .collect();

    let loans: Vec<LoanOutput> = (1..=config.n_loans as u64)
        .into_par_iter()
        .map(|id| simulate_loan(config, id, &macro_paths))
        .collect();

    let n_rows: usize = loans.iter().map(|l| l.rows.len()).sum();
    let mut rows = Vec::with_capacity(n_rows);
    let mut hazards = Vec::with_capacity(n_rows);
    let mut ltv = Vec::new();
    let mut delinquent = Vec::new();
    let mut region = CategoricalBuilder::default();
    for loan in &loans {
        rows.extend_from_slice(&loan.rows);
        hazards.extend_from_slice(&loan.hazards);
        if config.account_covariates {
            ltv.extend(std::iter::repeat_n(loan.ltv, loan.rows.len()));
            delinquent.extend_from_slice(&loan.delinquent);
            if !config.regions.is_empty() {
                for _ in 0..loan.rows.len() {
                    region.push(&config.regions[loan.region]);
                }
            }
        }
    }

    let mut schema = Vec::new();
    let mut columns = Vec::new();
    if config.account_covariates {
        schema.push(CovariateSpec::numeric(LTV));
        columns.push(Column::Numeric(ltv));
        schema.push(CovariateSpec::numeric(DELINQUENT));
        columns.push(Column::Numeric(delinquent));
        if !config.regions.is_empty() {
            schema.push(CovariateSpec::categorical(REGION));
            columns.push(region.finish());
        }
    }
    for (spec, path) in config.macro_series.iter().zip(&macro_paths) {
        schema.push(CovariateSpec::numeric(&spec.name));
        columns.push(Column::Numeric(
            rows.iter()
                .map(|r| path[r.date.months_since(config.start_month) as usize])
                .collect(),
        ));
    }

    let panel = SpellPanel::new(rows, schema, columns)?;
    let truth = GroundTruth {
        hazards,
        coefficients: config.true_coefficients.clone(),
        baseline_hazard: config.baseline_hazard.clone(),
        macro_paths: config
            .macro_series
            .iter()
            .map(|s| s.name.clone())
            .zip(macro_paths)
            .collect(),
    };
    Ok((panel, truth))
}

fn ar1_path(spec: &MacroSeriesSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let stationary_sd = spec.volatility / (1.0 - spec.persistence * spec.persistence).sqrt();
    let mut x = spec.mean + stationary_sd * rng.sample::<f64, _>(StandardNormal);
    let mut path = Vec::with_capacity(len);
    for _ in 0..len {
        path.push(x);
        let eps: f64 = rng.sample(StandardNormal);
        x = spec.mean + spec.persistence * (x - spec.mean) + spec.volatility * eps;
    }
    path
}

fn simulate_loan(config: &SimConfig, loan_id: u64, macro_paths: &[Vec<f64>]) -> LoanOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(loan_id);
    let horizon = config.horizon as i64;
    let spread = config.origination_spread.unwrap_or(config.horizon).min(config.horizon) as i64;

    let seasoned = config.seasoned_share > 0.0 && rng.gen::<f64>() < config.seasoned_share;
    let (mut month, initial_age) = if seasoned {
        (0i64, rng.gen_range(1..=config.max_seasoning))
    } else {
        (rng.gen_range(0..spread), 0)
    };
    let origination = month - initial_age as i64;
    let ltv: f64 = rng.sample(StandardNormal);
    let region = if config.regions.is_empty() {
        0
    } else {
        rng.gen_range(0..config.regions.len())
    };
    let kernel = config.delinquency;
    let mut delinquent = seasoned && rng.gen::<f64>() < kernel.onset / (kernel.onset + kernel.recovery);

    let beta_ltv = config.coefficient(LTV);
    let beta_delinquent = config.coefficient(DELINQUENT);
    let beta_region = if config.regions.is_empty() {
        0.0
    } else {
        config.coefficient(&format!("{REGION}={}", config.regions[region]))
    };
    let beta_macro: Vec<f64> = config
        .macro_series
        .iter()
        .map(|m| config.coefficient(&m.name))
        .collect();

    let mut out = LoanOutput {
        rows: Vec::new(),
        hazards: Vec::new(),
        ltv,
        delinquent: Vec::new(),
        region,
    };
    let mut spell_num = 1u32;
    let mut entry = initial_age;
    let mut age = initial_age;
    let mut spell_start = 0usize;
    while month < horizon {
        age += 1;
        let mut eta = logit(config.baseline_at(age)) + beta_region;
        if config.account_covariates {
            eta += beta_ltv * ltv + beta_delinquent * f64::from(u8::from(delinquent));
        }
        for (beta, path) in beta_macro.iter().zip(macro_paths) {
            eta += beta * path[month as usize];
        }
        let h = logistic(eta);
        out.rows.push(PanelRow {
            loan_id,
            loan_period: (month - origination + 1) as u32,
            spell_num,
            spell_period: age,
            entry_time: entry,
            stop_time: 0,
            resolution: ResolutionType::Censored,
            spell_age: 0,
            event: false,
            date: config.start_month.add_months(month as i32),
        });
        out.hazards.push(h);
        out.delinquent.push(f64::from(u8::from(delinquent)));

        let resolution = if rng.gen::<f64>() < h {
            Some(ResolutionType::Default)
        } else if rng.gen::<f64>() < config.competing_risk_rates.settlement {
            Some(ResolutionType::Settled)
        } else if rng.gen::<f64>() < config.competing_risk_rates.write_off {
            Some(ResolutionType::WriteOffOther)
        } else if rng.gen::<f64>() < config.dropout_rate || month + 1 == horizon {
            Some(ResolutionType::Censored)
        } else {
            None
        };
        delinquent = if delinquent {
            rng.gen::<f64>() >= kernel.recovery
        } else {
            rng.gen::<f64>() < kernel.onset
        };
        month += 1;

        let Some(resolution) = resolution else { continue };
        for row in &mut out.rows[spell_start..] {
            row.stop_time = age;
            row.spell_age = age - entry;
            row.resolution = resolution;
        }
        if resolution == ResolutionType::Default {
            out.rows.last_mut().expect("row just pushed").event = true;
        }
        if resolution != ResolutionType::Default
            || config.cure_probability == 0.0
            || rng.gen::<f64>() >= config.cure_probability
        {
            break;
        }
        // geometric stay in default, support {1, 2, ...}
        let p = 1.0 / config.mean_cure_delay;
        let stay = if p >= 1.0 {
            1
        } else {
            1 + (rng.gen::<f64>().ln() / (1.0 - p).ln()).floor() as i64
        };
        month += stay;
        spell_num += 1;
        entry = 0;
        age = 0;
        delinquent = false;
        spell_start = out.rows.len();
    }
    out
}
