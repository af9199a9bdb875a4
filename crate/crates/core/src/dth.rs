//! Discrete-time hazard model: a weighted logistic regression on the
//! person-period panel with no intercept, one indicator per time-bin (or
//! time-bin × spell-bin stratum) and linear covariate effects.
//!
//! Fitting maximises `sum w [e log h + (1 - e) log(1 - h)]` by Newton–Raphson
//! (IRLS). Sums over rows are accumulated over fixed-size chunks and reduced in
//! chunk order, so results do not depend on the rayon pool size.

use crate::panel::{Column, CovariateKind, CovariateValue, SpellPanel};
use crate::sim::logistic;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

const CHUNK: usize = 4096;
const NONE: u32 = u32::MAX;
pub const RIDGE: f64 = 1e-6;
pub const MAX_HALVINGS: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum DthError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("covariate `{0}` is not in the panel")]
    UnknownCovariate(String),
    #[error("covariate `{covariate}` has kind {found:?}, spec expects {expected:?}")]
    CovariateKind {
        covariate: String,
        expected: CovariateKind,
        found: CovariateKind,
    },
    #[error("reference level `{level}` of `{covariate}` does not occur in the data")]
    UnknownReference { covariate: String, level: String },
    #[error("`{covariate}` level `{level}` was not seen in training")]
    UnknownLevel { covariate: String, level: String },
    #[error("design has no rows")]
    EmptyDesign,
    #[error("response needs at least one event and one non-event")]
    DegenerateResponse,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("not converged after {} iterations", .best.iterations)]
    NotConverged { best: Box<FittedDthModel> },
    #[error("spell ({loan_id}, {spell_num}) has non-consecutive ages")]
    GapInSpell { loan_id: u64, spell_num: u32 },
}

/// Ages `(previous upper, upper]`; the last bin is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bin {
    pub label: String,
    pub upper: Option<u32>,
}

impl Bin {
    pub fn new(label: impl Into<String>, upper: Option<u32>) -> Self {
        Self {
            label: label.into(),
            upper,
        }
    }
}

/// The 19 spell-age bins used for mortgage books.
pub fn standard_time_bins() -> Vec<Bin> {
    let uppers = [3, 6, 9, 12, 18, 24, 30, 36, 48, 60, 72, 84, 96, 108, 120, 144, 168, 192];
    let mut bins = Vec::with_capacity(19);
    let mut lower = 0;
    for (k, &u) in uppers.iter().enumerate() {
        let label = if k == 0 {
            format!("{:02}.[1,{u}]", k + 1)
        } else {
            format!("{:02}.({lower},{u}]", k + 1)
        };
        bins.push(Bin::new(label, Some(u)));
        lower = u;
    }
    bins.push(Bin::new("19.193+", None));
    bins
}

/// One bin per age up to `last`, then an open bin.
pub fn singleton_time_bins(last: u32) -> Vec<Bin> {
    let mut bins: Vec<Bin> = (1..=last).map(|t| Bin::new(format!("t{t:03}"), Some(t))).collect();
    bins.push(Bin::new(format!("t{:03}+", last + 1), None));
    bins
}

/// Spell-number bins "1", "2", "3", "4+".
pub fn standard_spell_bins() -> Vec<Bin> {
    vec![
        Bin::new("1", Some(1)),
        Bin::new("2", Some(2)),
        Bin::new("3", Some(3)),
        Bin::new("4+", None),
    ]
}

fn bin_index(bins: &[Bin], x: u32) -> usize {
    bins.iter()
        .position(|b| b.upper.is_none_or(|u| x <= u))
        .expect("last bin is open-ended")
}

fn validate_bins(bins: &[Bin], what: &str) -> Result<(), DthError> {
    if bins.is_empty() {
        return Err(DthError::InvalidSpec(format!("{what} bins are empty")));
    }
    let mut prev = 0;
    for (k, b) in bins.iter().enumerate() {
        match (b.upper, k + 1 == bins.len()) {
            (None, true) => {}
            (Some(u), false) if u > prev => prev = u,
            _ => {
                return Err(DthError::InvalidSpec(format!(
                    "{what} bins must have increasing upper bounds and end open-ended"
                )))
            }
        }
    }
    let labels: BTreeSet<&str> = bins.iter().map(|b| b.label.as_str()).collect();
    if labels.len() != bins.len() {
        return Err(DthError::InvalidSpec(format!("duplicate {what} bin label")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateTerm {
    Numeric {
        name: String,
    },
    /// Treatment coding against `reference` (first sorted level when absent).
    Dummy {
        name: String,
        reference: Option<String>,
    },
}

impl CovariateTerm {
    pub fn name(&self) -> &str {
        match self {
            CovariateTerm::Numeric { name } | CovariateTerm::Dummy { name, .. } => name,
        }
    }
}

fn default_weight() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "standard_time_bins")]
    pub time_bins: Vec<Bin>,
    #[serde(default = "standard_spell_bins")]
    pub spell_bins: Vec<Bin>,
    #[serde(default = "default_true")]
    pub interaction: bool,
    #[serde(default)]
    pub covariates: Vec<CovariateTerm>,
    #[serde(default = "default_weight")]
    pub event_weight: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            time_bins: standard_time_bins(),
            spell_bins: standard_spell_bins(),
            interaction: true,
            covariates: Vec::new(),
            event_weight: default_weight(),
        }
    }
}

impl ModelSpec {
    /// Time bins only: no spell strata, no covariates, unit weights.
    pub fn baseline_only(time_bins: Vec<Bin>) -> Self {
        Self {
            time_bins,
            spell_bins: vec![Bin::new("all", None)],
            interaction: false,
            covariates: Vec::new(),
            event_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DthError> {
        validate_bins(&self.time_bins, "time")?;
        validate_bins(&self.spell_bins, "spell")?;
        if !(self.event_weight > 0.0 && self.event_weight.is_finite()) {
            return Err(DthError::InvalidSpec(format!(
                "event weight must be positive, got {}",
                self.event_weight
            )));
        }
        let names: BTreeSet<&str> = self.covariates.iter().map(|c| c.name()).collect();
        if names.len() != self.covariates.len() {
            return Err(DthError::InvalidSpec("duplicate covariate".into()));
        }
        Ok(())
    }
}

/// Column meaning of a design, fixed at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub spec: ModelSpec,
    /// Observed strata as (time bin, spell bin). Without interaction the spell
    /// bin is `None` for time-bin columns and the time bin is `None` for the
    /// non-reference spell-bin columns.
    pub strata: Vec<(Option<usize>, Option<usize>)>,
    /// Spell bin absorbed into the time-bin columns when there is no interaction.
    pub reference_spell_bin: Option<usize>,
    /// Training levels of each dummy covariate (reference first).
    pub levels: BTreeMap<String, Vec<String>>,
    pub column_names: Vec<String>,
    /// Strata allowed by the spec but absent from the training rows.
    pub dropped_strata: Vec<String>,
}

impl DesignLayout {
    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.strata.len()
    }
}

/// Rows of the person-period design in compact form: at most two active
/// indicator columns plus a dense covariate block.
#[derive(Debug, Clone)]
pub struct Design {
    pub layout: DesignLayout,
    indicators: Vec<[u32; 2]>,
    covariates: Vec<f64>,
    events: Vec<bool>,
    weights: Vec<f64>,
}

/// A single row, expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub event: bool,
    pub weight: f64,
    pub features: Vec<f64>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn p(&self) -> usize {
        self.width() - self.layout.n_indicators()
    }

    pub fn row(&self, i: usize) -> DesignRow {
        let mut features = vec![0.0; self.width()];
        for &c in &self.indicators[i] {
            if c != NONE {
                features[c as usize] = 1.0;
            }
        }
        let k = self.layout.n_indicators();
        let p = self.p();
        features[k..].copy_from_slice(&self.covariates[i * p..(i + 1) * p]);
        DesignRow {
            event: self.events[i],
            weight: self.weights[i],
            features,
        }
    }

    /// Active `(column, value)` pairs of row `i`.
    fn active(&self, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        for &c in &self.indicators[i] {
            if c != NONE {
                out.push((c as usize, 1.0));
            }
        }
        let k = self.layout.n_indicators();
        let p = self.p();
        for (j, &x) in self.covariates[i * p..(i + 1) * p].iter().enumerate() {
            if x != 0.0 {
                out.push((k + j, x));
            }
        }
    }

    pub fn linear_predictor(&self, i: usize, coef: &[f64]) -> f64 {
        let mut eta = 0.0;
        for &c in &self.indicators[i] {
            if c != NONE {
                eta += coef[c as usize];
            }
        }
        let k = self.layout.n_indicators();
        let p = self.p();
        for (j, &x) in self.covariates[i * p..(i + 1) * p].iter().enumerate() {
            eta += coef[k + j] * x;
        }
        eta
    }
}

fn resolve_columns<'a>(panel: &'a SpellPanel, spec: &ModelSpec) -> Result<Vec<&'a Column>, DthError> {
    spec.covariates
        .iter()
        .map(|term| {
            let col = panel
                .column(term.name())
                .ok_or_else(|| DthError::UnknownCovariate(term.name().to_string()))?;
            let expected = match term {
                CovariateTerm::Numeric { .. } => CovariateKind::Numeric,
                CovariateTerm::Dummy { .. } => CovariateKind::Categorical,
            };
            if col.kind() != expected {
                return Err(DthError::CovariateKind {
                    covariate: term.name().to_string(),
                    expected,
                    found: col.kind(),
                });
            }
            Ok(col)
        })
        .collect()
}

/// Builds the training design, fixing which strata and levels get columns.
pub fn build_design(panel: &SpellPanel, spec: &ModelSpec) -> Result<Design, DthError> {
    spec.validate()?;
    let columns = resolve_columns(panel, spec)?;
    let rows = panel.rows();
    let mut observed = BTreeSet::new();
    let mut time_seen = BTreeSet::new();
    let mut spell_seen = BTreeSet::new();
    for r in rows {
        let tb = bin_index(&spec.time_bins, r.spell_period);
        let sb = bin_index(&spec.spell_bins, r.spell_num);
        observed.insert((tb, sb));
        time_seen.insert(tb);
        spell_seen.insert(sb);
    }

    let mut strata = Vec::new();
    let mut names = Vec::new();
    let mut dropped = Vec::new();
    if spec.interaction {
        for (ti, tb) in spec.time_bins.iter().enumerate() {
            for (si, sb) in spec.spell_bins.iter().enumerate() {
                let name = format!("{}:{}", tb.label, sb.label);
                if observed.contains(&(ti, si)) {
                    strata.push((Some(ti), Some(si)));
                    names.push(name);
                } else {
                    dropped.push(name);
                }
            }
        }
    } else {
        for (ti, tb) in spec.time_bins.iter().enumerate() {
            if time_seen.contains(&ti) {
                strata.push((Some(ti), None));
                names.push(tb.label.clone());
            } else {
                dropped.push(tb.label.clone());
            }
        }
        // the first observed spell bin is the reference
        for (si, sb) in spec.spell_bins.iter().enumerate() {
            if !spell_seen.contains(&si) {
                dropped.push(format!("spell {}", sb.label));
            } else if spell_seen.first() != Some(&si) {
                strata.push((None, Some(si)));
                names.push(format!("spell {}", sb.label));
            }
        }
    }

    let mut levels = BTreeMap::new();
    for (term, col) in spec.covariates.iter().zip(&columns) {
        match term {
            CovariateTerm::Numeric { name } => names.push(name.clone()),
            CovariateTerm::Dummy { name, reference } => {
                let Column::Categorical { levels: all, codes } = col else {
                    unreachable!("kind checked")
                };
                let used: BTreeSet<u32> = codes.iter().copied().collect();
                let mut present: Vec<String> = used.iter().map(|&c| all[c as usize].clone()).collect();
                present.sort();
                if let Some(r) = reference {
                    let pos = present
                        .iter()
                        .position(|l| l == r)
                        .ok_or_else(|| DthError::UnknownReference {
                            covariate: name.clone(),
                            level: r.clone(),
                        })?;
                    let r = present.remove(pos);
                    present.insert(0, r);
                }
                for l in present.iter().skip(1) {
                    names.push(format!("{name}={l}"));
                }
                levels.insert(name.clone(), present);
            }
        }
    }

    let layout = DesignLayout {
        spec: spec.clone(),
        strata,
        reference_spell_bin: if spec.interaction {
            None
        } else {
            spell_seen.first().copied()
        },
        levels,
        column_names: names,
        dropped_strata: dropped,
    };
    Design::with_layout(panel, &layout)
}

impl Design {
    /// Encodes `panel` with a fixed layout; unseen strata or levels are errors.
    pub fn with_layout(panel: &SpellPanel, layout: &DesignLayout) -> Result<Design, DthError> {
        let spec = &layout.spec;
        let columns = resolve_columns(panel, spec)?;
        let rows = panel.rows();
        let n = rows.len();

        let stratum_of: BTreeMap<(Option<usize>, Option<usize>), u32> =
            layout.strata.iter().enumerate().map(|(c, &k)| (k, c as u32)).collect();
        let mut indicators = Vec::with_capacity(n);
        for r in rows {
            let tb = bin_index(&spec.time_bins, r.spell_period);
            let sb = bin_index(&spec.spell_bins, r.spell_num);
            let unknown = |what: &str, label: &str| DthError::UnknownLevel {
                covariate: what.to_string(),
                level: label.to_string(),
            };
            let ind = if spec.interaction {
                let c = stratum_of.get(&(Some(tb), Some(sb))).ok_or_else(|| {
                    unknown(
                        "stratum",
                        &format!("{}:{}", spec.time_bins[tb].label, spec.spell_bins[sb].label),
                    )
                })?;
                [*c, NONE]
            } else {
                let t = stratum_of
                    .get(&(Some(tb), None))
                    .ok_or_else(|| unknown("time bin", &spec.time_bins[tb].label))?;
                let s = match stratum_of.get(&(None, Some(sb))) {
                    Some(&s) => s,
                    None if layout.reference_spell_bin == Some(sb) => NONE,
                    None => return Err(unknown("spell bin", &spec.spell_bins[sb].label)),
                };
                [*t, s]
            };
            indicators.push(ind);
        }

        let p = layout.width() - layout.n_indicators();
        let mut covariates = vec![0.0; n * p];
        let mut offset = 0;
        for (term, col) in spec.covariates.iter().zip(&columns) {
            match term {
                CovariateTerm::Numeric { .. } => {
                    for i in 0..n {
                        let CovariateValue::Numeric(x) = col.value(i) else {
                            unreachable!("kind checked")
                        };
                        covariates[i * p + offset] = x;
                    }
                    offset += 1;
                }
                CovariateTerm::Dummy { name, .. } => {
                    let trained = &layout.levels[name];
                    let Column::Categorical { levels, codes } = col else {
                        unreachable!("kind checked")
                    };
                    // map panel codes to layout positions
                    let map: Vec<Option<usize>> = levels.iter().map(|l| trained.iter().position(|t| t == l)).collect();
                    for (i, &c) in codes.iter().enumerate() {
                        match map[c as usize] {
                            Some(0) => {}
                            Some(k) => covariates[i * p + offset + k - 1] = 1.0,
                            None => {
                                return Err(DthError::UnknownLevel {
                                    covariate: name.clone(),
                                    level: levels[c as usize].clone(),
                                })
                            }
                        }
                    }
                    offset += trained.len().saturating_sub(1);
                }
            }
        }

        let w = spec.event_weight;
        Ok(Design {
            layout: layout.clone(),
            indicators,
            covariates,
            events: rows.iter().map(|r| r.event).collect(),
            weights: rows.iter().map(|r| if r.event { w } else { 1.0 }).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDthModel {
    pub layout: DesignLayout,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
    pub deviance: f64,
    /// Ridge penalty engaged after separation or a singular information matrix.
    pub ridge: bool,
    pub deviance_path: Vec<f64>,
}

impl FittedDthModel {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.layout.column_names.iter().position(|c| c == name)?;
        Some((self.coefficients[k], self.std_errors[k]))
    }
}

struct Accum {
    loglik: f64,
    grad: Vec<f64>,
    info: Vec<f64>,
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted Bernoulli log-likelihood of one row given its linear predictor.
fn row_loglik(eta: f64, event: bool) -> f64 {
    // log h = -log(1 + e^-eta); log(1 - h) = -log(1 + e^eta)
    if event {
        -log1pexp(-eta)
    } else {
        -log1pexp(eta)
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

fn accumulate(design: &Design, coef: &[f64], with_info: bool) -> Accum {
    let k = design.width();
    let parts: Vec<Accum> = chunk_ranges(design.len())
        .into_par_iter()
        .map(|range| {
            let mut acc = Accum {
                loglik: 0.0,
                grad: vec![0.0; k],
                info: if with_info { vec![0.0; k * k] } else { Vec::new() },
            };
            let mut active = Vec::with_capacity(k);
            for i in range {
                let eta = design.linear_predictor(i, coef);
                let y = design.events[i];
                let w = design.weights[i];
                acc.loglik += w * row_loglik(eta, y);
                let h = logistic(eta);
                let resid = w * (f64::from(u8::from(y)) - h);
                design.active(i, &mut active);
                for &(c, x) in &active {
                    acc.grad[c] += resid * x;
                }
                if with_info {
                    let v = w * h * (1.0 - h);
                    for (a, &(ca, xa)) in active.iter().enumerate() {
                        for &(cb, xb) in &active[a..] {
                            let (lo, hi) = if ca <= cb { (ca, cb) } else { (cb, ca) };
                            acc.info[lo * k + hi] += v * xa * xb;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum {
        loglik: 0.0,
        grad: vec![0.0; k],
        info: if with_info { vec![0.0; k * k] } else { Vec::new() },
    };
    for part in parts {
        total.loglik += part.loglik;
        for (t, g) in total.grad.iter_mut().zip(&part.grad) {
            *t += g;
        }
        for (t, g) in total.info.iter_mut().zip(&part.info) {
            *t += g;
        }
    }
    total
}

/// Weighted log-likelihood at `coef`.
pub fn log_likelihood(design: &Design, coef: &[f64]) -> f64 {
    accumulate(design, coef, false).loglik
}

/// Analytic gradient of [`log_likelihood`].
pub fn gradient(design: &Design, coef: &[f64]) -> Vec<f64> {
    accumulate(design, coef, false).grad
}

fn information_matrix(acc: &Accum, k: usize, ridge: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        acc.info[lo * k + hi] + if i == j { ridge } else { 0.0 }
    })
}

/// Indicator columns whose rows are all events or all non-events.
fn separated_columns(design: &Design) -> bool {
    let k = design.layout.n_indicators();
    let mut seen = vec![(false, false); k];
    for (ind, &y) in design.indicators.iter().zip(&design.events) {
        for &c in ind {
            if c != NONE {
                let s = &mut seen[c as usize];
                if y {
                    s.0 = true;
                } else {
                    s.1 = true;
                }
            }
        }
    }
    seen.iter().any(|&(e, ne)| !(e && ne))
}

pub fn fit(design: &Design, options: &FitOptions) -> Result<FittedDthModel, DthError> {
    if design.is_empty() {
        return Err(DthError::EmptyDesign);
    }
    let n_events = design.events.iter().filter(|&&e| e).count();
    if n_events == 0 || n_events == design.len() {
        return Err(DthError::DegenerateResponse);
    }
    let k = design.width();
    let mut ridge = if separated_columns(design) { RIDGE } else { 0.0 };
    let mut coef = vec![0.0; k];
    let penalised = |ll: f64, c: &[f64], ridge: f64| -2.0 * ll + ridge * c.iter().map(|b| b * b).sum::<f64>();

    let mut acc = accumulate(design, &coef, true);
    let mut objective = penalised(acc.loglik, &coef, ridge);
    let mut path = vec![-2.0 * acc.loglik];
    let mut converged = false;
    let mut iterations = 0;
    let mut flat_steps = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let grad = DVector::from_iterator(k, acc.grad.iter().zip(&coef).map(|(g, b)| g - ridge * b));
        let step = match information_matrix(&acc, k, ridge).cholesky() {
            Some(ch) => ch.solve(&grad),
            None if ridge == 0.0 => {
                ridge = RIDGE;
                objective = penalised(acc.loglik, &coef, ridge);
                iterations -= 1;
                continue;
            }
            None => return Err(DthError::SingularInformation),
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let ll = log_likelihood(design, &trial);
            let obj = penalised(ll, &trial, ridge);
            // rounding noise near the optimum must not block the final Newton step
            if obj.is_finite() && obj <= objective + 1e-13 * objective.abs() {
                accepted = Some((trial, obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, obj)) = accepted else {
            // no descent along the Newton direction: numerically at the optimum
            converged = step.amax() * scale < options.tol.sqrt();
            break;
        };
        let max_change = coef.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rel_change = (objective - obj).abs() / objective.abs().max(f64::MIN_POSITIVE);
        coef = trial;
        objective = obj;
        acc = accumulate(design, &coef, true);
        path.push(-2.0 * acc.loglik);
        // a flat deviance must persist for two steps: one more Newton step is cheap and exact
        flat_steps = if rel_change < options.tol * options.tol {
            flat_steps + 1
        } else {
            0
        };
        if max_change < options.tol || flat_steps >= 2 {
            converged = true;
            break;
        }
    }

    let std_errors = match information_matrix(&acc, k, ridge).cholesky() {
        Some(ch) => ch.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
        None => vec![f64::NAN; k],
    };
    let model = FittedDthModel {
        layout: design.layout.clone(),
        coefficients: coef,
        std_errors,
        converged,
        iterations,
        deviance: -2.0 * acc.loglik,
        ridge: ridge > 0.0,
        deviance_path: path,
    };
    if converged {
        Ok(model)
    } else {
        Err(DthError::NotConverged { best: Box::new(model) })
    }
}

/// Fitted hazard for every panel row.
pub fn predict_hazard(model: &FittedDthModel, panel: &SpellPanel) -> Result<Vec<f64>, DthError> {
    let design = Design::with_layout(panel, &model.layout)?;
    Ok((0..design.len())
        .into_par_iter()
        .map(|i| logistic(design.linear_predictor(i, &model.coefficients)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpellTermStructure {
    pub loan_id: u64,
    pub spell_num: u32,
    /// Observed ages `entry + 1 ..= stop`; survival is conditional on reaching `entry`.
    pub ages: Vec<u32>,
    pub hazard: Vec<f64>,
    pub survival: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioTermStructure {
    pub ages: Vec<u32>,
    /// Mean fitted hazard over spells at risk at each age.
    pub hazard: Vec<f64>,
    pub survival: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermStructure {
    pub spells: Vec<SpellTermStructure>,
    pub portfolio: PortfolioTermStructure,
}

/// Chains hazards into survival and marginal default probabilities.
pub fn chain(hazards: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut s = 1.0;
    let mut survival = Vec::with_capacity(hazards.len());
    let mut density = Vec::with_capacity(hazards.len());
    for &h in hazards {
        density.push(s * h);
        s *= 1.0 - h;
        survival.push(s);
    }
    (survival, density)
}

/// Term structures from per-row hazards aligned with `panel`.
pub fn term_structure_from_hazards(
    panel: &SpellPanel,
    hazards: &[f64],
    age_cap: u32,
) -> Result<TermStructure, DthError> {
    let rows = panel.rows();
    let mut spells = Vec::with_capacity(panel.spells().len());
    let mut sums: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
    for s in panel.spells() {
        let range = s.rows.clone();
        let ages: Vec<u32> = rows[range.clone()].iter().map(|r| r.spell_period).collect();
        if ages.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(DthError::GapInSpell {
                loan_id: s.loan_id,
                spell_num: s.spell_num,
            });
        }
        let h = hazards[range].to_vec();
        for (&a, &x) in ages.iter().zip(&h) {
            if a <= age_cap {
                let e = sums.entry(a).or_default();
                e.0 += x;
                e.1 += 1;
            }
        }
        let (survival, density) = chain(&h);
        spells.push(SpellTermStructure {
            loan_id: s.loan_id,
            spell_num: s.spell_num,
            ages,
            hazard: h,
            survival,
            density,
        });
    }
    let ages: Vec<u32> = sums.keys().copied().collect();
    let hazard: Vec<f64> = sums.values().map(|&(s, n)| s / n as f64).collect();
    let (survival, density) = chain(&hazard);
    Ok(TermStructure {
        spells,
        portfolio: PortfolioTermStructure {
            ages,
            hazard,
            survival,
            density,
        },
    })
}

pub fn predict_term_structure(
    model: &FittedDthModel,
    panel: &SpellPanel,
    age_cap: u32,
) -> Result<TermStructure, DthError> {
    let hazards = predict_hazard(model, panel)?;
    term_structure_from_hazards(panel, &hazards, age_cap)
}
