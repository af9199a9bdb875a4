//! Discrete-time life tables and the Kaplan–Meier term-structure.
//!
//! Ages are months spent in a spell. Competing resolutions (settlement,
//! write-off) count as right-censored at their stop age. Left-truncated
//! spells join the risk set only after their entry age, so a spell with
//! entry `e` and stop `s` is at risk for every age in `(e, s]`.

use crate::panel::SpellPanel;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;

/// At-risk share below which the default age cap is placed.
pub const DEFAULT_AT_RISK_FLOOR: f64 = 0.005;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LifeTableError {
    #[error("panel is empty")]
    EmptyPanel,
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// The survival-relevant view of one spell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpellSpan {
    pub entry: u32,
    pub stop: u32,
    pub failed: bool,
}

impl SpellSpan {
    pub fn from_panel(panel: &SpellPanel) -> Vec<SpellSpan> {
        panel
            .spells()
            .iter()
            .map(|s| SpellSpan {
                entry: s.entry,
                stop: s.stop,
                failed: s.failed(),
            })
            .collect()
    }
}

/// Per-age counts and the quantities chained from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifeTable {
    pub ages: Vec<u32>,
    pub at_risk: Vec<u64>,
    pub failures: Vec<u64>,
    pub censored: Vec<u64>,
    pub hazard: Vec<f64>,
    pub survival: Vec<f64>,
    pub density: Vec<f64>,
    /// Greenwood variance of `survival`; infinite once the risk set is exhausted by failures.
    pub variance: Vec<f64>,
}

pub fn build_life_table(panel: &SpellPanel, age_cap: u32) -> Result<LifeTable, LifeTableError> {
    if panel.spells().is_empty() {
        return Err(LifeTableError::EmptyPanel);
    }
    Ok(LifeTable::from_spans(&SpellSpan::from_panel(panel), age_cap))
}

impl LifeTable {
    pub fn from_spans(spans: &[SpellSpan], age_cap: u32) -> LifeTable {
        let mut entries: Vec<u32> = spans.iter().map(|s| s.entry).collect();
        let mut stops: Vec<u32> = spans.iter().map(|s| s.stop).collect();
        entries.sort_unstable();
        stops.sort_unstable();

        let mut ends: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        for s in spans.iter().filter(|s| s.stop <= age_cap) {
            let e = ends.entry(s.stop).or_default();
            if s.failed {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }

        let m = ends.len();
        let mut t = LifeTable {
            ages: Vec::with_capacity(m),
            at_risk: Vec::with_capacity(m),
            failures: Vec::with_capacity(m),
            censored: Vec::with_capacity(m),
            hazard: Vec::with_capacity(m),
            survival: Vec::with_capacity(m),
            density: Vec::with_capacity(m),
            variance: Vec::with_capacity(m),
        };
        let mut s_prev = 1.0;
        let mut greenwood_sum = 0.0;
        for (&age, &(f, c)) in &ends {
            // entry < age <= stop; every span with stop < age also has entry < age
            let entered = entries.partition_point(|&e| e < age) as u64;
            let left = stops.partition_point(|&s| s < age) as u64;
            let n = entered - left;
            let h = f as f64 / n as f64;
            let s = s_prev * (1.0 - h);
            if n > f {
                greenwood_sum += f as f64 / (n as f64 * (n - f) as f64);
            } else {
                greenwood_sum = f64::INFINITY;
            }
            let var = if greenwood_sum.is_infinite() {
                f64::INFINITY
            } else {
                s * s * greenwood_sum
            };
            t.ages.push(age);
            t.at_risk.push(n);
            t.failures.push(f);
            t.censored.push(c);
            t.hazard.push(h);
            t.survival.push(s);
            t.density.push(s_prev - s);
            t.variance.push(var);
            s_prev = s;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    /// Step-function survivor `S(age)`, 1 before the first tabulated age.
    pub fn survival_at(&self, age: u32) -> f64 {
        match self.ages.partition_point(|&a| a <= age) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Symmetric normal-approximation interval on the survivor, clipped to `[0, 1]`.
/// Ages with undefined (infinite) variance get `[0, 1]`.
pub fn greenwood_ci(table: &LifeTable, level: f64) -> Result<Vec<(f64, f64)>, LifeTableError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LifeTableError::InvalidLevel(level));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    Ok(table
        .survival
        .iter()
        .zip(&table.variance)
        .map(|(&s, &v)| {
            if v.is_finite() {
                let hw = z * v.sqrt();
                ((s - hw).max(0.0), (s + hw).min(1.0))
            } else {
                (0.0, 1.0)
            }
        })
        .collect())
}

/// Marginal default probabilities at the ages where defaults were observed.
pub fn empirical_term_structure(table: &LifeTable) -> BTreeMap<u32, f64> {
    table
        .ages
        .iter()
        .zip(&table.failures)
        .zip(&table.density)
        .filter(|((_, &f), _)| f > 0)
        .map(|((&a, _), &d)| (a, d))
        .collect()
}

/// First age at which fewer than 0.5% of all spells remain at risk; the oldest
/// observed age when that never happens.
pub fn default_age_cap(panel: &SpellPanel) -> u32 {
    let spans = SpellSpan::from_panel(panel);
    let max_age = spans.iter().map(|s| s.stop).max().unwrap_or(1);
    let table = LifeTable::from_spans(&spans, max_age);
    let total = spans.len() as f64;
    table
        .ages
        .iter()
        .zip(&table.at_risk)
        .find(|(_, &n)| (n as f64) / total < DEFAULT_AT_RISK_FLOOR)
        .map(|(&a, _)| a)
        .unwrap_or(max_age)
}

/// Survivor estimate that ignores censoring: spells still running after `age`
/// divided by the spells observed at `age`.
pub fn crude_survival(spans: &[SpellSpan], age: u32) -> f64 {
    let observed = spans.iter().filter(|s| s.entry < age).count();
    if observed == 0 {
        return 1.0;
    }
    let surviving = spans.iter().filter(|s| s.entry < age && s.stop > age).count();
    surviving as f64 / observed as f64
}
