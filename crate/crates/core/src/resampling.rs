//! Clustered train/validation splits and resolution-rate representativeness.

use crate::month::YearMonth;
use crate::panel::{ResolutionType, SpellPanel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ResamplingError {
    #[error("sampling fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("{loans} loans cannot be split at fraction {fraction} into two non-empty parts")]
    TooFewClusters { loans: usize, fraction: f64 },
    #[error("panel is empty")]
    EmptyPanel,
    #[error("resolution types differ: {0} vs {1}")]
    TypeMismatch(ResolutionType, ResolutionType),
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: SpellPanel,
    pub valid: SpellPanel,
    pub sampling_fraction: f64,
    pub seed: u64,
}

/// Assigns `round(fraction * loans)` whole loans to training, chosen by a
/// seeded shuffle of the sorted loan ids.
pub fn clustered_split(panel: &SpellPanel, fraction: f64, seed: u64) -> Result<SplitResult, ResamplingError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ResamplingError::InvalidFraction(fraction));
    }
    let mut ids = panel.loan_ids();
    let n_train = (fraction * ids.len() as f64).round() as usize;
    if n_train == 0 || n_train >= ids.len() {
        return Err(ResamplingError::TooFewClusters {
            loans: ids.len(),
            fraction,
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_ids: HashSet<u64> = ids[..n_train].iter().copied().collect();
    Ok(SplitResult {
        train: panel.filter_loans(|id| train_ids.contains(&id)),
        valid: panel.filter_loans(|id| !train_ids.contains(&id)),
        sampling_fraction: fraction,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionRateSeries {
    pub event_type: ResolutionType,
    /// Keyed by the calendar month in which spells stop.
    pub rates: BTreeMap<YearMonth, f64>,
    pub cohort_sizes: BTreeMap<YearMonth, u64>,
}

pub fn resolution_rate(panel: &SpellPanel, kind: ResolutionType) -> Result<ResolutionRateSeries, ResamplingError> {
    if panel.spells().is_empty() {
        return Err(ResamplingError::EmptyPanel);
    }
    let mut counts: BTreeMap<YearMonth, (u64, u64)> = BTreeMap::new();
    for s in panel.spells() {
        let c = counts.entry(s.stop_month).or_default();
        c.1 += 1;
        if s.resolution == kind {
            c.0 += 1;
        }
    }
    Ok(ResolutionRateSeries {
        event_type: kind,
        rates: counts.iter().map(|(&m, &(k, n))| (m, k as f64 / n as f64)).collect(),
        cohort_sizes: counts.into_iter().map(|(m, (_, n))| (m, n)).collect(),
    })
}

/// Mean absolute rate gap over the union of cohort months. A month missing from
/// one series contributes the other series' rate.
pub fn average_discrepancy(a: &ResolutionRateSeries, b: &ResolutionRateSeries) -> Result<f64, ResamplingError> {
    if a.event_type != b.event_type {
        return Err(ResamplingError::TypeMismatch(a.event_type, b.event_type));
    }
    let months: std::collections::BTreeSet<&YearMonth> = a.rates.keys().chain(b.rates.keys()).collect();
    if months.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = months
        .iter()
        .map(|m| match (a.rates.get(m), b.rates.get(m)) {
            (Some(x), Some(y)) => (x - y).abs(),
            (Some(x), None) | (None, Some(x)) => *x,
            (None, None) => unreachable!("month drawn from one of the series"),
        })
        .sum();
    Ok(total / months.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyEntry {
    pub pair: &'static str,
    pub resolution: ResolutionType,
    pub ad: f64,
}

/// AD for every resolution type over the pairs (full, train), (full, valid) and (train, valid).
pub fn representativeness(full: &SpellPanel, split: &SplitResult) -> Result<Vec<DiscrepancyEntry>, ResamplingError> {
    let mut out = Vec::new();
    for kind in ResolutionType::ALL {
        let d = resolution_rate(full, kind)?;
        let t = resolution_rate(&split.train, kind)?;
        let v = resolution_rate(&split.valid, kind)?;
        for (pair, x, y) in [("full-train", &d, &t), ("full-valid", &d, &v), ("train-valid", &t, &v)] {
            out.push(DiscrepancyEntry {
                pair,
                resolution: kind,
                ad: average_discrepancy(x, y)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::{illustrative, panel_of};
    use crate::panel::ResolutionType::*;

    fn month(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    #[test]
    fn two_loans_one_each() {
        let p = panel_of(&[(0, 2, Default), (0, 3, Censored)]);
        let s = clustered_split(&p, 0.5, 1).unwrap();
        assert_eq!(s.train.loan_ids().len(), 1);
        assert_eq!(s.valid.loan_ids().len(), 1);
        assert_ne!(s.train.loan_ids(), s.valid.loan_ids());
    }

    #[test]
    fn split_errors() {
        let p = panel_of(&[(0, 2, Default)]);
        assert!(matches!(
            clustered_split(&p, 0.5, 1),
            Err(ResamplingError::TooFewClusters { .. })
        ));
        assert_eq!(
            clustered_split(&p, 1.0, 1).unwrap_err(),
            ResamplingError::InvalidFraction(1.0)
        );
        assert!(resolution_rate(&SpellPanel::empty(vec![]), Default).is_err());
    }

    #[test]
    fn split_keeps_loans_whole() {
        let p = illustrative();
        let s = clustered_split(&p, 0.5, 9).unwrap();
        assert_eq!(s.train.len() + s.valid.len(), p.len());
        for part in [&s.train, &s.valid] {
            for id in part.loan_ids() {
                let rows = p.rows().iter().filter(|r| r.loan_id == id).count();
                assert_eq!(part.rows().iter().filter(|r| r.loan_id == id).count(), rows);
            }
        }
    }

    #[test]
    fn illustrative_default_rates() {
        let r = resolution_rate(&illustrative(), Default).unwrap();
        // loan 2 stops alone in 2020-03
        assert_eq!(r.cohort_sizes[&month("2020-03")], 1);
        assert_eq!(r.rates[&month("2020-03")], 0.0);
        assert_eq!(r.cohort_sizes[&month("2020-04")], 2);
        assert_eq!(r.rates[&month("2020-04")], 1.0);
        assert_eq!(r.rates[&month("2021-01")], 0.0);
        assert_eq!(r.rates.len(), 6);
    }

    #[test]
    fn rates_partition_over_types() {
        let p = illustrative();
        let series: Vec<_> = ResolutionType::ALL
            .iter()
            .map(|&k| resolution_rate(&p, k).unwrap())
            .collect();
        for m in series[0].rates.keys() {
            let total: f64 = series.iter().map(|s| s.rates[m]).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    fn series(kind: ResolutionType, rates: &[(&str, f64)]) -> ResolutionRateSeries {
        ResolutionRateSeries {
            event_type: kind,
            rates: rates.iter().map(|&(m, r)| (month(m), r)).collect(),
            cohort_sizes: rates.iter().map(|&(m, _)| (month(m), 1)).collect(),
        }
    }

    #[test]
    fn discrepancy_extremes_and_missing_months() {
        let months: Vec<String> = (1..=10).map(|m| format!("2020-{m:02}")).collect();
        let ones: Vec<(&str, f64)> = months.iter().map(|m| (m.as_str(), 1.0)).collect();
        let zeros: Vec<(&str, f64)> = months.iter().map(|m| (m.as_str(), 0.0)).collect();
        let a = series(Default, &ones);
        let b = series(Default, &zeros);
        assert_eq!(average_discrepancy(&a, &a).unwrap(), 0.0);
        assert_eq!(average_discrepancy(&a, &b).unwrap(), 1.0);
        let c = series(Default, &[("2020-01", 0.4), ("2020-02", 0.2)]);
        let d = series(Default, &[("2020-01", 0.1)]);
        assert!((average_discrepancy(&c, &d).unwrap() - 0.25).abs() < 1e-15);
        let e = series(Settled, &[("2020-01", 0.1)]);
        assert!(matches!(
            average_discrepancy(&c, &e),
            Err(ResamplingError::TypeMismatch(..))
        ));
    }

    #[test]
    fn representativeness_covers_all_pairs() {
        let p = illustrative();
        let s = clustered_split(&p, 0.5, 3).unwrap();
        let report = representativeness(&p, &s).unwrap();
        assert_eq!(report.len(), 12);
        assert!(report.iter().all(|e| e.ad >= 0.0 && e.ad <= 1.0));
    }
}
