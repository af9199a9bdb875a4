//! Censoring and failure-time studies over spell ages.

use super::{PanelError, ResolutionType, SpellPanel};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensoringStudy {
    /// Share of spells of each observed age that ended censored.
    pub per_age: BTreeMap<u32, f64>,
    /// Unweighted mean of `per_age` over the unique ages.
    pub mean_rate: f64,
    pub age_cap: u32,
}

/// Censoring rate per unique spell age `T_ij <= age_cap`.
pub fn censoring_study(panel: &SpellPanel, age_cap: u32) -> Result<CensoringStudy, PanelError> {
    if panel.spells().is_empty() {
        return Err(PanelError::EmptyPanel);
    }
    let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for s in panel.spells().iter().filter(|s| s.age <= age_cap) {
        let e = counts.entry(s.age).or_default();
        e.1 += 1;
        if s.resolution == ResolutionType::Censored {
            e.0 += 1;
        }
    }
    let per_age: BTreeMap<u32, f64> = counts
        .into_iter()
        .map(|(age, (c, n))| (age, c as f64 / n as f64))
        .collect();
    let mean_rate = if per_age.is_empty() {
        0.0
    } else {
        per_age.values().sum::<f64>() / per_age.len() as f64
    };
    Ok(CensoringStudy {
        per_age,
        mean_rate,
        age_cap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureTimeHistogram {
    pub resolution: ResolutionType,
    /// Number of spells (not rows) with this resolution per spell age.
    pub counts: BTreeMap<u32, u64>,
    /// Share of every resolution type among all spells, indexed by code - 1.
    pub shares: [f64; 4],
}

pub fn failure_time_histogram(
    panel: &SpellPanel,
    resolution: ResolutionType,
    age_cap: u32,
) -> Result<FailureTimeHistogram, PanelError> {
    let spells = panel.spells();
    if spells.is_empty() {
        return Err(PanelError::EmptyPanel);
    }
    let mut counts = BTreeMap::new();
    let mut totals = [0u64; 4];
    for s in spells {
        totals[s.resolution as usize - 1] += 1;
        if s.resolution == resolution && s.age <= age_cap {
            *counts.entry(s.age).or_insert(0) += 1;
        }
    }
    let n = spells.len() as f64;
    Ok(FailureTimeHistogram {
        resolution,
        counts,
        shares: totals.map(|c| c as f64 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{illustrative, panel_of};
    use super::*;

    #[test]
    fn illustrative_censoring_rates() {
        // Ages: 4 (loan 1, loan 3/1, loan 4/2, all default), 3 (loan 2 censored,
        // loan 3/2 settled), 5 (loan 4/1 default), 2 (loan 4/3 censored).
        let st = censoring_study(&illustrative(), 300).unwrap();
        assert_eq!(st.per_age[&2], 1.0);
        assert_eq!(st.per_age[&3], 0.5);
        assert_eq!(st.per_age[&4], 0.0);
        assert_eq!(st.per_age[&5], 0.0);
        assert!((st.mean_rate - 0.375).abs() < 1e-15);
    }

    #[test]
    fn all_censored() {
        let p = panel_of(&[
            (0, 2, ResolutionType::Censored),
            (0, 5, ResolutionType::Censored),
            (0, 5, ResolutionType::Censored),
        ]);
        let st = censoring_study(&p, 10).unwrap();
        assert!(st.per_age.values().all(|&r| r == 1.0));
        assert_eq!(st.mean_rate, 1.0);
    }

    #[test]
    fn age_cap_limits_study() {
        let st = censoring_study(&illustrative(), 3).unwrap();
        assert_eq!(st.per_age.keys().copied().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn empty_panel_errors() {
        let p = SpellPanel::empty(vec![]);
        assert!(matches!(censoring_study(&p, 10), Err(PanelError::EmptyPanel)));
        assert!(matches!(
            failure_time_histogram(&p, ResolutionType::Default, 10),
            Err(PanelError::EmptyPanel)
        ));
    }

    #[test]
    fn default_histogram_of_illustrative_table() {
        let h = failure_time_histogram(&illustrative(), ResolutionType::Default, 500).unwrap();
        assert_eq!(h.counts, BTreeMap::from([(4, 3), (5, 1)]));
        assert!((h.shares.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((h.shares[0] - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn absent_type_and_partition() {
        let p = illustrative();
        let w = failure_time_histogram(&p, ResolutionType::WriteOffOther, 500).unwrap();
        assert!(w.counts.is_empty());
        let total: u64 = ResolutionType::ALL
            .iter()
            .map(|&r| failure_time_histogram(&p, r, 500).unwrap().counts.values().sum::<u64>())
            .sum();
        assert_eq!(total, p.spells().len() as u64);
    }
}
