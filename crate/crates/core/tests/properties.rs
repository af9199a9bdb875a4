use pd_term::baselines::{breed_term_structure, Cohort, DefaultsTable};
use pd_term::diagnostics::{threshold_grid, troc, MarkerPanel};
use pd_term::dth::{build_design, chain, fit, gradient, Bin, FitOptions, ModelSpec};
use pd_term::life_table::build_life_table;
use pd_term::panel::{read_panel, ResolutionType, SpellPanel};
use pd_term::resampling::{average_discrepancy, clustered_split, resolution_rate};
use proptest::prelude::*;
use std::collections::BTreeSet;

/// `(entry, stop, resolution code)`; one loan per spell.
fn panel_from(spans: &[(u32, u32, u8)]) -> SpellPanel {
    let mut s = String::from("LoanID,Date,SpellNum,SpellPeriod,EntryTime,StopTime,ResolutionType,SpellAge,Event\n");
    for (k, &(entry, stop, code)) in spans.iter().enumerate() {
        for t in entry + 1..=stop {
            let m = 2010 * 12 + t - 1;
            let event = u8::from(t == stop && code == 1);
            s.push_str(&format!(
                "{},{}-{:02},1,{t},{entry},{stop},{code},{},{event}\n",
                k + 1,
                m / 12,
                m % 12 + 1,
                stop - entry
            ));
        }
    }
    read_panel(s.as_bytes(), &[]).expect("well-formed panel")
}

fn span() -> impl Strategy<Value = (u32, u32, u8)> {
    (0u32..12, 1u32..30, 1u8..=4).prop_map(|(entry, len, code)| (entry, entry + len, code))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn life_table_matches_risk_set_definition(spans in prop::collection::vec(span(), 1..80)) {
        let table = build_life_table(&panel_from(&spans), u32::MAX).unwrap();
        let ages: BTreeSet<u32> = spans.iter().map(|s| s.1).collect();
        prop_assert_eq!(table.ages.clone(), ages.into_iter().collect::<Vec<_>>());
        let mut s_prev = 1.0;
        for (k, &t) in table.ages.iter().enumerate() {
            let n = spans.iter().filter(|s| s.0 < t && t <= s.1).count() as u64;
            let f = spans.iter().filter(|s| s.1 == t && s.2 == 1).count() as u64;
            prop_assert_eq!(table.at_risk[k], n);
            prop_assert_eq!(table.failures[k], f);
            let h = f as f64 / n as f64;
            prop_assert!((table.hazard[k] - h).abs() <= 1e-15);
            let s = s_prev * (1.0 - h);
            prop_assert!((table.survival[k] - s).abs() <= 1e-12);
            s_prev = s;
        }
        let total = table.density.iter().sum::<f64>() + table.survival.last().unwrap();
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn chained_densities_telescope(h in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        let (s, f) = chain(&h);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        let total = f.iter().sum::<f64>() + s.last().unwrap();
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn split_partitions_loans(spans in prop::collection::vec(span(), 4..60), f in 0.2f64..0.8, seed in any::<u64>()) {
        let panel = panel_from(&spans);
        let a = clustered_split(&panel, f, seed).unwrap();
        let b = clustered_split(&panel, f, seed).unwrap();
        let train: BTreeSet<u64> = a.train.loan_ids().into_iter().collect();
        let valid: BTreeSet<u64> = a.valid.loan_ids().into_iter().collect();
        prop_assert!(train.is_disjoint(&valid));
        prop_assert_eq!(train.len() + valid.len(), panel.loan_ids().len());
        prop_assert_eq!(train.len(), (f * spans.len() as f64).round() as usize);
        prop_assert_eq!(a.train.len() + a.valid.len(), panel.len());
        prop_assert_eq!(a.train.loan_ids(), b.train.loan_ids());
    }

    #[test]
    fn discrepancy_is_a_bounded_symmetric_gap(
        x in prop::collection::vec(span(), 1..40),
        y in prop::collection::vec(span(), 1..40),
        code in 1u8..=4,
    ) {
        let kind = ResolutionType::from_code(code).unwrap();
        let a = resolution_rate(&panel_from(&x), kind).unwrap();
        let b = resolution_rate(&panel_from(&y), kind).unwrap();
        let ab = average_discrepancy(&a, &b).unwrap();
        prop_assert_eq!(ab, average_discrepancy(&b, &a).unwrap());
        prop_assert_eq!(average_discrepancy(&a, &a).unwrap(), 0.0);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn troc_curve_is_monotone(
        spells in prop::collection::vec((0u32..4, 1u32..12, any::<bool>(), any::<u64>()), 30..120),
        t in 1u32..8,
        bw in 0.05f64..=1.0,
    ) {
        let spells: Vec<(u32, u32, bool, Vec<f64>)> = spells
            .into_iter()
            .map(|(entry, len, event, salt)| {
                let m = (0..len).map(|k| ((salt.wrapping_mul(k as u64 + 1) % 97) as f64) / 97.0).collect();
                (entry, entry + len, event, m)
            })
            .collect();
        let mp = MarkerPanel::new(spells).unwrap();
        let grid = threshold_grid(&mp, 64);
        if let Ok(curve) = troc(&mp, t, bw, &grid) {
            let first = curve.points.first().unwrap();
            let last = curve.points.last().unwrap();
            prop_assert!((first.true_positive - 1.0).abs() <= 1e-12 && (first.false_positive - 1.0).abs() <= 1e-12);
            prop_assert!(last.true_positive.abs() <= 1e-12 && last.false_positive.abs() <= 1e-12);
            for w in curve.points.windows(2) {
                prop_assert!(w[1].true_positive <= w[0].true_positive + 1e-12);
                prop_assert!(w[1].false_positive <= w[0].false_positive + 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&curve.auc));
        }
    }

    #[test]
    fn breed_rates_are_probabilities(
        cohorts in prop::collection::vec((50u64..500, prop::collection::vec(0u64..6, 1..8)), 1..8),
        r in 1usize..4,
    ) {
        // staircase: cohort k observes one lifetime point fewer than cohort k - 1
        let n = cohorts.len();
        let width = cohorts.iter().map(|c| c.1.len()).max().unwrap().max(n);
        let table: Vec<Cohort> = cohorts
            .into_iter()
            .enumerate()
            .map(|(k, (initial, mut d))| {
                d.resize(width - k, 1);
                Cohort { label: format!("c{k}"), initial, defaults: d }
            })
            .collect();
        let table = DefaultsTable::new(table).unwrap();
        if r <= n {
            for (_, p) in breed_term_structure(&table, r).unwrap() {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        } else {
            prop_assert!(breed_term_structure(&table, r).is_err());
        }
    }

    #[test]
    fn fitted_baseline_solves_score_equations(spans in prop::collection::vec(span(), 20..80), w in 1.0f64..20.0) {
        let panel = panel_from(&spans);
        let mut spec = ModelSpec::baseline_only(vec![
            Bin::new("early", Some(6)),
            Bin::new("mid", Some(18)),
            Bin::new("late", None),
        ]);
        spec.event_weight = w;
        let design = build_design(&panel, &spec).unwrap();
        if let Ok(model) = fit(&design, &FitOptions::default()) {
            if !model.ridge {
                let g = gradient(&design, &model.coefficients);
                prop_assert!(g.iter().all(|x| x.abs() <= 1e-6 * design.len() as f64));
            }
        }
    }
}
