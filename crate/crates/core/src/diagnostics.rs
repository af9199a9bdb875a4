//! Validation instruments for fitted hazard models: clustered time-dependent
//! ROC analysis, IPC-weighted Brier scores, term-structure discrepancy and
//! 12-month default-rate calibration.

use crate::life_table::{LifeTable, SpellSpan};
use crate::month::YearMonth;
use crate::panel::SpellPanel;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::ops::Range;

pub const DEFAULT_BANDWIDTH: f64 = 0.05;
pub const GRID_POINTS: usize = 512;
pub const RATE_WINDOW: i32 = 12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("marker panel is empty")]
    EmptyPanel,
    #[error("expected {expected} markers, got {found}")]
    MarkerLength { expected: usize, found: usize },
    #[error("spell {0} needs one marker per observed age")]
    MarkerCount(usize),
    #[error("marker {0} is not finite")]
    NonFiniteMarker(usize),
    #[error("bandwidth must lie in (0, 1], got {0}")]
    InvalidBandwidth(f64),
    #[error("no events or no survivors at horizon {0}")]
    DegenerateHorizon(u32),
    #[error("censoring survivor is zero at age {0}")]
    ZeroCensorSurvivor(u32),
    #[error("no spells at risk at horizon {0}")]
    NoEligibleSpells(u32),
    #[error("score grid does not cover [1, {0}]")]
    GridTooShort(u32),
    #[error("term structures share no ages")]
    NoOverlap,
    #[error("panel spans {0} months; at least 13 are needed")]
    HorizonTooShort(i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSpell {
    pub entry: u32,
    /// Observed time `T~`: the last age of the spell.
    pub observed: u32,
    pub event: bool,
    /// Markers of ages `entry + 1 ..= observed`, as a range into the marker vector.
    pub markers: Range<usize>,
}

/// Per-age risk scores grouped by subject-spell.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPanel {
    spells: Vec<MarkerSpell>,
    markers: Vec<f64>,
}

impl MarkerPanel {
    /// `markers` is aligned with the panel rows.
    pub fn from_panel(panel: &SpellPanel, markers: &[f64]) -> Result<Self, DiagnosticsError> {
        if markers.len() != panel.len() {
            return Err(DiagnosticsError::MarkerLength {
                expected: panel.len(),
                found: markers.len(),
            });
        }
        let spells = panel
            .spells()
            .iter()
            .map(|s| MarkerSpell {
                entry: s.entry,
                observed: s.stop,
                event: s.failed(),
                markers: s.rows.clone(),
            })
            .collect();
        Self::checked(spells, markers.to_vec())
    }

    /// Spells as `(entry, observed, event, markers)` with one marker per age in `(entry, observed]`.
    pub fn new(spells: Vec<(u32, u32, bool, Vec<f64>)>) -> Result<Self, DiagnosticsError> {
        let mut markers = Vec::new();
        let mut out = Vec::with_capacity(spells.len());
        for (k, (entry, observed, event, m)) in spells.into_iter().enumerate() {
            if observed < entry || m.len() != (observed - entry) as usize {
                return Err(DiagnosticsError::MarkerCount(k));
            }
            let start = markers.len();
            markers.extend(m);
            out.push(MarkerSpell {
                entry,
                observed,
                event,
                markers: start..markers.len(),
            });
        }
        Self::checked(out, markers)
    }

    fn checked(spells: Vec<MarkerSpell>, markers: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if spells.is_empty() || markers.is_empty() {
            return Err(DiagnosticsError::EmptyPanel);
        }
        if let Some(i) = markers.iter().position(|m| !m.is_finite()) {
            return Err(DiagnosticsError::NonFiniteMarker(i));
        }
        Ok(Self { spells, markers })
    }

    pub fn spells(&self) -> &[MarkerSpell] {
        &self.spells
    }

    pub fn markers(&self) -> &[f64] {
        &self.markers
    }

    pub fn spans(&self) -> Vec<SpellSpan> {
        self.spells
            .iter()
            .map(|s| SpellSpan {
                entry: s.entry,
                stop: s.observed,
                failed: s.event,
            })
            .collect()
    }

    fn sorted(&self) -> SortedMarkers {
        let n = self.spells.len() as f64;
        let mut spell_of = vec![0usize; self.markers.len()];
        let mut weight = vec![0.0; self.markers.len()];
        for (k, s) in self.spells.iter().enumerate() {
            let eta = s.markers.len() as f64;
            for i in s.markers.clone() {
                spell_of[i] = k;
                weight[i] = 1.0 / (n * eta);
            }
        }
        let mut order: Vec<usize> = (0..self.markers.len()).collect();
        order.sort_by(|&a, &b| self.markers[a].total_cmp(&self.markers[b]).then(a.cmp(&b)));
        let values: Vec<f64> = order.iter().map(|&i| self.markers[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| weight[i]).collect();
        // F at each sorted position: total weight up to the end of its tie group
        let mut cdf = vec![0.0; values.len()];
        let mut acc = 0.0;
        let mut i = 0;
        while i < values.len() {
            let mut j = i;
            while j < values.len() && values[j] == values[i] {
                acc += weights[j];
                j += 1;
            }
            cdf[i..j].fill(acc);
            i = j;
        }
        // normalise so the top tie group sits exactly at 1
        for c in &mut cdf {
            *c /= acc;
        }
        SortedMarkers {
            spell: order.iter().map(|&i| spell_of[i]).collect(),
            values,
            weights,
            cdf,
        }
    }
}

struct SortedMarkers {
    values: Vec<f64>,
    weights: Vec<f64>,
    cdf: Vec<f64>,
    spell: Vec<usize>,
}

impl SortedMarkers {
    /// First sorted position holding a marker strictly above `p`.
    fn first_above(&self, p: f64) -> usize {
        self.values.partition_point(|&v| v <= p)
    }
}

/// Mean-adjusted empirical marker distribution: the average over spells of the
/// within-spell share of markers `<= m`.
pub fn marker_cdf(mp: &MarkerPanel, m: f64) -> f64 {
    let n = mp.spells.len() as f64;
    mp.spells
        .iter()
        .map(|s| {
            let xs = &mp.markers[s.markers.clone()];
            xs.iter().filter(|&&x| x <= m).count() as f64 / xs.len() as f64
        })
        .sum::<f64>()
        / n
}

fn check_bandwidth(bandwidth: f64) -> Result<(), DiagnosticsError> {
    if bandwidth > 0.0 && bandwidth <= 1.0 {
        Ok(())
    } else {
        Err(DiagnosticsError::InvalidBandwidth(bandwidth))
    }
}

/// Kaplan–Meier counts over a sliding set of marker pseudo-subjects.
struct WindowKm {
    at_risk: Vec<i64>,
    events: Vec<i64>,
    t: u32,
}

impl WindowKm {
    fn update(&mut self, s: &MarkerSpell, sign: i64) {
        let hi = s.observed.min(self.t);
        for q in s.entry + 1..=hi {
            self.at_risk[q as usize] += sign;
        }
        if s.event && s.observed <= self.t {
            self.events[s.observed as usize] += sign;
        }
    }

    fn survivor(&self) -> Option<f64> {
        let mut s = 1.0;
        let mut any = false;
        for q in 1..=self.t as usize {
            let n = self.at_risk[q];
            if n > 0 {
                any = true;
                s *= 1.0 - self.events[q] as f64 / n as f64;
            }
        }
        any.then_some(s)
    }
}

/// Marker-conditional survivors `S(t | M = m_w)` at every sorted marker position,
/// using the `ceil(bandwidth * W)` nearest markers in F-distance (ties included).
/// Also returns the number of markers whose neighbourhood had no one at risk.
fn conditional_survivors(mp: &MarkerPanel, sm: &SortedMarkers, t: u32, bandwidth: f64) -> (Vec<f64>, usize) {
    let w_total = sm.values.len();
    if t == 0 {
        return (vec![1.0; w_total], 0);
    }
    let k = ((bandwidth * w_total as f64).ceil() as usize).clamp(1, w_total);
    let mut km = WindowKm {
        at_risk: vec![0; t as usize + 1],
        events: vec![0; t as usize + 1],
        t,
    };
    let mut out = Vec::with_capacity(w_total);
    let mut empty = 0;
    let (mut a, mut cur_lo, mut cur_hi) = (0usize, 0usize, 0usize);
    for w in 0..w_total {
        while a + k < w_total && sm.cdf[w] - sm.cdf[a] > sm.cdf[a + k] - sm.cdf[w] {
            a += 1;
        }
        let mut lo = a;
        while lo > 0 && sm.values[lo - 1] == sm.values[a] {
            lo -= 1;
        }
        let mut hi = a + k;
        while hi < w_total && sm.values[hi] == sm.values[a + k - 1] {
            hi += 1;
        }
        // both ends move monotonically in w
        let lo = lo.max(cur_lo);
        while cur_hi < hi {
            km.update(&mp.spells[sm.spell[cur_hi]], 1);
            cur_hi += 1;
        }
        while cur_lo < lo {
            km.update(&mp.spells[sm.spell[cur_lo]], -1);
            cur_lo += 1;
        }
        match km.survivor() {
            Some(s) => out.push(s),
            None => {
                empty += 1;
                out.push(1.0);
            }
        }
    }
    (out, empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AkritasEstimate {
    pub value: f64,
    /// Markers above the threshold; zero means the value is the empty sum.
    pub qualifying: usize,
    /// Markers whose neighbourhood held nobody at risk (their survivor counts as 1).
    pub empty_neighbourhoods: usize,
}

/// Mean-adjusted smoothed estimate of `P(M > p_c, T > t)`.
pub fn akritas_survivor(
    mp: &MarkerPanel,
    p_c: f64,
    t: u32,
    bandwidth: f64,
) -> Result<AkritasEstimate, DiagnosticsError> {
    check_bandwidth(bandwidth)?;
    let sm = mp.sorted();
    let (cond, empty) = conditional_survivors(mp, &sm, t, bandwidth);
    let start = sm.first_above(p_c);
    Ok(AkritasEstimate {
        value: (start..cond.len()).map(|i| sm.weights[i] * cond[i]).sum(),
        qualifying: cond.len() - start,
        empty_neighbourhoods: empty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_positive: f64,
    pub true_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TRocCurve {
    pub horizon: u32,
    /// From `p_c = -inf` at (1, 1) to `p_c = +inf` at (0, 0).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub bandwidth: f64,
    pub empty_neighbourhoods: usize,
}

/// Unique marker quantiles at `points` probabilities, bracketed by -inf and +inf.
pub fn threshold_grid(mp: &MarkerPanel, points: usize) -> Vec<f64> {
    let mut sorted = mp.markers.clone();
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let mut grid = vec![f64::NEG_INFINITY];
    for k in 1..=points {
        let pos = (k as f64 / (points + 1) as f64 * last as f64).round() as usize;
        let v = sorted[pos];
        if grid.last() != Some(&v) {
            grid.push(v);
        }
    }
    grid.push(f64::INFINITY);
    grid
}

/// Trapezoid area under points sorted by false-positive rate.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.false_positive, p.true_positive)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn troc(mp: &MarkerPanel, t: u32, bandwidth: f64, grid: &[f64]) -> Result<TRocCurve, DiagnosticsError> {
    check_bandwidth(bandwidth)?;
    let sm = mp.sorted();
    let (cond, empty) = conditional_survivors(mp, &sm, t, bandwidth);
    // suffix sums over sorted positions
    let n = cond.len();
    let mut s_above = vec![0.0; n + 1];
    for i in (0..n).rev() {
        s_above[i] = s_above[i + 1] + sm.weights[i] * cond[i];
    }
    let s_t = s_above[0];
    if !(s_t > 1e-12 && s_t < 1.0 - 1e-12) {
        return Err(DiagnosticsError::DegenerateHorizon(t));
    }
    let points: Vec<RocPoint> = grid
        .iter()
        .map(|&p| {
            let i = sm.first_above(p);
            let above = if i == 0 { 1.0 } else { 1.0 - sm.cdf[i - 1] };
            let tp = (above - s_above[i]) / (1.0 - s_t);
            let fp = s_above[i] / s_t;
            RocPoint {
                threshold: p,
                false_positive: fp.clamp(0.0, 1.0),
                true_positive: tp.clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(TRocCurve {
        horizon: t,
        auc: trapezoid_auc(&points),
        points,
        bandwidth,
        empty_neighbourhoods: empty,
    })
}

/// Kaplan–Meier survivor of the censoring times: resolution roles are swapped,
/// so every spell that did not default counts as an event. Delayed entry applies.
pub fn censor_survivor(spans: &[SpellSpan]) -> LifeTable {
    let swapped: Vec<SpellSpan> = spans
        .iter()
        .map(|s| SpellSpan {
            failed: !s.failed,
            ..*s
        })
        .collect();
    let cap = spans.iter().map(|s| s.stop).max().unwrap_or(0);
    LifeTable::from_spans(&swapped, cap)
}

/// Predicted survival `p(t*)` of a spell from its per-age hazards, conditional on
/// reaching its entry age. Past the last observed age the last hazard persists.
pub fn survival_from_hazards(spell: &MarkerSpell, hazards: &[f64], t_star: u32) -> f64 {
    let hs = &hazards[spell.markers.clone()];
    let mut s = 1.0;
    for q in spell.entry + 1..=t_star {
        let k = ((q - spell.entry - 1) as usize).min(hs.len() - 1);
        s *= 1.0 - hs[k];
    }
    s
}

/// IPC-weighted Brier score at `t*` with predicted survival from `predict(spell index, t*)`.
/// Spells entering at or after `t*` are not at risk and are excluded.
pub fn tbs_with(
    mp: &MarkerPanel,
    t_star: u32,
    g: &LifeTable,
    predict: impl Fn(usize, u32) -> f64,
) -> Result<f64, DiagnosticsError> {
    let g_star = g.survival_at(t_star);
    let mut total = 0.0;
    let mut eligible = 0usize;
    for (k, s) in mp.spells.iter().enumerate() {
        if s.entry >= t_star {
            continue;
        }
        eligible += 1;
        if s.observed > t_star {
            if g_star <= 0.0 {
                return Err(DiagnosticsError::ZeroCensorSurvivor(t_star));
            }
            let p = predict(k, t_star);
            total += (1.0 - p) * (1.0 - p) / g_star;
        } else if s.event {
            // left-continuous at the event age
            let g_event = g.survival_at(s.observed - 1);
            if g_event <= 0.0 {
                return Err(DiagnosticsError::ZeroCensorSurvivor(s.observed));
            }
            let p = predict(k, t_star);
            total += p * p / g_event;
        }
    }
    if eligible == 0 {
        return Err(DiagnosticsError::NoEligibleSpells(t_star));
    }
    Ok(total / eligible as f64)
}

/// IPC-weighted Brier score treating the markers as per-age hazards.
pub fn tbs(mp: &MarkerPanel, t_star: u32) -> Result<f64, DiagnosticsError> {
    let g = censor_survivor(&mp.spans());
    tbs_with(mp, t_star, &g, |k, t| {
        survival_from_hazards(&mp.spells[k], &mp.markers, t)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TBsCurve {
    pub horizons: Vec<u32>,
    pub tbs: Vec<f64>,
    pub ibs: f64,
    /// Censoring survivor as (age, G).
    pub censor_survivor: Vec<(u32, f64)>,
}

/// Brier scores over `1..=t_max` from per-age hazard markers, with their IBS.
pub fn tbs_curve(mp: &MarkerPanel, t_max: u32) -> Result<TBsCurve, DiagnosticsError> {
    tbs_curve_with(mp, t_max, |k, t| survival_from_hazards(&mp.spells[k], &mp.markers, t))
}

pub fn tbs_curve_with(
    mp: &MarkerPanel,
    t_max: u32,
    predict: impl Fn(usize, u32) -> f64 + Sync,
) -> Result<TBsCurve, DiagnosticsError> {
    let g = censor_survivor(&mp.spans());
    let horizons: Vec<u32> = (1..=t_max).collect();
    let tbs = horizons
        .par_iter()
        .map(|&t| tbs_with(mp, t, &g, &predict))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut curve = TBsCurve {
        horizons,
        tbs,
        ibs: 0.0,
        censor_survivor: g.ages.iter().copied().zip(g.survival.iter().copied()).collect(),
    };
    curve.ibs = ibs(&curve, t_max)?;
    Ok(curve)
}

/// Uniform-weight mean of the Brier scores over `1..=t*`.
pub fn ibs(curve: &TBsCurve, t_star: u32) -> Result<f64, DiagnosticsError> {
    let mut sum = 0.0;
    for s in 1..=t_star {
        let k = curve
            .horizons
            .iter()
            .position(|&h| h == s)
            .ok_or(DiagnosticsError::GridTooShort(t_star))?;
        sum += curve.tbs[k];
    }
    Ok(sum / t_star as f64)
}

/// Mean absolute gap between two term structures over their common ages `<= age_cap`.
pub fn term_structure_mae(
    actual: &BTreeMap<u32, f64>,
    expected: &BTreeMap<u32, f64>,
    age_cap: u32,
) -> Result<f64, DiagnosticsError> {
    let gaps: Vec<f64> = actual
        .range(..=age_cap)
        .filter_map(|(a, x)| expected.get(a).map(|y| (x - y).abs()))
        .collect();
    if gaps.is_empty() {
        return Err(DiagnosticsError::NoOverlap);
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultRateSeries {
    pub months: Vec<YearMonth>,
    pub empirical: Vec<f64>,
    pub expected: Vec<f64>,
    pub accounts: Vec<u64>,
    pub mae: f64,
}

/// Empirical 12-month default rate per calendar month: the share of accounts
/// performing at `t` (an Event = 0 row) that default in `(t, t + 12]`.
/// Months within 12 of the last observed month are dropped.
pub fn empirical_default_rates(panel: &SpellPanel) -> Result<BTreeMap<YearMonth, (f64, u64)>, DiagnosticsError> {
    let cells = default_rate_cells(panel, None)?;
    Ok(cells
        .into_iter()
        .map(|(m, c)| (m, (c.defaults / c.n as f64, c.n)))
        .collect())
}

#[derive(Default, Clone, Copy)]
struct RateCell {
    n: u64,
    defaults: f64,
    expected: f64,
}

fn default_rate_cells(
    panel: &SpellPanel,
    hazards: Option<&[f64]>,
) -> Result<BTreeMap<YearMonth, RateCell>, DiagnosticsError> {
    let (first, last) = panel.month_span().ok_or(DiagnosticsError::HorizonTooShort(0))?;
    let span = last.months_since(first) + 1;
    if span < RATE_WINDOW + 1 {
        return Err(DiagnosticsError::HorizonTooShort(span));
    }
    let cutoff = last.add_months(-RATE_WINDOW);
    let rows = panel.rows();
    let spells = panel.spells();
    let mut cells: BTreeMap<YearMonth, RateCell> = BTreeMap::new();
    let mut s = 0;
    while s < spells.len() {
        let loan = spells[s].loan_id;
        let mut e = s;
        while e < spells.len() && spells[e].loan_id == loan {
            e += 1;
        }
        let default_months: Vec<YearMonth> = spells[s..e]
            .iter()
            .filter(|sp| sp.failed())
            .map(|sp| sp.stop_month)
            .collect();
        for sp in &spells[s..e] {
            for i in sp.rows.clone() {
                let r = &rows[i];
                if r.event || r.date > cutoff {
                    continue;
                }
                let horizon_end = r.date.add_months(RATE_WINDOW);
                let defaulted = default_months.iter().any(|&d| d > r.date && d <= horizon_end);
                let c = cells.entry(r.date).or_default();
                c.n += 1;
                if defaulted {
                    c.defaults += 1.0;
                }
                if let Some(h) = hazards {
                    // chained marginal default probabilities over the next 12 rows of the spell
                    let mut surv = 1.0;
                    let mut sum = 0.0;
                    for j in i + 1..sp.rows.end.min(i + 1 + RATE_WINDOW as usize) {
                        sum += surv * h[j];
                        surv *= 1.0 - h[j];
                    }
                    c.expected += sum;
                }
            }
        }
        s = e;
    }
    Ok(cells)
}

/// Empirical versus expected 12-month default rates; `hazards` are per-row fitted hazards.
pub fn default_rate_series(panel: &SpellPanel, hazards: &[f64]) -> Result<DefaultRateSeries, DiagnosticsError> {
    if hazards.len() != panel.len() {
        return Err(DiagnosticsError::MarkerLength {
            expected: panel.len(),
            found: hazards.len(),
        });
    }
    let cells = default_rate_cells(panel, Some(hazards))?;
    let mut out = DefaultRateSeries {
        months: Vec::with_capacity(cells.len()),
        empirical: Vec::with_capacity(cells.len()),
        expected: Vec::with_capacity(cells.len()),
        accounts: Vec::with_capacity(cells.len()),
        mae: 0.0,
    };
    for (m, c) in cells {
        out.months.push(m);
        out.empirical.push(c.defaults / c.n as f64);
        out.expected.push(c.expected / c.n as f64);
        out.accounts.push(c.n);
    }
    if !out.months.is_empty() {
        out.mae = out
            .empirical
            .iter()
            .zip(&out.expected)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / out.months.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::panel_of;
    use crate::panel::ResolutionType::*;

    fn mp(spells: Vec<(u32, u32, bool, Vec<f64>)>) -> MarkerPanel {
        MarkerPanel::new(spells).unwrap()
    }

    #[test]
    fn marker_cdf_examples() {
        let p = mp(vec![(0, 2, true, vec![1.0, 3.0]), (0, 1, false, vec![2.0])]);
        assert_eq!(marker_cdf(&p, 0.0), 0.0);
        assert_eq!(marker_cdf(&p, 10.0), 1.0);
        assert!((marker_cdf(&p, 2.0) - 0.75).abs() < 1e-15);
        let sm = p.sorted();
        assert_eq!(sm.cdf, vec![0.25, 0.75, 1.0]);
    }

    #[test]
    fn equal_length_spells_give_pooled_cdf() {
        let p = mp(vec![
            (0, 3, true, vec![0.1, 0.5, 0.2]),
            (0, 3, false, vec![0.4, 0.3, 0.9]),
        ]);
        for m in [0.0, 0.25, 0.45, 1.0] {
            let pooled = p.markers().iter().filter(|&&x| x <= m).count() as f64 / 6.0;
            assert!((marker_cdf(&p, m) - pooled).abs() < 1e-15);
        }
    }

    #[test]
    fn akritas_edge_cases() {
        let p = mp(vec![(0, 2, true, vec![0.3, 0.6]), (0, 3, false, vec![0.1, 0.2, 0.4])]);
        let est = akritas_survivor(&p, f64::NEG_INFINITY, 0, 0.5).unwrap();
        assert!((est.value - 1.0).abs() < 1e-15);
        let above = akritas_survivor(&p, 5.0, 2, 0.5).unwrap();
        assert_eq!((above.value, above.qualifying), (0.0, 0));
        assert!(akritas_survivor(&p, 0.0, 1, 0.0).is_err());
    }

    #[test]
    fn full_bandwidth_is_unsmoothed_km() {
        let p = mp(vec![
            (0, 2, true, vec![0.3, 0.6]),
            (0, 3, false, vec![0.1, 0.2, 0.4]),
            (1, 4, true, vec![0.5, 0.05, 0.7]),
            (0, 1, true, vec![0.2]),
        ]);
        // each marker is a pseudo-subject carrying its spell's history
        let replicated: Vec<SpellSpan> = p
            .spells()
            .iter()
            .flat_map(|s| {
                std::iter::repeat_n(
                    SpellSpan {
                        entry: s.entry,
                        stop: s.observed,
                        failed: s.event,
                    },
                    s.markers.len(),
                )
            })
            .collect();
        let km = LifeTable::from_spans(&replicated, 10);
        for t in 1..=4 {
            let est = akritas_survivor(&p, f64::NEG_INFINITY, t, 1.0).unwrap();
            assert!((est.value - km.survival_at(t)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn troc_extremes_and_monotone() {
        let spells: Vec<_> = (0..40)
            .map(|i| {
                let risky = i % 2 == 0;
                let stop = if risky { 2 + i % 3 } else { 6 };
                let m = if risky { 0.8 } else { 0.1 } + 0.001 * i as f64;
                (0, stop, risky, vec![m; stop as usize])
            })
            .collect();
        let p = mp(spells);
        let grid = threshold_grid(&p, GRID_POINTS);
        let c = troc(&p, 4, 0.2, &grid).unwrap();
        let first = c.points.first().unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((first.false_positive, first.true_positive), (1.0, 1.0));
        assert_eq!((last.false_positive, last.true_positive), (0.0, 0.0));
        for w in c.points.windows(2) {
            assert!(w[1].true_positive <= w[0].true_positive + 1e-12);
            assert!(w[1].false_positive <= w[0].false_positive + 1e-12);
        }
        assert!(c.auc > 0.9 && c.auc <= 1.0);
        assert!(matches!(
            troc(&p, 0, 0.2, &grid),
            Err(DiagnosticsError::DegenerateHorizon(0))
        ));
    }

    #[test]
    fn trapezoid_of_diagonal() {
        let pts: Vec<RocPoint> = [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]
            .iter()
            .map(|&(f, t)| RocPoint {
                threshold: 0.0,
                false_positive: f,
                true_positive: t,
            })
            .collect();
        assert!((trapezoid_auc(&pts) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn half_predictor_scores_a_quarter() {
        // no censoring: every spell defaults
        let spells: Vec<_> = (1..=6).map(|t| (0, t, true, vec![0.3; t as usize])).collect();
        let p = mp(spells);
        let g = censor_survivor(&p.spans());
        for t in 1..=6 {
            let s = tbs_with(&p, t, &g, |_, _| 0.5).unwrap();
            assert!((s - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let spells: Vec<_> = (1..=5).map(|t| (0, t, true, vec![0.0; t as usize])).collect();
        let p = mp(spells);
        let g = censor_survivor(&p.spans());
        for t in 1..=5 {
            let s = tbs_with(&p, t, &g, |k, t| if p.spells()[k].observed > t { 1.0 } else { 0.0 }).unwrap();
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn three_spell_hand_example() {
        let p = mp(vec![
            (0, 2, true, vec![0.0; 2]),
            (0, 5, false, vec![0.0; 5]),
            (0, 7, true, vec![0.0; 7]),
        ]);
        let g = censor_survivor(&p.spans());
        let preds = [0.2, 0.9, 0.8];
        let s = tbs_with(&p, 4, &g, |k, _| preds[k]).unwrap();
        // G drops once, at age 5, where one of the two spells at risk is censored
        let g_at = |a: u32| if a >= 5 { 0.5 } else { 1.0 };
        let oracle =
            ((0.0f64 - 0.2).powi(2) / g_at(1) + (1.0f64 - 0.9).powi(2) / g_at(4) + (1.0f64 - 0.8).powi(2) / g_at(4))
                / 3.0;
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.03).abs() < 1e-12);
        assert_eq!(g.survival_at(5), 0.5);
    }

    #[test]
    fn uncensored_brier_is_plain_mse() {
        let spells: Vec<_> = (0..30u32)
            .map(|i| {
                let t = 1 + i % 9;
                (0, t, true, (0..t).map(|k| 0.05 + 0.01 * ((i + k) % 7) as f64).collect())
            })
            .collect();
        let p = mp(spells);
        for t in [1, 3, 5, 8] {
            let s = tbs(&p, t).unwrap();
            let mse: f64 = p
                .spells()
                .iter()
                .map(|sp| {
                    let y = if sp.observed > t { 1.0 } else { 0.0 };
                    let pr = survival_from_hazards(sp, p.markers(), t);
                    (y - pr) * (y - pr)
                })
                .sum::<f64>()
                / 30.0;
            assert!((s - mse).abs() < 1e-12);
        }
    }

    #[test]
    fn censor_roles_swap_twice() {
        let spans = vec![
            SpellSpan {
                entry: 0,
                stop: 3,
                failed: true,
            },
            SpellSpan {
                entry: 1,
                stop: 4,
                failed: false,
            },
        ];
        let swap = |v: &[SpellSpan]| {
            v.iter()
                .map(|s| SpellSpan {
                    failed: !s.failed,
                    ..*s
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(swap(&swap(&spans)), spans);
    }

    #[test]
    fn ibs_of_constant_scores() {
        let curve = TBsCurve {
            horizons: (1..=5).collect(),
            tbs: vec![0.1; 5],
            ibs: 0.0,
            censor_survivor: vec![],
        };
        assert!((ibs(&curve, 5).unwrap() - 0.1).abs() < 1e-15);
        assert!(ibs(&curve, 6).is_err());
    }

    #[test]
    fn term_structure_mae_cases() {
        let a: BTreeMap<u32, f64> = (1..=5).map(|t| (t, 0.01 * t as f64)).collect();
        let b: BTreeMap<u32, f64> = a.iter().map(|(&t, &x)| (t, x + 0.002)).collect();
        assert_eq!(term_structure_mae(&a, &a, 10).unwrap(), 0.0);
        assert!((term_structure_mae(&a, &b, 10).unwrap() - 0.002).abs() < 1e-15);
        assert_eq!(
            term_structure_mae(&a, &b, 10).unwrap(),
            term_structure_mae(&b, &a, 10).unwrap()
        );
        let c: BTreeMap<u32, f64> = BTreeMap::from([(50, 0.1)]);
        assert_eq!(term_structure_mae(&a, &c, 100), Err(DiagnosticsError::NoOverlap));
    }

    #[test]
    fn single_loan_worst_ever() {
        // defaults at age 10; performing rows at ages 1..=9
        let p = panel_of(&[(0, 10, Default), (0, 30, Censored)]);
        let r = empirical_default_rates(&p).unwrap();
        let first: YearMonth = "2020-01".parse().unwrap();
        // at 2020-04 loan 1 defaults 6 months later
        assert_eq!(r[&first.add_months(3)], (0.5, 2));
        let s = default_rate_series(&p, &vec![0.0; p.len()]).unwrap();
        assert!(s.expected.iter().all(|&x| x == 0.0));
        assert_eq!(s.months.last(), Some(&"2021-06".parse().unwrap()));
        assert!(empirical_default_rates(&panel_of(&[(0, 5, Default)])).is_err());
    }
}
