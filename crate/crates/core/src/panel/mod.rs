//! Counting-process panel of recurrent performing spells.
//!
//! Each [`PanelRow`] is one month of one performing spell `(loan, j)`. Rows are
//! kept sorted by `(loan_id, spell_num, spell_period)`; covariates are stored
//! column-wise next to the rows. A [`SpellPanel`] can only be obtained through
//! validation, so downstream code may rely on every structural invariant:
//!
//! * spell ages equal `stop_time - entry_time` and the spell's rows cover
//!   `spell_period` in `(entry_time, stop_time]` without gaps;
//! * the event flag is set only on the final row of a defaulted spell;
//! * spell numbers of a loan run `1..=n` and only the last spell may be censored.
//!
//! Left-truncated spells may arrive in either of two encodings. The canonical one
//! stores the inferred age at the start of observation as `entry_time`. The other
//! keeps `entry_time = 0, stop_time = spell_age` but starts `spell_period` above one.
//! Both are normalised to the canonical form on construction.

mod io;
mod study;

pub use io::{load_panel, load_panel_auto, read_panel, read_panel_auto, write_panel, write_panel_to};
pub use study::{censoring_study, failure_time_histogram, CensoringStudy, FailureTimeHistogram};

use crate::month::YearMonth;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

/// How a performing spell ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResolutionType {
    Default = 1,
    Settled = 2,
    WriteOffOther = 3,
    Censored = 4,
}

impl ResolutionType {
    pub const ALL: [ResolutionType; 4] = [
        ResolutionType::Default,
        ResolutionType::Settled,
        ResolutionType::WriteOffOther,
        ResolutionType::Censored,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Default),
            2 => Some(Self::Settled),
            3 => Some(Self::WriteOffOther),
            4 => Some(Self::Censored),
            _ => None,
        }
    }

    /// Label used in reports.
    pub fn name(self) -> &'static str {
        match self {
            Self::Default => "default",
            Self::Settled => "settled",
            Self::WriteOffOther => "write_off_other",
            Self::Censored => "censored",
        }
    }
}

impl fmt::Display for ResolutionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One monthly observation of a performing spell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelRow {
    pub loan_id: u64,
    /// Months since origination of the loan, starting at 1.
    pub loan_period: u32,
    pub spell_num: u32,
    /// Months spent in the spell at this row, starting at `entry_time + 1`.
    pub spell_period: u32,
    pub entry_time: u32,
    pub stop_time: u32,
    pub resolution: ResolutionType,
    pub spell_age: u32,
    pub event: bool,
    pub date: YearMonth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical,
        }
    }
}

/// Level assigned to empty categorical cells.
pub const MISSING_LEVEL: &str = "missing";

/// Column-wise covariate storage, aligned with the panel rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateValue<'a> {
    Numeric(f64),
    Categorical(&'a str),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> CovariateValue<'_> {
        match self {
            Column::Numeric(v) => CovariateValue::Numeric(v[row]),
            Column::Categorical { levels, codes } => CovariateValue::Categorical(&levels[codes[row] as usize]),
        }
    }

    pub fn kind(&self) -> CovariateKind {
        match self {
            Column::Numeric(_) => CovariateKind::Numeric,
            Column::Categorical { .. } => CovariateKind::Categorical,
        }
    }

    fn permute(&self, order: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(order.iter().map(|&i| v[i]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: order.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

/// Incrementally builds a categorical column, interning levels.
#[derive(Debug, Default, Clone)]
pub struct CategoricalBuilder {
    levels: Vec<String>,
    lookup: HashMap<String, u32>,
    codes: Vec<u32>,
}

impl CategoricalBuilder {
    pub fn push(&mut self, level: &str) {
        let level = if level.is_empty() { MISSING_LEVEL } else { level };
        let code = match self.lookup.get(level) {
            Some(&c) => c,
            None => {
                let c = self.levels.len() as u32;
                self.levels.push(level.to_string());
                self.lookup.insert(level.to_string(), c);
                c
            }
        };
        self.codes.push(code);
    }

    pub fn finish(self) -> Column {
        Column::Categorical {
            levels: self.levels,
            codes: self.codes,
        }
    }
}

/// Spell-level summary with the row range it occupies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spell {
    pub loan_id: u64,
    pub spell_num: u32,
    pub rows: Range<usize>,
    pub entry: u32,
    pub stop: u32,
    pub age: u32,
    pub resolution: ResolutionType,
    pub start_month: YearMonth,
    pub stop_month: YearMonth,
}

impl Spell {
    /// Default is the only event; competing risks count as right-censored.
    pub fn failed(&self) -> bool {
        self.resolution == ResolutionType::Default
    }

    pub fn is_left_truncated(&self) -> bool {
        self.entry > 0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {rule}")]
    InvariantViolation { line: usize, rule: String },
    #[error("panel is empty")]
    EmptyPanel,
    #[error("covariate `{0}` has inconsistent length")]
    ColumnLength(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated panel of performing spells.
#[derive(Debug, Clone)]
pub struct SpellPanel {
    rows: Vec<PanelRow>,
    schema: Vec<CovariateSpec>,
    columns: Vec<Column>,
    spells: Vec<Spell>,
}

impl SpellPanel {
    /// Validates and normalises rows. Rows may be in any order. Line numbers in
    /// errors refer to `index + 2`, the line the row would occupy in a CSV file.
    pub fn new(rows: Vec<PanelRow>, schema: Vec<CovariateSpec>, columns: Vec<Column>) -> Result<Self, PanelError> {
        let lines = (0..rows.len()).map(|i| i + 2).collect();
        Self::with_lines(rows, schema, columns, lines)
    }

    pub fn empty(schema: Vec<CovariateSpec>) -> Self {
        let columns = schema
            .iter()
            .map(|s| match s.kind {
                CovariateKind::Numeric => Column::Numeric(Vec::new()),
                CovariateKind::Categorical => Column::Categorical {
                    levels: Vec::new(),
                    codes: Vec::new(),
                },
            })
            .collect();
        Self {
            rows: Vec::new(),
            schema,
            columns,
            spells: Vec::new(),
        }
    }

    pub(crate) fn with_lines(
        rows: Vec<PanelRow>,
        schema: Vec<CovariateSpec>,
        columns: Vec<Column>,
        lines: Vec<usize>,
    ) -> Result<Self, PanelError> {
        if schema.len() != columns.len() {
            return Err(PanelError::ColumnLength("<schema>".into()));
        }
        for (spec, col) in schema.iter().zip(&columns) {
            if col.len() != rows.len() || col.kind() != spec.kind {
                return Err(PanelError::ColumnLength(spec.name.clone()));
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (rows[i].loan_id, rows[i].spell_num, rows[i].spell_period));
        let already_sorted = order.iter().enumerate().all(|(a, &b)| a == b);
        let (mut rows, columns, lines) = if already_sorted {
            (rows, columns, lines)
        } else {
            (
                order.iter().map(|&i| rows[i]).collect(),
                columns.iter().map(|c| c.permute(&order)).collect(),
                order.iter().map(|&i| lines[i]).collect::<Vec<_>>(),
            )
        };
        let spells = validate(&mut rows, &lines)?;
        Ok(Self {
            rows,
            schema,
            columns,
            spells,
        })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn spells(&self) -> &[Spell] {
        &self.spells
    }

    pub fn schema(&self) -> &[CovariateSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .map(|i| &self.columns[i])
    }

    pub fn covariate(&self, row: usize, name: &str) -> Option<CovariateValue<'_>> {
        self.column(name).map(|c| c.value(row))
    }

    /// Spell `(loan_id, spell_num)`, if present.
    pub fn spell(&self, loan_id: u64, spell_num: u32) -> Option<&Spell> {
        self.spells
            .binary_search_by_key(&(loan_id, spell_num), |s| (s.loan_id, s.spell_num))
            .ok()
            .map(|i| &self.spells[i])
    }

    /// Index of the spell that owns each row.
    pub fn spell_of_rows(&self) -> Vec<usize> {
        let mut out = vec![0; self.rows.len()];
        for (k, s) in self.spells.iter().enumerate() {
            out[s.rows.clone()].fill(k);
        }
        out
    }

    /// Sorted, distinct loan ids.
    pub fn loan_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.spells.iter().map(|s| s.loan_id).collect();
        ids.dedup();
        ids
    }

    /// First and last calendar month covered by any row.
    pub fn month_span(&self) -> Option<(YearMonth, YearMonth)> {
        let first = self.rows.iter().map(|r| r.date).min()?;
        let last = self.rows.iter().map(|r| r.date).max()?;
        Some((first, last))
    }

    /// Sub-panel holding every row of the loans accepted by `keep`.
    /// Whole loans are kept or dropped, so no revalidation is needed.
    pub fn filter_loans(&self, mut keep: impl FnMut(u64) -> bool) -> SpellPanel {
        let mut order = Vec::new();
        let mut spells = Vec::new();
        let mut i = 0;
        while i < self.spells.len() {
            let loan = self.spells[i].loan_id;
            let mut j = i;
            while j < self.spells.len() && self.spells[j].loan_id == loan {
                j += 1;
            }
            if keep(loan) {
                for s in &self.spells[i..j] {
                    let start = order.len();
                    order.extend(s.rows.clone());
                    let mut s = s.clone();
                    s.rows = start..order.len();
                    spells.push(s);
                }
            }
            i = j;
        }
        SpellPanel {
            rows: order.iter().map(|&r| self.rows[r]).collect(),
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.permute(&order)).collect(),
            spells,
        }
    }
}

fn violation(line: usize, rule: impl Into<String>) -> PanelError {
    PanelError::InvariantViolation {
        line,
        rule: rule.into(),
    }
}

/// Checks every invariant on sorted rows, normalising truncated-spell encodings.
fn validate(rows: &mut [PanelRow], lines: &[usize]) -> Result<Vec<Spell>, PanelError> {
    let mut spells = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].loan_id, rows[start].spell_num);
        let mut end = start + 1;
        while end < rows.len() && (rows[end].loan_id, rows[end].spell_num) == key {
            end += 1;
        }
        spells.push(validate_spell(rows, lines, start..end)?);
        start = end;
    }

    let mut k = 0;
    while k < spells.len() {
        let loan = spells[k].loan_id;
        let mut expected = 1;
        while k < spells.len() && spells[k].loan_id == loan {
            let s = &spells[k];
            let line = lines[s.rows.start];
            if s.spell_num != expected {
                return Err(violation(
                    line,
                    format!(
                        "loan {loan}: spell numbers must run 1..n without gaps (found {} where {expected} expected)",
                        s.spell_num
                    ),
                ));
            }
            let is_last = k + 1 == spells.len() || spells[k + 1].loan_id != loan;
            if s.resolution == ResolutionType::Censored && !is_last {
                return Err(violation(
                    line,
                    format!("loan {loan}: only the last spell may be censored"),
                ));
            }
            if let Some(next) = spells.get(k + 1).filter(|n| n.loan_id == loan) {
                if next.start_month <= s.stop_month {
                    return Err(violation(
                        lines[next.rows.start],
                        format!("loan {loan}: spells overlap in calendar time"),
                    ));
                }
            }
            expected += 1;
            k += 1;
        }
    }
    Ok(spells)
}

fn validate_spell(rows: &mut [PanelRow], lines: &[usize], range: Range<usize>) -> Result<Spell, PanelError> {
    let first = rows[range.start];
    let last = rows[range.end - 1];
    let line0 = lines[range.start];
    for r in range.clone() {
        let row = &rows[r];
        let line = lines[r];
        if row.spell_num == 0 || row.spell_period == 0 || row.loan_period == 0 {
            return Err(violation(
                line,
                "SpellNum, SpellPeriod and loan period must be at least 1",
            ));
        }
        if (row.entry_time, row.stop_time, row.resolution, row.spell_age)
            != (first.entry_time, first.stop_time, first.resolution, first.spell_age)
        {
            return Err(violation(
                line,
                "EntryTime, StopTime, ResolutionType and SpellAge must be constant within a spell",
            ));
        }
        if r > range.start {
            let prev = &rows[r - 1];
            if row.spell_period == prev.spell_period {
                return Err(violation(line, "duplicate key (LoanID, SpellNum, SpellPeriod)"));
            }
            if row.spell_period != prev.spell_period + 1 {
                return Err(violation(line, "SpellPeriod values of a spell must be consecutive"));
            }
            if row.date != prev.date.add_months(1) {
                return Err(violation(line, "Date must advance by one month per spell row"));
            }
            if row.loan_period != prev.loan_period + 1 {
                return Err(violation(line, "loan period must advance by one per spell row"));
            }
        }
        let is_last = r + 1 == range.end;
        if row.event && !is_last {
            return Err(violation(line, "Event = 1 is only allowed on the final row of a spell"));
        }
        if is_last && row.event != (row.resolution == ResolutionType::Default) {
            return Err(violation(
                line,
                "the final row of a spell has Event = 1 exactly when ResolutionType = 1 (Default)",
            ));
        }
    }

    let n_rows = (range.end - range.start) as u32;
    if first.spell_age != n_rows {
        return Err(violation(
            line0,
            format!(
                "SpellAge {} does not match the {} observed spell rows",
                first.spell_age, n_rows
            ),
        ));
    }
    let entry = first.spell_period - 1;
    let stop = last.spell_period;
    if (first.entry_time, first.stop_time) != (entry, stop) {
        // Accept the alternative truncation encoding only when its own
        // arithmetic is consistent: StopTime - EntryTime = SpellAge.
        let consistent = first.stop_time > first.entry_time && first.stop_time - first.entry_time == first.spell_age;
        if !consistent {
            return Err(violation(
                line0,
                "EntryTime/StopTime inconsistent with SpellPeriod and SpellAge",
            ));
        }
        for row in &mut rows[range.clone()] {
            row.entry_time = entry;
            row.stop_time = stop;
        }
    }
    Ok(Spell {
        loan_id: first.loan_id,
        spell_num: first.spell_num,
        rows: range,
        entry,
        stop,
        age: first.spell_age,
        resolution: first.resolution,
        start_month: first.date,
        stop_month: last.date,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The worked example of four loans and seven spells, as printed
    /// (truncated spell in the alternative encoding). Dates count loan
    /// periods from 2020-01.
    pub const ILLUSTRATIVE_CSV: &str = "\
LoanID,Date,LoanPeriod,SpellNum,SpellPeriod,EntryTime,StopTime,ResolutionType,SpellAge,Event
1,2020-01,1,1,1,0,4,1,4,0
1,2020-02,2,1,2,0,4,1,4,0
1,2020-03,3,1,3,0,4,1,4,0
1,2020-04,4,1,4,0,4,1,4,1
2,2020-01,1,1,1,0,3,4,3,0
2,2020-02,2,1,2,0,3,4,3,0
2,2020-03,3,1,3,0,3,4,3,0
3,2020-01,1,1,1,0,4,1,4,0
3,2020-02,2,1,2,0,4,1,4,0
3,2020-03,3,1,3,0,4,1,4,0
3,2020-04,4,1,4,0,4,1,4,1
3,2020-11,11,2,1,0,3,2,3,0
3,2020-12,12,2,2,0,3,2,3,0
3,2021-01,13,2,3,0,3,2,3,0
4,2020-05,5,1,5,0,5,1,5,0
4,2020-06,6,1,6,0,5,1,5,0
4,2020-07,7,1,7,0,5,1,5,0
4,2020-08,8,1,8,0,5,1,5,0
4,2020-09,9,1,9,0,5,1,5,1
4,2021-08,20,2,1,0,4,1,4,0
4,2021-09,21,2,2,0,4,1,4,0
4,2021-10,22,2,3,0,4,1,4,0
4,2021-11,23,2,4,0,4,1,4,1
4,2023-04,40,3,1,0,2,4,2,0
4,2023-05,41,3,2,0,2,4,2,0
";

    pub fn illustrative() -> SpellPanel {
        read_panel(ILLUSTRATIVE_CSV.as_bytes(), &[]).unwrap()
    }

    /// Single-spell row builder for in-memory panels without covariates.
    pub fn spell_rows(loan_id: u64, entry: u32, stop: u32, resolution: ResolutionType) -> Vec<PanelRow> {
        let start: YearMonth = "2020-01".parse().unwrap();
        (entry + 1..=stop)
            .map(|t| PanelRow {
                loan_id,
                loan_period: t,
                spell_num: 1,
                spell_period: t,
                entry_time: entry,
                stop_time: stop,
                resolution,
                spell_age: stop - entry,
                event: t == stop && resolution == ResolutionType::Default,
                date: start.add_months((t - 1) as i32),
            })
            .collect()
    }

    pub fn panel_of(spells: &[(u32, u32, ResolutionType)]) -> SpellPanel {
        let rows = spells
            .iter()
            .enumerate()
            .flat_map(|(i, &(e, s, r))| spell_rows(i as u64 + 1, e, s, r))
            .collect();
        SpellPanel::new(rows, vec![], vec![]).unwrap()
    }
}
