//! CSV ingestion and output for spell panels.

use super::{
    CategoricalBuilder, Column, CovariateKind, CovariateSpec, PanelError, PanelRow, ResolutionType, SpellPanel,
};
use crate::month::YearMonth;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MANDATORY_COLUMNS: [&str; 9] = [
    "LoanID",
    "Date",
    "SpellNum",
    "SpellPeriod",
    "EntryTime",
    "StopTime",
    "ResolutionType",
    "SpellAge",
    "Event",
];

/// Optional column; derived from `Date` when absent.
pub const LOAN_PERIOD_COLUMN: &str = "LoanPeriod";

/// Loads a panel, reading only the declared covariates.
pub fn load_panel(path: impl AsRef<Path>, schema: &[CovariateSpec]) -> Result<SpellPanel, PanelError> {
    let file = std::fs::File::open(path)?;
    read_panel(std::io::BufReader::new(file), schema)
}

/// Loads a panel, treating every non-mandatory column as a covariate whose
/// kind is inferred (numeric when every non-empty cell parses as a number).
pub fn load_panel_auto(path: impl AsRef<Path>) -> Result<SpellPanel, PanelError> {
    let file = std::fs::File::open(path)?;
    read_panel_inner(std::io::BufReader::new(file), None)
}

pub fn read_panel<R: Read>(reader: R, schema: &[CovariateSpec]) -> Result<SpellPanel, PanelError> {
    read_panel_inner(reader, Some(schema))
}

/// Reads a panel, inferring covariate kinds as [`load_panel_auto`] does.
pub fn read_panel_auto<R: Read>(reader: R) -> Result<SpellPanel, PanelError> {
    read_panel_inner(reader, None)
}

fn parse_err(line: usize, message: impl Into<String>) -> PanelError {
    PanelError::Parse {
        line,
        message: message.into(),
    }
}

fn read_panel_inner<R: Read>(reader: R, schema: Option<&[CovariateSpec]>) -> Result<SpellPanel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut mandatory = [0usize; 9];
    for (slot, name) in mandatory.iter_mut().zip(MANDATORY_COLUMNS) {
        *slot = *index
            .get(name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))?;
    }
    let loan_period_col = index.get(LOAN_PERIOD_COLUMN).copied();

    let records: Vec<(usize, csv::StringRecord)> = rdr
        .records()
        .enumerate()
        .map(|(i, rec)| {
            rec.map(|r| {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(i + 2);
                (line, r)
            })
        })
        .collect::<Result<_, _>>()?;

    let schema: Vec<CovariateSpec> = match schema {
        Some(s) => {
            for spec in s {
                if !index.contains_key(spec.name.as_str()) {
                    return Err(PanelError::MissingColumn(spec.name.clone()));
                }
            }
            s.to_vec()
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !MANDATORY_COLUMNS.contains(h) && *h != LOAN_PERIOD_COLUMN)
            .map(|(i, h)| {
                let numeric = records
                    .iter()
                    .map(|(_, r)| r.get(i).unwrap_or(""))
                    .filter(|c| !c.is_empty())
                    .all(|c| c.parse::<f64>().is_ok());
                let has_values = records.iter().any(|(_, r)| !r.get(i).unwrap_or("").is_empty());
                if numeric && has_values {
                    CovariateSpec::numeric(h)
                } else {
                    CovariateSpec::categorical(h)
                }
            })
            .collect(),
    };

    let mut rows = Vec::with_capacity(records.len());
    let mut lines = Vec::with_capacity(records.len());
    let mut loan_period_given = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let line = *line;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |col: usize| -> Result<u64, PanelError> {
            field(mandatory[col]).parse::<u64>().map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "{} = `{}` is not a non-negative integer",
                        MANDATORY_COLUMNS[col],
                        field(mandatory[col])
                    ),
                )
            })
        };
        let small = |col: usize| -> Result<u32, PanelError> {
            u32::try_from(int(col)?).map_err(|_| parse_err(line, format!("{} out of range", MANDATORY_COLUMNS[col])))
        };
        let date: YearMonth = field(mandatory[1])
            .parse()
            .map_err(|e: crate::month::ParseMonthError| parse_err(line, e.to_string()))?;
        let code = int(6)?;
        let resolution = u8::try_from(code)
            .ok()
            .and_then(ResolutionType::from_code)
            .ok_or_else(|| parse_err(line, format!("ResolutionType `{code}` is not one of 1-4")))?;
        let event = match int(8)? {
            0 => false,
            1 => true,
            other => return Err(parse_err(line, format!("Event `{other}` is not 0 or 1"))),
        };
        let loan_period = match loan_period_col {
            Some(c) => Some(
                field(c)
                    .parse::<u32>()
                    .map_err(|_| parse_err(line, format!("LoanPeriod `{}` is not an integer", field(c))))?,
            ),
            None => None,
        };
        loan_period_given.push(loan_period);
        rows.push(PanelRow {
            loan_id: int(0)?,
            loan_period: loan_period.unwrap_or(0),
            spell_num: small(2)?,
            spell_period: small(3)?,
            entry_time: small(4)?,
            stop_time: small(5)?,
            resolution,
            spell_age: small(7)?,
            event,
            date,
        });
        lines.push(line);
    }

    if loan_period_col.is_none() {
        let mut first: HashMap<u64, YearMonth> = HashMap::new();
        for r in &rows {
            first
                .entry(r.loan_id)
                .and_modify(|d| *d = (*d).min(r.date))
                .or_insert(r.date);
        }
        for r in &mut rows {
            r.loan_period = r.date.months_since(first[&r.loan_id]) as u32 + 1;
        }
    }

    let mut columns = Vec::with_capacity(schema.len());
    for spec in &schema {
        let col = index[spec.name.as_str()];
        match spec.kind {
            CovariateKind::Numeric => {
                let mut v = Vec::with_capacity(records.len());
                for (line, rec) in &records {
                    let cell = rec.get(col).unwrap_or("");
                    if cell.is_empty() {
                        return Err(PanelError::InvariantViolation {
                            line: *line,
                            rule: format!("numeric covariate `{}` is missing", spec.name),
                        });
                    }
                    let x: f64 = cell.parse().map_err(|_| {
                        parse_err(*line, format!("covariate `{}` = `{cell}` is not numeric", spec.name))
                    })?;
                    if !x.is_finite() {
                        return Err(parse_err(*line, format!("covariate `{}` is not finite", spec.name)));
                    }
                    v.push(x);
                }
                columns.push(Column::Numeric(v));
            }
            CovariateKind::Categorical => {
                let mut b = CategoricalBuilder::default();
                for (_, rec) in &records {
                    b.push(rec.get(col).unwrap_or(""));
                }
                columns.push(b.finish());
            }
        }
    }

    SpellPanel::with_lines(rows, schema, columns, lines)
}

/// Writes the panel as CSV (mandatory columns, `LoanPeriod`, then covariates).
pub fn write_panel_to<W: Write>(panel: &SpellPanel, writer: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = MANDATORY_COLUMNS.to_vec();
    header.push(LOAN_PERIOD_COLUMN);
    header.extend(panel.schema().iter().map(|s| s.name.as_str()));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, r) in panel.rows().iter().enumerate() {
        record.clear();
        record.push(r.loan_id.to_string());
        record.push(r.date.to_string());
        record.push(r.spell_num.to_string());
        record.push(r.spell_period.to_string());
        record.push(r.entry_time.to_string());
        record.push(r.stop_time.to_string());
        record.push(r.resolution.code().to_string());
        record.push(r.spell_age.to_string());
        record.push(u8::from(r.event).to_string());
        record.push(r.loan_period.to_string());
        for col in panel.columns() {
            record.push(match col.value(i) {
                super::CovariateValue::Numeric(x) => format!("{x}"),
                super::CovariateValue::Categorical(s) => s.to_string(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel(panel: &SpellPanel, path: impl AsRef<Path>) -> Result<(), PanelError> {
    let file = std::fs::File::create(path)?;
    write_panel_to(panel, std::io::BufWriter::new(file))
}
