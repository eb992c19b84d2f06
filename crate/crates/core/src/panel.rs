//! Panel data model, CSV ingestion, zero handling and time rescaling.
//!
//! Input is long-format CSV: one row per (unit, time) observation with an
//! id, the unit's base value, the compared value, and optionally an elapsed
//! time. Rows sharing an id are grouped into one [`PanelRecord`].

use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns produced by this crate's own writers. They are never carried as
/// attributes when a scored file is read back in.
pub const DERIVED_COLUMNS: &[&str] = &["t", "loss", "signed_loss", "rank", "flagged", "class"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub label: String,
    pub value: f64,
    /// Rescaled elapsed time in (0, 1], when the panel has a time column.
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub id: String,
    pub base: f64,
    pub observations: Vec<Observation>,
    /// Pass-through columns (join keys, class labels), in header order.
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZeroPolicy {
    /// Replace exact zeroes with this strictly positive value.
    Recode(f64),
    /// Replace exact zeroes with half the smallest positive value.
    RecodeAuto,
    /// Drop any row containing an exact zero.
    Omit,
}

/// Zero handling applied to both the base and the value column.
/// Negative values are always rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPolicy {
    pub zero_handling: ZeroPolicy,
}

impl Default for PreprocessPolicy {
    fn default() -> Self {
        PreprocessPolicy {
            zero_handling: ZeroPolicy::RecodeAuto,
        }
    }
}

impl PreprocessPolicy {
    pub fn new(zero_handling: ZeroPolicy) -> Result<Self> {
        if let ZeroPolicy::Recode(v) = zero_handling {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("recode value must be positive, got {v}")));
            }
        }
        Ok(PreprocessPolicy { zero_handling })
    }

    /// Parses `omit`, `auto`, or `value=X`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "omit" => Self::new(ZeroPolicy::Omit),
            "auto" => Self::new(ZeroPolicy::RecodeAuto),
            other => {
                let v = other
                    .strip_prefix("value=")
                    .ok_or_else(|| Error::param(format!("unknown zero policy `{other}`")))?;
                let v: f64 = v.parse().map_err(|_| Error::param(format!("bad recode value `{v}`")))?;
                Self::new(ZeroPolicy::Recode(v))
            }
        }
    }
}

/// How elapsed time is obtained for each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeSource {
    /// No time column; every unit has a single observation.
    None,
    /// Column holds numeric elapsed time since the base date.
    Elapsed(String),
    /// Column holds labels; the k-th distinct label (in order of first
    /// appearance) is `k * spacing` after the base date.
    Labels { column: String, spacing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBindings {
    pub id: String,
    pub base: String,
    pub value: String,
    pub time: TimeSource,
}

impl Default for ColumnBindings {
    fn default() -> Self {
        ColumnBindings {
            id: "id".into(),
            base: "base".into(),
            value: "value".into(),
            time: TimeSource::None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub rows_read: usize,
    /// Zero cells replaced under a recode policy.
    pub recoded: usize,
    /// Rows dropped under the omit policy.
    pub omitted: usize,
    pub recode_value: Option<f64>,
    /// Largest raw elapsed time, which maps to t = 1.
    pub time_max: Option<f64>,
}

/// Elapsed times mapped into (0, 1] by dividing by the maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub values: Vec<f64>,
    pub max: f64,
}

/// Rescales elapsed times so the largest becomes exactly 1.
pub fn rescale_times(elapsed: &[f64]) -> Result<TimeScale> {
    if elapsed.is_empty() {
        return Err(Error::Empty("no elapsed times".into()));
    }
    if let Some(bad) = elapsed.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::NonPositive(format!("elapsed time {bad}")));
    }
    let max = elapsed.iter().copied().fold(f64::MIN, f64::max);
    Ok(TimeScale {
        values: elapsed.iter().map(|t| t / max).collect(),
        max,
    })
}

/// Half of the smallest strictly positive value.
pub fn recode_auto_value(values: &[f64]) -> Result<f64> {
    values
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .map(|m| m / 2.0)
        .ok_or_else(|| Error::Empty("no strictly positive value to derive a recode value from".into()))
}

/// A loaded, preprocessed dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub records: Vec<PanelRecord>,
    pub attribute_columns: Vec<String>,
    pub report: PreprocessReport,
    pub has_time: bool,
}

impl Panel {
    pub fn n_observations(&self) -> usize {
        self.records.iter().map(|r| r.observations.len()).sum()
    }

    /// Range (max - min) over every base and observed value.
    pub fn value_range(&self) -> Option<f64> {
        let mut it = self
            .records
            .iter()
            .flat_map(|r| std::iter::once(r.base).chain(r.observations.iter().map(|o| o.value)));
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(hi - lo)
    }
}

pub(crate) struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<(usize, csv::StringRecord)>,
}

pub(crate) fn read_table<R: Read>(source: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(Table { headers, rows })
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub(crate) fn parse_number(row: usize, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Parses a non-negative cell; negatives are invalid input.
pub(crate) fn parse_nonnegative(row: usize, column: &str, raw: &str) -> Result<f64> {
    let v = parse_number(row, column, raw)?;
    if v < 0.0 {
        return Err(Error::NegativeValue {
            row,
            column: column.to_string(),
            value: v,
        });
    }
    Ok(v)
}

/// Applies the zero policy to rows of non-negative cells.
///
/// Returns `None` for rows dropped under `Omit`.
pub(crate) struct ZeroFilter {
    policy: ZeroPolicy,
    recode_value: Option<f64>,
}

impl ZeroFilter {
    pub fn new(policy: &PreprocessPolicy, all_cells: &[f64]) -> Result<Self> {
        let recode_value = match policy.zero_handling {
            ZeroPolicy::Recode(v) => Some(v),
            ZeroPolicy::RecodeAuto if all_cells.contains(&0.0) => Some(recode_auto_value(all_cells)?),
            ZeroPolicy::RecodeAuto | ZeroPolicy::Omit => None,
        };
        Ok(ZeroFilter {
            policy: policy.zero_handling,
            recode_value,
        })
    }

    pub fn apply<const N: usize>(&self, cells: [f64; N], report: &mut PreprocessReport) -> Option<[f64; N]> {
        if cells.iter().all(|v| *v > 0.0) {
            return Some(cells);
        }
        match self.policy {
            ZeroPolicy::Omit => {
                report.omitted += 1;
                None
            }
            ZeroPolicy::Recode(_) | ZeroPolicy::RecodeAuto => {
                let r = self.recode_value.expect("recode value computed when zeroes exist");
                Some(cells.map(|v| {
                    if v == 0.0 {
                        report.recoded += 1;
                        r
                    } else {
                        v
                    }
                }))
            }
        }
    }

    pub fn recode_value(&self) -> Option<f64> {
        self.recode_value
    }
}

/// Reads a panel CSV, applies the zero policy, groups rows by id, and
/// rescales elapsed time so the latest time is 1.
pub fn load_panel<R: Read>(source: R, bindings: &ColumnBindings, policy: &PreprocessPolicy) -> Result<Panel> {
    let table = read_table(source)?;
    let id_col = table.column(&bindings.id)?;
    let base_col = table.column(&bindings.base)?;
    let value_col = table.column(&bindings.value)?;
    let time_col = match &bindings.time {
        TimeSource::None => None,
        TimeSource::Elapsed(c) => Some(table.column(c)?),
        TimeSource::Labels { column, spacing } => {
            if !(*spacing > 0.0) {
                return Err(Error::param(format!("time spacing must be positive, got {spacing}")));
            }
            Some(table.column(column)?)
        }
    };
    let bound: HashSet<usize> = [Some(id_col), Some(base_col), Some(value_col), time_col]
        .into_iter()
        .flatten()
        .collect();
    let attr_cols: Vec<usize> = (0..table.headers.len())
        .filter(|i| !bound.contains(i) && !DERIVED_COLUMNS.contains(&table.headers[*i].as_str()))
        .collect();

    struct Raw {
        line: usize,
        id: String,
        base: f64,
        value: f64,
        label: String,
        elapsed: Option<f64>,
        attributes: Vec<(String, String)>,
    }

    let mut label_order: HashMap<String, usize> = HashMap::new();
    let mut raws = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::InvalidRow {
                row: line,
                message: "empty id".into(),
            });
        }
        let base = parse_nonnegative(line, &bindings.base, rec.get(base_col).unwrap_or(""))?;
        let value = parse_nonnegative(line, &bindings.value, rec.get(value_col).unwrap_or(""))?;
        let (label, elapsed) = match (&bindings.time, time_col) {
            (TimeSource::Elapsed(name), Some(c)) => {
                let raw = rec.get(c).unwrap_or("");
                let t = parse_number(line, name, raw)?;
                if t <= 0.0 {
                    return Err(Error::InvalidRow {
                        row: line,
                        message: format!("elapsed time must be positive, got {t}"),
                    });
                }
                (raw.to_string(), Some(t))
            }
            (TimeSource::Labels { spacing, .. }, Some(c)) => {
                let raw = rec.get(c).unwrap_or("").to_string();
                let next = label_order.len() + 1;
                let k = *label_order.entry(raw.clone()).or_insert(next);
                (raw, Some(k as f64 * spacing))
            }
            _ => (String::new(), None),
        };
        let attributes = attr_cols
            .iter()
            .map(|&c| (table.headers[c].clone(), rec.get(c).unwrap_or("").to_string()))
            .collect();
        raws.push(Raw {
            line,
            id,
            base,
            value,
            label,
            elapsed,
            attributes,
        });
    }

    let cells: Vec<f64> = raws.iter().flat_map(|r| [r.base, r.value]).collect();
    let filter = ZeroFilter::new(policy, &cells)?;
    let mut report = PreprocessReport {
        rows_read: raws.len(),
        recode_value: filter.recode_value(),
        ..Default::default()
    };

    let mut kept = Vec::with_capacity(raws.len());
    for raw in raws {
        if let Some([base, value]) = filter.apply([raw.base, raw.value], &mut report) {
            kept.push(Raw { base, value, ..raw });
        }
    }
    let time_max = kept
        .iter()
        .filter_map(|r| r.elapsed)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));

    let mut records: Vec<PanelRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for raw in kept {
        let base = raw.base;
        let value = raw.value;
        if !(base > 0.0) {
            return Err(Error::InvalidRow {
                row: raw.line,
                message: format!("base {base} is not positive"),
            });
        }
        let t = raw
            .elapsed
            .map(|e| e / time_max.expect("max exists when any time exists"));
        let obs = Observation {
            label: raw.label,
            value,
            t,
        };
        match index.get(&raw.id) {
            Some(&i) => {
                let rec = &mut records[i];
                if rec.base != base {
                    return Err(Error::InvalidRow {
                        row: raw.line,
                        message: format!("id `{}` has base {} but an earlier row has {}", raw.id, base, rec.base),
                    });
                }
                if rec.observations.iter().any(|o| o.label == obs.label) {
                    return Err(Error::InvalidRow {
                        row: raw.line,
                        message: format!("duplicate time `{}` for id `{}`", obs.label, raw.id),
                    });
                }
                rec.observations.push(obs);
            }
            None => {
                index.insert(raw.id.clone(), records.len());
                records.push(PanelRecord {
                    id: raw.id,
                    base,
                    observations: vec![obs],
                    attributes: raw.attributes,
                });
            }
        }
    }
    report.time_max = time_max;

    Ok(Panel {
        records,
        attribute_columns: attr_cols.iter().map(|&c| table.headers[c].clone()).collect(),
        report,
        has_time: time_col.is_some(),
    })
}
