//! CSV writers for scored, flagged, compared and classified output.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! written file reads back to the identical `f64` values and repeated runs
//! produce byte-identical files.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nominal::NominalComparison;
use crate::panel::{parse_number, read_table, Panel};
use crate::score::{Breaks, ReferenceObservation, ReferenceScored, Scoring};

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn attrs(panel: &Panel, record: usize) -> impl Iterator<Item = &str> {
    panel.records[record].attributes.iter().map(|(_, v)| v.as_str())
}

/// Writes `id, base, value, t, loss, signed_loss, rank`, plus `flagged`
/// when a rule was applied, then any pass-through attribute columns.
pub fn write_scored<W: Write>(out: W, panel: &Panel, scoring: &Scoring) -> Result<()> {
    let with_flag = scoring.thresholds.is_some();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id", "base", "value", "t", "loss", "signed_loss", "rank"];
    if with_flag {
        header.push("flagged");
    }
    header.extend(panel.attribute_columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &scoring.records {
        let mut row = vec![
            r.id.clone(),
            num(r.base),
            num(r.value),
            opt(r.t),
            num(r.loss),
            num(r.signed_loss),
            r.rank.to_string(),
        ];
        if with_flag {
            row.push(r.flagged.unwrap_or(false).to_string());
        }
        row.extend(attrs(panel, r.record).map(str::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `id, base, value, t, loss, rank, class` and attribute columns.
/// `breaks.classes` must be aligned with `scoring.records`.
pub fn write_breaks<W: Write>(out: W, panel: &Panel, scoring: &Scoring, breaks: &Breaks) -> Result<()> {
    if breaks.classes.len() != scoring.records.len() {
        return Err(Error::param("breaks and scored records differ in length"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id", "base", "value", "t", "loss", "rank", "class"];
    header.extend(panel.attribute_columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for (r, class) in scoring.records.iter().zip(&breaks.classes) {
        let mut row = vec![
            r.id.clone(),
            num(r.base),
            num(r.value),
            opt(r.t),
            num(r.loss),
            r.rank.to_string(),
            class.to_string(),
        ];
        row.extend(attrs(panel, r.record).map(str::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Both comparison directions side by side, ordered by the F-vs-B rank.
pub fn write_comparison<W: Write>(out: W, cmp: &NominalComparison) -> Result<()> {
    let with_flag = cmp.f_vs_b_thresholds.is_some();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id", "b_value", "f_value", "loss_fb", "signed_loss_fb", "rank_fb"];
    if with_flag {
        header.push("flagged_fb");
    }
    header.extend(["loss_bf", "signed_loss_bf", "rank_bf"]);
    if with_flag {
        header.extend(["flagged_bf", "flagged_any"]);
    }
    w.write_record(&header)?;
    for r in cmp.by_forward_rank() {
        let mut row = vec![
            r.id.clone(),
            num(r.b_value),
            num(r.f_value),
            num(r.f_vs_b.loss),
            num(r.f_vs_b.signed_loss),
            r.f_vs_b.rank.to_string(),
        ];
        if with_flag {
            row.push(r.f_vs_b.flagged.to_string());
        }
        row.extend([num(r.b_vs_f.loss), num(r.b_vs_f.signed_loss), r.b_vs_f.rank.to_string()]);
        if with_flag {
            row.push(r.b_vs_f.flagged.to_string());
            row.push(r.flagged_either().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reference_scored<W: Write>(out: W, rows: &[ReferenceScored]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "r", "d", "criticality", "rank", "flagged"])?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            num(r.r),
            num(r.d),
            num(r.criticality),
            r.rank.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `id, R, D` observations for a compiled reference rule.
pub fn read_reference_observations<R: Read>(
    source: R,
    id: &str,
    r: &str,
    d: &str,
) -> Result<Vec<ReferenceObservation>> {
    let t = read_table(source)?;
    let (ic, rc, dc) = (t.column(id)?, t.column(r)?, t.column(d)?);
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(ReferenceObservation {
                id: rec.get(ic).unwrap_or("").to_string(),
                r: parse_number(*line, r, rec.get(rc).unwrap_or(""))?,
                d: parse_number(*line, d, rec.get(dc).unwrap_or(""))?,
            })
        })
        .collect()
}
