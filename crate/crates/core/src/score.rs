//! Scoring a loaded panel: loss evaluation, ranking, flagging and quantile
//! class breaks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::criticality::{derive_critical, quantile_sorted, sorted_copy, CriticalRule, Thresholds};
use crate::error::{Error, Result};
use crate::loss::{self, LossParams};
use crate::panel::Panel;
use crate::par;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub params: LossParams,
    /// Use `|F - B| * B^(tq + t - 1)` with each observation's rescaled `t`.
    pub time_invariant: bool,
    pub rule: Option<CriticalRule>,
    /// Derive data-driven thresholds per time label instead of pooled.
    pub per_slice: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub base: f64,
    pub value: f64,
    pub t: Option<f64>,
    #[serde(skip)]
    pub label: String,
    pub loss: f64,
    pub signed_loss: f64,
    pub rank: usize,
    pub flagged: Option<bool>,
    /// Index of the source record in the panel.
    #[serde(skip)]
    pub record: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum ThresholdSet {
    Pooled { thresholds: Thresholds },
    PerSlice { slices: BTreeMap<String, Thresholds> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    /// Sorted by rank (1 = largest loss).
    pub records: Vec<ScoredRecord>,
    pub thresholds: Option<ThresholdSet>,
    pub warnings: Vec<String>,
}

impl Scoring {
    pub fn flagged_count(&self) -> usize {
        self.records.iter().filter(|r| r.flagged == Some(true)).count()
    }
}

/// Loss and signed loss for one observation.
///
/// For `p != 1` the exponent of `B` is normalized to `q/p`, the loss is
/// computed in the `p = 1` form and raised back to `p`; the signed loss is
/// the loss carrying the sign of `F - B`.
pub fn evaluate(value: f64, base: f64, t: Option<f64>, params: LossParams) -> Result<(f64, f64)> {
    if params.p == 1.0 {
        return match t {
            Some(t) => Ok((
                loss::eval_time_invariant(value, base, params.q, t)?,
                loss::eval_signed_time_invariant(value, base, params.q, t)?,
            )),
            None => Ok((
                loss::eval_unsigned(value, base, params)?,
                loss::eval_signed(value, base, params.q)?,
            )),
        };
    }
    let unsigned = match t {
        Some(t) => {
            let q_norm = params.q / params.p;
            let l = loss::eval_time_invariant(value, base, q_norm, t)?.powf(params.p);
            if !l.is_finite() {
                return Err(Error::Overflow("time-invariant loss".into()));
            }
            l
        }
        None => loss::eval_unsigned(value, base, params)?,
    };
    let sign = (value - base).partial_cmp(&0.0).map_or(0.0, |o| o as i8 as f64);
    Ok((unsigned, sign * unsigned))
}

/// Flattened `(record, observation)` view over a panel.
fn observations(panel: &Panel) -> Vec<(usize, usize)> {
    panel
        .records
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| (0..r.observations.len()).map(move |oi| (ri, oi)))
        .collect()
}

/// Evaluates losses for every observation, ranks them, and applies the
/// rule when one is given.
pub fn score_panel(panel: &Panel, options: &ScoreOptions) -> Result<Scoring> {
    options.params.validate()?;
    if let Some(rule) = &options.rule {
        rule.validate()?;
    }
    if options.time_invariant && !panel.has_time {
        return Err(Error::param("time-invariant scoring needs a time column"));
    }
    let idx = observations(panel);
    if idx.is_empty() {
        return Err(Error::Empty("no observations to score".into()));
    }
    let mut warnings = Vec::new();
    if let Some(w) = options.params.q_warning() {
        warnings.push(w);
    }

    let params = options.params;
    let time_invariant = options.time_invariant;
    let mut records = par::try_map(&idx, |&(ri, oi)| {
        let rec = &panel.records[ri];
        let obs = &rec.observations[oi];
        let t = if time_invariant { obs.t } else { None };
        let (loss, signed_loss) = evaluate(obs.value, rec.base, t, params)?;
        Ok::<_, Error>(ScoredRecord {
            id: rec.id.clone(),
            base: rec.base,
            value: obs.value,
            t: obs.t,
            label: obs.label.clone(),
            loss,
            signed_loss,
            rank: 0,
            flagged: None,
            record: ri,
        })
    })?;

    par::sort_by(&mut records, |a, b| {
        b.loss
            .total_cmp(&a.loss)
            .then_with(|| a.id.cmp(&b.id))
            .then_with(|| a.t.unwrap_or(0.0).total_cmp(&b.t.unwrap_or(0.0)))
            .then_with(|| a.label.cmp(&b.label))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }

    let thresholds = match &options.rule {
        None => None,
        Some(rule) => Some(apply_rule(&mut records, rule, options.per_slice)?),
    };
    Ok(Scoring {
        records,
        thresholds,
        warnings,
    })
}

fn rule_input(r: &ScoredRecord, rule: &CriticalRule) -> f64 {
    if rule.is_signed() {
        r.signed_loss
    } else {
        r.loss
    }
}

/// Resolves the rule against the scored records and sets each flag.
pub fn apply_rule(records: &mut [ScoredRecord], rule: &CriticalRule, per_slice: bool) -> Result<ThresholdSet> {
    if !per_slice {
        let xs: Vec<f64> = records.iter().map(|r| rule_input(r, rule)).collect();
        let th = derive_critical(&xs, rule)?;
        for r in records.iter_mut() {
            r.flagged = Some(th.exceeds(r.loss, r.signed_loss));
        }
        return Ok(ThresholdSet::Pooled { thresholds: th });
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.label.clone()).or_default().push(i);
    }
    let mut slices = BTreeMap::new();
    for (label, members) in groups {
        let xs: Vec<f64> = members.iter().map(|&i| rule_input(&records[i], rule)).collect();
        let th = derive_critical(&xs, rule)?;
        for &i in &members {
            let r = &mut records[i];
            r.flagged = Some(th.exceeds(r.loss, r.signed_loss));
        }
        slices.insert(label, th);
    }
    Ok(ThresholdSet::PerSlice { slices })
}

/// Quantile class assignment over a set of losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breaks {
    /// The `k - 1` interior class boundaries (type-7 quantiles at `j/k`).
    pub edges: Vec<f64>,
    /// Class in `1..=k` for each input loss, in input order.
    pub classes: Vec<usize>,
    /// True when every loss is equal and all land in class 1.
    pub degenerate: bool,
}

/// Assigns each loss to one of `k` quantile classes. Class 1 holds the
/// smallest losses; a loss above edge `j` is in class at least `j + 1`.
pub fn quantile_breaks(losses: &[f64], k: usize) -> Result<Breaks> {
    if k < 2 {
        return Err(Error::param(format!("need at least 2 classes, got {k}")));
    }
    if losses.is_empty() {
        return Err(Error::Empty("no losses to classify".into()));
    }
    let sorted = sorted_copy(losses);
    let edges = (1..k)
        .map(|j| quantile_sorted(&sorted, j as f64 / k as f64))
        .collect::<Result<Vec<_>>>()?;
    let classes = losses
        .iter()
        .map(|&l| 1 + edges.iter().filter(|&&e| l > e).count())
        .collect();
    let degenerate = sorted.first() == sorted.last();
    Ok(Breaks {
        edges,
        classes,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObservation {
    pub id: String,
    pub r: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScored {
    pub id: String,
    pub r: f64,
    pub d: f64,
    pub criticality: f64,
    pub rank: usize,
    pub flagged: bool,
}

/// Evaluates `D * R^-b` for each observation and flags `>= C`.
pub fn score_reference(rows: &[ReferenceObservation], b: f64, critical: f64) -> Result<Vec<ReferenceScored>> {
    if rows.is_empty() {
        return Err(Error::Empty("no reference observations".into()));
    }
    let mut out = par::try_map(rows, |o| {
        if !(o.r > 0.0) || !(o.d > 0.0) {
            return Err(Error::NonPositive(format!("id `{}`: R = {}, D = {}", o.id, o.r, o.d)));
        }
        let criticality = o.d * o.r.powf(-b);
        if !criticality.is_finite() {
            return Err(Error::Overflow(format!("criticality for `{}`", o.id)));
        }
        Ok(ReferenceScored {
            id: o.id.clone(),
            r: o.r,
            d: o.d,
            criticality,
            rank: 0,
            flagged: criticality >= critical,
        })
    })?;
    par::sort_by(&mut out, |a, b| {
        b.criticality.total_cmp(&a.criticality).then_with(|| a.id.cmp(&b.id))
    });
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(out)
}
