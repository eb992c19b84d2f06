//! Compiling tabulated outlier criteria into a single criticality equation.
//!
//! Two kinds of legacy tables are supported:
//!
//! * size-class tables, giving an `eps/B` ratio threshold per bracket of the
//!   base value `B`. Bracket midpoints `(B, eps)` trace a level curve of
//!   `eps * B^q`, so `ln eps = -q ln B + K` is fitted by OLS and the rule
//!   becomes `eps * B^q > C` with `C = e^K`;
//! * reference tables, giving a criterion `D` per bracket of a reference
//!   variable `R`. `ln D = a + b ln R` is fitted (or drawn through the two
//!   endpoints) and the rule becomes `D * R^-b >= C` with `C = e^a`.
//!
//! All logarithms are natural.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{parse_number, read_table};

/// Relative tolerance for comparing tabulated eps bounds.
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeClassRow {
    pub class_min: u64,
    /// Inclusive upper bound; `None` for an open-ended class ("50,000+").
    pub class_max: Option<u64>,
    /// The `eps/B` ratio at and above which a change is an outlier.
    pub ratio: f64,
    /// Published midpoints, when the table prints them. They take
    /// precedence over the computed ones in fitting.
    #[serde(default)]
    pub b_mid: Option<f64>,
    #[serde(default)]
    pub eps_mid: Option<f64>,
}

impl SizeClassRow {
    pub fn new(class_min: u64, class_max: Option<u64>, ratio: f64) -> Self {
        SizeClassRow {
            class_min,
            class_max,
            ratio,
            b_mid: None,
            eps_mid: None,
        }
    }

    /// Range of `eps` covered by the class, `[ratio*min, ratio*(max+1) - 1]`.
    /// The upper end is `None` for an open-ended class.
    pub fn eps_range(&self) -> (f64, Option<f64>) {
        let lo = self.ratio * self.class_min as f64;
        let hi = self.class_max.map(|m| self.ratio * (m as f64 + 1.0) - 1.0);
        (lo, hi)
    }

    /// Midpoints used for fitting: published ones if present, else computed.
    pub fn fitting_midpoints(&self) -> Result<(f64, f64)> {
        let (b, e) = compute_midpoints(self)?;
        Ok((self.b_mid.unwrap_or(b), self.eps_mid.unwrap_or(e)))
    }
}

/// Midpoints of the `B` and `eps` ranges under half-open integer classes.
pub fn compute_midpoints(row: &SizeClassRow) -> Result<(f64, f64)> {
    let max = row
        .class_max
        .ok_or_else(|| Error::Fit(format!("class {}+ is open-ended and has no midpoint", row.class_min)))?;
    let b_mid = (row.class_min as f64 + max as f64 + 1.0) / 2.0;
    let (lo, hi) = row.eps_range();
    let eps_mid = (lo + hi.expect("bounded class") + 1.0) / 2.0;
    Ok((b_mid, eps_mid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    /// Adjacent classes share the same minimum eps.
    EqualEpsMin,
    /// A class's whole eps range lies above both neighbours' ranges.
    NonMonotoneEps,
    /// Ratios fail to decrease as the class minimum increases.
    NonMonotoneRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Indices into the table as supplied.
    pub rows: Vec<usize>,
    pub message: String,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= BOUND_TOL * a.abs().max(b.abs()).max(1.0)
}

fn order_by_class(table: &[SizeClassRow]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by_key(|&i| table[i].class_min);
    order
}

fn check_size_classes(table: &[SizeClassRow]) -> Result<()> {
    let order = order_by_class(table);
    for w in order.windows(2) {
        let (a, b) = (&table[w[0]], &table[w[1]]);
        match a.class_max {
            None => {
                return Err(Error::Fit(format!(
                    "open-ended class {}+ is not the last class",
                    a.class_min
                )))
            }
            Some(max) if max >= b.class_min => {
                return Err(Error::Fit(format!(
                    "classes starting at {} and {} overlap",
                    a.class_min, b.class_min
                )))
            }
            _ => {}
        }
    }
    for r in table {
        if r.class_max.is_some_and(|m| m < r.class_min) {
            return Err(Error::Fit(format!("class {} has max below min", r.class_min)));
        }
        if !(r.ratio > 0.0) {
            return Err(Error::Fit(format!(
                "class {} has non-positive ratio {}",
                r.class_min, r.ratio
            )));
        }
    }
    Ok(())
}

/// Checks a size-class table against the loss-function axioms.
pub fn validate_size_class_table(table: &[SizeClassRow]) -> Vec<Violation> {
    let order = order_by_class(table);
    let mut out = Vec::new();
    if order.len() < 2 {
        return out;
    }
    let ranges: Vec<(f64, f64)> = order
        .iter()
        .map(|&i| {
            let (lo, hi) = table[i].eps_range();
            (lo, hi.unwrap_or(f64::INFINITY))
        })
        .collect();

    for k in 0..order.len() - 1 {
        let (i, j) = (order[k], order[k + 1]);
        if same(ranges[k].0, ranges[k + 1].0) {
            out.push(Violation {
                code: ViolationCode::EqualEpsMin,
                rows: vec![i, j],
                message: format!(
                    "ratios {} and {} share minimum eps {}",
                    table[i].ratio, table[j].ratio, ranges[k].0
                ),
            });
        }
    }

    for k in 1..order.len() - 1 {
        let (lo, hi) = ranges[k];
        let above = |n: usize| lo > ranges[n].0 && !same(lo, ranges[n].0) && hi > ranges[n].1 && !same(hi, ranges[n].1);
        if above(k - 1) && above(k + 1) {
            let i = order[k];
            out.push(Violation {
                code: ViolationCode::NonMonotoneEps,
                rows: vec![i],
                message: format!(
                    "ratio {} has eps range [{}, {}] above both adjacent classes",
                    table[i].ratio, lo, hi
                ),
            });
        }
    }

    for k in 0..order.len() - 1 {
        let (i, j) = (order[k], order[k + 1]);
        if table[j].ratio >= table[i].ratio {
            out.push(Violation {
                code: ViolationCode::NonMonotoneRatio,
                rows: vec![i, j],
                message: format!(
                    "ratio rises from {} to {} as the class minimum goes from {} to {}",
                    table[i].ratio, table[j].ratio, table[i].class_min, table[j].class_min
                ),
            });
        }
    }
    out
}

/// OLS line in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_abs_log_residual: f64,
    pub n: usize,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Fit(format!("log-log fit needs positive points, got ({x}, {y})")));
    }
    let n = points.len();
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    if n < 2 || lx.iter().all(|&v| v == lx[0]) {
        return Err(Error::Fit("log-log fit needs at least two distinct x values".into()));
    }
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut max_res: f64 = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
        max_res = max_res.max(r.abs());
    }
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
        max_abs_log_residual: max_res,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", content = "value", rename_all = "snake_case")]
pub enum Exclusion {
    /// Index into the table as supplied.
    Row(usize),
    /// Every row with this ratio (compared to 1e-9).
    Ratio(f64),
    ClassMin(u64),
}

impl Exclusion {
    /// Parses `ratio=0.40`, `row=3`, or `class_min=10000`.
    pub fn parse(s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::param(format!("exclusion `{s}` is not key=value")))?;
        let bad = || Error::param(format!("bad exclusion value in `{s}`"));
        match k.trim() {
            "ratio" => Ok(Exclusion::Ratio(v.trim().parse().map_err(|_| bad())?)),
            "row" => Ok(Exclusion::Row(v.trim().parse().map_err(|_| bad())?)),
            "class_min" => Ok(Exclusion::ClassMin(v.trim().parse().map_err(|_| bad())?)),
            other => Err(Error::param(format!("unknown exclusion key `{other}`"))),
        }
    }

    fn matches(&self, index: usize, row: &SizeClassRow) -> bool {
        match *self {
            Exclusion::Row(i) => i == index,
            Exclusion::Ratio(r) => same(r, row.ratio),
            Exclusion::ClassMin(m) => m == row.class_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    OpenEnded,
    UserExcluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub row: usize,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    SizeClass,
    Reference,
    Endpoint,
}

/// How the compiled rule compares against `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `value > C`
    Greater,
    /// `value >= C`
    AtLeast,
}

impl Comparison {
    pub fn holds(&self, value: f64, c: f64) -> bool {
        match self {
            Comparison::Greater => value > c,
            Comparison::AtLeast => value >= c,
        }
    }
}

/// A tabulated row that evaluates below `C` under the compiled rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMiss {
    pub row: usize,
    pub r: f64,
    pub d: f64,
    pub value: f64,
}

/// A compiled criticality equation.
///
/// For size-class fits, `exponent` is `q` and the rule is
/// `eps * B^q > C`. For reference fits it is `b` and the rule is
/// `D * R^-b >= C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mode: FitMode,
    pub slope: f64,
    /// `K` for size-class fits, `a` for reference fits; always `ln C`.
    pub intercept: f64,
    pub exponent: f64,
    pub critical: f64,
    pub comparison: Comparison,
    pub points_used: usize,
    pub excluded: Vec<ExcludedRow>,
    pub r_squared: Option<f64>,
    pub max_abs_log_residual: Option<f64>,
    pub marginal_misses: Vec<MarginalMiss>,
}

impl FitResult {
    /// Value of the compiled loss for a pair: `x * y^q` (size class, with
    /// `x = eps`, `y = B`) or `x * y^-b` (reference, `x = D`, `y = R`).
    pub fn criticality(&self, x: f64, y: f64) -> f64 {
        match self.mode {
            FitMode::SizeClass => x * y.powf(self.exponent),
            FitMode::Reference | FitMode::Endpoint => x * y.powf(-self.exponent),
        }
    }

    pub fn is_outlier(&self, x: f64, y: f64) -> bool {
        self.comparison.holds(self.criticality(x, y), self.critical)
    }
}

/// Fits `ln eps = -q ln B + K` over the bounded, non-excluded classes.
pub fn fit_size_class_table(table: &[SizeClassRow], exclusions: &[Exclusion]) -> Result<FitResult> {
    check_size_classes(table)?;
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    for (i, row) in table.iter().enumerate() {
        if row.class_max.is_none() {
            excluded.push(ExcludedRow {
                row: i,
                reason: ExclusionReason::OpenEnded,
            });
        } else if exclusions.iter().any(|e| e.matches(i, row)) {
            excluded.push(ExcludedRow {
                row: i,
                reason: ExclusionReason::UserExcluded,
            });
        } else {
            points.push(row.fitting_midpoints()?);
        }
    }
    if points.len() < 2 {
        return Err(Error::Fit(format!(
            "{} usable class(es) after exclusions; need at least 2",
            points.len()
        )));
    }
    let fit = fit_loglog(&points)?;
    Ok(FitResult {
        mode: FitMode::SizeClass,
        slope: fit.slope,
        intercept: fit.intercept,
        exponent: -fit.slope,
        critical: fit.intercept.exp(),
        comparison: Comparison::Greater,
        points_used: fit.n,
        excluded,
        r_squared: Some(fit.r_squared),
        max_abs_log_residual: Some(fit.max_abs_log_residual),
        marginal_misses: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCriteriaRow {
    pub r_min: f64,
    pub r_max: Option<f64>,
    pub d_value: f64,
}

fn check_reference_rows(table: &[ReferenceCriteriaRow]) -> Result<Vec<usize>> {
    if table.len() < 2 {
        return Err(Error::Fit(format!(
            "reference table has {} row(s); need at least 2",
            table.len()
        )));
    }
    for r in table {
        if !(r.r_min > 0.0) || !(r.d_value > 0.0) {
            return Err(Error::Fit(format!(
                "reference row ({}, {}) must be positive",
                r.r_min, r.d_value
            )));
        }
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[a].r_min.total_cmp(&table[b].r_min));
    Ok(order)
}

fn misses(table: &[ReferenceCriteriaRow], b: f64, c: f64) -> Vec<MarginalMiss> {
    table
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let value = r.d_value * r.r_min.powf(-b);
            (value < c).then_some(MarginalMiss {
                row: i,
                r: r.r_min,
                d: r.d_value,
                value,
            })
        })
        .collect()
}

/// Fits `ln D = a + b ln R` by OLS, with `R` taken as each class minimum.
pub fn fit_reference_table(table: &[ReferenceCriteriaRow]) -> Result<FitResult> {
    check_reference_rows(table)?;
    let points: Vec<(f64, f64)> = table.iter().map(|r| (r.r_min, r.d_value)).collect();
    let fit = fit_loglog(&points)?;
    let critical = fit.intercept.exp();
    Ok(FitResult {
        mode: FitMode::Reference,
        slope: fit.slope,
        intercept: fit.intercept,
        exponent: fit.slope,
        critical,
        comparison: Comparison::AtLeast,
        points_used: fit.n,
        excluded: Vec::new(),
        r_squared: Some(fit.r_squared),
        max_abs_log_residual: Some(fit.max_abs_log_residual),
        marginal_misses: misses(table, fit.slope, critical),
    })
}

/// Draws the log-log line through the smallest-R and largest-R rows.
///
/// Without an override, `C` is the smallest `D * R^-b` over all rows, so
/// every tabulated point satisfies the rule (the endpoints sit on the line).
/// With an override exponent, `C` is anchored at whichever endpoint has the
/// larger `D`; rows that then evaluate below `C` are reported as
/// marginal misses rather than hidden.
pub fn endpoint_criticality(table: &[ReferenceCriteriaRow], exponent_override: Option<f64>) -> Result<FitResult> {
    let order = check_reference_rows(table)?;
    let first = &table[order[0]];
    let last = &table[*order.last().expect("at least two rows")];
    if first.r_min == last.r_min {
        return Err(Error::Fit("endpoints share the same R".into()));
    }
    let slope = (last.d_value.ln() - first.d_value.ln()) / (last.r_min.ln() - first.r_min.ln());
    let b = exponent_override.unwrap_or(slope);
    if !b.is_finite() {
        return Err(Error::Fit(format!("exponent {b} is not finite")));
    }
    let critical = match exponent_override {
        None => table
            .iter()
            .map(|r| r.d_value * r.r_min.powf(-b))
            .fold(f64::INFINITY, f64::min),
        Some(_) => {
            let anchor = if first.d_value >= last.d_value { first } else { last };
            anchor.d_value * anchor.r_min.powf(-b)
        }
    };
    let (r_squared, max_res) = {
        let a = critical.ln();
        let mut max_res: f64 = 0.0;
        for r in table {
            max_res = max_res.max((r.d_value.ln() - (a + b * r.r_min.ln())).abs());
        }
        (None, Some(max_res))
    };
    Ok(FitResult {
        mode: FitMode::Endpoint,
        slope,
        intercept: critical.ln(),
        exponent: b,
        critical,
        comparison: Comparison::AtLeast,
        points_used: table.len(),
        excluded: Vec::new(),
        r_squared,
        max_abs_log_residual: max_res,
        marginal_misses: misses(table, b, critical),
    })
}

/// Parses an exponent written as a decimal or a fraction such as `-1/3`.
pub fn parse_exponent(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::param(format!("cannot parse exponent `{s}`"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            Ok(n / d)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

fn optional_cell(raw: &str) -> Option<&str> {
    let raw = raw.trim();
    (!raw.is_empty() && raw != "-" && raw != "+").then_some(raw)
}

/// Reads a size-class criteria CSV: `class_min, class_max, ratio` with an
/// empty `class_max` for the open-ended class, plus optional `b_mid` and
/// `eps_mid` columns holding published midpoints.
pub fn read_size_class_table<R: Read>(source: R) -> Result<Vec<SizeClassRow>> {
    let t = read_table(source)?;
    let (cmin, cmax, ratio) = (t.column("class_min")?, t.column("class_max")?, t.column("ratio")?);
    let (bm, em) = (t.optional_column("b_mid"), t.optional_column("eps_mid"));
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let int = |col: usize, name: &str| -> Result<Option<u64>> {
            optional_cell(rec.get(col).unwrap_or(""))
                .map(|raw| {
                    raw.parse::<u64>().map_err(|_| Error::Parse {
                        row: *line,
                        column: name.to_string(),
                        value: raw.to_string(),
                    })
                })
                .transpose()
        };
        let real = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            col.and_then(|c| optional_cell(rec.get(c).unwrap_or("")))
                .map(|raw| parse_number(*line, name, raw))
                .transpose()
        };
        let class_min = int(cmin, "class_min")?.ok_or_else(|| Error::InvalidRow {
            row: *line,
            message: "empty class_min".into(),
        })?;
        rows.push(SizeClassRow {
            class_min,
            class_max: int(cmax, "class_max")?,
            ratio: parse_number(*line, "ratio", rec.get(ratio).unwrap_or(""))?,
            b_mid: real(bm, "b_mid")?,
            eps_mid: real(em, "eps_mid")?,
        });
    }
    Ok(rows)
}

/// Reads a reference criteria CSV: `r_min, r_max, d_value` (`r_max` may be
/// empty for the open-ended class).
pub fn read_reference_table<R: Read>(source: R) -> Result<Vec<ReferenceCriteriaRow>> {
    let t = read_table(source)?;
    let (rmin, rmax, d) = (t.column("r_min")?, t.column("r_max")?, t.column("d_value")?);
    t.rows
        .iter()
        .map(|(line, rec)| {
            Ok(ReferenceCriteriaRow {
                r_min: parse_number(*line, "r_min", rec.get(rmin).unwrap_or(""))?,
                r_max: optional_cell(rec.get(rmax).unwrap_or(""))
                    .map(|raw| parse_number(*line, "r_max", raw))
                    .transpose()?,
                d_value: parse_number(*line, "d_value", rec.get(d).unwrap_or(""))?,
            })
        })
        .collect()
}
