use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use log::{info, warn};
use panelguard::criticality::CriticalRule;
use panelguard::fit::{
    endpoint_criticality, fit_reference_table, fit_size_class_table, parse_exponent, read_reference_table,
    read_size_class_table, validate_size_class_table, Exclusion, FitResult, Violation,
};
use panelguard::loss::{bryan_initial_q, DEFAULT_Q, DEFAULT_Q_STEP};
use panelguard::nominal::{compare_sets, load_pairs};
use panelguard::output::{
    read_reference_observations, write_breaks, write_comparison, write_reference_scored, write_scored,
};
use panelguard::panel::{load_panel, ColumnBindings, Panel, PreprocessPolicy, TimeSource};
use panelguard::score::{quantile_breaks, score_panel, score_reference, ScoreOptions, Scoring, ThresholdSet};
use panelguard::{LossParams, RuleFile, RuleSpec, Thresholds};
use serde::Serialize;

use crate::args::{
    BreaksArgs, Cli, Command, CompareArgs, DataArgs, FitArgs, FitModeArg, FlagArgs, LossArgs, RuleArgs, ScoreArgs,
};
use crate::error::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(seed) = cli.seed {
        info!("seed {seed}");
    }
    match cli.command {
        Command::Score(a) => cmd_score(&a),
        Command::Flag(a) => cmd_flag(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Breaks(a) => cmd_breaks(&a),
        Command::Serve(a) => crate::serve::cmd_serve(&a),
    }
}

pub fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    let res = if path.as_os_str() == "-" {
        std::io::stdin().read_to_end(&mut buf).map(|_| ())
    } else {
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map(|_| ())
    };
    res.map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(buf)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

pub fn bindings(data: &DataArgs) -> CliResult<ColumnBindings> {
    let time = match (&data.time_col, data.time_spacing) {
        (None, _) => TimeSource::None,
        (Some(c), None) => TimeSource::Elapsed(c.clone()),
        (Some(c), Some(spacing)) => {
            if !(spacing > 0.0) || !spacing.is_finite() {
                return Err(CliError::usage(format!(
                    "--time-spacing must be positive, got {spacing}"
                )));
            }
            TimeSource::Labels {
                column: c.clone(),
                spacing,
            }
        }
    };
    Ok(ColumnBindings {
        id: data.id_col.clone(),
        base: data.base_col.clone(),
        value: data.value_col.clone(),
        time,
    })
}

/// Checks the data flags without reading any data.
pub fn data_options(data: &DataArgs) -> CliResult<(ColumnBindings, PreprocessPolicy)> {
    Ok((bindings(data)?, PreprocessPolicy::parse(&data.zero_policy)?))
}

pub fn load(input: &[u8], data: &DataArgs) -> CliResult<Panel> {
    let (bindings, policy) = data_options(data)?;
    let panel = load_panel(input, &bindings, &policy)?;
    log_panel(&panel);
    Ok(panel)
}

fn log_panel(panel: &Panel) {
    let r = &panel.report;
    info!(
        "read {} rows, {} units, {} observations",
        r.rows_read,
        panel.records.len(),
        panel.n_observations()
    );
    if r.recoded > 0 {
        info!(
            "recoded {} zero cells to {}",
            r.recoded,
            r.recode_value.unwrap_or(f64::NAN)
        );
    }
    if r.omitted > 0 {
        info!("omitted {} rows containing zeroes", r.omitted);
    }
    if let Some(m) = r.time_max {
        if m != 1.0 {
            info!("elapsed times rescaled by {m} so the latest t = 1");
        }
    }
    if let Some(q) = bryan_q(panel) {
        info!("advisory: starting q from the data range is {q:.4} (default {DEFAULT_Q}, step {DEFAULT_Q_STEP})");
    }
}

/// Range-based starting q, when the data has a positive range.
pub fn bryan_q(panel: &Panel) -> Option<f64> {
    panel.value_range().and_then(|r| bryan_initial_q(r, 10.0).ok())
}

pub fn loss_params(loss: &LossArgs) -> CliResult<LossParams> {
    Ok(LossParams::new(loss.p.unwrap_or(1.0), loss.q.unwrap_or(DEFAULT_Q))?)
}

fn check_time(time_invariant: bool, data: &DataArgs) -> CliResult<()> {
    if time_invariant && data.time_col.is_none() {
        return Err(CliError::usage("--time-invariant needs --time-col"));
    }
    Ok(())
}

fn pair(s: &str, flag: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::usage(format!("{flag} expects two comma-separated numbers, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

/// The rule selected by the flag set, if any.
pub fn critical_rule(r: &RuleArgs) -> CliResult<Option<CriticalRule>> {
    let rule = if let Some(c) = r.critical {
        Some(CriticalRule::Fixed { c })
    } else if let Some(alpha) = r.quantile {
        Some(CriticalRule::Quantile { alpha })
    } else if let Some(k) = r.fence {
        Some(CriticalRule::TukeyFence { k })
    } else if let Some(s) = &r.signed_bounds {
        let (c_minus, c_plus) = pair(s, "--signed-bounds")?;
        Some(CriticalRule::SignedFixed { c_minus, c_plus })
    } else if let Some(s) = &r.signed_quantile {
        let (alpha_minus, alpha_plus) = pair(s, "--signed-quantile")?;
        Some(CriticalRule::SignedQuantile {
            alpha_minus,
            alpha_plus,
        })
    } else {
        r.signed_fence.map(|k| CriticalRule::SignedFence { k })
    };
    match &rule {
        Some(rule) if rule.is_signed() && !r.signed => {
            return Err(CliError::usage("signed rules need --signed"));
        }
        Some(rule) if !rule.is_signed() && r.signed => {
            return Err(CliError::usage(
                "--signed needs --signed-bounds, --signed-quantile or --signed-fence",
            ));
        }
        None if r.signed => return Err(CliError::usage("--signed needs a signed rule")),
        Some(rule) => rule.validate()?,
        None => {}
    }
    Ok(rule)
}

fn score_with(panel: &Panel, options: &ScoreOptions) -> CliResult<Scoring> {
    let scoring = score_panel(panel, options)?;
    for w in &scoring.warnings {
        warn!("{w}");
    }
    Ok(scoring)
}

fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    let options = ScoreOptions {
        params: loss_params(&a.loss)?,
        time_invariant: a.loss.time_invariant,
        ..Default::default()
    };
    check_time(options.time_invariant, &a.data)?;
    data_options(&a.data)?;
    let panel = load(&read_input(&a.io.input)?, &a.data)?;
    let scoring = score_with(&panel, &options)?;
    let mut buf = Vec::new();
    write_scored(&mut buf, &panel, &scoring)?;
    write_output(a.io.output.as_deref(), &buf)
}

fn describe(th: &Thresholds) -> String {
    match th {
        Thresholds::Upper { c } => format!("loss > {c}"),
        Thresholds::Band { c_minus, c_plus } => format!("signed loss < {c_minus} or > {c_plus}"),
    }
}

fn log_thresholds(set: &ThresholdSet) {
    match set {
        ThresholdSet::Pooled { thresholds } => info!("threshold: {}", describe(thresholds)),
        ThresholdSet::PerSlice { slices } => {
            for (label, th) in slices {
                info!("threshold [{label}]: {}", describe(th));
            }
        }
    }
}

fn cmd_flag(a: &FlagArgs) -> CliResult<()> {
    let file = match &a.rule_file {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?).map_err(|_| CliError::usage("rule file is not UTF-8"))?;
            Some(RuleFile::parse(&text)?)
        }
        None => None,
    };

    let (params, time_invariant, rule) = match file.map(|f| f.spec) {
        Some(RuleSpec::Reference { b, critical }) => return flag_reference(a, b, critical),
        Some(RuleSpec::Loss {
            params,
            time_invariant,
            rule,
        }) => {
            if a.loss.q.is_some() || a.loss.p.is_some() {
                return Err(CliError::usage("--q/--p conflict with the exponents in the rule file"));
            }
            if a.rule.signed && !rule.is_signed() {
                return Err(CliError::usage(
                    "--signed given but the rule file holds an unsigned rule",
                ));
            }
            (params, time_invariant || a.loss.time_invariant, rule)
        }
        None => {
            let rule = critical_rule(&a.rule)?.ok_or_else(|| {
                CliError::usage("flag needs a rule: --critical, --quantile, --fence, --signed-* or --rule FILE")
            })?;
            (loss_params(&a.loss)?, a.loss.time_invariant, rule)
        }
    };
    if a.r_col.is_some() || a.d_col.is_some() {
        return Err(CliError::usage("--r-col/--d-col only apply to reference rule files"));
    }
    check_time(time_invariant, &a.data)?;
    data_options(&a.data)?;

    let panel = load(&read_input(&a.io.input)?, &a.data)?;
    let options = ScoreOptions {
        params,
        time_invariant,
        rule: Some(rule),
        per_slice: a.rule.per_slice,
    };
    let scoring = score_with(&panel, &options)?;
    if let Some(th) = &scoring.thresholds {
        log_thresholds(th);
    }
    info!("flagged {} of {}", scoring.flagged_count(), scoring.records.len());
    let mut buf = Vec::new();
    write_scored(&mut buf, &panel, &scoring)?;
    write_output(a.io.output.as_deref(), &buf)
}

fn flag_reference(a: &FlagArgs, b: f64, critical: f64) -> CliResult<()> {
    let (Some(r_col), Some(d_col)) = (&a.r_col, &a.d_col) else {
        return Err(CliError::usage("a reference rule needs --r-col and --d-col"));
    };
    if a.loss.q.is_some() || a.loss.p.is_some() || a.loss.time_invariant || a.rule.per_slice || a.rule.signed {
        return Err(CliError::usage("loss options do not apply to a reference rule"));
    }
    let input = read_input(&a.io.input)?;
    let rows = read_reference_observations(input.as_slice(), &a.data.id_col, r_col, d_col)?;
    let scored = score_reference(&rows, b, critical)?;
    info!("threshold: D * R^{} >= {critical}", -b);
    info!(
        "flagged {} of {}",
        scored.iter().filter(|r| r.flagged).count(),
        scored.len()
    );
    let mut buf = Vec::new();
    write_reference_scored(&mut buf, &scored)?;
    write_output(a.io.output.as_deref(), &buf)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub fit: FitResult,
    pub violations: Vec<Violation>,
}

/// Runs a fit from CSV text; shared with the serve API.
pub fn fit_table(
    input: &[u8],
    mode: FitModeArg,
    exclude: &[String],
    endpoint: bool,
    round_b: Option<&str>,
) -> CliResult<FitReport> {
    match mode {
        FitModeArg::SizeClass => {
            if endpoint || round_b.is_some() {
                return Err(CliError::usage("--endpoint and --round-b apply to reference fits only"));
            }
            let exclusions = exclude
                .iter()
                .map(|e| Exclusion::parse(e))
                .collect::<Result<Vec<_>, _>>()?;
            let table = read_size_class_table(input)?;
            fit_size_classes(&table, &exclusions)
        }
        FitModeArg::Reference => {
            if !exclude.is_empty() {
                return Err(CliError::usage("--exclude applies to size-class fits only"));
            }
            let table = read_reference_table(input)?;
            fit_reference(&table, endpoint, round_b)
        }
    }
}

pub fn fit_size_classes(table: &[panelguard::SizeClassRow], exclusions: &[Exclusion]) -> CliResult<FitReport> {
    let violations = validate_size_class_table(table);
    let fit = fit_size_class_table(table, exclusions)?;
    Ok(FitReport { fit, violations })
}

pub fn fit_reference(
    table: &[panelguard::ReferenceCriteriaRow],
    endpoint: bool,
    round_b: Option<&str>,
) -> CliResult<FitReport> {
    let fit = if endpoint {
        let b = round_b.map(parse_exponent).transpose()?;
        endpoint_criticality(table, b)?
    } else {
        if round_b.is_some() {
            return Err(CliError::usage("--round-b needs --endpoint"));
        }
        fit_reference_table(table)?
    };
    Ok(FitReport {
        fit,
        violations: Vec::new(),
    })
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let input = read_input(&a.io.input)?;
    let report = fit_table(&input, a.mode, &a.exclude, a.endpoint, a.round_b.as_deref())?;
    for v in &report.violations {
        warn!("{:?}: {}", v.code, v.message);
    }
    let f = &report.fit;
    info!(
        "slope {}, intercept {}, exponent {}, C = {}",
        f.slope, f.intercept, f.exponent, f.critical
    );
    if let Some(r2) = f.r_squared {
        info!(
            "r^2 {r2}, max |log residual| {}",
            f.max_abs_log_residual.unwrap_or(f64::NAN)
        );
    }
    for e in &f.excluded {
        info!("excluded row {} ({:?})", e.row, e.reason);
    }
    for m in &f.marginal_misses {
        warn!(
            "marginal miss: row {} (R = {}, D = {}) evaluates to {} < C",
            m.row, m.r, m.d, m.value
        );
    }
    if let Some(path) = &a.rule_out {
        let text = RuleFile::from_fit(f).to_text();
        fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        info!("rule written to {}", path.display());
    }
    let mut json = serde_json::to_vec_pretty(&report).expect("fit report serializes");
    json.push(b'\n');
    write_output(a.io.output.as_deref(), &json)
}

fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    let policy = PreprocessPolicy::parse(&a.zero_policy)?;
    if a.rule.per_slice {
        return Err(CliError::usage("--per-slice does not apply to compare"));
    }
    let q = a.q.unwrap_or(DEFAULT_Q);
    let params = LossParams::with_q(q)?;
    let rule = critical_rule(&a.rule)?;
    let input = read_input(&a.io.input)?;
    let (pairs, report) = load_pairs(input.as_slice(), (&a.id_col, &a.b_col, &a.f_col), &policy)?;
    info!("read {} rows, compared {}", report.rows_read, pairs.len());
    if report.recoded > 0 {
        info!(
            "recoded {} zero cells to {}",
            report.recoded,
            report.recode_value.unwrap_or(f64::NAN)
        );
    }
    if let Some(w) = params.q_warning() {
        warn!("{w}");
    }
    let mut cmp = compare_sets(&pairs, q)?;
    if let Some(rule) = rule {
        cmp.apply_rule(&rule)?;
        if let (Some(fb), Some(bf)) = (&cmp.f_vs_b_thresholds, &cmp.b_vs_f_thresholds) {
            info!("threshold F vs B: {}; B vs F: {}", describe(fb), describe(bf));
        }
        info!(
            "flagged F vs B {}, B vs F {}, either {}",
            cmp.rows.iter().filter(|r| r.f_vs_b.flagged).count(),
            cmp.rows.iter().filter(|r| r.b_vs_f.flagged).count(),
            cmp.rows.iter().filter(|r| r.flagged_either()).count()
        );
    }
    let mut buf = Vec::new();
    write_comparison(&mut buf, &cmp)?;
    write_output(a.io.output.as_deref(), &buf)
}

fn cmd_breaks(a: &BreaksArgs) -> CliResult<()> {
    if a.k < 2 {
        return Err(CliError::usage(format!("--k must be at least 2, got {}", a.k)));
    }
    let options = ScoreOptions {
        params: loss_params(&a.loss)?,
        time_invariant: a.loss.time_invariant,
        ..Default::default()
    };
    check_time(options.time_invariant, &a.data)?;
    data_options(&a.data)?;
    let panel = load(&read_input(&a.io.input)?, &a.data)?;
    let scoring = score_with(&panel, &options)?;
    let losses: Vec<f64> = scoring.records.iter().map(|r| r.loss).collect();
    let breaks = quantile_breaks(&losses, a.k)?;
    if breaks.degenerate {
        warn!("all losses are equal; every record is in class 1");
    } else {
        let edges: Vec<String> = breaks.edges.iter().map(f64::to_string).collect();
        info!("class edges: {}", edges.join(", "));
    }
    let mut buf = Vec::new();
    write_breaks(&mut buf, &panel, &scoring, &breaks)?;
    write_output(a.io.output.as_deref(), &buf)
}
