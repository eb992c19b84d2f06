//! The `key=value` rule file written by `fit` and read by `flag`.
//!
//! ```text
//! # panelguard rule
//! kind=loss
//! p=1
//! q=-0.32675017251560123
//! time_invariant=false
//! rule=fixed
//! critical=222.6084951159268
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys not needed to rebuild the
//! rule (fit diagnostics and the like) are kept as extras and otherwise
//! ignored.

use std::fmt::Write as _;

use crate::criticality::CriticalRule;
use crate::error::{Error, Result};
use crate::fit::{ExclusionReason, FitMode, FitResult};
use crate::loss::LossParams;

#[derive(Debug, Clone, PartialEq)]
pub enum RuleSpec {
    /// Flag panel losses under `params` with `rule`.
    Loss {
        params: LossParams,
        time_invariant: bool,
        rule: CriticalRule,
    },
    /// Flag `D * R^-b >= critical`.
    Reference { b: f64, critical: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleFile {
    pub spec: RuleSpec,
    pub extras: Vec<(String, String)>,
}

fn mode_name(mode: FitMode) -> &'static str {
    match mode {
        FitMode::SizeClass => "size-class",
        FitMode::Reference => "reference",
        FitMode::Endpoint => "endpoint",
    }
}

fn reason_name(reason: ExclusionReason) -> &'static str {
    match reason {
        ExclusionReason::OpenEnded => "OPEN_ENDED",
        ExclusionReason::UserExcluded => "USER_EXCLUDED",
    }
}

impl RuleFile {
    pub fn new(spec: RuleSpec) -> Self {
        RuleFile {
            spec,
            extras: Vec::new(),
        }
    }

    /// Rule compiled from a criteria-table fit, with diagnostics as extras.
    pub fn from_fit(fit: &FitResult) -> Self {
        let spec = match fit.mode {
            FitMode::SizeClass => RuleSpec::Loss {
                params: LossParams {
                    p: 1.0,
                    q: fit.exponent,
                },
                time_invariant: false,
                rule: CriticalRule::Fixed { c: fit.critical },
            },
            FitMode::Reference | FitMode::Endpoint => RuleSpec::Reference {
                b: fit.exponent,
                critical: fit.critical,
            },
        };
        let mut extras = vec![
            ("fit_mode".to_string(), mode_name(fit.mode).to_string()),
            ("slope".to_string(), fit.slope.to_string()),
            ("intercept".to_string(), fit.intercept.to_string()),
            ("points_used".to_string(), fit.points_used.to_string()),
        ];
        if let Some(r2) = fit.r_squared {
            extras.push(("r_squared".into(), r2.to_string()));
        }
        if let Some(m) = fit.max_abs_log_residual {
            extras.push(("max_abs_log_residual".into(), m.to_string()));
        }
        if !fit.excluded.is_empty() {
            let ex: Vec<String> = fit
                .excluded
                .iter()
                .map(|e| format!("{}:{}", e.row, reason_name(e.reason)))
                .collect();
            extras.push(("excluded".into(), ex.join(";")));
        }
        if !fit.marginal_misses.is_empty() {
            let mm: Vec<String> = fit
                .marginal_misses
                .iter()
                .map(|m| format!("{}:{}", m.row, m.value))
                .collect();
            extras.push(("marginal_misses".into(), mm.join(";")));
        }
        RuleFile { spec, extras }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# panelguard rule\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        match &self.spec {
            RuleSpec::Loss {
                params,
                time_invariant,
                rule,
            } => {
                kv("kind", "loss".into());
                kv("p", params.p.to_string());
                kv("q", params.q.to_string());
                kv("time_invariant", time_invariant.to_string());
                match *rule {
                    CriticalRule::Fixed { c } => {
                        kv("rule", "fixed".into());
                        kv("critical", c.to_string());
                    }
                    CriticalRule::Quantile { alpha } => {
                        kv("rule", "quantile".into());
                        kv("alpha", alpha.to_string());
                    }
                    CriticalRule::TukeyFence { k } => {
                        kv("rule", "fence".into());
                        kv("k", k.to_string());
                    }
                    CriticalRule::SignedFixed { c_minus, c_plus } => {
                        kv("rule", "signed-fixed".into());
                        kv("c_minus", c_minus.to_string());
                        kv("c_plus", c_plus.to_string());
                    }
                    CriticalRule::SignedQuantile {
                        alpha_minus,
                        alpha_plus,
                    } => {
                        kv("rule", "signed-quantile".into());
                        kv("alpha_minus", alpha_minus.to_string());
                        kv("alpha_plus", alpha_plus.to_string());
                    }
                    CriticalRule::SignedFence { k } => {
                        kv("rule", "signed-fence".into());
                        kv("k", k.to_string());
                    }
                }
            }
            RuleSpec::Reference { b, critical } => {
                kv("kind", "reference".into());
                kv("b", b.to_string());
                kv("critical", critical.to_string());
                kv("comparison", "at_least".into());
            }
        }
        for (k, v) in &self.extras {
            kv(k, v.clone());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::RuleFile {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(_, pk, _)| *pk == k) {
                return Err(Error::RuleFile {
                    line: i + 1,
                    message: format!("duplicate key `{k}`"),
                });
            }
            pairs.push((i + 1, k, v.trim().to_string()));
        }
        let get = |key: &str| pairs.iter().find(|(_, k, _)| k == key);
        let need = |key: &str| -> Result<&(usize, String, String)> {
            get(key).ok_or_else(|| Error::RuleFile {
                line: 0,
                message: format!("missing key `{key}`"),
            })
        };
        let num = |key: &str| -> Result<f64> {
            let (line, _, v) = need(key)?;
            v.parse::<f64>().map_err(|_| Error::RuleFile {
                line: *line,
                message: format!("`{key}` is not a number: `{v}`"),
            })
        };
        let kind = need("kind")?;
        let (spec, used): (RuleSpec, &[&str]) = match kind.2.as_str() {
            "loss" => {
                let p = if get("p").is_some() { num("p")? } else { 1.0 };
                let params = LossParams::new(p, num("q")?)?;
                let time_invariant = match get("time_invariant") {
                    None => false,
                    Some((line, _, v)) => v.parse::<bool>().map_err(|_| Error::RuleFile {
                        line: *line,
                        message: format!("time_invariant must be true or false, got `{v}`"),
                    })?,
                };
                let rule_name = need("rule")?;
                let (rule, keys): (CriticalRule, &[&str]) = match rule_name.2.as_str() {
                    "fixed" => (CriticalRule::Fixed { c: num("critical")? }, &["critical"]),
                    "quantile" => (CriticalRule::Quantile { alpha: num("alpha")? }, &["alpha"]),
                    "fence" => (CriticalRule::TukeyFence { k: num("k")? }, &["k"]),
                    "signed-fixed" => (
                        CriticalRule::SignedFixed {
                            c_minus: num("c_minus")?,
                            c_plus: num("c_plus")?,
                        },
                        &["c_minus", "c_plus"],
                    ),
                    "signed-quantile" => (
                        CriticalRule::SignedQuantile {
                            alpha_minus: num("alpha_minus")?,
                            alpha_plus: num("alpha_plus")?,
                        },
                        &["alpha_minus", "alpha_plus"],
                    ),
                    "signed-fence" => (CriticalRule::SignedFence { k: num("k")? }, &["k"]),
                    other => {
                        return Err(Error::RuleFile {
                            line: rule_name.0,
                            message: format!("unknown rule `{other}`"),
                        })
                    }
                };
                rule.validate()?;
                let used: &[&str] = match keys {
                    ["critical"] => &["kind", "p", "q", "time_invariant", "rule", "critical"],
                    ["alpha"] => &["kind", "p", "q", "time_invariant", "rule", "alpha"],
                    ["k"] => &["kind", "p", "q", "time_invariant", "rule", "k"],
                    ["c_minus", "c_plus"] => &["kind", "p", "q", "time_invariant", "rule", "c_minus", "c_plus"],
                    _ => &["kind", "p", "q", "time_invariant", "rule", "alpha_minus", "alpha_plus"],
                };
                (
                    RuleSpec::Loss {
                        params,
                        time_invariant,
                        rule,
                    },
                    used,
                )
            }
            "reference" => {
                let critical = num("critical")?;
                if !(critical > 0.0) {
                    return Err(Error::RuleFile {
                        line: need("critical")?.0,
                        message: "critical must be positive".into(),
                    });
                }
                (
                    RuleSpec::Reference { b: num("b")?, critical },
                    &["kind", "b", "critical", "comparison"],
                )
            }
            other => {
                return Err(Error::RuleFile {
                    line: kind.0,
                    message: format!("unknown kind `{other}`"),
                })
            }
        };
        let extras = pairs
            .into_iter()
            .filter(|(_, k, _)| !used.contains(&k.as_str()))
            .map(|(_, k, v)| (k, v))
            .collect();
        Ok(RuleFile { spec, extras })
    }
}
