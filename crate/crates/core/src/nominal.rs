//! Comparing two estimate sets for the same units and date.
//!
//! When `B` and `F` are both unbiased estimates of a true value `A` with
//! variance proportional to `A`, `|F - B|` grows like `B^(1/2)`, so the
//! natural loss is `|F - B| * B^(-1/2)`. Neither set is privileged, so both
//! directions are scored.

use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::criticality::{derive_critical, rank_descending, CriticalRule, Thresholds};
use crate::error::{Error, Result};
use crate::loss::{eval_signed, eval_unsigned, LossParams};
use crate::panel::{parse_nonnegative, read_table, PreprocessPolicy, PreprocessReport, ZeroFilter};

/// Base exponent matched to variance proportional to the mean.
pub const NOMINAL_Q: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalPair {
    pub id: String,
    pub b_value: f64,
    pub f_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub loss: f64,
    pub signed_loss: f64,
    pub rank: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalScored {
    pub id: String,
    pub b_value: f64,
    pub f_value: f64,
    /// `F` scored against base `B`.
    pub f_vs_b: DirectionScore,
    /// `B` scored against base `F`.
    pub b_vs_f: DirectionScore,
}

impl NominalScored {
    pub fn flagged_either(&self) -> bool {
        self.f_vs_b.flagged || self.b_vs_f.flagged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalComparison {
    pub q: f64,
    pub rows: Vec<NominalScored>,
    pub f_vs_b_thresholds: Option<Thresholds>,
    pub b_vs_f_thresholds: Option<Thresholds>,
}

fn score_direction(pairs: &[NominalPair], q: f64, forward: bool) -> Result<Vec<DirectionScore>> {
    let params = LossParams::with_q(q)?;
    let mut losses = Vec::with_capacity(pairs.len());
    let mut signed = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (f, b) = if forward {
            (p.f_value, p.b_value)
        } else {
            (p.b_value, p.f_value)
        };
        losses.push(eval_unsigned(f, b, params)?);
        signed.push(eval_signed(f, b, q)?);
    }
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    let ranks = rank_descending(&losses, &ids)?;
    Ok((0..pairs.len())
        .map(|i| DirectionScore {
            loss: losses[i],
            signed_loss: signed[i],
            rank: ranks[i],
            flagged: false,
        })
        .collect())
}

/// Scores both directions and ranks each independently.
///
/// No critical value is applied; see [`NominalComparison::apply_rule`].
pub fn compare_sets(pairs: &[NominalPair], q: f64) -> Result<NominalComparison> {
    if pairs.is_empty() {
        return Err(Error::Empty("no pairs to compare".into()));
    }
    let fwd = score_direction(pairs, q, true)?;
    let bwd = score_direction(pairs, q, false)?;
    let rows = pairs
        .iter()
        .zip(fwd.into_iter().zip(bwd))
        .map(|(p, (f_vs_b, b_vs_f))| NominalScored {
            id: p.id.clone(),
            b_value: p.b_value,
            f_value: p.f_value,
            f_vs_b,
            b_vs_f,
        })
        .collect();
    Ok(NominalComparison {
        q,
        rows,
        f_vs_b_thresholds: None,
        b_vs_f_thresholds: None,
    })
}

impl NominalComparison {
    /// Derives thresholds for each direction separately and sets the flags.
    pub fn apply_rule(&mut self, rule: &CriticalRule) -> Result<()> {
        let pick = |d: &DirectionScore| if rule.is_signed() { d.signed_loss } else { d.loss };
        let fwd: Vec<f64> = self.rows.iter().map(|r| pick(&r.f_vs_b)).collect();
        let bwd: Vec<f64> = self.rows.iter().map(|r| pick(&r.b_vs_f)).collect();
        let tf = derive_critical(&fwd, rule)?;
        let tb = derive_critical(&bwd, rule)?;
        for r in &mut self.rows {
            r.f_vs_b.flagged = tf.exceeds(r.f_vs_b.loss, r.f_vs_b.signed_loss);
            r.b_vs_f.flagged = tb.exceeds(r.b_vs_f.loss, r.b_vs_f.signed_loss);
        }
        self.f_vs_b_thresholds = Some(tf);
        self.b_vs_f_thresholds = Some(tb);
        Ok(())
    }

    /// Rows ordered by the F-vs-B rank.
    pub fn by_forward_rank(&self) -> Vec<&NominalScored> {
        let mut v: Vec<&NominalScored> = self.rows.iter().collect();
        v.sort_by_key(|r| r.f_vs_b.rank);
        v
    }
}

/// Reads `id, b_value, f_value` rows, applying the zero policy to both
/// value columns.
pub fn load_pairs<R: Read>(
    source: R,
    columns: (&str, &str, &str),
    policy: &PreprocessPolicy,
) -> Result<(Vec<NominalPair>, PreprocessReport)> {
    let t = read_table(source)?;
    let (ic, bc, fc) = (t.column(columns.0)?, t.column(columns.1)?, t.column(columns.2)?);
    let mut raw = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let id = rec.get(ic).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::InvalidRow {
                row: *line,
                message: "empty id".into(),
            });
        }
        let b = parse_nonnegative(*line, columns.1, rec.get(bc).unwrap_or(""))?;
        let f = parse_nonnegative(*line, columns.2, rec.get(fc).unwrap_or(""))?;
        raw.push((*line, id, b, f));
    }
    let cells: Vec<f64> = raw.iter().flat_map(|r| [r.2, r.3]).collect();
    let filter = ZeroFilter::new(policy, &cells)?;
    let mut report = PreprocessReport {
        rows_read: raw.len(),
        recode_value: filter.recode_value(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(raw.len());
    let mut seen = std::collections::HashSet::new();
    for (line, id, b, f) in raw {
        if let Some([b_value, f_value]) = filter.apply([b, f], &mut report) {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidRow {
                    row: line,
                    message: format!("duplicate id `{id}`"),
                });
            }
            pairs.push(NominalPair { id, b_value, f_value });
        }
    }
    Ok((pairs, report))
}

/// Generating model for two estimate sets of the same true values:
/// `E B = E F = A`, `Var B = Var F = sigma2 * A`, `corr(B, F) = rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalComparisonModel {
    pub true_values: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
}

impl NominalComparisonModel {
    pub fn validate(&self) -> Result<()> {
        if self.true_values.is_empty() {
            return Err(Error::Empty("model has no true values".into()));
        }
        if let Some(a) = self.true_values.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::param(format!("true value {a} is not positive")));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::param(format!(
                "sigma^2 must be non-negative, got {}",
                self.sigma2
            )));
        }
        if !(-1.0..1.0).contains(&self.rho) {
            return Err(Error::param(format!("rho must lie in [-1, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

const MAX_RESAMPLE: usize = 10_000;

/// Draws one `(B, F)` pair per true value from correlated normal noise,
/// redrawing any pair with a non-positive component. Deterministic in `seed`.
pub fn simulate_nominal(model: &NominalComparisonModel, seed: u64) -> Result<Vec<NominalPair>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orth = (1.0 - model.rho * model.rho).sqrt();
    let mut out = Vec::with_capacity(model.true_values.len());
    for (i, &a) in model.true_values.iter().enumerate() {
        let sd = (model.sigma2 * a).sqrt();
        let mut tries = 0;
        let (b, f) = loop {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let b = a + sd * z1;
            let f = a + sd * (model.rho * z1 + orth * z2);
            if b > 0.0 && f > 0.0 {
                break (b, f);
            }
            tries += 1;
            if tries >= MAX_RESAMPLE {
                return Err(Error::param(format!(
                    "true value {a} is too small for sigma^2 = {}: no positive draw",
                    model.sigma2
                )));
            }
        };
        out.push(NominalPair {
            id: format!("u{i:06}"),
            b_value: b,
            f_value: f,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, b: f64, f: f64) -> NominalPair {
        NominalPair {
            id: id.into(),
            b_value: b,
            f_value: f,
        }
    }

    #[test]
    fn identical_sets_score_zero() {
        let pairs = vec![pair("a", 10.0, 10.0), pair("b", 3.0, 3.0)];
        let c = compare_sets(&pairs, NOMINAL_Q).unwrap();
        for r in &c.rows {
            assert_eq!(r.f_vs_b.loss, 0.0);
            assert_eq!(r.b_vs_f.loss, 0.0);
            assert_eq!(r.f_vs_b.signed_loss, 0.0);
        }
    }

    #[test]
    fn directions_are_asymmetric() {
        let c = compare_sets(&[pair("x", 100.0, 121.0)], NOMINAL_Q).unwrap();
        let r = &c.rows[0];
        assert!((r.f_vs_b.loss - 2.1).abs() < 1e-12);
        assert!((r.b_vs_f.loss - 21.0 / 11.0).abs() < 1e-12);
        assert!((r.f_vs_b.signed_loss - 2.1).abs() < 1e-12);
        assert!((r.b_vs_f.signed_loss + 21.0 / 11.0).abs() < 1e-12);
        assert_eq!((r.f_vs_b.rank, r.b_vs_f.rank), (1, 1));
    }

    #[test]
    fn matches_generic_loss() {
        let pairs = vec![pair("a", 10.0, 14.0), pair("b", 1000.0, 1100.0), pair("c", 50.0, 20.0)];
        let c = compare_sets(&pairs, NOMINAL_Q).unwrap();
        for (p, r) in pairs.iter().zip(&c.rows) {
            let l = eval_unsigned(p.f_value, p.b_value, LossParams::with_q(-0.5).unwrap()).unwrap();
            assert_eq!(r.f_vs_b.loss, l);
        }
    }

    #[test]
    fn empty_and_nonpositive_rejected() {
        assert!(compare_sets(&[], NOMINAL_Q).is_err());
        assert!(compare_sets(&[pair("a", 0.0, 1.0)], NOMINAL_Q).is_err());
    }

    #[test]
    fn rule_flags_each_direction() {
        let pairs = vec![
            pair("a", 100.0, 100.0),
            pair("b", 100.0, 200.0),
            pair("c", 100.0, 101.0),
        ];
        let mut c = compare_sets(&pairs, NOMINAL_Q).unwrap();
        c.apply_rule(&CriticalRule::Fixed { c: 5.0 }).unwrap();
        assert!(c.rows[1].f_vs_b.flagged);
        assert!(c.rows[1].b_vs_f.flagged);
        assert!(!c.rows[2].flagged_either());
    }

    #[test]
    fn zero_noise_is_exact() {
        let m = NominalComparisonModel {
            true_values: vec![5.0, 50.0, 500.0],
            sigma2: 0.0,
            rho: 0.0,
        };
        let sim = simulate_nominal(&m, 7).unwrap();
        for (p, a) in sim.iter().zip(&m.true_values) {
            assert_eq!((p.b_value, p.f_value), (*a, *a));
        }
        let c = compare_sets(&sim, NOMINAL_Q).unwrap();
        assert!(c.rows.iter().all(|r| r.f_vs_b.loss == 0.0 && r.b_vs_f.loss == 0.0));
    }

    #[test]
    fn rho_one_rejected() {
        let m = NominalComparisonModel {
            true_values: vec![5.0],
            sigma2: 1.0,
            rho: 1.0,
        };
        assert!(simulate_nominal(&m, 1).is_err());
    }

    #[test]
    fn simulation_is_seeded() {
        let m = NominalComparisonModel {
            true_values: vec![100.0; 20],
            sigma2: 1.0,
            rho: 0.3,
        };
        assert_eq!(simulate_nominal(&m, 9).unwrap(), simulate_nominal(&m, 9).unwrap());
        assert_ne!(simulate_nominal(&m, 9).unwrap(), simulate_nominal(&m, 10).unwrap());
    }

    #[test]
    fn loads_pairs() {
        let csv = "id,b_value,f_value\na,10,0\nb,4,5\n";
        let (p, rep) = load_pairs(
            csv.as_bytes(),
            ("id", "b_value", "f_value"),
            &PreprocessPolicy::default(),
        )
        .unwrap();
        assert_eq!(p[0].f_value, 2.0);
        assert_eq!(rep.recoded, 1);
    }
}
