//! Critical values, ranking and flagging.
//!
//! A pair is an outlier when its loss strictly exceeds the critical value
//! `C`. For signed losses the band is `(C-, C+)` and anything strictly
//! outside it is flagged. `C` may be fixed, or derived from the losses
//! themselves as an empirical quantile or a Tukey fence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
///
/// The k-th order statistic (0-based) sits at probability `k / (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], alpha: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("quantile of no values".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("quantile level must lie in [0, 1], got {alpha}")));
    }
    let h = (sorted.len() - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Ok(sorted[lo.min(sorted.len() - 1)]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], alpha: f64) -> Result<f64> {
    quantile_sorted(&sorted_copy(values), alpha)
}

/// First and third quartiles.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    let s = sorted_copy(values);
    Ok((quantile_sorted(&s, 0.25)?, quantile_sorted(&s, 0.75)?))
}

/// How the critical value (or signed band) is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticalRule {
    Fixed { c: f64 },
    Quantile { alpha: f64 },
    TukeyFence { k: f64 },
    SignedFixed { c_minus: f64, c_plus: f64 },
    SignedQuantile { alpha_minus: f64, alpha_plus: f64 },
    SignedFence { k: f64 },
}

impl CriticalRule {
    pub fn is_signed(&self) -> bool {
        matches!(
            self,
            CriticalRule::SignedFixed { .. } | CriticalRule::SignedQuantile { .. } | CriticalRule::SignedFence { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |a: f64| a > 0.0 && a < 1.0;
        match *self {
            CriticalRule::Fixed { c } if !(c > 0.0) || !c.is_finite() => {
                Err(Error::param(format!("critical value must be positive, got {c}")))
            }
            CriticalRule::Quantile { alpha } if !open_unit(alpha) => {
                Err(Error::param(format!("quantile level must lie in (0, 1), got {alpha}")))
            }
            CriticalRule::TukeyFence { k } | CriticalRule::SignedFence { k } if !(k > 0.0) || !k.is_finite() => {
                Err(Error::param(format!("fence multiplier must be positive, got {k}")))
            }
            CriticalRule::SignedFixed { c_minus, c_plus } if !(c_minus < c_plus) => Err(Error::param(format!(
                "signed bounds need C- < C+, got ({c_minus}, {c_plus})"
            ))),
            CriticalRule::SignedQuantile {
                alpha_minus,
                alpha_plus,
            } => {
                if !open_unit(alpha_minus) || !open_unit(alpha_plus) {
                    Err(Error::param("signed quantile levels must lie in (0, 1)"))
                } else if alpha_minus >= alpha_plus {
                    Err(Error::param(format!(
                        "signed quantile levels need alpha- < alpha+, got ({alpha_minus}, {alpha_plus})"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A resolved threshold: one-sided for unsigned losses, a band for signed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Thresholds {
    Upper { c: f64 },
    Band { c_minus: f64, c_plus: f64 },
}

impl Thresholds {
    /// Exceedance test. `Upper` looks at the unsigned loss, `Band` at the
    /// signed loss. Both comparisons are strict.
    pub fn exceeds(&self, loss: f64, signed_loss: f64) -> bool {
        match *self {
            Thresholds::Upper { c } => loss > c,
            Thresholds::Band { c_minus, c_plus } => signed_loss < c_minus || signed_loss > c_plus,
        }
    }
}

/// Resolves a rule against data. Unsigned rules read `losses`; signed
/// rules expect signed losses.
pub fn derive_critical(losses: &[f64], rule: &CriticalRule) -> Result<Thresholds> {
    rule.validate()?;
    if losses.is_empty() {
        return Err(Error::Empty("cannot derive a critical value from no losses".into()));
    }
    let s = sorted_copy(losses);
    Ok(match *rule {
        CriticalRule::Fixed { c } => Thresholds::Upper { c },
        CriticalRule::Quantile { alpha } => Thresholds::Upper {
            c: quantile_sorted(&s, alpha)?,
        },
        CriticalRule::TukeyFence { k } => {
            let (q1, q3) = (quantile_sorted(&s, 0.25)?, quantile_sorted(&s, 0.75)?);
            Thresholds::Upper { c: q3 + k * (q3 - q1) }
        }
        CriticalRule::SignedFixed { c_minus, c_plus } => Thresholds::Band { c_minus, c_plus },
        CriticalRule::SignedQuantile {
            alpha_minus,
            alpha_plus,
        } => Thresholds::Band {
            c_minus: quantile_sorted(&s, alpha_minus)?,
            c_plus: quantile_sorted(&s, alpha_plus)?,
        },
        CriticalRule::SignedFence { k } => {
            let (q1, q3) = (quantile_sorted(&s, 0.25)?, quantile_sorted(&s, 0.75)?);
            let iqr = q3 - q1;
            Thresholds::Band {
                c_minus: q1 - k * iqr,
                c_plus: q3 + k * iqr,
            }
        }
    })
}

/// Descending ranks (1 = largest loss). Ties go to the smaller key.
pub fn rank_descending<K: Ord>(losses: &[f64], keys: &[K]) -> Result<Vec<usize>> {
    if losses.len() != keys.len() {
        return Err(Error::param("losses and keys differ in length"));
    }
    if losses.is_empty() {
        return Err(Error::Empty("nothing to rank".into()));
    }
    let order = descending_order(losses, keys);
    let mut ranks = vec![0; losses.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(ranks)
}

/// Indices sorted by descending loss, ties by ascending key.
pub fn descending_order<K: Ord>(losses: &[f64], keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| match losses[b].total_cmp(&losses[a]) {
        Ordering::Equal => keys[a].cmp(&keys[b]),
        o => o,
    });
    order
}

pub fn flag_unsigned(losses: &[f64], c: f64) -> Vec<bool> {
    losses.iter().map(|&l| l > c).collect()
}

pub fn flag_signed(signed_losses: &[f64], c_minus: f64, c_plus: f64) -> Result<Vec<bool>> {
    if !(c_minus < c_plus) {
        return Err(Error::param(format!(
            "signed bounds need C- < C+, got ({c_minus}, {c_plus})"
        )));
    }
    Ok(signed_losses.iter().map(|&s| s < c_minus || s > c_plus).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tukey_fence_five_points() {
        let losses = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quartiles(&losses).unwrap(), (2.0, 4.0));
        let t = derive_critical(&losses, &CriticalRule::TukeyFence { k: 1.5 }).unwrap();
        assert_eq!(t, Thresholds::Upper { c: 7.0 });
        assert_eq!(flag_unsigned(&losses, 7.0), vec![false, false, false, false, true]);
    }

    #[test]
    fn constant_losses_zero_iqr() {
        let losses = [5.0; 6];
        for k in [0.5, 1.5, 3.0] {
            let t = derive_critical(&losses, &CriticalRule::TukeyFence { k }).unwrap();
            assert_eq!(t, Thresholds::Upper { c: 5.0 });
            assert!(!losses.iter().any(|&l| t.exceeds(l, l)));
        }
    }

    #[test]
    fn signed_fence() {
        let s = [-10.0, -1.0, 0.0, 1.0, 10.0];
        let t = derive_critical(&s, &CriticalRule::SignedFence { k: 1.5 }).unwrap();
        assert_eq!(
            t,
            Thresholds::Band {
                c_minus: -4.0,
                c_plus: 4.0
            }
        );
        let flags: Vec<bool> = s.iter().map(|&x| t.exceeds(x.abs(), x)).collect();
        assert_eq!(flags, vec![true, false, false, false, true]);
    }

    #[test]
    fn derive_errors() {
        assert!(derive_critical(&[], &CriticalRule::Fixed { c: 1.0 }).is_err());
        assert!(derive_critical(&[1.0], &CriticalRule::Quantile { alpha: 1.0 }).is_err());
        assert!(derive_critical(&[1.0], &CriticalRule::Quantile { alpha: 0.0 }).is_err());
        assert!(derive_critical(
            &[1.0],
            &CriticalRule::SignedQuantile {
                alpha_minus: 0.9,
                alpha_plus: 0.1
            }
        )
        .is_err());
        assert!(derive_critical(
            &[1.0],
            &CriticalRule::SignedFixed {
                c_minus: 3.0,
                c_plus: 3.0
            }
        )
        .is_err());
    }

    #[test]
    fn signed_quantile_band() {
        let s: Vec<f64> = (-50..=50).map(f64::from).collect();
        let t = derive_critical(
            &s,
            &CriticalRule::SignedQuantile {
                alpha_minus: 0.05,
                alpha_plus: 0.95,
            },
        )
        .unwrap();
        assert_eq!(
            t,
            Thresholds::Band {
                c_minus: -45.0,
                c_plus: 45.0
            }
        );
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(
            rank_descending(&[3.0, 1.0, 2.0], &["x", "y", "z"]).unwrap(),
            vec![1, 3, 2]
        );
        assert_eq!(rank_descending(&[5.0, 5.0], &["b", "a"]).unwrap(), vec![2, 1]);
        assert!(rank_descending::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn flag_examples() {
        assert_eq!(flag_unsigned(&[2.5], 2.5), vec![false]);
        assert_eq!(flag_unsigned(&[2.5 + 1e-9], 2.5), vec![true]);
        assert_eq!(flag_unsigned(&[0.0, 0.0, 0.0], 1.0), vec![false; 3]);

        assert_eq!(flag_signed(&[0.0], -5.0, 3.0).unwrap(), vec![false]);
        assert_eq!(flag_signed(&[-6.0], -5.0, 3.0).unwrap(), vec![true]);
        assert_eq!(flag_signed(&[-5.0, 3.0], -5.0, 3.0).unwrap(), vec![false, false]);
        assert!(flag_signed(&[0.0], 3.0, -5.0).is_err());
    }

    /// Order-statistics oracle: walk the plotting positions k/(n-1) until the
    /// bracket containing alpha is found, then interpolate.
    fn quantile_oracle(values: &[f64], alpha: f64) -> f64 {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        if n == 1 {
            return s[0];
        }
        for k in 0..n - 1 {
            let lo = k as f64 / (n - 1) as f64;
            let hi = (k + 1) as f64 / (n - 1) as f64;
            if alpha >= lo && alpha <= hi {
                let w = (alpha - lo) / (hi - lo);
                return s[k] * (1.0 - w) + s[k + 1] * w;
            }
        }
        s[n - 1]
    }

    proptest! {
        #[test]
        fn quantile_matches_order_statistics(
            values in prop::collection::vec(-1e3f64..1e3, 1..=20),
            alpha in 0.001f64..0.999,
        ) {
            let v = quantile(&values, alpha).unwrap();
            let oracle = quantile_oracle(&values, alpha);
            prop_assert!((v - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
            // at least 1 + floor((n-1) alpha) order statistics lie at or below v
            let n = values.len();
            let need = 1 + ((n - 1) as f64 * alpha).floor() as usize;
            let at_or_below = values.iter().filter(|&&x| x <= v + 1e-9 * (1.0 + v.abs())).count();
            prop_assert!(at_or_below >= need);
        }

        #[test]
        fn flagging_monotone_in_c(
            losses in prop::collection::vec(0.0f64..100.0, 1..50),
            c in 0.0f64..100.0,
            bump in 0.0f64..50.0,
        ) {
            let lo = flag_unsigned(&losses, c);
            let hi = flag_unsigned(&losses, c + bump);
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(!*b || *a);
            }
        }

        #[test]
        fn ranks_are_a_permutation(losses in prop::collection::vec(0.0f64..10.0, 1..60)) {
            let keys: Vec<usize> = (0..losses.len()).collect();
            let mut ranks = rank_descending(&losses, &keys).unwrap();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=losses.len()).collect::<Vec<_>>());
        }

        #[test]
        fn symmetric_band_matches_unsigned(
            signed in prop::collection::vec(-100.0f64..100.0, 1..50),
            c in 0.01f64..100.0,
        ) {
            let band = flag_signed(&signed, -c, c).unwrap();
            let abs: Vec<f64> = signed.iter().map(|s| s.abs()).collect();
            prop_assert_eq!(band, flag_unsigned(&abs, c));
        }
    }
}
