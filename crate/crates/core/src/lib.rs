//! Outlier detection for panel data with parametric loss functions.
//!
//! A pair `(F, B)` of a compared value and its base value is scored with
//! `|F - B|^p * B^q` (or a signed / time-invariant variant), the scores are
//! ranked in descending order, and pairs whose loss exceeds a critical value
//! are flagged. No distributional assumptions are made; the loss is ordinal.
//!
//! # Modules
//!
//! - [`panel`] - CSV ingestion, zero handling, time rescaling
//! - [`loss`] - the loss family and its parameter identities
//! - [`criticality`] - quantiles, Tukey fences, ranking and flagging
//! - [`fit`] - compiling legacy criteria tables into a criticality equation
//! - [`nominal`] - two-way comparison of estimate sets, plus the simulation model
//! - [`score`] - scoring a whole panel, quantile class breaks
//! - [`output`], [`rule_file`] - file formats
//!
//! # Example
//!
//! ```
//! use panelguard::loss::{eval_unsigned, LossParams};
//!
//! // a change of 500 on a base of 1,000 is a 50% relative change
//! let l = eval_unsigned(1500.0, 1000.0, LossParams::with_q(-1.0)?)?;
//! assert_eq!(l, 0.5);
//! # Ok::<(), panelguard::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criticality;
pub mod error;
pub mod fit;
pub mod loss;
pub mod nominal;
pub mod output;
pub mod panel;
pub mod par;
pub mod rule_file;
pub mod score;

pub use criticality::{CriticalRule, Thresholds};
pub use error::{Error, ErrorKind, Result};
pub use fit::{FitResult, ReferenceCriteriaRow, SizeClassRow};
pub use loss::LossParams;
pub use nominal::{NominalComparisonModel, NominalPair};
pub use panel::{ColumnBindings, Panel, PanelRecord, PreprocessPolicy, TimeSource, ZeroPolicy};
pub use rule_file::{RuleFile, RuleSpec};
pub use score::{ScoreOptions, ScoredRecord, Scoring};
