//! HTTP+JSON tuning API over an immutable dataset snapshot.
//!
//! - `GET /api/meta` - dataset size, columns, value range, starting q
//! - `POST /api/score` - score (and optionally flag) the snapshot
//! - `POST /api/fit` - compile a criteria table

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use panelguard::criticality::CriticalRule;
use panelguard::fit::Exclusion;
use panelguard::loss::{DEFAULT_Q, DEFAULT_Q_STEP};
use panelguard::panel::{Panel, TimeSource};
use panelguard::score::{score_panel, ScoreOptions, ThresholdSet};
use panelguard::{ErrorKind, LossParams, ReferenceCriteriaRow, RuleFile, ScoredRecord, SizeClassRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, FitModeArg, ServeArgs};
use crate::commands::{bindings, bryan_q, fit_reference, fit_size_classes, fit_table, load, read_input, FitReport};
use crate::error::{CliError, CliResult};

#[derive(Debug)]
pub struct Snapshot {
    pub panel: Panel,
    pub columns: Vec<String>,
}

impl Snapshot {
    pub fn load(input: &[u8], data: &DataArgs) -> CliResult<Self> {
        let panel = load(input, data)?;
        let b = bindings(data)?;
        let mut columns = vec![b.id, b.base, b.value];
        match b.time {
            TimeSource::None => {}
            TimeSource::Elapsed(c) | TimeSource::Labels { column: c, .. } => columns.push(c),
        }
        columns.extend(panel.attribute_columns.iter().cloned());
        Ok(Snapshot { panel, columns })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Meta {
    pub n: usize,
    pub units: usize,
    pub columns: Vec<String>,
    pub range: Option<f64>,
    pub bryan_q: Option<f64>,
    pub default_q: f64,
    pub q_step: f64,
    pub has_time: bool,
}

fn default_q() -> f64 {
    DEFAULT_Q
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default)]
    pub signed: bool,
    #[serde(default)]
    pub time_invariant: bool,
    #[serde(default)]
    pub rule: Option<CriticalRule>,
    #[serde(default)]
    pub per_slice: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub q: f64,
    pub p: f64,
    pub thresholds: Option<ThresholdSet>,
    pub flagged_count: Option<usize>,
    pub warnings: Vec<String>,
    pub records: Vec<ScoredRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TableInput {
    Rows(Vec<serde_json::Value>),
    Csv(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ExponentInput {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub mode: String,
    pub table: TableInput,
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default)]
    pub endpoint: bool,
    #[serde(default)]
    pub round_b: Option<ExponentInput>,
}

#[derive(Debug, Serialize)]
pub struct FitResponse {
    #[serde(flatten)]
    pub report: FitReport,
    /// The compiled rule in the CLI rule-file format.
    pub rule_file: String,
}

pub fn meta(snap: &Snapshot) -> Meta {
    Meta {
        n: snap.panel.n_observations(),
        units: snap.panel.records.len(),
        columns: snap.columns.clone(),
        range: snap.panel.value_range(),
        bryan_q: bryan_q(&snap.panel),
        default_q: DEFAULT_Q,
        q_step: DEFAULT_Q_STEP,
        has_time: snap.panel.has_time,
    }
}

pub fn score(snap: &Snapshot, req: &ScoreRequest) -> CliResult<ScoreResponse> {
    if let Some(rule) = &req.rule {
        if rule.is_signed() != req.signed {
            return Err(CliError::usage(format!(
                "rule `{}` does not match signed = {}",
                if rule.is_signed() { "signed" } else { "unsigned" },
                req.signed
            )));
        }
    }
    let options = ScoreOptions {
        params: LossParams::new(req.p, req.q)?,
        time_invariant: req.time_invariant,
        rule: req.rule,
        per_slice: req.per_slice,
    };
    let scoring = score_panel(&snap.panel, &options)?;
    let flagged_count = scoring.thresholds.as_ref().map(|_| scoring.flagged_count());
    Ok(ScoreResponse {
        q: req.q,
        p: req.p,
        thresholds: scoring.thresholds,
        flagged_count,
        warnings: scoring.warnings,
        records: scoring.records,
    })
}

fn rows<T: DeserializeOwned>(values: Vec<serde_json::Value>) -> CliResult<Vec<T>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| CliError::usage(format!("table row {i}: {e}"))))
        .collect()
}

pub fn fit(req: FitRequest) -> CliResult<FitResponse> {
    let mode = match req.mode.as_str() {
        "size-class" | "size_class" => FitModeArg::SizeClass,
        "reference" => FitModeArg::Reference,
        other => return Err(CliError::usage(format!("unknown fit mode `{other}`"))),
    };
    let round_b = req.round_b.map(|r| match r {
        ExponentInput::Number(x) => x.to_string(),
        ExponentInput::Text(s) => s,
    });
    if round_b.is_some() && !req.endpoint {
        return Err(CliError::usage("round_b needs endpoint"));
    }
    let report = match (req.table, mode) {
        (TableInput::Csv(text), mode) => {
            fit_table(text.as_bytes(), mode, &req.exclusions, req.endpoint, round_b.as_deref())?
        }
        (TableInput::Rows(values), FitModeArg::SizeClass) => {
            if req.endpoint {
                return Err(CliError::usage("endpoint applies to reference fits only"));
            }
            let exclusions = req
                .exclusions
                .iter()
                .map(|e| Exclusion::parse(e))
                .collect::<Result<Vec<_>, _>>()?;
            fit_size_classes(&rows::<SizeClassRow>(values)?, &exclusions)?
        }
        (TableInput::Rows(values), FitModeArg::Reference) => {
            if !req.exclusions.is_empty() {
                return Err(CliError::usage("exclusions apply to size-class fits only"));
            }
            fit_reference(&rows::<ReferenceCriteriaRow>(values)?, req.endpoint, round_b.as_deref())?
        }
    };
    let rule_file = RuleFile::from_fit(&report.fit).to_text();
    Ok(FitResponse { report, rule_file })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub kind: String,
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let (status, kind) = match self.kind() {
            ErrorKind::Usage => (StatusCode::BAD_REQUEST, "usage"),
            ErrorKind::Data => (StatusCode::BAD_REQUEST, "data"),
            ErrorKind::Fit => (StatusCode::UNPROCESSABLE_ENTITY, "fit"),
        };
        (
            status,
            Json(ApiError {
                error: self.to_string(),
                kind: kind.into(),
            }),
        )
            .into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> CliResult<T> {
    serde_json::from_slice(body).map_err(|e| CliError::usage(format!("bad request body: {e}")))
}

async fn meta_handler(State(snap): State<Arc<Snapshot>>) -> Json<Meta> {
    Json(meta(&snap))
}

async fn score_handler(State(snap): State<Arc<Snapshot>>, body: Bytes) -> Result<Json<ScoreResponse>, CliError> {
    let req: ScoreRequest = parse_body(&body)?;
    let resp = tokio::task::spawn_blocking(move || score(&snap, &req))
        .await
        .map_err(|e| CliError::Serve(std::io::Error::other(e)))??;
    Ok(Json(resp))
}

async fn fit_handler(body: Bytes) -> Result<Json<FitResponse>, CliError> {
    Ok(Json(fit(parse_body(&body)?)?))
}

pub fn router(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/api/meta", get(meta_handler))
        .route("/api/score", post(score_handler))
        .route("/api/fit", post(fit_handler))
        .with_state(snapshot)
}

pub fn cmd_serve(a: &ServeArgs) -> CliResult<()> {
    let snapshot = Arc::new(Snapshot::load(&read_input(&a.input)?, &a.data)?);
    let rt = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await.map_err(CliError::Serve)?;
        let addr = listener.local_addr().map_err(CliError::Serve)?;
        info!("listening on http://{addr}");
        axum::serve(listener, router(snapshot))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::Serve)
    })
}
