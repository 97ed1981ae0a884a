use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use flipdiag::aggregate::{Filter, GroupReport, SessionState, SortDirection, SortKey};
use flipdiag::data::FeatureIdx;
use flipdiag::inspect::{group_matrix, hide_nondiscriminative, order_matrix, ColumnOrder, ItemMatrix, RowOrder};
use flipdiag::metrics::Summary;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::registry::{DatasetInfo, ModelInfo, RunInfo};
use crate::{AppState, Session};

type ApiResult<T> = Result<Json<T>, ApiError>;
type Params = Query<HashMap<String, String>>;

const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 1000;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/models", get(list_models))
        .route("/runs", get(list_runs))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(close_session))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/groups", get(groups))
        .route("/sessions/{id}/groups/{key}/matrix", get(matrix))
        .route("/sessions/{id}/filters", get(filters).post(push_filter))
        .route("/sessions/{id}/filters/pop", post(pop_filter))
        .route("/sessions/{id}/features", get(features))
        .fallback(|| async { ApiError::new(axum::http::StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

/// JSON bodies are parsed by hand so malformed input gets the usual error shape.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    params
        .get(name)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse()
                .map_err(|e| ApiError::bad_request(format!("parameter {name}={v:?}: {e}")))
        })
        .transpose()
}

fn lock(session: &Session) -> std::sync::MutexGuard<'_, SessionState> {
    session.state.lock().unwrap_or_else(|p| p.into_inner())
}

async fn list_datasets(State(app): State<AppState>) -> Json<Vec<DatasetInfo>> {
    Json(app.registry().datasets())
}

async fn list_models(State(app): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(app.registry().models())
}

async fn list_runs(State(app): State<AppState>) -> Json<Vec<RunInfo>> {
    Json(app.registry().runs())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    dataset: String,
    model: String,
    run: String,
}

#[derive(Serialize)]
struct SessionInfo {
    session: String,
    dataset: String,
    model: String,
    run: String,
    threshold: f64,
    items: usize,
    stack: StackView,
}

#[derive(Serialize)]
struct StackEntryView {
    depth: usize,
    filter: Option<Filter>,
    label: String,
    items: usize,
}

#[derive(Serialize)]
struct StackView {
    depth: usize,
    entries: Vec<StackEntryView>,
}

fn stack_view(state: &SessionState) -> StackView {
    StackView {
        depth: state.depth(),
        entries: state
            .entries()
            .iter()
            .enumerate()
            .map(|(depth, e)| StackEntryView {
                depth,
                label: e.filter.as_ref().map_or_else(|| "all items".to_string(), ToString::to_string),
                filter: e.filter.clone(),
                items: e.items.len(),
            })
            .collect(),
    }
}

fn session_view(token: String, session: &Session) -> SessionInfo {
    SessionInfo {
        session: token,
        dataset: session.dataset.clone(),
        model: session.model.clone(),
        run: session.run.clone(),
        threshold: session.prepared.analysis.threshold(),
        items: session.prepared.analysis.items().len(),
        stack: stack_view(&lock(session)),
    }
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<SessionInfo> {
    let req: CreateSession = parse_body(&body)?;
    let (token, session) = app.create_session(&req.dataset, &req.model, &req.run)?;
    Ok(Json(session_view(token, &session)))
}

async fn session_info(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionInfo> {
    let session = app.session(&id)?;
    Ok(Json(session_view(id, &session)))
}

async fn close_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<axum::http::StatusCode, ApiError> {
    app.close_session(&id)?;
    Ok(axum::http::StatusCode::NO_CONTENT)
}

async fn summary(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Summary> {
    let session = app.session(&id)?;
    Ok(Json(session.prepared.summary.clone()))
}

#[derive(Serialize)]
struct GroupPage {
    depth: usize,
    items: usize,
    total_groups: usize,
    page: usize,
    page_size: usize,
    sort: Vec<SortKey>,
    groups: Vec<GroupReport>,
}

/// `sort=odds_ratio,total&dir=desc,asc`; missing directions default to desc.
fn parse_sort(params: &HashMap<String, String>) -> Result<Option<Vec<SortKey>>, ApiError> {
    let Some(sort) = params.get("sort").filter(|s| !s.is_empty()) else {
        return Ok(None);
    };
    let dirs: Vec<&str> = params.get("dir").map_or_else(Vec::new, |d| d.split(',').collect());
    sort.split(',')
        .enumerate()
        .map(|(i, metric)| {
            let direction = match dirs.get(i) {
                Some(d) => d.parse()?,
                None => SortDirection::Desc,
            };
            Ok(SortKey {
                metric: metric.parse()?,
                direction,
            })
        })
        .collect::<Result<Vec<_>, flipdiag::aggregate::FilterError>>()
        .map(Some)
        .map_err(ApiError::from)
}

async fn groups(State(app): State<AppState>, Path(id): Path<String>, Query(params): Params) -> ApiResult<GroupPage> {
    let session = app.session(&id)?;
    let sort = parse_sort(&params)?;
    let page: usize = param(&params, "page")?.unwrap_or(0);
    let page_size: usize = param(&params, "page_size")?.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let analysis = &session.prepared.analysis;
    let mut state = lock(&session).clone();
    if let Some(sort) = sort {
        state.set_sort(sort);
    }
    let groups = state.groups(analysis);
    let total_groups = groups.len();
    Ok(Json(GroupPage {
        depth: state.depth(),
        items: state.current().items.len(),
        total_groups,
        page,
        page_size,
        sort: state.sort().to_vec(),
        groups: groups
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|g| g.report())
            .collect(),
    }))
}

async fn filters(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<StackView> {
    let session = app.session(&id)?;
    let view = stack_view(&lock(&session));
    Ok(Json(view))
}

async fn push_filter(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<StackView> {
    let session = app.session(&id)?;
    let filter: Filter = parse_body(&body).map_err(|e| ApiError {
        code: "malformed_filter",
        ..e
    })?;
    let mut state = lock(&session);
    state.push(&session.prepared.analysis, filter)?;
    Ok(Json(stack_view(&state)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Pop {
    depth: usize,
}

async fn pop_filter(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<StackView> {
    let session = app.session(&id)?;
    let Pop { depth } = parse_body(&body)?;
    let mut state = lock(&session);
    state.pop_to(depth)?;
    Ok(Json(stack_view(&state)))
}

/// `1,5,9`; `-` is the empty key.
fn parse_key(raw: &str) -> Result<Vec<FeatureIdx>, ApiError> {
    if raw == "-" || raw.is_empty() {
        return Ok(Vec::new());
    }
    let mut key = raw
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<FeatureIdx>()
                .map_err(|_| ApiError::bad_request(format!("group key {raw:?} is not a list of feature indices")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    key.sort_unstable();
    key.dedup();
    Ok(key)
}

#[derive(Serialize)]
struct MatrixView {
    key: Vec<FeatureIdx>,
    names: Vec<String>,
    size: usize,
    #[serde(flatten)]
    matrix: ItemMatrix,
}

async fn matrix(
    State(app): State<AppState>,
    Path((id, raw_key)): Path<(String, String)>,
    Query(params): Params,
) -> ApiResult<MatrixView> {
    let session = app.session(&id)?;
    let key = parse_key(&raw_key)?;
    let rows: RowOrder = param(&params, "rows")?.unwrap_or_default();
    let cols: ColumnOrder = param(&params, "cols")?.unwrap_or_default();
    let hide = match params.get("hide").map(String::as_str) {
        None | Some("") | Some("false") => None,
        Some("true") => Some(0.0),
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| ApiError::bad_request(format!("parameter hide={v:?}")))?,
        ),
    };
    let expand = matches!(params.get("expand").map(String::as_str), Some("true"));

    let analysis = &session.prepared.analysis;
    let items = Arc::clone(&lock(&session).current().items);
    let group = flipdiag::aggregate::group_explanations(analysis, &items)
        .into_iter()
        .find(|g| g.key == key)
        .ok_or_else(|| ApiError::from(flipdiag::aggregate::FilterError::UnknownGroup(key.clone())))?;
    let matrix = group_matrix(analysis, &group)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut matrix = match hide {
        Some(t) => hide_nondiscriminative(matrix, t),
        None => matrix,
    };
    matrix = order_matrix(matrix, rows, Some(cols));
    if expand {
        matrix = matrix.expand();
    }
    Ok(Json(MatrixView {
        names: group.names.clone(),
        size: group.size(),
        key,
        matrix,
    }))
}

#[derive(Serialize)]
struct Suggestion {
    feature: FeatureIdx,
    name: String,
    frequency: usize,
}

fn common_prefix(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Features occurring in explanations of the current item set whose name
/// contains `q` (case-insensitive), most frequent first, then longest
/// prefix match.
async fn features(State(app): State<AppState>, Path(id): Path<String>, Query(params): Params) -> ApiResult<Vec<Suggestion>> {
    let session = app.session(&id)?;
    let query = params.get("q").map_or_else(String::new, |q| q.trim().to_lowercase());
    let limit: usize = param(&params, "limit")?.unwrap_or(20);
    let analysis = &session.prepared.analysis;
    let items = Arc::clone(&lock(&session).current().items);
    let mut out: Vec<(usize, Suggestion)> = analysis
        .explanation_feature_frequency(&items)
        .into_iter()
        .filter_map(|(feature, frequency)| {
            let name = analysis.feature_name(feature).to_string();
            let lower = name.to_lowercase();
            lower.contains(&query).then(|| {
                (
                    common_prefix(&lower, &query),
                    Suggestion {
                        feature,
                        name,
                        frequency,
                    },
                )
            })
        })
        .collect();
    out.sort_by(|(pa, a), (pb, b)| {
        b.frequency
            .cmp(&a.frequency)
            .then(pb.cmp(pa))
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(Json(out.into_iter().take(limit).map(|(_, s)| s).collect()))
}
