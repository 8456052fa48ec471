use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reeltree_core::engine::{Engine, SettingsPatch};
use reeltree_core::ids::{AssetId, EntryId, JobId, NodeId, ProjectId, SegmentId};
use reeltree_core::metrics::{SessionEventKind, WaitRule};
use reeltree_core::model::{CandidateRef, Modality, NodeKind, Plan, SpecPatch};
use reeltree_core::stitching::{Track, Trim};
use reeltree_core::store::{Asset, GlobalContext};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Export bundles are written to `<export_root>/<project>/<name>`.
    pub export_root: PathBuf,
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs engine work off the async executor; the engine does blocking IO
/// and may call out to a provider.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

/// JSON body whose decoding errors use the error envelope. An empty body
/// decodes as `{}`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request("InvalidBody", e.body_text()))?;
        let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
            b"{}"
        } else {
            &bytes
        };
        serde_json::from_slice(raw)
            .map(Body)
            .map_err(|e| ApiError::bad_request("InvalidBody", e.to_string()))
    }
}

/// Ids are hex strings; anything else is rejected before touching storage.
fn id<T: for<'a> From<&'a str>>(raw: String, what: &str) -> ApiResult<T> {
    let ok = !raw.is_empty() && raw.len() <= 64 && raw.bytes().all(|b| b.is_ascii_hexdigit());
    if !ok {
        return Err(ApiError::not_found(
            &format!("Unknown{what}"),
            format!("malformed {what} id {raw:?}"),
        ));
    }
    Ok(T::from(raw.as_str()))
}

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/registry", get(registry))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project).delete(delete_project))
        .route("/projects/{id}/tree", get(tree))
        .route("/projects/{id}/context", axum::routing::patch(patch_context))
        .route("/projects/{id}/settings", axum::routing::patch(patch_settings))
        .route("/projects/{id}/nodes", post(create_node))
        .route("/projects/{id}/assets", post(upload_asset))
        .route("/projects/{id}/gc", post(collect_garbage))
        .route("/projects/{id}/timeline", get(timeline))
        .route("/projects/{id}/timeline/collection", post(collect))
        .route(
            "/projects/{id}/timeline/collection/{entry}",
            axum::routing::delete(uncollect),
        )
        .route("/projects/{id}/timeline/segments", post(place))
        .route(
            "/projects/{id}/timeline/segments/{segment}",
            axum::routing::patch(reorder).delete(remove_segment),
        )
        .route("/projects/{id}/timeline/segments/{segment}/origin", get(origin))
        .route("/projects/{id}/export", post(export))
        .route("/projects/{id}/metrics", get(metrics))
        .route("/projects/{id}/events", post(record_event).get(session_events))
        .route("/nodes/{id}", get(get_node).delete(prune))
        .route("/nodes/{id}/spec", axum::routing::patch(patch_spec))
        .route("/nodes/{id}/lock", post(lock))
        .route("/nodes/{id}/plan", post(plan))
        .route("/nodes/{id}/materialize", post(materialize))
        .route("/nodes/{id}/execute", post(execute))
        .route("/nodes/{id}/select", post(select))
        .route("/nodes/{id}/retain", post(retain))
        .route("/nodes/{id}/collapse", post(collapse))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/assets/{id}", get(get_asset))
        .route("/assets/{id}/meta", get(asset_meta))
}

// ---- projects ------------------------------------------------------------

async fn registry(State(st): State<AppState>) -> Json<Value> {
    let reg = st.engine.registry();
    Json(json!({ "workflows": reg.modules().collect::<Vec<_>>() }))
}

#[derive(Deserialize)]
struct CreateProject {
    name: String,
}

async fn create_project(State(st): State<AppState>, Body(b): Body<CreateProject>) -> ApiResult<Response> {
    let snap = blocking(move || Ok(st.engine.create_project(&b.name)?)).await?;
    let body = json!({ "project": snap.project, "root_id": snap.root });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_projects(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let list = blocking(move || Ok(st.engine.list_projects()?)).await?;
    Ok(Json(json!({ "projects": list })))
}

async fn get_project(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let snap = st.engine.snapshot(&pid)?;
    Ok(Json(json!({ "project": snap.project, "root_id": snap.root })))
}

async fn delete_project(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let removed = blocking(move || Ok(st.engine.delete_project(&pid)?)).await?;
    Ok(Json(json!({ "removed": removed })))
}

/// The full snapshot plus computed node positions.
async fn tree(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let snap = st.engine.snapshot(&pid)?;
    let layout = st.engine.layout(&pid)?;
    let mut body = serde_json::to_value(&*snap).map_err(|e| ApiError::internal(e.to_string()))?;
    body["layout"] = serde_json::to_value(layout).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(body))
}

async fn patch_context(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(ctx): Body<GlobalContext>,
) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let patch = SettingsPatch {
        global_context: Some(ctx),
        ..Default::default()
    };
    let project = blocking(move || Ok(st.engine.update_settings(&pid, patch)?)).await?;
    Ok(Json(json!({ "project": project })))
}

async fn patch_settings(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(patch): Body<SettingsPatch>,
) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let project = blocking(move || Ok(st.engine.update_settings(&pid, patch)?)).await?;
    Ok(Json(json!({ "project": project })))
}

// ---- nodes ---------------------------------------------------------------

#[derive(Deserialize)]
struct CreateNode {
    /// Defaults to the project root.
    parent_id: Option<NodeId>,
    kind: Option<NodeKind>,
    /// Creates a modal node bound to this workflow directly.
    workflow_id: Option<String>,
    #[serde(default)]
    spec: SpecPatch,
}

async fn create_node(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(b): Body<CreateNode>,
) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let node = blocking(move || {
        let e = &st.engine;
        let parent = match b.parent_id {
            Some(p) => p,
            None => e
                .snapshot(&pid)?
                .root
                .clone()
                .ok_or_else(|| ApiError::bad_request("MissingRoot", "project has no root"))?,
        };
        let node_id = match (b.workflow_id, b.kind) {
            (Some(wf), _) => e.add_modal(&pid, &parent, &wf, b.spec)?,
            (None, Some(kind)) => {
                let n = e.add_child(&pid, &parent, kind)?;
                if !b.spec.is_empty() {
                    e.edit_spec(&pid, &n, b.spec, None)?;
                }
                n
            }
            (None, None) => return Err(ApiError::bad_request("InvalidBody", "kind or workflow_id is required")),
        };
        Ok(e.snapshot(&pid)?
            .node(&node_id)
            .map_err(reeltree_core::engine::EngineError::from)?
            .clone())
    })
    .await?;
    Ok((StatusCode::CREATED, Json(node)).into_response())
}

fn node_project(engine: &Engine, raw: String) -> ApiResult<(ProjectId, NodeId)> {
    let node: NodeId = id(raw, "Node")?;
    Ok((engine.locate_node(&node)?, node))
}

async fn get_node(State(st): State<AppState>, Path(nid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let snap = st.engine.snapshot(&pid)?;
    let n = snap.node(&node).map_err(reeltree_core::engine::EngineError::from)?;
    Ok(Json(json!(n)))
}

async fn prune(State(st): State<AppState>, Path(nid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let removed = blocking(move || Ok(st.engine.prune(&pid, &node)?)).await?;
    Ok(Json(json!({ "removed": removed })))
}

#[derive(Deserialize)]
struct PatchSpec {
    #[serde(flatten)]
    patch: SpecPatch,
    base_revision: Option<u64>,
}

/// Optimistic spec edit. The base revision comes from the body or an
/// `If-Match` header; a stale one is answered with 409.
async fn patch_spec(
    State(st): State<AppState>,
    Path(nid): Path<String>,
    headers: HeaderMap,
    Body(b): Body<PatchSpec>,
) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let header_rev = match headers.get(header::IF_MATCH) {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim_matches('"').parse::<u64>().ok())
                .ok_or_else(|| ApiError::bad_request("InvalidBody", "If-Match must be a spec revision number"))?,
        ),
        None => None,
    };
    let base = b.base_revision.or(header_rev);
    let n = blocking(move || Ok(st.engine.edit_spec(&pid, &node, b.patch, base)?)).await?;
    Ok(Json(json!(n)))
}

async fn lock(State(st): State<AppState>, Path(nid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let n = blocking(move || Ok(st.engine.lock_intent(&pid, &node)?)).await?;
    Ok(Json(json!(n)))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct PlanBody {
    intent: Option<String>,
    reference_asset_ids: Option<Vec<AssetId>>,
}

/// Runs planning to completion and returns the stored plan.
async fn plan(State(st): State<AppState>, Path(nid): Path<String>, Body(b): Body<PlanBody>) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let (plan, n) = blocking(move || {
        let plan = st.engine.plan(&pid, &node, b.intent, b.reference_asset_ids)?;
        let n = st.engine.snapshot(&pid)?.nodes[&node].clone();
        Ok((plan, n))
    })
    .await?;
    Ok(Json(json!({ "plan": plan, "node": n })))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct MaterializeBody {
    /// Replaces the stored plan when given.
    plan: Option<Plan>,
    edits: SpecPatch,
}

async fn materialize(
    State(st): State<AppState>,
    Path(nid): Path<String>,
    Body(b): Body<MaterializeBody>,
) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let n = blocking(move || Ok(st.engine.materialize(&pid, &node, b.plan, b.edits)?)).await?;
    Ok(Json(json!(n)))
}

/// Enqueues a job and answers immediately with its id.
async fn execute(State(st): State<AppState>, Path(nid): Path<String>) -> ApiResult<Response> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let job = blocking(move || {
        let job_id = st.engine.execute(&pid, &node)?;
        Ok(st.engine.job(&pid, &job_id)?)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.job_id, "job": job }))).into_response())
}

async fn select(
    State(st): State<AppState>,
    Path(nid): Path<String>,
    Body(at): Body<CandidateRef>,
) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let n = blocking(move || Ok(st.engine.select(&pid, &node, at)?)).await?;
    Ok(Json(json!(n)))
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct RetainBody {
    #[serde(flatten)]
    at: CandidateRef,
    #[serde(default = "yes")]
    retained: bool,
}

async fn retain(
    State(st): State<AppState>,
    Path(nid): Path<String>,
    Body(b): Body<RetainBody>,
) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let n = blocking(move || Ok(st.engine.retain(&pid, &node, b.at, b.retained)?)).await?;
    Ok(Json(json!(n)))
}

#[derive(Deserialize)]
struct CollapseBody {
    #[serde(default = "yes")]
    collapsed: bool,
}

async fn collapse(
    State(st): State<AppState>,
    Path(nid): Path<String>,
    Body(b): Body<CollapseBody>,
) -> ApiResult<Json<Value>> {
    let (pid, node) = node_project(&st.engine, nid)?;
    let n = blocking(move || Ok(st.engine.collapse(&pid, &node, b.collapsed)?)).await?;
    Ok(Json(json!(n)))
}

// ---- jobs ----------------------------------------------------------------

fn job_project(engine: &Engine, raw: String) -> ApiResult<(ProjectId, JobId)> {
    let job: JobId = id(raw, "Job")?;
    Ok((engine.locate_job(&job)?, job))
}

async fn get_job(State(st): State<AppState>, Path(jid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, job) = job_project(&st.engine, jid)?;
    Ok(Json(json!(st.engine.job(&pid, &job)?)))
}

async fn cancel_job(State(st): State<AppState>, Path(jid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, job) = job_project(&st.engine, jid)?;
    let j = blocking(move || Ok(st.engine.cancel_job(&pid, &job)?)).await?;
    Ok(Json(json!(j)))
}

// ---- assets --------------------------------------------------------------

pub fn content_type(asset: &Asset) -> &'static str {
    match asset.metadata.format.as_str() {
        "png" => "image/png",
        "jpeg" | "jpg" => "image/jpeg",
        "mp4" => "video/mp4",
        "wav" => "audio/wav",
        "pgm" => "image/x-portable-graymap",
        _ => asset.modality.content_type(),
    }
}

fn asset_project(engine: &Engine, raw: String) -> ApiResult<(ProjectId, AssetId)> {
    let asset: AssetId = id(raw, "Asset")?;
    Ok((engine.locate_asset(&asset)?, asset))
}

async fn get_asset(State(st): State<AppState>, Path(aid): Path<String>) -> ApiResult<Response> {
    let (pid, asset) = asset_project(&st.engine, aid)?;
    let (meta, bytes) = blocking(move || Ok(st.engine.read_asset(&pid, &asset)?)).await?;
    let headers = [
        (header::CONTENT_TYPE, content_type(&meta)),
        (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
    ];
    Ok((headers, bytes).into_response())
}

async fn asset_meta(State(st): State<AppState>, Path(aid): Path<String>) -> ApiResult<Json<Value>> {
    let (pid, asset) = asset_project(&st.engine, aid)?;
    let snap = st.engine.snapshot(&pid)?;
    Ok(Json(json!(snap.assets[&asset])))
}

#[derive(Deserialize)]
struct UploadQuery {
    modality: Option<Modality>,
    format: Option<String>,
}

/// Raw-body upload. The modality is sniffed unless given as a query
/// parameter.
async fn upload_asset(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Query(q): Query<UploadQuery>,
    bytes: Bytes,
) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let asset = blocking(move || Ok(st.engine.import_asset(&pid, bytes.to_vec(), q.modality, q.format)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(asset))).into_response())
}

async fn collect_garbage(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let removed = blocking(move || Ok(st.engine.collect_garbage(&pid)?)).await?;
    Ok(Json(json!({ "removed": removed })))
}

// ---- timeline ------------------------------------------------------------

async fn timeline(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    Ok(Json(json!(st.engine.snapshot(&pid)?.timeline)))
}

#[derive(Deserialize)]
struct CollectBody {
    node_id: NodeId,
    #[serde(flatten)]
    at: CandidateRef,
}

async fn collect(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(b): Body<CollectBody>,
) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let entry = blocking(move || Ok(st.engine.collect(&pid, &b.node_id, b.at)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(entry))).into_response())
}

async fn uncollect(State(st): State<AppState>, Path((pid, entry)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let entry: EntryId = id(entry, "Entry")?;
    let t = blocking(move || Ok(st.engine.uncollect(&pid, &entry)?)).await?;
    Ok(Json(json!(t)))
}

/// Accepts a track as `0`/`1` or `"video"`/`"audio"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum TrackArg {
    Index(u8),
    Name(String),
}

impl TrackArg {
    fn resolve(self) -> ApiResult<Track> {
        let t = match self {
            TrackArg::Index(i) => Track::try_from(i).ok(),
            TrackArg::Name(s) => Track::parse(&s),
        };
        t.ok_or_else(|| ApiError::bad_request("InvalidBody", "track must be 0, 1, \"video\" or \"audio\""))
    }
}

#[derive(Deserialize)]
struct PlaceBody {
    entry_id: EntryId,
    track: TrackArg,
    order_index: Option<u32>,
    trim_in_ms: Option<u64>,
    trim_out_ms: Option<u64>,
}

async fn place(State(st): State<AppState>, Path(pid): Path<String>, Body(b): Body<PlaceBody>) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let track = b.track.resolve()?;
    let trim = match (b.trim_in_ms, b.trim_out_ms) {
        (None, None) => None,
        (Some(i), Some(o)) => Some(Trim {
            trim_in_ms: i,
            trim_out_ms: o,
        }),
        _ => {
            return Err(ApiError::bad_request(
                "InvalidBody",
                "trim_in_ms and trim_out_ms go together",
            ))
        }
    };
    let seg = blocking(move || Ok(st.engine.place(&pid, &b.entry_id, track, b.order_index, trim)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(seg))).into_response())
}

#[derive(Deserialize)]
struct ReorderBody {
    order_index: u32,
}

async fn reorder(
    State(st): State<AppState>,
    Path((pid, seg)): Path<(String, String)>,
    Body(b): Body<ReorderBody>,
) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let seg: SegmentId = id(seg, "Segment")?;
    let t = blocking(move || Ok(st.engine.reorder(&pid, &seg, b.order_index)?)).await?;
    Ok(Json(json!(t)))
}

async fn remove_segment(
    State(st): State<AppState>,
    Path((pid, seg)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let seg: SegmentId = id(seg, "Segment")?;
    let t = blocking(move || Ok(st.engine.remove_segment(&pid, &seg)?)).await?;
    Ok(Json(json!(t)))
}

async fn origin(State(st): State<AppState>, Path((pid, seg)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let seg: SegmentId = id(seg, "Segment")?;
    Ok(Json(json!({ "node_id": st.engine.trace_origin(&pid, &seg)? })))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ExportBody {
    /// Bundle directory name under the project's export folder.
    name: Option<String>,
}

async fn export(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(b): Body<ExportBody>,
) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let name = b.name.unwrap_or_else(|| "latest".into());
    let simple = !name.is_empty()
        && name.len() <= 64
        && name
            .bytes()
            .all(|c| c.is_ascii_alphanumeric() || c == b'-' || c == b'_');
    if !simple {
        return Err(ApiError::bad_request(
            "InvalidBody",
            "export name must be [A-Za-z0-9_-]{1,64}",
        ));
    }
    let out = st.export_root.join(pid.as_str()).join(name);
    let bundle = blocking(move || Ok(st.engine.export(&pid, &out)?)).await?;
    Ok(Json(json!(bundle)))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct MetricsQuery {
    wait_rule: WaitRule,
    format: Option<String>,
}

async fn metrics(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let report = st.engine.metrics(&pid, q.wait_rule)?;
    Ok(match q.format.as_deref() {
        Some("text") => report.to_text().into_response(),
        None | Some("json") => Json(report.to_json()).into_response(),
        Some(other) => {
            return Err(ApiError::bad_request(
                "InvalidQuery",
                format!("unknown format {other:?}"),
            ))
        }
    })
}

async fn record_event(
    State(st): State<AppState>,
    Path(pid): Path<String>,
    Body(kind): Body<SessionEventKind>,
) -> ApiResult<Response> {
    let pid: ProjectId = id(pid, "Project")?;
    let ev = blocking(move || Ok(st.engine.record_session_event(&pid, kind)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(ev))).into_response())
}

async fn session_events(State(st): State<AppState>, Path(pid): Path<String>) -> ApiResult<Json<Value>> {
    let pid: ProjectId = id(pid, "Project")?;
    let log = st.engine.session_log(&pid)?;
    Ok(Json(json!({ "events": log.events() })))
}
