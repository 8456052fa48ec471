use std::sync::Arc;

use axum::body::Body as HttpBody;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use reeltree_api::{router, AppState, RouterOptions};
use reeltree_core::engine::Engine;
use reeltree_core::ids::IdScheme;
use reeltree_core::store::MemStore;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    engine: Arc<Engine>,
    app: Router,
    _dir: tempfile::TempDir,
}

fn harness(opts: RouterOptions) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let engine = Arc::new(
        Engine::builder(Arc::new(MemStore::new()))
            .id_scheme(IdScheme::Seeded(11))
            .build()
            .unwrap(),
    );
    let state = AppState {
        engine: engine.clone(),
        export_root: dir.path().join("exports"),
    };
    Harness {
        app: router(state, &opts),
        engine,
        _dir: dir,
    }
}

async fn raw(app: &Router, req: Request<HttpBody>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec(), headers)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut b = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            b = b.header(header::CONTENT_TYPE, "application/json");
            HttpBody::from(v.to_string())
        }
        None => HttpBody::empty(),
    };
    let (status, bytes, _) = raw(app, b.body(body).unwrap()).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

fn s(v: &Value) -> String {
    v.as_str().unwrap().to_owned()
}

/// Creates a project, a locked scene and a planned child; returns
/// `(project, planning node)`.
async fn planned(app: &Router, intent: &str) -> (String, String) {
    let (st, p) = call(app, Method::POST, "/projects", Some(json!({ "name": "camel" }))).await;
    assert_eq!(st, StatusCode::CREATED);
    let pid = s(&p["project"]["project_id"]);
    let (st, scene) = call(
        app,
        Method::POST,
        &format!("/projects/{pid}/nodes"),
        Some(json!({ "kind": "IntentDraft", "spec": { "intent_text": "a glazed camel in the desert" } })),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{scene}");
    let scene_id = s(&scene["node_id"]);
    let (st, _) = call(app, Method::POST, &format!("/nodes/{scene_id}/lock"), None).await;
    assert_eq!(st, StatusCode::OK);
    let (st, planning) = call(
        app,
        Method::POST,
        &format!("/projects/{pid}/nodes"),
        Some(json!({ "parent_id": scene_id, "kind": "Planning" })),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED);
    let nid = s(&planning["node_id"]);
    let (st, planned) = call(
        app,
        Method::POST,
        &format!("/nodes/{nid}/plan"),
        Some(json!({ "intent": intent })),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{planned}");
    (pid, nid)
}

#[tokio::test(flavor = "multi_thread")]
async fn project_lifecycle_and_error_envelope() {
    let h = harness(RouterOptions::default());
    let (st, v) = call(&h.app, Method::GET, "/projects", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["projects"], json!([]));

    let (st, p) = call(&h.app, Method::POST, "/projects", Some(json!({ "name": "demo" }))).await;
    assert_eq!(st, StatusCode::CREATED);
    let pid = s(&p["project"]["project_id"]);

    let (st, tree) = call(&h.app, Method::GET, &format!("/projects/{pid}/tree"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(tree["nodes"].as_object().unwrap().len(), 1);
    let root = s(&tree["root"]);
    assert!(tree["layout"]["positions"].get(&root).is_some() || tree["layout"].to_string().contains(&root));

    let (st, e) = call(&h.app, Method::GET, "/projects/00ff/tree", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "UnknownProject");
    assert!(e["message"].is_string());
    assert!(e.get("details").is_some());

    let (st, e) = call(&h.app, Method::GET, "/nodes/..%2Fetc", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "UnknownNode");

    let (st, e) = call(&h.app, Method::POST, "/projects", Some(json!({ "title": 3 }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "InvalidBody");

    let (st, e) = call(&h.app, Method::POST, &format!("/nodes/{root}/collapse"), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "CannotCollapseRoot");

    let (st, ctx) = call(
        &h.app,
        Method::PATCH,
        &format!("/projects/{pid}/context"),
        Some(json!({ "style": "sancai glaze", "mood": "warm" })),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(ctx["project"]["global_context"]["style"], "sancai glaze");

    let (st, e) = call(
        &h.app,
        Method::PATCH,
        &format!("/projects/{pid}/settings"),
        Some(json!({ "still_duration_ms": 0 })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "InvalidSettings");

    let (st, _) = call(&h.app, Method::DELETE, &format!("/projects/{pid}"), None).await;
    assert_eq!(st, StatusCode::OK);
    let (st, _) = call(&h.app, Method::GET, &format!("/projects/{pid}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_spec_edits_one_wins_one_conflicts() {
    let h = harness(RouterOptions::default());
    let (_, nid) = planned(&h.app, "a glazed camel at dusk").await;
    let (_, node) = call(&h.app, Method::GET, &format!("/nodes/{nid}"), None).await;
    let rev = node["spec_revision"].as_u64().unwrap();

    let uri = format!("/nodes/{nid}/spec");
    let a = call(
        &h.app,
        Method::PATCH,
        &uri,
        Some(json!({ "prompt_text": "first", "base_revision": rev })),
    );
    let b = call(
        &h.app,
        Method::PATCH,
        &uri,
        Some(json!({ "prompt_text": "second", "base_revision": rev })),
    );
    let ((sa, va), (sb, vb)) = tokio::join!(a, b);
    let mut statuses = [sa, sb];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT], "{va} {vb}");
    let (loser, winner) = if sa == StatusCode::CONFLICT { (va, vb) } else { (vb, va) };
    assert_eq!(loser["code"], "RevisionConflict");
    assert_eq!(loser["details"]["actual"], rev + 1);
    assert_eq!(winner["spec_revision"], rev + 1);

    // An If-Match header carries the base revision too.
    let req = Request::builder()
        .method(Method::PATCH)
        .uri(&uri)
        .header(header::IF_MATCH, format!("\"{rev}\""))
        .body(HttpBody::from(json!({ "prompt_text": "third" }).to_string()))
        .unwrap();
    let (st, _, _) = raw(&h.app, req).await;
    assert_eq!(st, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn execute_select_stitch_export_and_metrics() {
    let h = harness(RouterOptions::default());
    let _pool = h.engine.start_workers(1);
    let (pid, nid) = planned(&h.app, "a glazed camel at dusk").await;

    let (st, e) = call(&h.app, Method::POST, &format!("/nodes/{nid}/execute"), None).await;
    assert_eq!(st, StatusCode::CONFLICT, "a plan must be materialized first");
    assert_eq!(e["code"], "NodeNotPlanned");

    let (st, n) = call(&h.app, Method::POST, &format!("/nodes/{nid}/materialize"), None).await;
    assert_eq!(st, StatusCode::OK, "{n}");
    assert_eq!(n["kind"], "Image");

    let (st, ex) = call(&h.app, Method::POST, &format!("/nodes/{nid}/execute"), None).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    let job_id = s(&ex["job_id"]);
    let job = loop {
        let (_, j) = call(&h.app, Method::GET, &format!("/jobs/{job_id}"), None).await;
        if j["state"] == "Done" || j["state"] == "Failed" {
            break j;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    };
    assert_eq!(job["state"], "Done", "{job}");

    let (_, node) = call(&h.app, Method::GET, &format!("/nodes/{nid}"), None).await;
    assert_eq!(node["status"], "Succeeded");
    let cands = node["candidates"][0]["asset_ids"].as_array().unwrap().clone();
    assert_eq!(cands.len(), 4);

    let (st, bytes, headers) = raw(
        &h.app,
        Request::get(format!("/assets/{}", s(&cands[1])))
            .body(HttpBody::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "image/x-portable-graymap");
    assert!(bytes.starts_with(b"P5"));

    let (st, n) = call(
        &h.app,
        Method::POST,
        &format!("/nodes/{nid}/select"),
        Some(json!({ "batch_index": 0, "candidate_index": 1 })),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(n["selected"], json!({ "batch_index": 0, "candidate_index": 1 }));
    let (st, e) = call(
        &h.app,
        Method::POST,
        &format!("/nodes/{nid}/select"),
        Some(json!({ "batch_index": 0, "candidate_index": 9 })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "IndexOutOfRange");

    let (st, entry) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/timeline/collection"),
        Some(json!({ "node_id": nid, "batch_index": 0, "candidate_index": 1 })),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{entry}");
    let (st, seg) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/timeline/segments"),
        Some(json!({ "entry_id": entry["entry_id"], "track": "video" })),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{seg}");
    let sid = s(&seg["segment_id"]);
    let (st, o) = call(
        &h.app,
        Method::GET,
        &format!("/projects/{pid}/timeline/segments/{sid}/origin"),
        None,
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s(&o["node_id"]), nid);

    let (st, e) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/timeline/segments"),
        Some(json!({ "entry_id": entry["entry_id"], "track": "audio" })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "ModalityMismatch");

    // The collected candidate keeps its node from being pruned.
    let (st, e) = call(&h.app, Method::DELETE, &format!("/nodes/{nid}"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(e["code"], "PruneConflict");
    assert!(!e["details"]["blockers"].as_array().unwrap().is_empty());

    let (st, e) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/export"),
        Some(json!({ "name": "../up" })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "InvalidBody");
    let (st, bundle) = call(&h.app, Method::POST, &format!("/projects/{pid}/export"), None).await;
    assert_eq!(st, StatusCode::OK, "{bundle}");
    assert_eq!(bundle["manifest"]["segments"].as_array().unwrap().len(), 1);
    assert!(std::path::Path::new(bundle["manifest_path"].as_str().unwrap()).exists());

    let (st, ev) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/events"),
        Some(json!({ "kind": "SceneCompleted", "scene_index": 1 })),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{ev}");
    let (st, e) = call(
        &h.app,
        Method::POST,
        &format!("/projects/{pid}/events"),
        Some(json!({ "kind": "ExportCompleted" })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "ReservedSessionEvent");

    let (st, m) = call(&h.app, Method::GET, &format!("/projects/{pid}/metrics"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(m["N_calls"], 1, "one backend call yields the whole batch");
    assert_eq!(m["N_variants"], 1);
    assert!(!m["T5"].is_null());
    let (st, text, _) = raw(
        &h.app,
        Request::get(format!("/projects/{pid}/metrics?format=text&wait_rule=sum"))
            .body(HttpBody::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert!(String::from_utf8(text).unwrap().contains("N_calls"));
}

#[tokio::test(flavor = "multi_thread")]
async fn uploads_are_sniffed_and_served_back() {
    let h = harness(RouterOptions::default());
    let (_, p) = call(&h.app, Method::POST, "/projects", Some(json!({ "name": "u" }))).await;
    let pid = s(&p["project"]["project_id"]);
    let pgm = b"P5\n2 2\n255\n\x00\x40\x80\xff".to_vec();
    let (st, bytes, _) = raw(
        &h.app,
        Request::post(format!("/projects/{pid}/assets"))
            .body(HttpBody::from(pgm.clone()))
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED);
    let asset: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(asset["modality"], "Image");
    assert_eq!(asset["metadata"]["width"], 2);

    let (st, back, _) = raw(
        &h.app,
        Request::get(format!("/assets/{}", s(&asset["asset_id"])))
            .body(HttpBody::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(back, pgm);

    let (st, bytes, _) = raw(
        &h.app,
        Request::post(format!("/projects/{pid}/assets"))
            .body(HttpBody::from("plain text"))
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let e: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(e["code"], "UnknownMedia");

    let (st, bytes, _) = raw(
        &h.app,
        Request::post(format!("/projects/{pid}/assets?modality=Audio&format=raw"))
            .body(HttpBody::from("plain text"))
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED);
    let a: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(a["modality"], "Audio");
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_and_static_fallback() {
    let site = tempfile::tempdir().unwrap();
    std::fs::write(site.path().join("index.html"), "<html>ui</html>").unwrap();
    let h = harness(RouterOptions {
        cors_allow: vec!["http://localhost:5173".into()],
        static_dir: Some(site.path().to_owned()),
    });
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/projects")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(HttpBody::empty())
        .unwrap();
    let (_, _, headers) = raw(&h.app, req).await;
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");

    let (st, body, _) = raw(
        &h.app,
        Request::get("/some/client/route").body(HttpBody::empty()).unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (st, v) = call(&h.app, Method::GET, "/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (_, reg) = call(&h.app, Method::GET, "/registry", None).await;
    assert_eq!(reg["workflows"].as_array().unwrap().len(), 13);
}

#[tokio::test]
async fn reads_append_nothing() {
    let h = harness(RouterOptions::default());
    let (pid, nid) = planned(&h.app, "a glazed camel at dusk").await;
    let id = reeltree_core::ids::ProjectId::new(pid.clone());
    let storage = h.engine.storage();
    let before = (storage.read_events(&id).unwrap(), storage.read_session(&id).unwrap());
    for uri in [
        "/health".to_owned(),
        "/registry".to_owned(),
        "/projects".to_owned(),
        format!("/projects/{pid}"),
        format!("/projects/{pid}/tree"),
        format!("/projects/{pid}/timeline"),
        format!("/projects/{pid}/metrics"),
        format!("/projects/{pid}/events"),
        format!("/nodes/{nid}"),
    ] {
        let (st, body) = call(&h.app, Method::GET, &uri, None).await;
        assert_eq!(st, StatusCode::OK, "{uri}: {body}");
    }
    let after = (storage.read_events(&id).unwrap(), storage.read_session(&id).unwrap());
    assert_eq!(before.0.len(), after.0.len());
    assert_eq!(before.1, after.1);
}
