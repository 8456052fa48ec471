//! Client for an external node-graph generation server.
//!
//! For each workflow the client loads a prompt-graph template
//! `<graph_dir>/<workflow_id>.json`, uploads the bound input assets,
//! substitutes placeholders, submits the graph to `POST /prompt`, polls
//! `GET /history/<prompt_id>` and downloads every output file via
//! `GET /view`. String values of the form `{{prompt}}`, `{{param.NAME}}`,
//! `{{input.SLOT}}` and `{{seed}}` are placeholders; a placeholder that is
//! the whole string keeps the parameter's JSON type.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ExecutionInput, ExecutionOutput, ExecutionRequest, Executor, WorkflowError, WorkflowModule};
use crate::ids::NodeId;
use crate::model::{Modality, ParamValue};
use crate::store::{AssetMetadata, MediaPayload};

/// Executor id under which the client is registered.
pub const GRAPH_SERVER_EXECUTOR: &str = "graph-server";

#[derive(Clone, Debug)]
pub struct GraphServerConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub graph_dir: PathBuf,
    pub poll_interval: Duration,
    pub timeout: Duration,
}

pub struct GraphServerExecutor {
    config: GraphServerConfig,
    client: reqwest::blocking::Client,
}

fn failed(e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::ExecutionFailed(e.to_string())
}

impl GraphServerExecutor {
    pub fn new(config: GraphServerConfig) -> Result<Self, WorkflowError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| WorkflowError::ExecutorUnavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn authed(&self, rb: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.config.api_key {
            Some(k) => rb.bearer_auth(k),
            None => rb,
        }
    }

    fn upload(&self, input: &ExecutionInput) -> Result<String, WorkflowError> {
        let name = format!(
            "{}.{}",
            input.asset.asset_id.display_id(),
            extension(input.asset.modality)
        );
        let part = reqwest::blocking::multipart::Part::bytes(input.bytes.clone()).file_name(name);
        let form = reqwest::blocking::multipart::Form::new()
            .part("image", part)
            .text("overwrite", "true");
        let resp: Value = self
            .authed(self.client.post(self.url("/upload/image")))
            .multipart(form)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(failed)?
            .json()
            .map_err(failed)?;
        resp.get("name")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| failed("upload response has no name"))
    }

    fn submit(&self, graph: Value) -> Result<String, WorkflowError> {
        let body = serde_json::json!({ "prompt": graph, "client_id": "reeltree" });
        let resp: Value = self
            .authed(self.client.post(self.url("/prompt")))
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(failed)?
            .json()
            .map_err(failed)?;
        resp.get("prompt_id")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| failed("submit response has no prompt_id"))
    }

    /// Output file descriptors, in graph-node order, once the run finished.
    fn wait_outputs(&self, prompt_id: &str) -> Result<Vec<Value>, WorkflowError> {
        let deadline = Instant::now() + self.config.timeout;
        loop {
            let hist: Value = self
                .authed(self.client.get(self.url(&format!("/history/{prompt_id}"))))
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(failed)?
                .json()
                .map_err(failed)?;
            if let Some(entry) = hist.get(prompt_id) {
                if let Some(msg) = entry.pointer("/status/status_str").and_then(Value::as_str) {
                    if msg == "error" {
                        return Err(failed(format!("server reported an error for {prompt_id}")));
                    }
                }
                if let Some(outputs) = entry.get("outputs").and_then(Value::as_object) {
                    let mut files = vec![];
                    let mut keys: Vec<&String> = outputs.keys().collect();
                    keys.sort();
                    for k in keys {
                        for list in ["images", "gifs", "videos", "audio"] {
                            if let Some(arr) = outputs[k].get(list).and_then(Value::as_array) {
                                files.extend(arr.iter().cloned());
                            }
                        }
                    }
                    return Ok(files);
                }
            }
            if Instant::now() >= deadline {
                return Err(failed(format!("timed out waiting for {prompt_id}")));
            }
            std::thread::sleep(self.config.poll_interval);
        }
    }

    fn download(&self, file: &Value) -> Result<Vec<u8>, WorkflowError> {
        let get = |k: &str| file.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
        let query = [
            ("filename", get("filename")),
            ("subfolder", get("subfolder")),
            ("type", get("type")),
        ];
        let bytes = self
            .authed(self.client.get(self.url("/view")))
            .query(&query)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(failed)?
            .bytes()
            .map_err(failed)?;
        Ok(bytes.to_vec())
    }
}

fn extension(m: Modality) -> &'static str {
    match m {
        Modality::Image => "png",
        Modality::Video => "mp4",
        Modality::Audio => "wav",
    }
}

fn param_json(v: &ParamValue) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Replaces placeholders throughout a graph template.
pub fn fill_template(template: &Value, lookup: &dyn Fn(&str) -> Option<Value>) -> Value {
    match template {
        Value::String(s) => {
            if let Some(key) = s.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")) {
                if !key.contains("{{") {
                    if let Some(v) = lookup(key) {
                        return v;
                    }
                }
            }
            let mut out = s.clone();
            while let Some(start) = out.find("{{") {
                let Some(len) = out[start..].find("}}") else { break };
                let key = out[start + 2..start + len].to_owned();
                let rendered = match lookup(&key) {
                    Some(Value::String(s)) => s,
                    Some(v) => v.to_string(),
                    None => break,
                };
                out.replace_range(start..start + len + 2, &rendered);
            }
            Value::String(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|v| fill_template(v, lookup)).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), fill_template(v, lookup))).collect()),
        other => other.clone(),
    }
}

impl Executor for GraphServerExecutor {
    fn execute(
        &self,
        node_id: &NodeId,
        workflow: &WorkflowModule,
        request: &ExecutionRequest,
        inputs: &[ExecutionInput],
    ) -> Result<ExecutionOutput, WorkflowError> {
        let path = self.config.graph_dir.join(format!("{}.json", workflow.workflow_id));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| WorkflowError::ExecutorUnavailable(format!("{}: {e}", path.display())))?;
        let template: Value = serde_json::from_str(&text).map_err(|e| WorkflowError::ParseError(e.to_string()))?;
        let mut uploaded = vec![];
        for input in inputs {
            uploaded.push((input.slot.clone(), self.upload(input)?));
        }
        let seed = {
            let mut h = Sha256::new();
            h.update(node_id.as_str());
            h.update(request.batch_ordinal.to_le_bytes());
            u64::from_le_bytes(h.finalize()[..8].try_into().unwrap()) >> 1
        };
        let lookup = |key: &str| -> Option<Value> {
            if key == "prompt" {
                return Some(Value::String(request.prompt_text.clone()));
            }
            if key == "seed" {
                return Some(Value::from(seed));
            }
            if let Some(name) = key.strip_prefix("param.") {
                return request.parameters.get(name).map(param_json);
            }
            if let Some(slot) = key.strip_prefix("input.") {
                return uploaded
                    .iter()
                    .find(|(s, _)| s == slot)
                    .map(|(_, f)| Value::String(f.clone()));
            }
            None
        };
        let graph = fill_template(&template, &lookup);
        let prompt_id = self.submit(graph)?;
        let files = self.wait_outputs(&prompt_id)?;
        if files.is_empty() {
            return Err(failed(format!("run {prompt_id} produced no outputs")));
        }
        let mut candidates = vec![];
        for f in &files {
            let bytes = self.download(f)?;
            let format = f
                .get("filename")
                .and_then(Value::as_str)
                .and_then(|n| n.rsplit_once('.'))
                .map(|(_, ext)| ext.to_ascii_lowercase())
                .unwrap_or_else(|| extension(workflow.output_modality).to_owned());
            candidates.push(MediaPayload {
                bytes,
                modality: workflow.output_modality,
                metadata: AssetMetadata {
                    format,
                    anchors: inputs.iter().map(|i| i.asset.asset_id.clone()).collect(),
                    ..AssetMetadata::default()
                },
            });
        }
        Ok(ExecutionOutput {
            candidates,
            auxiliary: vec![],
            generation_calls: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{Response, TestServer};
    use crate::workflows::Registry;
    use serde_json::json;

    #[test]
    fn placeholders_keep_types() {
        let t = json!({"a": "{{param.steps}}", "b": "x {{prompt}} y", "c": ["{{missing}}"]});
        let out = fill_template(&t, &|k| match k {
            "param.steps" => Some(json!(20)),
            "prompt" => Some(json!("a fox")),
            _ => None,
        });
        assert_eq!(out, json!({"a": 20, "b": "x a fox y", "c": ["{{missing}}"]}));
    }

    #[test]
    fn submits_polls_and_downloads() {
        let polls = std::sync::atomic::AtomicUsize::new(0);
        let server = TestServer::start(move |req| match (req.method.as_str(), req.path.as_str()) {
            ("POST", "/prompt") => {
                assert_eq!(req.header("authorization"), Some("Bearer k"));
                let body: Value = serde_json::from_slice(&req.body).unwrap();
                assert_eq!(body["prompt"]["3"]["inputs"]["text"], json!("a red camel"));
                assert_eq!(body["prompt"]["3"]["inputs"]["width"], json!(1024));
                Response::json(200, json!({"prompt_id": "p1"}))
            }
            ("GET", "/history/p1") => {
                if polls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
                    Response::json(200, json!({}))
                } else {
                    Response::json(
                        200,
                        json!({"p1": {"outputs": {"9": {"images": [
                            {"filename": "a.png", "subfolder": "", "type": "output"},
                            {"filename": "b.png", "subfolder": "", "type": "output"}
                        ]}}}}),
                    )
                }
            }
            ("GET", p) if p.starts_with("/view?filename=a.png") => Response::bytes(b"AAA".to_vec()),
            ("GET", p) if p.starts_with("/view?filename=b.png") => Response::bytes(b"BBB".to_vec()),
            _ => Response::json(404, json!({})),
        });
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("wf-t2i.json"),
            r#"{"3": {"class_type": "Encode", "inputs": {"text": "{{prompt}}", "width": "{{param.width}}", "seed": "{{seed}}"}}}"#,
        )
        .unwrap();
        let exec = GraphServerExecutor::new(GraphServerConfig {
            url: server.url.clone(),
            api_key: Some("k".into()),
            graph_dir: dir.path().to_owned(),
            poll_interval: Duration::from_millis(5),
            timeout: Duration::from_secs(5),
        })
        .unwrap();
        let reg = Registry::baseline();
        let wf = reg.get("wf-t2i").unwrap();
        let req = ExecutionRequest {
            workflow_id: "wf-t2i".into(),
            parameters: [("width".to_owned(), ParamValue::Int(1024))].into(),
            prompt_text: "a red camel".into(),
            inputs: vec![],
            batch_ordinal: 0,
        };
        let out = exec.execute(&NodeId::new("n1"), wf, &req, &[]).unwrap();
        assert_eq!(out.candidates.len(), 2);
        assert_eq!(out.candidates[0].bytes, b"AAA");
        assert_eq!(out.candidates[1].metadata.format, "png");
        assert_eq!(out.generation_calls, 1);
        assert!(server.requests().iter().filter(|r| r.path == "/history/p1").count() >= 2);
    }

    #[test]
    fn missing_template_is_unavailable() {
        let exec = GraphServerExecutor::new(GraphServerConfig {
            url: "http://127.0.0.1:9".into(),
            api_key: None,
            graph_dir: PathBuf::from("/nonexistent"),
            poll_interval: Duration::from_millis(5),
            timeout: Duration::from_millis(50),
        })
        .unwrap();
        let reg = Registry::baseline();
        let req = ExecutionRequest {
            workflow_id: "wf-t2i".into(),
            parameters: Default::default(),
            prompt_text: String::new(),
            inputs: vec![],
            batch_ordinal: 0,
        };
        let err = exec
            .execute(&NodeId::new("n1"), reg.get("wf-t2i").unwrap(), &req, &[])
            .unwrap_err();
        assert_eq!(err.code(), "ExecutorUnavailable");
    }
}
