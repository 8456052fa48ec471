use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{AgentError, Provider, ProviderRequest, ProviderResponse};
use crate::model::TokenUsage;

/// Text-completion endpoint client. Sends `{"system", "user"}` where `user`
/// is the JSON-rendered request, and expects
/// `{"text", "usage": {"prompt_tokens", "completion_tokens"}}`.
pub struct HttpProvider {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
    #[serde(default)]
    usage: TokenUsage,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| AgentError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            api_key,
            client,
        })
    }

    pub fn user_text(request: &ProviderRequest) -> String {
        serde_json::to_string_pretty(&json!({
            "role": request.role,
            "intent": request.user_intent,
            "context": request.context,
            "attachments": request.attachments,
            "input": request.role_input,
        }))
        .expect("request serializes")
    }
}

impl Provider for HttpProvider {
    fn generate(&self, system: &str, request: &ProviderRequest) -> Result<ProviderResponse, AgentError> {
        let mut rb = self
            .client
            .post(&self.url)
            .json(&json!({ "system": system, "user": Self::user_text(request) }));
        if let Some(k) = &self.api_key {
            rb = rb.bearer_auth(k);
        }
        let unavailable = |e: reqwest::Error| AgentError::ProviderUnavailable(e.to_string());
        let reply: Reply = rb
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(unavailable)?
            .json()
            .map_err(unavailable)?;
        Ok(ProviderResponse {
            text: reply.text,
            token_usage: reply.usage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{plan_step, AgentContext, PlanInput, Templates};
    use crate::testing::{Response, TestServer};
    use crate::workflows::Registry;
    use serde_json::Value;

    #[test]
    fn round_trips_through_the_endpoint() {
        let server = TestServer::start(|req| {
            let body: Value = serde_json::from_slice(&req.body).unwrap();
            assert!(body["system"].as_str().unwrap().starts_with("CONTENT RULES"));
            let user: Value = serde_json::from_str(body["user"].as_str().unwrap()).unwrap();
            let text = match user["role"].as_str().unwrap() {
                "master" => "```json\n{\"action_category\": \"ProduceAudio\"}\n```",
                "workflow" => "```json\n{\"workflow_id\": \"wf-music\"}\n```",
                _ => "```json\n{\"prompt\": \"gentle strings\", \"parameters\": {\"duration_ms\": 12000}}\n```",
            };
            Response::json(
                200,
                json!({"text": text, "usage": {"prompt_tokens": 10, "completion_tokens": 5}}),
            )
        });
        let p = HttpProvider::new(server.url.clone(), Some("secret".into())).unwrap();
        let plan = plan_step(
            &p,
            &Templates::builtin(),
            &Registry::baseline(),
            &PlanInput {
                context: AgentContext::default(),
                intent: "add background music".into(),
                references: vec![],
            },
        )
        .unwrap();
        assert_eq!(plan.workflow_id, "wf-music");
        assert_eq!(plan.token_usage.total(), 45);
        assert_eq!(server.requests()[0].header("authorization"), Some("Bearer secret"));
    }

    #[test]
    fn connection_failure_is_unavailable() {
        let p = HttpProvider::new("http://127.0.0.1:9/complete", None).unwrap();
        let req = ProviderRequest {
            role: crate::agents::Role::Master,
            system_template_id: "master.v1".into(),
            context: AgentContext::default(),
            user_intent: "x".into(),
            attachments: vec![],
            role_input: Value::Null,
        };
        assert!(matches!(p.generate("", &req), Err(AgentError::ProviderUnavailable(_))));
    }
}
