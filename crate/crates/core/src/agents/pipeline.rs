use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::{mock::unknown_terms, AgentContext, AgentError, Provider, ProviderRequest, Role, Templates};
use crate::ids::AssetId;
use crate::model::{ActionCategory, Modality, ParamValue, Params, Plan, StepSpec, TokenUsage};
use crate::workflows::{validate_spec, Registry};

/// Everything the pipeline needs about the step being planned.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanInput {
    pub context: AgentContext,
    pub intent: String,
    pub references: Vec<(AssetId, Modality)>,
}

/// The JSON value of the single fenced block in `text`, if there is
/// exactly one and it parses.
pub fn parse_fenced_json(text: &str) -> Option<Value> {
    let parts: Vec<&str> = text.split("```").collect();
    if parts.len() != 3 {
        return None;
    }
    let block = parts[1];
    let body = match block.split_once('\n') {
        Some((lang, rest)) if lang.trim().is_empty() || lang.trim().eq_ignore_ascii_case("json") => rest,
        Some(_) => return None,
        None => block,
    };
    serde_json::from_str(body.trim()).ok()
}

struct Session<'a> {
    provider: &'a dyn Provider,
    templates: &'a Templates,
    input: &'a PlanInput,
    usage: TokenUsage,
}

impl Session<'_> {
    /// One call plus one retry when the response does not parse.
    fn call<T>(&mut self, role: Role, role_input: Value, parse: impl Fn(&Value) -> Option<T>) -> Result<T, AgentError> {
        let id = self.templates.active_id(role).to_owned();
        let system = self.templates.text(&id)?.to_owned();
        let request = ProviderRequest {
            role,
            system_template_id: id,
            context: self.input.context.clone(),
            user_intent: self.input.intent.clone(),
            attachments: self.input.references.iter().map(|(a, _)| a.clone()).collect(),
            role_input,
        };
        let mut raw = String::new();
        for _ in 0..2 {
            let resp = self.provider.generate(&system, &request)?;
            self.usage += resp.token_usage;
            if let Some(v) = parse_fenced_json(&resp.text).as_ref().and_then(&parse) {
                return Ok(v);
            }
            raw = resp.text;
        }
        Err(AgentError::UnparseableResponse { role, raw })
    }
}

fn field<T: DeserializeOwned>(v: &Value, key: &str) -> Option<T> {
    serde_json::from_value(v.get(key)?.clone()).ok()
}

fn param_from_json(v: &Value) -> Option<ParamValue> {
    match v {
        Value::Bool(b) => Some(ParamValue::Bool(*b)),
        Value::Number(n) => n
            .as_i64()
            .map(ParamValue::Int)
            .or_else(|| n.as_f64().map(ParamValue::Float)),
        Value::String(s) => Some(ParamValue::Text(s.clone())),
        _ => None,
    }
}

/// Runs Master, Knowledge (only for unfamiliar terms), Workflow and Prompt
/// in order and returns a plan whose parameters validate against the
/// chosen workflow. Never executes anything.
pub fn plan_step(
    provider: &dyn Provider,
    templates: &Templates,
    registry: &Registry,
    input: &PlanInput,
) -> Result<Plan, AgentError> {
    if input.intent.trim().is_empty() {
        return Err(AgentError::IntentEmpty);
    }
    let mut s = Session {
        provider,
        templates,
        input,
        usage: TokenUsage::default(),
    };

    let category: ActionCategory = s.call(Role::Master, json!({ "categories": ActionCategory::ALL }), |v| {
        field(v, "action_category")
    })?;

    let terms = unknown_terms(&input.intent);
    let knowledge_notes = if terms.is_empty() {
        None
    } else {
        Some(s.call(Role::Knowledge, json!({ "terms": terms }), |v| {
            field::<String>(v, "notes")
        })?)
    };

    let modalities: Vec<Modality> = input.references.iter().map(|(_, m)| *m).collect();
    let compatible: Vec<String> = registry
        .compatible(category, &modalities)
        .into_iter()
        .map(|w| w.workflow_id.clone())
        .collect();
    if compatible.is_empty() {
        return Err(AgentError::NoCompatibleWorkflow);
    }
    let workflow_id: String = s.call(
        Role::Workflow,
        json!({
            "action_category": category,
            "available_inputs": modalities,
            "compatible": compatible,
        }),
        |v| field::<String>(v, "workflow_id").filter(|id| compatible.contains(id)),
    )?;
    let workflow = registry.get(&workflow_id).ok_or(AgentError::NoCompatibleWorkflow)?;

    let (prompt_draft, draft): (String, Params) = s.call(
        Role::Prompt,
        json!({
            "workflow_id": workflow_id,
            "input_slots": workflow.input_slots,
            "parameter_schema": workflow.parameter_schema,
            "knowledge_notes": knowledge_notes,
        }),
        |v| {
            let prompt: String = field(v, "prompt").filter(|p: &String| !p.trim().is_empty())?;
            let mut params = Params::new();
            for (k, pv) in v.get("parameters")?.as_object()? {
                params.insert(k.clone(), param_from_json(pv)?);
            }
            Some((prompt, params))
        },
    )?;

    let spec = StepSpec {
        intent_text: input.intent.clone(),
        reference_asset_ids: input.references.iter().map(|(a, _)| a.clone()).collect(),
        prompt_text: prompt_draft.clone(),
        parameters: draft,
        workflow_id: Some(workflow_id.clone()),
        action_category: Some(category),
        locked: false,
    };
    let modality_of = |id: &AssetId| input.references.iter().find(|(a, _)| a == id).map(|(_, m)| *m);
    let normalized = validate_spec(&spec, workflow, modality_of).map_err(AgentError::InvalidDraft)?;

    Ok(Plan {
        action_category: category,
        workflow_id,
        prompt_draft,
        parameter_draft: normalized.parameters,
        knowledge_notes,
        token_usage: s.usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{FaultMode, MockProvider, RecordingProvider};

    fn input(intent: &str, refs: &[Modality]) -> PlanInput {
        PlanInput {
            context: AgentContext::default(),
            intent: intent.into(),
            references: refs
                .iter()
                .enumerate()
                .map(|(i, m)| (AssetId::new(format!("{i:064x}")), *m))
                .collect(),
        }
    }

    fn run(p: &dyn Provider, i: &PlanInput) -> Result<Plan, AgentError> {
        plan_step(p, &Templates::builtin(), &Registry::baseline(), i)
    }

    #[test]
    fn fenced_block_parsing() {
        assert_eq!(parse_fenced_json("x\n```json\n{\"a\":1}\n```\n"), Some(json!({"a": 1})));
        assert_eq!(parse_fenced_json("```\n{\"a\":1}\n```"), Some(json!({"a": 1})));
        assert_eq!(parse_fenced_json("{\"a\":1}"), None);
        assert_eq!(parse_fenced_json("```json\n{}\n```\n```json\n{}\n```"), None);
        assert_eq!(parse_fenced_json("```yaml\na: 1\n```"), None);
    }

    #[test]
    fn animate_with_image_goes_to_i2v() {
        let p = run(
            &MockProvider::new(),
            &input("animate this street scene into a video", &[Modality::Image]),
        )
        .unwrap();
        assert_eq!(p.action_category, ActionCategory::GenerateMotion);
        assert_eq!(p.workflow_id, "wf-i2v");
        assert!(!p.prompt_draft.is_empty());
        assert_eq!(p.parameter_draft["num_candidates"], ParamValue::Int(1));
    }

    #[test]
    fn music_needs_no_media() {
        let p = run(&MockProvider::new(), &input("add background music", &[])).unwrap();
        assert_eq!(p.action_category, ActionCategory::ProduceAudio);
        assert_eq!(
            Registry::baseline()
                .get(&p.workflow_id)
                .unwrap()
                .required_inputs()
                .count(),
            0
        );
    }

    #[test]
    fn guards() {
        assert_eq!(
            run(&MockProvider::new(), &input("  ", &[])),
            Err(AgentError::IntentEmpty)
        );
        assert_eq!(
            run(&MockProvider::new(), &input("animate it", &[])),
            Err(AgentError::NoCompatibleWorkflow)
        );
    }

    #[test]
    fn knowledge_runs_only_for_unfamiliar_terms() {
        let rec = RecordingProvider::new(MockProvider::new());
        let p = run(&rec, &input("a tricolor camel", &[])).unwrap();
        assert!(p.knowledge_notes.unwrap().contains("tricolor"));
        let roles: Vec<Role> = rec.requests().iter().map(|r| r.role).collect();
        assert_eq!(roles, vec![Role::Master, Role::Knowledge, Role::Workflow, Role::Prompt]);

        let rec = RecordingProvider::new(MockProvider::new());
        run(&rec, &input("remove the car from the street", &[Modality::Image])).unwrap();
        assert!(rec.requests().iter().all(|r| r.role != Role::Knowledge));
    }

    #[test]
    fn one_retry_then_fail() {
        let p = MockProvider::new().with_fault(Role::Workflow, FaultMode::Garbage(1));
        let rec = RecordingProvider::new(p);
        assert!(run(&rec, &input("upscale it", &[Modality::Image])).is_ok());
        assert_eq!(rec.requests().iter().filter(|r| r.role == Role::Workflow).count(), 2);

        let p = MockProvider::new().with_fault(Role::Master, FaultMode::Garbage(2));
        assert!(matches!(
            run(&p, &input("upscale it", &[Modality::Image])),
            Err(AgentError::UnparseableResponse { role: Role::Master, .. })
        ));
        let p = MockProvider::new().with_fault(Role::Prompt, FaultMode::Unavailable);
        assert!(matches!(
            run(&p, &input("upscale it", &[Modality::Image])),
            Err(AgentError::ProviderUnavailable(_))
        ));
    }

    #[test]
    fn deterministic() {
        let i = input("slow camera zoom out over the river", &[Modality::Image]);
        let a = run(&MockProvider::new(), &i).unwrap();
        let b = run(&MockProvider::new(), &i).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameter_draft["motion"], ParamValue::Text("zoom-out".into()));
    }
}
