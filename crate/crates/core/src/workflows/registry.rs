use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::model::{ActionCategory, Modality};

/// The shipped baseline registry.
pub const BASELINE_REGISTRY_JSON: &str = include_str!("../../registry/baseline.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSlot {
    pub name: String,
    pub modality: Modality,
    pub required: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamType {
    Int { min: i64, max: i64, default: i64 },
    Float { min: f64, max: f64, default: f64 },
    Text { default: String },
    Enum { choices: Vec<String>, default: String },
    Bool { default: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowModule {
    pub workflow_id: String,
    pub action_category: ActionCategory,
    pub input_slots: Vec<InputSlot>,
    pub output_modality: Modality,
    pub parameter_schema: Vec<ParamSpec>,
    pub executor_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl WorkflowModule {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.parameter_schema.iter().find(|p| p.name == name)
    }

    pub fn required_inputs(&self) -> impl Iterator<Item = Modality> + '_ {
        self.input_slots.iter().filter(|s| s.required).map(|s| s.modality)
    }

    /// True when the required slots form a sub-multiset of `available`.
    pub fn satisfiable_with(&self, available: &[Modality]) -> bool {
        Modality::ALL.iter().all(|m| {
            let need = self.required_inputs().filter(|r| r == m).count();
            let have = available.iter().filter(|a| *a == m).count();
            need <= have
        })
    }

    fn check_schema(&self) -> Result<(), WorkflowError> {
        let bad = |msg: String| Err(WorkflowError::SchemaError(format!("{}: {msg}", self.workflow_id)));
        if self.workflow_id.trim().is_empty() {
            return bad("empty workflow id".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.parameter_schema {
            if !names.insert(p.name.as_str()) {
                return bad(format!("parameter {} declared twice", p.name));
            }
            match &p.ty {
                ParamType::Int { min, max, default } => {
                    if min > max || default < min || default > max {
                        return bad(format!("default of {} outside [{min}, {max}]", p.name));
                    }
                }
                ParamType::Float { min, max, default } => {
                    if !(min <= max && min <= default && default <= max) {
                        return bad(format!("default of {} outside [{min}, {max}]", p.name));
                    }
                }
                ParamType::Enum { choices, default } => {
                    if !choices.contains(default) {
                        return bad(format!("default of {} is not one of its choices", p.name));
                    }
                }
                ParamType::Text { .. } | ParamType::Bool { .. } => {}
            }
        }
        let mut slots = BTreeSet::new();
        for s in &self.input_slots {
            if !slots.insert(s.name.as_str()) {
                return bad(format!("slot {} declared twice", s.name));
            }
        }
        Ok(())
    }
}

/// Validated, id-unique set of workflow modules.
#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    modules: BTreeMap<String, WorkflowModule>,
}

impl Registry {
    pub fn from_modules(modules: Vec<WorkflowModule>) -> Result<Self, WorkflowError> {
        let mut map = BTreeMap::new();
        for m in modules {
            m.check_schema()?;
            if map.contains_key(&m.workflow_id) {
                return Err(WorkflowError::DuplicateWorkflowId(m.workflow_id));
            }
            map.insert(m.workflow_id.clone(), m);
        }
        Ok(Self { modules: map })
    }

    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        let modules: Vec<WorkflowModule> =
            serde_json::from_str(text).map_err(|e| WorkflowError::ParseError(e.to_string()))?;
        Self::from_modules(modules)
    }

    pub fn baseline() -> Self {
        Self::from_json(BASELINE_REGISTRY_JSON).expect("baseline registry is valid")
    }

    pub fn get(&self, id: &str) -> Option<&WorkflowModule> {
        self.modules.get(id)
    }

    /// Modules in ascending id order.
    pub fn modules(&self) -> impl Iterator<Item = &WorkflowModule> {
        self.modules.values()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Workflows of `action` whose required slots fit `available`, ascending by id.
    pub fn compatible(&self, action: ActionCategory, available: &[Modality]) -> Vec<&WorkflowModule> {
        self.modules()
            .filter(|m| m.action_category == action && m.satisfiable_with(available))
            .collect()
    }

    /// Deterministic selection: the lexicographically smallest compatible id.
    pub fn select_workflow(
        &self,
        action: ActionCategory,
        available: &[Modality],
    ) -> Result<&WorkflowModule, WorkflowError> {
        self.compatible(action, available)
            .into_iter()
            .next()
            .ok_or(WorkflowError::NoCompatibleWorkflow)
    }
}

/// Reads and validates a registry file. The whole file is rejected on any
/// error, and it must keep every baseline workflow id.
pub fn load_registry(path: &Path) -> Result<Registry, WorkflowError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| WorkflowError::ParseError(format!("{}: {e}", path.display())))?;
    let registry = Registry::from_json(&text)?;
    let baseline = Registry::baseline();
    for id in baseline.modules.keys() {
        if registry.get(id).is_none() {
            return Err(WorkflowError::SchemaError(format!("baseline workflow {id} is missing")));
        }
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline_modules() -> Vec<WorkflowModule> {
        serde_json::from_str(BASELINE_REGISTRY_JSON).unwrap()
    }

    #[test]
    fn baseline_covers_every_category() {
        let r = Registry::baseline();
        assert!(r.len() >= 9, "{} modules", r.len());
        for c in ActionCategory::ALL {
            assert!(r.modules().any(|m| m.action_category == c), "{c} uncovered");
        }
        for id in [
            "wf-t2i",
            "wf-style-variants",
            "wf-edit-region",
            "wf-canny-guided",
            "wf-upscale",
            "wf-i2v",
            "wf-startend-i2v",
            "wf-interp",
            "wf-camera-move",
            "wf-tts",
            "wf-music",
        ] {
            assert!(r.get(id).is_some(), "{id} missing");
        }
    }

    #[test]
    fn image_workflows_default_to_four_candidates() {
        for m in Registry::baseline().modules() {
            let Some(ParamSpec {
                ty: ParamType::Int { default, .. },
                ..
            }) = m.param("num_candidates")
            else {
                panic!("{} has no num_candidates", m.workflow_id);
            };
            let expect = if m.output_modality == Modality::Image { 4 } else { 1 };
            assert_eq!(*default, expect, "{}", m.workflow_id);
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut ms = baseline_modules();
        ms.push(ms[0].clone());
        assert!(matches!(
            Registry::from_modules(ms),
            Err(WorkflowError::DuplicateWorkflowId(_))
        ));
    }

    #[test]
    fn default_outside_range_rejected() {
        let mut ms = baseline_modules();
        let up = ms.iter_mut().find(|m| m.workflow_id == "wf-upscale").unwrap();
        up.parameter_schema.push(ParamSpec {
            name: "tiles".into(),
            ty: ParamType::Int {
                min: 1,
                max: 4,
                default: 9,
            },
        });
        assert!(matches!(Registry::from_modules(ms), Err(WorkflowError::SchemaError(_))));
    }

    #[test]
    fn load_registry_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.json");
        std::fs::write(&good, BASELINE_REGISTRY_JSON).unwrap();
        assert_eq!(load_registry(&good).unwrap(), Registry::baseline());

        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "[{").unwrap();
        assert!(matches!(load_registry(&bad), Err(WorkflowError::ParseError(_))));

        let partial = dir.path().join("partial.json");
        let ms: Vec<_> = baseline_modules().into_iter().skip(1).collect();
        std::fs::write(&partial, serde_json::to_string(&ms).unwrap()).unwrap();
        assert!(matches!(load_registry(&partial), Err(WorkflowError::SchemaError(_))));
    }

    #[test]
    fn select_workflow_rule() {
        let r = Registry::baseline();
        use Modality::*;
        assert_eq!(
            r.select_workflow(ActionCategory::GenerateMotion, &[Image, Image])
                .unwrap()
                .workflow_id,
            "wf-camera-move"
        );
        assert_eq!(
            r.select_workflow(ActionCategory::GenerateMotion, &[]),
            Err(WorkflowError::NoCompatibleWorkflow)
        );
        let audio = r.select_workflow(ActionCategory::ProduceAudio, &[Image]).unwrap();
        assert_eq!(audio.output_modality, Audio);
    }

    /// Brute force over every sub-multiset of up to three inputs: the chosen
    /// workflow is compatible, and no compatible workflow sorts before it.
    #[test]
    fn select_workflow_matches_brute_force() {
        let r = Registry::baseline();
        let mut multisets = vec![vec![]];
        for len in 1..=3 {
            let mut next = vec![];
            for m in multisets.iter().filter(|m| m.len() == len - 1) {
                for x in Modality::ALL {
                    let mut v: Vec<Modality> = m.clone();
                    v.push(x);
                    v.sort();
                    if !next.contains(&v) {
                        next.push(v);
                    }
                }
            }
            multisets.extend(next);
        }
        assert_eq!(multisets.len(), 1 + 3 + 6 + 10);
        for action in ActionCategory::ALL {
            for inputs in &multisets {
                let expected = r
                    .modules()
                    .filter(|m| m.action_category == action)
                    .filter(|m| {
                        let mut pool = inputs.clone();
                        m.input_slots.iter().filter(|s| s.required).all(|s| {
                            match pool.iter().position(|p| *p == s.modality) {
                                Some(i) => {
                                    pool.remove(i);
                                    true
                                }
                                None => false,
                            }
                        })
                    })
                    .map(|m| m.workflow_id.clone())
                    .min();
                let got = r.select_workflow(action, inputs).ok().map(|m| m.workflow_id.clone());
                assert_eq!(got, expected, "{action} {inputs:?}");
            }
        }
    }
}
