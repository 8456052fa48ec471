use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::ProjectId;
use crate::model::NodeKind;

/// Session-level context injected into every planning request.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalContext {
    pub model_id: String,
    pub style: String,
    pub mood: String,
    pub palette: String,
    pub reference_material: String,
}

/// Global node spacing in abstract pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacingConfig {
    pub h_spacing: f64,
    pub v_spacing: f64,
}

impl Default for SpacingConfig {
    fn default() -> Self {
        Self {
            h_spacing: 40.0,
            v_spacing: 60.0,
        }
    }
}

impl SpacingConfig {
    pub fn is_valid(&self) -> bool {
        self.h_spacing > 0.0 && self.v_spacing > 0.0 && self.h_spacing.is_finite() && self.v_spacing.is_finite()
    }
}

pub fn default_modality_colors() -> BTreeMap<NodeKind, String> {
    BTreeMap::from([
        (NodeKind::Init, "#9e9e9e".to_owned()),
        (NodeKind::IntentDraft, "#bdbdbd".to_owned()),
        (NodeKind::Planning, "#e0e0e0".to_owned()),
        (NodeKind::Image, "#1e88e5".to_owned()),
        (NodeKind::Video, "#43a047".to_owned()),
        (NodeKind::Audio, "#e53935".to_owned()),
    ])
}

/// Project header. Also written as `project.json` in the project directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: ProjectId,
    pub name: String,
    pub global_context: GlobalContext,
    pub layout_config: SpacingConfig,
    pub modality_colors: BTreeMap<NodeKind, String>,
    pub created_at: u64,
}

impl Project {
    pub fn new(project_id: ProjectId, name: impl Into<String>, created_at: u64) -> Self {
        Self {
            project_id,
            name: name.into(),
            global_context: GlobalContext::default(),
            layout_config: SpacingConfig::default(),
            modality_colors: default_modality_colors(),
            created_at,
        }
    }

    pub fn colors_cover_media(colors: &BTreeMap<NodeKind, String>) -> bool {
        [NodeKind::Image, NodeKind::Video, NodeKind::Audio]
            .iter()
            .all(|k| colors.get(k).is_some_and(|c| !c.trim().is_empty()))
    }
}
