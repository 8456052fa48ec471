//! Deterministic provider test double, its fixed keyword table and a
//! recording wrapper.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{AgentError, Provider, ProviderRequest, ProviderResponse, Role};
use crate::model::{ActionCategory, TokenUsage};

/// One row of the mock Master's keyword table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeywordClass {
    pub name: &'static str,
    /// A token matches a stem exactly, or by prefix when the stem has at
    /// least four characters.
    pub stems: &'static [&'static str],
    pub category: ActionCategory,
    /// Workflow the mock Workflow agent prefers when it is compatible.
    pub workflow_hint: &'static str,
    /// A representative intent for this class.
    pub example: &'static str,
}

/// Matched in table order; the first class with a matching token wins, so
/// audio classes precede the generic edit verbs ("add background music").
pub const KEYWORD_CLASSES: &[KeywordClass] = &[
    KeywordClass {
        name: "narration",
        stems: &["narrat", "voiceover", "voice", "speech", "tts"],
        category: ActionCategory::ProduceAudio,
        workflow_hint: "wf-tts",
        example: "add a narration for the ending",
    },
    KeywordClass {
        name: "music",
        stems: &["music", "soundtrack", "score", "melody"],
        category: ActionCategory::ProduceAudio,
        workflow_hint: "wf-music",
        example: "add background music",
    },
    KeywordClass {
        name: "transition",
        stems: &["transition", "bridge", "morph"],
        category: ActionCategory::GenerateMotion,
        workflow_hint: "wf-startend-i2v",
        example: "make a transition between the two scenes",
    },
    KeywordClass {
        name: "interpolate",
        stems: &["interpolat", "smooth", "fluid"],
        category: ActionCategory::GenerateMotion,
        workflow_hint: "wf-interp",
        example: "interpolate frames so the clip feels smoother",
    },
    KeywordClass {
        name: "camera",
        stems: &["camera", "zoom", "rotat", "pan", "orbit", "dolly"],
        category: ActionCategory::GenerateMotion,
        workflow_hint: "wf-camera-move",
        example: "slow camera zoom towards the moon",
    },
    KeywordClass {
        name: "animate",
        stems: &["animat", "video", "motion", "move", "moving"],
        category: ActionCategory::GenerateMotion,
        workflow_hint: "wf-i2v",
        example: "animate this street scene into a video",
    },
    KeywordClass {
        name: "upscale",
        stems: &["upscal", "sharpen", "enhance", "resolution"],
        category: ActionCategory::RefineVisual,
        workflow_hint: "wf-upscale",
        example: "upscale the chosen frame",
    },
    KeywordClass {
        name: "structure",
        stems: &["structur", "canny", "edge", "outline", "contour", "pose"],
        category: ActionCategory::RefineVisual,
        workflow_hint: "wf-canny-guided",
        example: "keep the structure but change the lighting",
    },
    KeywordClass {
        name: "edit",
        stems: &["remov", "add", "enrich", "edit", "replace", "insert", "fix", "eras"],
        category: ActionCategory::RefineVisual,
        workflow_hint: "wf-edit-region",
        example: "remove the car from the street",
    },
    KeywordClass {
        name: "compose",
        stems: &["compos", "overlay", "layer", "combin", "blend"],
        category: ActionCategory::Assemble,
        workflow_hint: "wf-compose-layers",
        example: "overlay the lantern onto the courtyard",
    },
    KeywordClass {
        name: "concatenate",
        stems: &["concaten", "join", "splice", "sequence"],
        category: ActionCategory::Assemble,
        workflow_hint: "wf-concat-clips",
        example: "join the two clips",
    },
    KeywordClass {
        name: "variants",
        stems: &["variant", "styl", "alternativ", "options"],
        category: ActionCategory::EstablishAnchor,
        workflow_hint: "wf-style-variants",
        example: "try several stylistic variants",
    },
    KeywordClass {
        name: "default",
        stems: &[],
        category: ActionCategory::EstablishAnchor,
        workflow_hint: "wf-t2i",
        example: "a quiet riverside at night",
    },
];

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "her", "his", "in",
    "into", "is", "it", "its", "more", "of", "on", "onto", "or", "our", "out", "over", "so", "some", "than", "that",
    "the", "their", "them", "then", "there", "these", "this", "those", "through", "to", "too", "towards", "two",
    "under", "up", "very", "was", "while", "with", "without", "make", "makes", "keep", "keeps", "let", "feel", "feels",
    "using", "use", "same", "new", "one", "each", "both", "all", "between", "after", "before", "again",
];

/// Words the mock treats as self-explanatory.
const VOCABULARY: &[&str] = &[
    "scene",
    "scenes",
    "image",
    "images",
    "frame",
    "frames",
    "shot",
    "clip",
    "clips",
    "background",
    "foreground",
    "light",
    "lighting",
    "dark",
    "night",
    "day",
    "morning",
    "evening",
    "sunset",
    "sunrise",
    "sky",
    "moon",
    "sun",
    "star",
    "stars",
    "tree",
    "trees",
    "river",
    "water",
    "mountain",
    "mountains",
    "street",
    "city",
    "house",
    "desert",
    "forest",
    "field",
    "garden",
    "courtyard",
    "room",
    "road",
    "sea",
    "lake",
    "rain",
    "snow",
    "wind",
    "cloud",
    "clouds",
    "fog",
    "mist",
    "dew",
    "drop",
    "drops",
    "leaf",
    "leaves",
    "flower",
    "flowers",
    "grass",
    "stone",
    "rock",
    "person",
    "people",
    "man",
    "woman",
    "child",
    "hand",
    "hands",
    "face",
    "animal",
    "bird",
    "horse",
    "dog",
    "cat",
    "car",
    "boat",
    "lantern",
    "lamp",
    "table",
    "window",
    "door",
    "wall",
    "red",
    "blue",
    "green",
    "yellow",
    "white",
    "black",
    "gold",
    "golden",
    "warm",
    "cold",
    "soft",
    "bright",
    "quiet",
    "calm",
    "slow",
    "fast",
    "close",
    "wide",
    "view",
    "atmosphere",
    "mood",
    "color",
    "colors",
    "colour",
    "tone",
    "detail",
    "details",
    "ending",
    "opening",
    "end",
    "start",
    "first",
    "last",
    "final",
    "next",
    "chosen",
    "selected",
    "several",
    "small",
    "large",
    "old",
    "ancient",
    "modern",
    "traditional",
    "playing",
    "walking",
    "standing",
    "sitting",
    "looking",
    "glowing",
    "change",
    "changes",
    "smoother",
    "anachronism",
    "anachronistic",
];

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn stem_matches(stem: &str, token: &str) -> bool {
    token == stem || (stem.len() >= 4 && token.starts_with(stem))
}

/// The first keyword class with a token in `intent`; `default` otherwise.
pub fn keyword_class(intent: &str) -> &'static KeywordClass {
    let toks = tokens(intent);
    KEYWORD_CLASSES
        .iter()
        .find(|c| c.stems.iter().any(|s| toks.iter().any(|t| stem_matches(s, t))))
        .unwrap_or_else(|| KEYWORD_CLASSES.last().expect("table has a default"))
}

pub fn classify_intent(intent: &str) -> ActionCategory {
    keyword_class(intent).category
}

/// Intent tokens outside the stop-list, the vocabulary and the keyword
/// stems, in first-appearance order. Non-empty means Knowledge runs.
pub fn unknown_terms(intent: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokens(intent)
        .into_iter()
        .filter(|t| t.len() >= 3 && t.chars().all(char::is_alphabetic))
        .filter(|t| !STOP_WORDS.contains(&t.as_str()) && !VOCABULARY.contains(&t.as_str()))
        .filter(|t| !KEYWORD_CLASSES.iter().flat_map(|c| c.stems).any(|s| stem_matches(s, t)))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Per role: (prompt base, prompt span, completion base, completion span).
/// Token counts are `base + hash % span`.
pub const ROLE_TOKEN_BOUNDS: [(Role, u32, u32, u32, u32); 4] = [
    (Role::Master, 520, 160, 90, 40),
    (Role::Knowledge, 380, 120, 120, 80),
    (Role::Workflow, 460, 120, 40, 20),
    (Role::Prompt, 700, 200, 220, 120),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultMode {
    /// The next `n` calls for the role return text without a fenced block.
    Garbage(u32),
    /// Every call for the role fails as unavailable.
    Unavailable,
}

/// Deterministic provider: response text and token usage are pure
/// functions of the role, template id, intent keywords and context.
#[derive(Default)]
pub struct MockProvider {
    faults: Mutex<BTreeMap<Role, FaultMode>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(self, role: Role, mode: FaultMode) -> Self {
        self.faults.lock().unwrap().insert(role, mode);
        self
    }

    fn usage(request: &ProviderRequest) -> TokenUsage {
        let mut h = Sha256::new();
        h.update(request.role.as_str());
        h.update([0]);
        h.update(&request.system_template_id);
        h.update([0]);
        let mut kw = tokens(&request.user_intent);
        kw.sort();
        kw.dedup();
        h.update(kw.join(" "));
        h.update([0]);
        h.update(serde_json::to_vec(&request.context).unwrap_or_default());
        h.update(serde_json::to_vec(&request.attachments).unwrap_or_default());
        let d = h.finalize();
        let a = u32::from_le_bytes(d[..4].try_into().unwrap());
        let b = u32::from_le_bytes(d[4..8].try_into().unwrap());
        let (_, pb, ps, cb, cs) = ROLE_TOKEN_BOUNDS
            .iter()
            .find(|r| r.0 == request.role)
            .copied()
            .expect("every role has bounds");
        TokenUsage {
            prompt_tokens: pb + a % ps,
            completion_tokens: cb + b % cs,
        }
    }

    fn body(request: &ProviderRequest) -> Value {
        let class = keyword_class(&request.user_intent);
        match request.role {
            Role::Master => json!({
                "action_category": class.category,
                "rationale": format!("intent matches the {} keyword class", class.name),
            }),
            Role::Knowledge => {
                let notes: Vec<String> = unknown_terms(&request.user_intent)
                    .iter()
                    .map(|t| {
                        format!("{t}: a specific term in the intent; depict it with concrete, recognizable traits")
                    })
                    .collect();
                json!({ "notes": notes.join("; ") })
            }
            Role::Workflow => {
                let compatible: Vec<&str> = request.role_input["compatible"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_str).collect())
                    .unwrap_or_default();
                let pick = if compatible.contains(&class.workflow_hint) {
                    Some(class.workflow_hint)
                } else {
                    compatible.iter().min().copied()
                };
                json!({ "workflow_id": pick })
            }
            Role::Prompt => {
                let g = &request.context.global;
                let mut parts = vec![request.user_intent.trim().to_owned()];
                let scene = request.context.path.scene_intent.trim();
                if !scene.is_empty() {
                    parts.push(format!("scene: {scene}"));
                }
                if let Some(prev) = request.context.path.path.last() {
                    if !prev.prompt_summary.is_empty() {
                        parts.push(format!("continuing from: {}", prev.prompt_summary));
                    }
                }
                for (k, v) in [("style", &g.style), ("mood", &g.mood), ("palette", &g.palette)] {
                    if !v.trim().is_empty() {
                        parts.push(format!("{k}: {}", v.trim()));
                    }
                }
                if let Some(n) = request.role_input["knowledge_notes"].as_str() {
                    if !n.is_empty() {
                        parts.push(format!("notes: {n}"));
                    }
                }
                let wf = request.role_input["workflow_id"].as_str().unwrap_or("");
                json!({ "prompt": parts.join("; "), "parameters": draft_parameters(wf, request) })
            }
        }
    }
}

fn draft_parameters(workflow_id: &str, request: &ProviderRequest) -> Value {
    let toks = tokens(&request.user_intent);
    let has = |w: &str| toks.iter().any(|t| t == w);
    match workflow_id {
        "wf-camera-move" => {
            let motion = if has("out") {
                "zoom-out"
            } else if has("pan") && has("left") {
                "pan-left"
            } else if has("pan") {
                "pan-right"
            } else if toks.iter().any(|t| t.starts_with("orbit") || t.starts_with("rotat")) {
                "orbit-cw"
            } else {
                "zoom-in"
            };
            json!({ "motion": motion })
        }
        "wf-style-variants" => {
            let style = ["watercolor", "ink", "photographic", "oil"]
                .into_iter()
                .find(|s| has(s))
                .unwrap_or("auto");
            json!({ "style": style })
        }
        "wf-music" => json!({ "mood": request.context.global.mood }),
        "wf-interp" if has("slow") => json!({ "factor": 4 }),
        _ => json!({}),
    }
}

impl Provider for MockProvider {
    fn generate(&self, _system: &str, request: &ProviderRequest) -> Result<ProviderResponse, AgentError> {
        let token_usage = Self::usage(request);
        {
            let mut faults = self.faults.lock().unwrap();
            match faults.get_mut(&request.role) {
                Some(FaultMode::Unavailable) => return Err(AgentError::ProviderUnavailable("injected fault".into())),
                Some(FaultMode::Garbage(n)) if *n > 0 => {
                    *n -= 1;
                    return Ok(ProviderResponse {
                        text: "I am not sure what to do here.".into(),
                        token_usage,
                    });
                }
                _ => {}
            }
        }
        let body = serde_json::to_string_pretty(&Self::body(request)).expect("json");
        Ok(ProviderResponse {
            text: format!("```json\n{body}\n```\n"),
            token_usage,
        })
    }
}

/// Forwards to an inner provider and keeps every request it saw.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<Vec<ProviderRequest>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Mutex::new(vec![]),
        }
    }

    pub fn requests(&self) -> Vec<ProviderRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn generate(&self, system: &str, request: &ProviderRequest) -> Result<ProviderResponse, AgentError> {
        self.log.lock().unwrap().push(request.clone());
        self.inner.generate(system, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples_classify_to_their_own_class() {
        for c in KEYWORD_CLASSES {
            assert_eq!(keyword_class(c.example).name, c.name, "{}", c.example);
        }
    }

    #[test]
    fn named_intents() {
        assert_eq!(classify_intent("remove the car"), ActionCategory::RefineVisual);
        assert_eq!(classify_intent("add background music"), ActionCategory::ProduceAudio);
        assert_eq!(
            classify_intent("animate this street scene into a video"),
            ActionCategory::GenerateMotion
        );
        assert_eq!(classify_intent("a camel at dawn"), ActionCategory::EstablishAnchor);
    }

    #[test]
    fn unknown_terms_skip_known_words() {
        assert_eq!(
            unknown_terms("a tricolor camel in the desert"),
            vec!["tricolor", "camel"]
        );
        assert!(unknown_terms("remove the car from the street").is_empty());
    }

    #[test]
    fn identical_requests_give_identical_responses() {
        let req = ProviderRequest {
            role: Role::Master,
            system_template_id: "master.v1".into(),
            context: Default::default(),
            user_intent: "animate the scene".into(),
            attachments: vec![],
            role_input: Value::Null,
        };
        let p = MockProvider::new();
        assert_eq!(p.generate("", &req).unwrap(), p.generate("", &req).unwrap());
    }
}
