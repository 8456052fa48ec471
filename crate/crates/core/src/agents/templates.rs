use std::collections::BTreeMap;
use std::path::Path;

use super::{AgentError, Role};

/// Preamble every system template must start with.
pub const CONTENT_RULES: &str = include_str!("../../templates/content_rules.txt");

const BUILTIN: [(&str, &str); 4] = [
    ("master.v1", include_str!("../../templates/master.v1.txt")),
    ("knowledge.v1", include_str!("../../templates/knowledge.v1.txt")),
    ("workflow.v1", include_str!("../../templates/workflow.v1.txt")),
    ("prompt.v1", include_str!("../../templates/prompt.v1.txt")),
];

/// The curated template set. Ids are `<role>.v<N>`; each role uses its
/// highest version.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    by_id: BTreeMap<String, String>,
    active: BTreeMap<Role, String>,
}

fn parse_id(id: &str) -> Option<(Role, u32)> {
    let (role, ver) = id.split_once(".v")?;
    let role = Role::ALL.into_iter().find(|r| r.as_str() == role)?;
    Some((role, ver.parse().ok()?))
}

impl Templates {
    pub fn builtin() -> Self {
        Self::from_pairs(BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())))
            .expect("builtin templates are valid")
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, AgentError> {
        let mut by_id = BTreeMap::new();
        let mut best: BTreeMap<Role, (u32, String)> = BTreeMap::new();
        for (id, text) in pairs {
            let invalid = |reason: &str| AgentError::InvalidTemplate {
                id: id.clone(),
                reason: reason.to_owned(),
            };
            let (role, ver) = parse_id(&id).ok_or_else(|| invalid("id must be <role>.v<N>"))?;
            if !text.starts_with(CONTENT_RULES) {
                return Err(invalid("missing the content-rule preamble"));
            }
            if !text.contains(&format!("ROLE {}", role.as_str())) {
                return Err(invalid("role line does not match the id"));
            }
            if best.get(&role).is_none_or(|(v, _)| ver > *v) {
                best.insert(role, (ver, id.clone()));
            }
            by_id.insert(id, text);
        }
        for r in Role::ALL {
            if !best.contains_key(&r) {
                return Err(AgentError::UnknownTemplate(format!("{}.v*", r.as_str())));
            }
        }
        Ok(Self {
            by_id,
            active: best.into_iter().map(|(r, (_, id))| (r, id)).collect(),
        })
    }

    /// Loads every `<role>.v<N>.txt` file of `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let io = |e: std::io::Error| AgentError::InvalidTemplate {
            id: dir.display().to_string(),
            reason: e.to_string(),
        };
        let mut pairs = vec![];
        for e in std::fs::read_dir(dir).map_err(io)? {
            let path = e.map_err(io)?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(id) = name.strip_suffix(".txt") {
                if parse_id(id).is_some() {
                    pairs.push((id.to_owned(), std::fs::read_to_string(&path).map_err(io)?));
                }
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn active_id(&self, role: Role) -> &str {
        &self.active[&role]
    }

    pub fn text(&self, id: &str) -> Result<&str, AgentError> {
        self.by_id
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| AgentError::UnknownTemplate(id.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_covers_all_roles() {
        let t = Templates::builtin();
        for r in Role::ALL {
            assert!(t.text(t.active_id(r)).unwrap().starts_with(CONTENT_RULES));
        }
    }

    #[test]
    fn rejects_missing_preamble_and_bad_ids() {
        let mut pairs: Vec<(String, String)> = BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        pairs[0].1 = "ROLE master\nno rules".into();
        assert!(matches!(
            Templates::from_pairs(pairs),
            Err(AgentError::InvalidTemplate { .. })
        ));
        let bad = vec![("boss.v1".to_owned(), CONTENT_RULES.to_owned())];
        assert!(matches!(
            Templates::from_pairs(bad),
            Err(AgentError::InvalidTemplate { .. })
        ));
    }

    #[test]
    fn highest_version_wins() {
        let mut pairs: Vec<(String, String)> = BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        pairs.push(("master.v2".into(), BUILTIN[0].1.to_owned()));
        let t = Templates::from_pairs(pairs).unwrap();
        assert_eq!(t.active_id(Role::Master), "master.v2");
        assert!(t.text("master.v1").is_ok());
    }
}
