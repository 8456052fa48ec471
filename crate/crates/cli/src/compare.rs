//! Canonical, timestamp-free view of a data directory, for checking that
//! two runs produced the same state.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

/// Keys whose values are wall-clock readings.
const TIME_KEYS: &[&str] = &["timestamp", "created_at", "requested_at", "started_at", "finished_at"];

fn scrub(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for (k, x) in m.iter_mut() {
                if TIME_KEYS.contains(&k.as_str()) && (x.is_number() || x.is_null()) {
                    *x = Value::from(0);
                } else {
                    scrub(x);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(scrub),
        _ => {}
    }
}

fn canonical_json(bytes: &[u8]) -> Option<Vec<u8>> {
    let mut v: Value = serde_json::from_slice(bytes).ok()?;
    scrub(&mut v);
    serde_json::to_vec(&v).ok()
}

/// Canonical bytes of one file: JSON and JSON Lines are re-serialized with
/// time fields zeroed; anything else is returned as is.
pub fn normalize(name: &str, bytes: Vec<u8>) -> Vec<u8> {
    if name.ends_with(".jsonl") {
        let text = String::from_utf8_lossy(&bytes);
        let mut out = vec![];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            out.extend(canonical_json(line.as_bytes()).unwrap_or_else(|| line.as_bytes().to_vec()));
            out.push(b'\n');
        }
        out
    } else if name.ends_with(".json") {
        canonical_json(&bytes).unwrap_or(bytes)
    } else {
        bytes
    }
}

/// Every file under `root` (relative path to normalized bytes), skipping
/// lock files and paths for which `skip` holds.
pub fn normalized_tree(root: &Path, skip: &dyn Fn(&Path) -> bool) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir)? {
            let e = e?;
            let path = e.path();
            let rel = path.strip_prefix(root).expect("under root");
            if skip(rel) || e.file_name() == ".lock" {
                continue;
            }
            if e.file_type()?.is_dir() {
                stack.push(path);
            } else {
                let key = rel.to_string_lossy().replace('\\', "/");
                let bytes = std::fs::read(&path)?;
                out.insert(key.clone(), normalize(&key, bytes));
            }
        }
    }
    Ok(out)
}

/// Paths that differ between two normalized trees.
pub fn diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_are_ignored_but_content_is_not() {
        let a = normalize(
            "e.jsonl",
            b"{\"seq\":1,\"timestamp\":5,\"x\":{\"created_at\":9}}\n".to_vec(),
        );
        let b = normalize(
            "e.jsonl",
            b"{\"x\":{\"created_at\":1},\"seq\":1,\"timestamp\":7}\n".to_vec(),
        );
        assert_eq!(a, b);
        let c = normalize(
            "e.jsonl",
            b"{\"seq\":2,\"timestamp\":5,\"x\":{\"created_at\":9}}\n".to_vec(),
        );
        assert_ne!(a, c);
        assert_eq!(normalize("raw.bin", vec![1, 2]), vec![1, 2]);
    }
}
