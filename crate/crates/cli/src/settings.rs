use std::path::Path;

use implantsim::campaign::CampaignConfig;
use serde_json::{Map, Value};

use crate::failure::{Failure, Outcome};

/// Parses `a.b.c=value`. The value is read as JSON and falls back to a
/// plain string.
fn parse_assignment(s: &str) -> Outcome<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("override `{s}` is not of the form dotted.path=value"), None))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::config(format!("override `{s}` has an empty path segment"), None));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn assign(root: &mut Value, path: &[String], value: Value) -> Outcome<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        if !node.is_object() {
            return Err(Failure::config(
                format!("cannot set `{}`: `{}` is not an object", path.join("."), path[..i].join(".")),
                None,
            ));
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == path.len() {
            map.insert(seg.clone(), value);
            return Ok(());
        }
        node = map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Builds the effective configuration: built-in defaults, then the config
/// file, then `--set` overrides. Relative table paths are resolved against
/// the config file's directory and their contents inlined.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Outcome<CampaignConfig> {
    let shown = path.map(|p| p.display().to_string());
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("cannot read config: {e}"), shown.clone()))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Failure::config(format!("invalid JSON: {e}"), shown.clone()))?
        }
        None => Value::Object(Map::new()),
    };
    for o in overrides {
        let (p, v) = parse_assignment(o)?;
        assign(&mut value, &p, v)?;
    }
    let config: CampaignConfig =
        serde_json::from_value(value).map_err(|e| Failure::config(format!("invalid config: {e}"), shown.clone()))?;
    let base = path.and_then(Path::parent);
    config
        .resolved(base)
        .map_err(|e| Failure::config(format!("invalid config: {e}"), shown))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_objects() {
        let mut v = Value::Object(Map::new());
        let (p, x) = parse_assignment("array.pitch_nm=1500").unwrap();
        assign(&mut v, &p, x).unwrap();
        assert_eq!(v["array"]["pitch_nm"], 1500);
        let (p, x) = parse_assignment("fabrication.anneal=1200C 8h").unwrap();
        assign(&mut v, &p, x).unwrap();
        assert_eq!(v["fabrication"]["anneal"], "1200C 8h");
        let (p, x) = parse_assignment("array.pitch_nm.x=1").unwrap();
        assert!(assign(&mut v, &p, x).is_err());
        assert!(parse_assignment("novalue").is_err());
        assert!(parse_assignment("a..b=1").is_err());
    }

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        std::fs::write(&f, r#"{"seed": 3, "array": {"pitch_nm": 1800, "rows": 4}}"#).unwrap();
        let c = load_config(Some(&f), &["array.rows=5".into()]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.array.pitch_nm, 1800.0);
        assert_eq!(c.array.rows, 5);
        assert_eq!(c.array.columns, CampaignConfig::default().array.columns);
    }

    #[test]
    fn unknown_keys_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.json");
        std::fs::write(&f, r#"{"arry": {}}"#).unwrap();
        let e = load_config(Some(&f), &[]).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.path.unwrap().ends_with("c.json"));
        assert!(e.message.contains("arry"));
    }
}
