//! Validate-on-emit against the schemas shipped in `docs/`.

use serde_json::Value;

pub const REPORT: &str = include_str!("../../../docs/report.schema.json");
pub const EVAL: &str = include_str!("../../../docs/eval.schema.json");
pub const GOLD: &str = include_str!("../../../docs/gold.schema.json");

/// Returns every violation of `schema` by the JSON document `text`, one line
/// each, or an empty list when it conforms.
pub fn violations(schema: &str, text: &str) -> Vec<String> {
    let schema: Value = serde_json::from_str(schema).expect("bundled schema is JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let instance: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![format!("not JSON: {e}")],
    };
    validator
        .iter_errors(&instance)
        .map(|e| format!("{}: {e}", e.instance_path()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schemas_compile() {
        for s in [REPORT, EVAL, GOLD] {
            let v: Value = serde_json::from_str(s).unwrap();
            assert!(jsonschema::validator_for(&v).is_ok());
        }
    }

    #[test]
    fn reports_missing_fields() {
        assert!(!violations(GOLD, r#"{"labels": [{"query_id": "q1"}]}"#).is_empty());
        assert!(violations(GOLD, r#"{"labels": []}"#).is_empty());
    }
}
