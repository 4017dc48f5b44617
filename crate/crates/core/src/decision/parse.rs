use serde_json::{Map, Value};
use thiserror::Error;

use super::action::{DecisionParameters, SupervisionAction, SupervisionDecision};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseFailure {
    #[error("no JSON object with an `action` key found")]
    NoObject,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` is missing its `{parameter}` parameter")]
    MissingParameter { action: SupervisionAction, parameter: &'static str },
}

/// Extracts the first JSON object carrying an `action` key from a model
/// reply. Surrounding prose and code fences are skipped.
pub fn parse_decision(raw: &str) -> Result<SupervisionDecision, ParseFailure> {
    let object = first_decision_object(raw).ok_or(ParseFailure::NoObject)?;
    let action_name = match object.get("action") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => return Err(ParseFailure::NoObject),
    };
    let action = SupervisionAction::parse(&action_name).ok_or(ParseFailure::UnknownAction(action_name))?;
    let analysis = match object.get("analysis") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    let params = object.get("parameters").and_then(Value::as_object);
    let text = |keys: &[&str]| -> Option<String> {
        keys.iter()
            .find_map(|k| params.and_then(|p| p.get(*k)).and_then(Value::as_str))
            .map(str::to_string)
            .filter(|s| !s.trim().is_empty())
    };
    let decision = SupervisionDecision {
        analysis,
        action,
        parameters: DecisionParameters {
            new_observation: text(&["new_observation"]),
            guidance: text(&["guidance"]),
            verification_task: text(&["task", "verification_task"]),
        },
    }
    .normalized();
    if let Some(parameter) = action.required_parameter() {
        if decision.payload().is_none() {
            return Err(ParseFailure::MissingParameter { action, parameter });
        }
    }
    Ok(decision)
}

fn first_decision_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(at, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[at..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) if map.contains_key("action") => Some(map),
            _ => None,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_approve() {
        let d = parse_decision(r#"{"analysis":"ok","action":"approve","parameters":{}}"#).unwrap();
        assert_eq!(d, SupervisionDecision::approve("ok"));
    }

    #[test]
    fn fenced_block_after_prose() {
        let raw = "Let me think about this.\n```json\n{\"analysis\":\"ok\",\"action\":\"approve\",\"parameters\":{}}\n```\nDone.";
        assert_eq!(parse_decision(raw).unwrap(), SupervisionDecision::approve("ok"));
    }

    #[test]
    fn unknown_action() {
        assert_eq!(parse_decision(r#"{"action":"fly"}"#), Err(ParseFailure::UnknownAction("fly".into())));
    }

    #[test]
    fn no_object() {
        assert_eq!(parse_decision("approve"), Err(ParseFailure::NoObject));
        assert_eq!(parse_decision(r#"{"analysis": "x"}"#), Err(ParseFailure::NoObject));
        assert_eq!(parse_decision("{ broken"), Err(ParseFailure::NoObject));
    }

    #[test]
    fn missing_parameter() {
        assert_eq!(
            parse_decision(r#"{"analysis":"a","action":"provide_guidance","parameters":{"guidance":""}}"#),
            Err(ParseFailure::MissingParameter { action: SupervisionAction::ProvideGuidance, parameter: "guidance" })
        );
    }

    #[test]
    fn case_insensitive_and_extra_params_dropped() {
        let raw = r#"{"analysis":"a","action":"Correct_Observation","parameters":{"new_observation":"clean","guidance":"IF action is..."}}"#;
        let d = parse_decision(raw).unwrap();
        assert_eq!(d, SupervisionDecision::correct("a", "clean"));
    }

    #[test]
    fn verification_task_key() {
        let d =
            parse_decision(r#"{"analysis":"a","action":"run_verification","parameters":{"task":"How many layers?"}}"#)
                .unwrap();
        assert_eq!(d.payload(), Some("How many layers?"));
    }

    #[test]
    fn skips_non_decision_objects() {
        let raw = r#"context {"x": 1} then {"analysis":"","action":"approve"}"#;
        assert_eq!(parse_decision(raw).unwrap().action, SupervisionAction::Approve);
    }
}
