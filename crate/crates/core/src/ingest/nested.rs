//! Nested JSON chat transcripts.
//!
//! A file holds one transcript object, an array of them, or an object with a
//! `trajectories` array. Each transcript looks like
//!
//! ```json
//! {
//!   "instance_id": "astropy__astropy-12907",
//!   "info": {"framework": "chat-agent", "framework_version": "0.3",
//!            "model": "claude-3-5-sonnet-20241022", "model_family": "claude",
//!            "resolved": true},
//!   "messages": [
//!     {"role": "user", "content": "Fix the bug"},
//!     {"role": "assistant", "content": "Let me look",
//!      "tool_calls": [{"name": "bash", "arguments": {"command": "ls"}}]},
//!     {"role": "tool", "content": "setup.py", "exit_code": 0}
//!   ]
//! }
//! ```
//!
//! Each tool call becomes one turn and consumes the next `tool` message as
//! its observation. Calls named `bash`, `shell`, `execute_bash` or
//! `run_command` with a string `command` argument become bash actions.

use serde_json::{Map, Value};

use crate::model::{
    validate_trajectory, Action, ConfigurationId, Observation, Outcome, Trajectory, Turn,
};

use super::{FamilyMap, FormatAdapter, ParsedItem};

const SHELL_TOOLS: [&str; 4] = ["bash", "shell", "execute_bash", "run_command"];

#[derive(Debug, Clone, Default)]
pub struct NestedJsonAdapter {
    families: FamilyMap,
}

impl NestedJsonAdapter {
    pub fn new(families: FamilyMap) -> Self {
        Self { families }
    }

    fn transcripts(value: &Value) -> Option<Vec<&Value>> {
        match value {
            Value::Object(m) if m.contains_key("messages") => Some(vec![value]),
            Value::Object(m) => match m.get("trajectories") {
                Some(Value::Array(items)) if !items.is_empty() && items.iter().all(has_messages) => {
                    Some(items.iter().collect())
                }
                _ => None,
            },
            Value::Array(items) if !items.is_empty() && items.iter().all(has_messages) => {
                Some(items.iter().collect())
            }
            _ => None,
        }
    }

    fn convert(&self, value: &Value, position: usize) -> ParsedItem {
        let obj = value.as_object().expect("transcripts are objects");
        let id = obj
            .get("instance_id")
            .or_else(|| obj.get("id"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("transcript {position}: missing instance_id"))?;
        let label = format!("trajectory {id}");
        let info = obj
            .get("info")
            .and_then(Value::as_object)
            .ok_or_else(|| format!("{label}: missing info"))?;
        let text = |k: &str| info.get(k).and_then(Value::as_str).map(str::to_string);
        let framework = text("framework").ok_or_else(|| format!("{label}: missing info.framework"))?;
        let llm = text("model").ok_or_else(|| format!("{label}: missing info.model"))?;
        let outcome = match info.get("resolved") {
            Some(Value::Bool(true)) => Outcome::Resolved,
            Some(Value::Bool(false)) => Outcome::Failed,
            Some(other) => return Err(format!("{label}: unsupported outcome {other}")),
            None => return Err(format!("{label}: missing info.resolved")),
        };
        let llm_family = text("model_family").unwrap_or_else(|| self.families.family_of(&llm));

        let messages = obj
            .get("messages")
            .and_then(Value::as_array)
            .ok_or_else(|| format!("{label}: messages must be an array"))?;

        let mut turns: Vec<Turn> = Vec::new();
        let mut pending: std::collections::VecDeque<usize> = Default::default();
        for msg in messages {
            let role = msg.get("role").and_then(Value::as_str).unwrap_or("");
            let content = msg.get("content").and_then(Value::as_str).unwrap_or("");
            match role {
                "assistant" => {
                    let calls = msg.get("tool_calls").and_then(Value::as_array);
                    let mut thought = (!content.is_empty()).then(|| content.to_string());
                    for call in calls.into_iter().flatten() {
                        let index = turns.len() + 1;
                        let action = tool_call_action(call)
                            .map_err(|e| format!("{label}: turn {index}: {e}"))?;
                        turns.push(Turn {
                            index,
                            thought: thought.take(),
                            action,
                            observation: Observation::default(),
                        });
                        pending.push_back(turns.len() - 1);
                    }
                }
                "tool" => {
                    if let Some(i) = pending.pop_front() {
                        turns[i].observation = Observation {
                            text: content.to_string(),
                            exit_code: msg.get("exit_code").and_then(Value::as_i64),
                        };
                    }
                }
                _ => {}
            }
        }

        let trajectory = Trajectory {
            id,
            config: ConfigurationId {
                framework,
                framework_version: text("framework_version"),
                llm,
                llm_family,
            },
            turns,
            outcome,
        };
        let violations = validate_trajectory(&trajectory);
        if violations.is_empty() {
            Ok(trajectory)
        } else {
            Err(format!("{label}: {}", violations.join("; ")))
        }
    }
}

fn has_messages(v: &Value) -> bool {
    v.as_object().is_some_and(|m| m.contains_key("messages"))
}

fn tool_call_action(call: &Value) -> Result<Action, String> {
    let name = call
        .get("name")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or("tool call without a name")?;
    let arguments: Option<Map<String, Value>> = match call.get("arguments") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => Some(m.clone()),
        // some exporters store arguments as a JSON-encoded string
        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(m)) => Some(m),
            _ => return Err("tool call arguments are not a JSON object".into()),
        },
        Some(_) => return Err("tool call arguments are not a JSON object".into()),
    };
    if SHELL_TOOLS.contains(&name) {
        let command = arguments
            .as_ref()
            .and_then(|a| a.get("command"))
            .and_then(Value::as_str)
            .ok_or("shell tool call without a command")?;
        return Ok(Action::bash(command));
    }
    Ok(Action::ToolCall {
        tool_name: name.to_string(),
        arguments,
    })
}

impl FormatAdapter for NestedJsonAdapter {
    fn name(&self) -> &str {
        "nested-json"
    }

    fn detect(&self, bytes: &[u8]) -> bool {
        match serde_json::from_slice::<Value>(bytes) {
            Ok(v) => Self::transcripts(&v).is_some(),
            Err(_) => false,
        }
    }

    fn parse(&self, bytes: &[u8]) -> Vec<ParsedItem> {
        let value: Value = match serde_json::from_slice(bytes) {
            Ok(v) => v,
            Err(e) => return vec![Err(format!("malformed JSON: {e}"))],
        };
        match Self::transcripts(&value) {
            Some(items) => items
                .into_iter()
                .enumerate()
                .map(|(i, v)| self.convert(v, i + 1))
                .collect(),
            None => vec![Err("no transcripts found".into())],
        }
    }
}
