//! Plain-text ReAct logs with `THOUGHT:` / `ACTION:` / `OBSERVATION:` markers.
//!
//! ```text
//! # trajectory_id: django__django-11099
//! # framework: react-agent
//! # llm: gpt-4o-2024-08-06
//! # outcome: resolved
//! THOUGHT: look around first
//! ACTION: ls -la
//! OBSERVATION: setup.py
//! src
//! EXIT: 0
//! ACTION[file_viewer]: {"path": "setup.py"}
//! OBSERVATION: ...
//! ```
//!
//! Header keys are `trajectory_id`, `framework`, `framework_version`, `llm`,
//! `llm_family` and `outcome`; a file may hold several trajectories, each
//! opened by its own `# trajectory_id:` line. `ACTION:` is a bash command and
//! `ACTION[tool]:` a tool call whose optional payload is a JSON object. Every
//! `ACTION` opens a new turn; the `THOUGHT` before it belongs to that turn.
//! Marker payloads may continue over the following lines.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::model::{
    validate_trajectory, Action, ConfigurationId, Observation, Trajectory, Turn,
};

use super::{canonical::first_nonblank_line, FamilyMap, FormatAdapter, ParsedItem};

#[derive(Debug, Clone, Default)]
pub struct ReactLogAdapter {
    families: FamilyMap,
}

impl ReactLogAdapter {
    pub fn new(families: FamilyMap) -> Self {
        Self { families }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Thought,
    Action,
    Observation,
}

#[derive(Default)]
struct TurnDraft {
    thought: Option<String>,
    action: Option<(Option<String>, String)>,
    observation: Option<String>,
    exit_code: Option<i64>,
}

#[derive(Default)]
struct Draft {
    header: BTreeMap<String, String>,
    turns: Vec<TurnDraft>,
    pending_thought: Option<String>,
    section: Option<Section>,
    problem: Option<String>,
}

impl Draft {
    fn append(&mut self, text: &str) {
        let target = match self.section {
            Some(Section::Thought) => self.pending_thought.as_mut(),
            Some(Section::Action) => self.turns.last_mut().and_then(|t| t.action.as_mut()).map(|a| &mut a.1),
            Some(Section::Observation) => self.turns.last_mut().and_then(|t| t.observation.as_mut()),
            None => None,
        };
        if let Some(buf) = target {
            buf.push('\n');
            buf.push_str(text);
        }
    }
}

fn strip_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    line.strip_prefix(marker).map(|rest| rest.strip_prefix(' ').unwrap_or(rest))
}

impl ReactLogAdapter {
    fn finish(&self, draft: Draft) -> ParsedItem {
        let id = draft.header.get("trajectory_id").cloned().unwrap_or_default();
        let label = format!("trajectory {id}");
        if let Some(p) = draft.problem {
            return Err(format!("{label}: {p}"));
        }
        let get = |k: &str| {
            draft
                .header
                .get(k)
                .cloned()
                .ok_or_else(|| format!("{label}: missing header key {k}"))
        };
        let framework = get("framework")?;
        let llm = get("llm")?;
        let outcome = get("outcome")?
            .parse()
            .map_err(|e: String| format!("{label}: {e}"))?;
        let llm_family = draft
            .header
            .get("llm_family")
            .cloned()
            .unwrap_or_else(|| self.families.family_of(&llm));

        let mut turns = Vec::with_capacity(draft.turns.len());
        for (i, t) in draft.turns.into_iter().enumerate() {
            let index = i + 1;
            let (tool, payload) = t.action.expect("turn drafts start at an ACTION");
            let payload = payload.trim().to_string();
            let action = match tool {
                None => {
                    if payload.is_empty() {
                        return Err(format!("{label}: turn {index}: empty action"));
                    }
                    Action::Bash { command: payload }
                }
                Some(name) => {
                    let arguments = if payload.is_empty() {
                        None
                    } else {
                        match serde_json::from_str::<Value>(&payload) {
                            Ok(Value::Object(m)) => Some(m),
                            _ => {
                                return Err(format!(
                                    "{label}: turn {index}: tool arguments must be a JSON object"
                                ))
                            }
                        }
                    };
                    Action::ToolCall {
                        tool_name: name,
                        arguments,
                    }
                }
            };
            turns.push(Turn {
                index,
                thought: t.thought.map(|s| s.trim().to_string()),
                action,
                observation: Observation {
                    text: t.observation.map(|s| s.trim_end().to_string()).unwrap_or_default(),
                    exit_code: t.exit_code,
                },
            });
        }
        let trajectory = Trajectory {
            id,
            config: ConfigurationId {
                framework,
                framework_version: draft.header.get("framework_version").cloned(),
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

impl FormatAdapter for ReactLogAdapter {
    fn name(&self) -> &str {
        "react"
    }

    fn detect(&self, bytes: &[u8]) -> bool {
        let Some(first) = first_nonblank_line(bytes) else {
            return false;
        };
        let first = String::from_utf8_lossy(first);
        let first = first.trim_start();
        if first.starts_with('{') || first.starts_with('[') {
            return false;
        }
        let text = String::from_utf8_lossy(bytes);
        text.lines().any(|l| l.starts_with("# trajectory_id:"))
            && text.lines().any(|l| l.starts_with("ACTION"))
    }

    fn parse(&self, bytes: &[u8]) -> Vec<ParsedItem> {
        let text = String::from_utf8_lossy(bytes);
        let mut out = Vec::new();
        let mut current: Option<Draft> = None;

        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((key, value)) = rest.split_once(':') {
                    let key = key.trim();
                    if key == "trajectory_id" {
                        if let Some(d) = current.take() {
                            out.push(self.finish(d));
                        }
                        current = Some(Draft::default());
                    }
                    if let Some(d) = current.as_mut() {
                        d.header.insert(key.to_string(), value.trim().to_string());
                        d.section = None;
                    }
                    continue;
                }
            }
            let Some(d) = current.as_mut() else {
                if !line.trim().is_empty() {
                    out.push(Err("content before the first # trajectory_id header".into()));
                    return out;
                }
                continue;
            };
            if let Some(rest) = strip_marker(line, "THOUGHT:") {
                d.pending_thought = Some(rest.to_string());
                d.section = Some(Section::Thought);
            } else if line.starts_with("ACTION") {
                let after = &line["ACTION".len()..];
                let (tool, payload) = if let Some(inner) = after.strip_prefix('[') {
                    match inner.split_once("]:") {
                        Some((name, rest)) => (Some(name.trim().to_string()), rest),
                        None => {
                            d.problem.get_or_insert_with(|| {
                                format!("turn {}: malformed ACTION[...] marker", d.turns.len() + 1)
                            });
                            continue;
                        }
                    }
                } else if let Some(rest) = after.strip_prefix(':') {
                    (None, rest)
                } else {
                    d.append(line);
                    continue;
                };
                d.turns.push(TurnDraft {
                    thought: d.pending_thought.take(),
                    action: Some((tool, payload.trim_start().to_string())),
                    ..TurnDraft::default()
                });
                d.section = Some(Section::Action);
            } else if let Some(rest) = strip_marker(line, "OBSERVATION:") {
                match d.turns.last_mut() {
                    Some(t) if t.observation.is_none() => {
                        t.observation = Some(rest.to_string());
                        d.section = Some(Section::Observation);
                    }
                    _ => {
                        let n = d.turns.len().max(1);
                        d.problem
                            .get_or_insert_with(|| format!("turn {n}: OBSERVATION without ACTION"));
                    }
                }
            } else if let Some(rest) = strip_marker(line, "EXIT:") {
                match (d.turns.last_mut(), rest.trim().parse::<i64>()) {
                    (Some(t), Ok(code)) => t.exit_code = Some(code),
                    _ => {
                        let n = d.turns.len().max(1);
                        d.problem.get_or_insert_with(|| format!("turn {n}: bad EXIT line"));
                    }
                }
                d.section = None;
            } else {
                d.append(line);
            }
        }
        if let Some(d) = current {
            out.push(self.finish(d));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    const LOG: &str = "\
# trajectory_id: t-1
# framework: react-agent
# llm: model-a
# outcome: resolved
THOUGHT: look around
ACTION: ls -la
OBSERVATION: a.py
b.py
EXIT: 0
ACTION[file_viewer]: {\"path\": \"a.py\"}
OBSERVATION: def f(): pass
# trajectory_id: t-2
# framework: react-agent
# llm: model-a
# llm_family: fam-x
# outcome: failed
ACTION: pytest
OBSERVATION: 1 failed
EXIT: 1
";

    #[test]
    fn parses_multi_trajectory_log() {
        let mut families = FamilyMap::default();
        families.insert("model-a", "fam-a");
        let adapter = ReactLogAdapter::new(families);
        assert!(adapter.detect(LOG.as_bytes()));
        let items = adapter.parse(LOG.as_bytes());
        assert_eq!(items.len(), 2);
        let t1 = items[0].as_ref().unwrap();
        assert_eq!(t1.turns.len(), 2);
        assert_eq!(t1.config.llm_family, "fam-a");
        assert_eq!(t1.turns[0].thought.as_deref(), Some("look around"));
        assert_eq!(t1.turns[0].observation.text, "a.py\nb.py");
        assert_eq!(t1.turns[0].observation.exit_code, Some(0));
        assert!(matches!(&t1.turns[1].action, Action::ToolCall { tool_name, .. } if tool_name == "file_viewer"));
        let t2 = items[1].as_ref().unwrap();
        assert_eq!(t2.outcome, Outcome::Failed);
        assert_eq!(t2.config.llm_family, "fam-x");
        assert_eq!(t2.turns[0].observation.exit_code, Some(1));
    }

    #[test]
    fn empty_action_is_rejected_with_turn() {
        let log = "# trajectory_id: t\n# framework: f\n# llm: m\n# outcome: failed\nACTION: ls\nACTION:\n";
        let items = ReactLogAdapter::default().parse(log.as_bytes());
        assert_eq!(items[0].as_ref().unwrap_err(), "trajectory t: turn 2: empty action");
    }

    #[test]
    fn json_files_are_not_detected() {
        assert!(!ReactLogAdapter::default().detect(b"{\"trajectory_id\": \"x\"}\nACTION: ls\n"));
    }
}
