//! Canonical data model shared by every pipeline stage.
//!
//! A [`Trajectory`] is one agent run on one task: an ordered list of
//! thought/action/observation turns plus a binary resolution outcome and the
//! identity of the ⟨framework, LLM⟩ configuration that produced it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// The surface form of an executed action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Bash {
        command: String,
    },
    ToolCall {
        tool_name: String,
        arguments: Option<Map<String, Value>>,
    },
}

impl Action {
    pub fn bash(command: impl Into<String>) -> Self {
        Action::Bash {
            command: command.into(),
        }
    }

    pub fn tool(tool_name: impl Into<String>, arguments: Option<Map<String, Value>>) -> Self {
        Action::ToolCall {
            tool_name: tool_name.into(),
            arguments,
        }
    }

    /// Raw text used for verbatim-repeat detection.
    ///
    /// Bash actions use the command itself; tool calls render as
    /// `name(<arguments as compact JSON>)` with keys in sorted order.
    pub fn action_string(&self) -> String {
        match self {
            Action::Bash { command } => command.clone(),
            Action::ToolCall {
                tool_name,
                arguments,
            } => match arguments {
                Some(args) => format!(
                    "{tool_name}({})",
                    serde_json::to_string(args).unwrap_or_default()
                ),
                None => format!("{tool_name}()"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub exit_code: Option<i64>,
}

impl Observation {
    pub fn new(text: impl Into<String>, exit_code: Option<i64>) -> Self {
        Self {
            text: text.into(),
            exit_code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    /// 1-based position within the trajectory.
    pub index: usize,
    pub thought: Option<String>,
    pub action: Action,
    pub observation: Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Resolved,
    Failed,
}

impl Outcome {
    pub fn is_resolved(self) -> bool {
        matches!(self, Outcome::Resolved)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Resolved => "resolved",
            Outcome::Failed => "failed",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resolved" => Ok(Outcome::Resolved),
            "failed" => Ok(Outcome::Failed),
            other => Err(format!("outcome must be \"resolved\" or \"failed\", got {other:?}")),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of one ⟨framework, LLM⟩ configuration.
///
/// Equality and ordering use only `(framework, llm)`; the version and family
/// are carried along as moderator metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationId {
    pub framework: String,
    pub framework_version: Option<String>,
    pub llm: String,
    pub llm_family: String,
}

impl ConfigurationId {
    pub fn new(
        framework: impl Into<String>,
        llm: impl Into<String>,
        llm_family: impl Into<String>,
    ) -> Self {
        Self {
            framework: framework.into(),
            framework_version: None,
            llm: llm.into(),
            llm_family: llm_family.into(),
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.framework, &self.llm)
    }
}

impl PartialEq for ConfigurationId {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ConfigurationId {}

impl PartialOrd for ConfigurationId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConfigurationId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl std::hash::Hash for ConfigurationId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl fmt::Display for ConfigurationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.framework, self.llm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub config: ConfigurationId,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Semantic action categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionCategory {
    #[serde(alias = "exploration")]
    Exploration,
    #[serde(alias = "modification")]
    Modification,
    #[serde(alias = "test")]
    Test,
    #[serde(alias = "navigation")]
    Navigation,
    #[serde(alias = "utility")]
    Utility,
    #[serde(alias = "unknown")]
    Unknown,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 6] = [
        ActionCategory::Exploration,
        ActionCategory::Modification,
        ActionCategory::Test,
        ActionCategory::Navigation,
        ActionCategory::Utility,
        ActionCategory::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionCategory::Exploration => "Exploration",
            ActionCategory::Modification => "Modification",
            ActionCategory::Test => "Test",
            ActionCategory::Navigation => "Navigation",
            ActionCategory::Utility => "Utility",
            ActionCategory::Unknown => "Unknown",
        }
    }

    /// One-letter code used in motif labels.
    pub fn short(self) -> char {
        match self {
            ActionCategory::Exploration => 'E',
            ActionCategory::Modification => 'M',
            ActionCategory::Test => 'T',
            ActionCategory::Navigation => 'N',
            ActionCategory::Utility => 'U',
            ActionCategory::Unknown => 'X',
        }
    }
}

impl FromStr for ActionCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown action category {s:?}"))
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks every Turn/Trajectory invariant and returns one description per
/// violation. An empty list means the trajectory is well-formed.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();
    if t.id.is_empty() {
        violations.push("empty trajectory id".to_string());
    }
    if t.config.framework.is_empty() {
        violations.push("empty framework".to_string());
    }
    if t.config.llm.is_empty() {
        violations.push("empty llm".to_string());
    }
    if t.turns.is_empty() {
        violations.push("empty trajectory".to_string());
        return violations;
    }
    let mut expected = 1;
    for turn in &t.turns {
        if turn.index != expected {
            violations.push(format!("non-contiguous index at turn {}", turn.index));
        }
        expected = turn.index + 1;
        match &turn.action {
            Action::Bash { command } if command.trim().is_empty() => {
                violations.push(format!("empty bash command at turn {}", turn.index));
            }
            Action::ToolCall { tool_name, .. } if tool_name.is_empty() => {
                violations.push(format!("empty tool name at turn {}", turn.index));
            }
            _ => {}
        }
    }
    violations
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_trajectory_has_no_violations() {
        let t = trajectory("t1", &["ls", "cat a.py", "pytest"], Outcome::Resolved);
        assert!(validate_trajectory(&t).is_empty());
    }

    #[test]
    fn gap_in_indices_is_reported() {
        let mut t = trajectory("t1", &["ls", "cat a.py"], Outcome::Failed);
        t.turns[1].index = 3;
        assert_eq!(
            validate_trajectory(&t),
            vec!["non-contiguous index at turn 3".to_string()]
        );
    }

    #[test]
    fn empty_trajectory_is_reported() {
        let t = trajectory("t1", &[], Outcome::Failed);
        assert_eq!(validate_trajectory(&t), vec!["empty trajectory".to_string()]);
    }

    #[test]
    fn action_invariants() {
        let mut t = trajectory("t1", &["ls"], Outcome::Failed);
        t.turns[0].action = Action::bash("  ");
        assert_eq!(validate_trajectory(&t), vec!["empty bash command at turn 1"]);
        t.turns[0].action = Action::tool("", None);
        assert_eq!(validate_trajectory(&t), vec!["empty tool name at turn 1"]);
    }

    #[test]
    fn config_identity_ignores_family_and_version() {
        let a = ConfigurationId::new("fw", "m", "fam-a");
        let mut b = ConfigurationId::new("fw", "m", "fam-b");
        b.framework_version = Some("1.0".into());
        assert_eq!(a, b);
    }

    #[test]
    fn tool_call_action_string_is_stable() {
        let mut args = Map::new();
        args.insert("path".into(), Value::from("x.py"));
        args.insert("line".into(), Value::from(3));
        let a = Action::tool("file_viewer", Some(args));
        assert_eq!(a.action_string(), r#"file_viewer({"line":3,"path":"x.py"})"#);
    }
}
