//! Action-classification and error-detection rule sets.
//!
//! Both ship as JSON data files under `rules/` and are embedded as defaults;
//! a directory holding `classifier.json` and `errors.json` can replace them.

use std::collections::BTreeMap;
use std::path::Path;

use regex::RegexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Action, ActionCategory};

const DEFAULT_CLASSIFIER: &str = include_str!("../../rules/classifier.json");
const DEFAULT_ERRORS: &str = include_str!("../../rules/errors.json");

pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const ERRORS_FILE: &str = "errors.json";

/// Error type assigned when the exit code is nonzero but no pattern matched.
pub const NONZERO_EXIT: &str = "nonzero_exit";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierRules {
    pub version: String,
    pub tool_signatures: BTreeMap<String, ActionCategory>,
    /// Keys are stored lowercase; lookups lowercase the command name.
    pub bash_commands: BTreeMap<String, ActionCategory>,
}

impl ClassifierRules {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut rules: ClassifierRules = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("classifier rules: {e}")))?;
        rules.bash_commands = std::mem::take(&mut rules.bash_commands)
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        Ok(rules)
    }

    pub fn classify(&self, action: &Action) -> ActionCategory {
        match action {
            Action::ToolCall { tool_name, .. } => self
                .tool_signatures
                .get(tool_name)
                .copied()
                .unwrap_or(ActionCategory::Unknown),
            Action::Bash { command } => command_name(command)
                .and_then(|name| self.bash_commands.get(&name.to_lowercase()).copied())
                .unwrap_or(ActionCategory::Unknown),
        }
    }
}

impl Default for ClassifierRules {
    fn default() -> Self {
        Self::from_json(DEFAULT_CLASSIFIER).expect("embedded classifier rules are valid")
    }
}

fn is_env_assignment(token: &str) -> bool {
    match token.split_once('=') {
        Some((name, _)) => {
            let mut chars = name.chars();
            matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
                && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
        }
        None => false,
    }
}

/// The program name a shell command starts with: the first token after any
/// leading `VAR=value` assignments and `sudo`, reduced to its basename.
pub fn command_name(command: &str) -> Option<&str> {
    let token = command
        .split_whitespace()
        .map(|t| t.trim_start_matches(['(', '{']))
        .filter(|t| !t.is_empty())
        .find(|t| !is_env_assignment(t) && *t != "sudo")?;
    let token = token.trim_end_matches([';', '&', '|', ')']);
    let base = token.rsplit('/').next().unwrap_or(token);
    (!base.is_empty()).then_some(base)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorCategory {
    pub error_type: String,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ErrorRulesFile {
    version: String,
    categories: Vec<ErrorCategory>,
}

/// Ordered error categories; the first category with a matching pattern wins.
#[derive(Debug, Clone)]
pub struct ErrorRules {
    pub version: String,
    pub categories: Vec<ErrorCategory>,
    set: RegexSet,
    // category index of every pattern in `set`
    owner: Vec<usize>,
}

impl ErrorRules {
    pub fn new(version: impl Into<String>, categories: Vec<ErrorCategory>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &categories {
            if !seen.insert(c.error_type.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate error type {:?}",
                    c.error_type
                )));
            }
        }
        let mut patterns = Vec::new();
        let mut owner = Vec::new();
        for (i, c) in categories.iter().enumerate() {
            for p in &c.patterns {
                regex::Regex::new(p).map_err(|e| {
                    Error::Config(format!("error type {}: invalid pattern {p:?}: {e}", c.error_type))
                })?;
                patterns.push(p.as_str());
                owner.push(i);
            }
        }
        let set = RegexSet::new(&patterns).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            version: version.into(),
            categories,
            set,
            owner,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ErrorRulesFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("error rules: {e}")))?;
        Self::new(file.version, file.categories)
    }

    pub fn to_json(&self) -> String {
        let file = ErrorRulesFile {
            version: self.version.clone(),
            categories: self.categories.clone(),
        };
        serde_json::to_string_pretty(&file).expect("rules serialize")
    }

    /// Error type of one observation, or `None` for a clean response.
    pub fn detect(&self, text: &str, exit_code: Option<i64>) -> Option<&str> {
        let first = self.set.matches(text).iter().next();
        match first {
            Some(p) => Some(self.categories[self.owner[p]].error_type.as_str()),
            None if exit_code.is_some_and(|c| c != 0) => Some(NONZERO_EXIT),
            None => None,
        }
    }
}

impl Default for ErrorRules {
    fn default() -> Self {
        Self::from_json(DEFAULT_ERRORS).expect("embedded error rules are valid")
    }
}

/// Classifier and error rules together, as used by the annotate stage.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    pub classifier: ClassifierRules,
    pub errors: ErrorRules,
}

impl RuleSet {
    /// Loads `classifier.json` and `errors.json` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        Ok(Self {
            classifier: ClassifierRules::from_json(&read(CLASSIFIER_FILE)?)?,
            errors: ErrorRules::from_json(&read(ERRORS_FILE)?)?,
        })
    }

    /// Writes both rule files into a directory.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let classifier = serde_json::to_string_pretty(&self.classifier)?;
        for (name, text) in [(CLASSIFIER_FILE, classifier), (ERRORS_FILE, self.errors.to_json())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// SHA-256 over the normalized rule content.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.classifier).expect("rules serialize"));
        h.update([0u8]);
        h.update(self.errors.to_json());
        hex::encode(h.finalize())
    }
}
