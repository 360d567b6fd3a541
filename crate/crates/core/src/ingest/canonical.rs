//! Canonical JSONL interchange format.
//!
//! One header line opens each trajectory and is followed by one line per turn:
//!
//! ```text
//! {"trajectory_id":"t1","framework":"fw","framework_version":null,"llm":"m","llm_family":"f","outcome":"resolved"}
//! {"turn":1,"thought":null,"action":{"kind":"bash","command":"ls"},"observation":{"text":"a.py","exit_code":0}}
//! ```
//!
//! Keys are written in exactly this order. On read, unknown extra keys are
//! ignored, which is how the annotated format layers its extra fields on top.

use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    validate_trajectory, Action, ConfigurationId, Observation, Outcome, Trajectory, Turn,
};

use super::{FormatAdapter, ParsedItem};

#[derive(Serialize)]
struct HeaderLine<'a> {
    trajectory_id: &'a str,
    framework: &'a str,
    framework_version: Option<&'a str>,
    llm: &'a str,
    llm_family: &'a str,
    outcome: &'a str,
}

#[derive(Serialize)]
struct TurnLine<'a> {
    turn: usize,
    thought: Option<&'a str>,
    action: &'a Action,
    observation: &'a Observation,
}

/// Appends extra `"key":value` members to a serialized JSON object line.
pub(crate) fn extend_object_line(line: &str, extra: &[(&str, Value)]) -> String {
    let mut out = line.strip_suffix('}').unwrap_or(line).to_string();
    for (k, v) in extra {
        out.push(',');
        out.push_str(&serde_json::to_string(k).expect("key serializes"));
        out.push(':');
        out.push_str(&serde_json::to_string(v).expect("value serializes"));
    }
    out.push('}');
    out
}

/// Writes trajectories in canonical form.
pub fn write_canonical<W: Write>(out: &mut W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        write_trajectory(out, t)?;
    }
    Ok(())
}

pub fn write_trajectory<W: Write>(out: &mut W, t: &Trajectory) -> std::io::Result<()> {
    writeln!(out, "{}", header_string(t))?;
    for turn in &t.turns {
        writeln!(out, "{}", turn_string(turn))?;
    }
    Ok(())
}

pub(crate) fn header_string(t: &Trajectory) -> String {
    let line = HeaderLine {
        trajectory_id: &t.id,
        framework: &t.config.framework,
        framework_version: t.config.framework_version.as_deref(),
        llm: &t.config.llm,
        llm_family: &t.config.llm_family,
        outcome: t.outcome.as_str(),
    };
    serde_json::to_string(&line).expect("header serializes")
}

pub(crate) fn turn_string(turn: &Turn) -> String {
    let line = TurnLine {
        turn: turn.index,
        thought: turn.thought.as_deref(),
        action: &turn.action,
        observation: &turn.observation,
    };
    serde_json::to_string(&line).expect("turn serializes")
}

fn parse_object(line: &str) -> Result<Map<String, Value>> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Json {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Schema("line is not a JSON object".into())),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let preceding: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    preceding + column.saturating_sub(1)
}

fn missing(key: &str) -> Error {
    Error::Schema(format!("missing {key}"))
}

fn opt_string(obj: &Map<String, Value>, key: &str) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::Schema(format!("{key} must be a string or null"))),
    }
}

fn req_string(obj: &Map<String, Value>, key: &str) -> Result<String> {
    opt_string(obj, key)?.ok_or_else(|| missing(key))
}

fn parse_action(value: &Value) -> Result<Action> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("action must be an object".into()))?;
    let kind = req_string(obj, "kind").map_err(|_| missing("action kind"))?;
    match kind.as_str() {
        "bash" => Ok(Action::Bash {
            command: req_string(obj, "command")?,
        }),
        "tool_call" => {
            let tool_name = req_string(obj, "tool_name")?;
            let arguments = match obj.get("arguments") {
                None | Some(Value::Null) => None,
                Some(Value::Object(m)) => Some(m.clone()),
                Some(_) => return Err(Error::Schema("arguments must be an object or null".into())),
            };
            Ok(Action::ToolCall {
                tool_name,
                arguments,
            })
        }
        other => Err(Error::Schema(format!("unknown action kind {other:?}"))),
    }
}

fn parse_observation(value: &Value) -> Result<Observation> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("observation must be an object".into()))?;
    let text = req_string(obj, "text").map_err(|_| missing("observation text"))?;
    let exit_code = match obj.get("exit_code") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_i64()
                .ok_or_else(|| Error::Schema("exit_code must be an integer or null".into()))?,
        ),
    };
    Ok(Observation { text, exit_code })
}

fn turn_from_object(obj: &Map<String, Value>) -> Result<Turn> {
    let index = match obj.get("turn") {
        None => return Err(missing("turn")),
        Some(v) => v
            .as_u64()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Schema("turn must be an integer >= 1".into()))?
            as usize,
    };
    let action = parse_action(obj.get("action").ok_or_else(|| missing("action"))?)?;
    let thought = opt_string(obj, "thought")?;
    let observation = parse_observation(obj.get("observation").ok_or_else(|| missing("observation"))?)?;
    Ok(Turn {
        index,
        thought,
        action,
        observation,
    })
}

/// Parses one canonical turn line.
pub fn parse_canonical_line(line: &str) -> Result<Turn> {
    turn_from_object(&parse_object(line)?)
}

fn header_from_object(obj: &Map<String, Value>) -> Result<(String, ConfigurationId, Outcome)> {
    let id = req_string(obj, "trajectory_id")?;
    let config = ConfigurationId {
        framework: req_string(obj, "framework")?,
        framework_version: opt_string(obj, "framework_version")?,
        llm: req_string(obj, "llm")?,
        llm_family: req_string(obj, "llm_family")?,
    };
    let outcome = match obj.get("outcome") {
        Some(Value::String(s)) => s.parse::<Outcome>().map_err(Error::Schema)?,
        Some(other) => {
            return Err(Error::Schema(format!(
                "outcome must be \"resolved\" or \"failed\", got {other}"
            )))
        }
        None => return Err(missing("outcome")),
    };
    Ok((id, config, outcome))
}

/// A trajectory as read from a canonical-family file, with the raw header and
/// turn objects kept so that layered formats can read their extra keys.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub trajectory: Trajectory,
    pub header: Map<String, Value>,
    pub turn_objects: Vec<Map<String, Value>>,
}

/// Streaming reader over canonical JSONL (or any superset of it).
///
/// Each item is one trajectory or the reason it could not be read. A broken
/// turn poisons only its own trajectory; reading resumes at the next header.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    pending_header: Option<(usize, String)>,
    done: bool,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            pending_header: None,
            done: false,
        }
    }

    fn next_line(&mut self) -> Option<std::io::Result<(usize, String)>> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(Ok((self.line_no, l))),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

fn is_header(line: &str) -> bool {
    // cheap pre-check; the authoritative parse happens afterwards
    line.contains("\"trajectory_id\"")
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = std::result::Result<RawRecord, String>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let (header_line_no, header_text) = match self.pending_header.take() {
            Some(h) => h,
            None => match self.next_line() {
                None => return None,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(format!("read error: {e}")));
                }
                Some(Ok((n, l))) => (n, l),
            },
        };

        let mut problem: Option<String> = None;
        let header = match parse_object(&header_text) {
            Ok(obj) if obj.contains_key("trajectory_id") => Some(obj),
            Ok(_) => {
                problem = Some(format!("line {header_line_no}: turn line before any header"));
                None
            }
            Err(e) => {
                problem = Some(format!("line {header_line_no}: {e}"));
                None
            }
        };
        let parsed_header = header.as_ref().map(header_from_object);
        let label = header
            .as_ref()
            .and_then(|h| h.get("trajectory_id"))
            .and_then(Value::as_str)
            .map(|s| format!("trajectory {s}"))
            .unwrap_or_else(|| format!("line {header_line_no}"));
        if let Some(Err(e)) = &parsed_header {
            problem.get_or_insert_with(|| format!("{label}: header {e}"));
        }

        let mut turns = Vec::new();
        let mut turn_objects = Vec::new();
        loop {
            match self.next_line() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => {
                    self.done = true;
                    problem.get_or_insert_with(|| format!("read error: {e}"));
                    break;
                }
                Some(Ok((n, line))) => {
                    if is_header(&line) {
                        if let Ok(obj) = parse_object(&line) {
                            if obj.contains_key("trajectory_id") {
                                self.pending_header = Some((n, line));
                                break;
                            }
                        }
                    }
                    if problem.is_some() {
                        continue;
                    }
                    match parse_object(&line) {
                        Ok(obj) => match turn_from_object(&obj) {
                            Ok(t) => {
                                turns.push(t);
                                turn_objects.push(obj);
                            }
                            Err(e) => {
                                let at = match obj.get("turn").and_then(Value::as_u64) {
                                    Some(k) => format!("turn {k}"),
                                    None => format!("line {n}"),
                                };
                                problem = Some(format!("{label}: {at}: {e}"));
                            }
                        },
                        Err(e) => problem = Some(format!("{label}: line {n}: {e}")),
                    }
                }
            }
        }

        if let Some(p) = problem {
            return Some(Err(p));
        }
        let (id, config, outcome) = parsed_header.expect("header present").expect("header valid");
        let trajectory = Trajectory {
            id,
            config,
            turns,
            outcome,
        };
        let violations = validate_trajectory(&trajectory);
        if !violations.is_empty() {
            return Some(Err(format!("{label}: {}", violations.join("; "))));
        }
        Some(Ok(RawRecord {
            trajectory,
            header: header.expect("header present"),
            turn_objects,
        }))
    }
}

/// Reads every trajectory, failing on the first malformed one.
pub fn read_canonical<R: BufRead>(reader: R) -> Result<Vec<Trajectory>> {
    RecordReader::new(reader)
        .map(|r| r.map(|rec| rec.trajectory).map_err(Error::Schema))
        .collect()
}

/// Adapter for files already in canonical form.
#[derive(Debug, Default, Clone, Copy)]
pub struct CanonicalAdapter;

impl FormatAdapter for CanonicalAdapter {
    fn name(&self) -> &str {
        "canonical"
    }

    fn detect(&self, bytes: &[u8]) -> bool {
        let Some(first) = first_nonblank_line(bytes) else {
            return false;
        };
        match serde_json::from_slice::<Value>(first) {
            Ok(Value::Object(m)) => m.contains_key("trajectory_id") && !m.contains_key("messages"),
            _ => false,
        }
    }

    fn parse(&self, bytes: &[u8]) -> Vec<ParsedItem> {
        RecordReader::new(bytes)
            .map(|r| r.map(|rec| rec.trajectory))
            .collect()
    }
}

pub(crate) fn first_nonblank_line(bytes: &[u8]) -> Option<&[u8]> {
    bytes
        .split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .find(|l| l.iter().any(|b| !b.is_ascii_whitespace()))
}
