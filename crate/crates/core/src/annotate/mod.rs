//! Per-turn annotation: action category, error type and error cascades.

mod rules;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ingest::canonical::{extend_object_line, header_string, turn_string, RecordReader};
use crate::model::{Action, ActionCategory, Trajectory};

pub use rules::{
    command_name, ClassifierRules, ErrorCategory, ErrorRules, RuleSet, CLASSIFIER_FILE,
    ERRORS_FILE, NONZERO_EXIT,
};

/// A maximal run of error turns: 1-based start turn and length.
pub type Cascade = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTrajectory {
    pub base: Trajectory,
    pub categories: Vec<ActionCategory>,
    pub error_types: Vec<Option<String>>,
    pub cascades: Vec<Cascade>,
}

impl AnnotatedTrajectory {
    pub fn len(&self) -> usize {
        self.base.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.turns.is_empty()
    }

    pub fn error_flags(&self) -> Vec<bool> {
        self.error_types.iter().map(Option::is_some).collect()
    }

    /// Checks the structural invariants; returns one message per violation.
    pub fn violations(&self) -> Vec<String> {
        let n = self.len();
        let mut out = Vec::new();
        if self.categories.len() != n {
            out.push(format!("{} categories for {n} turns", self.categories.len()));
        }
        if self.error_types.len() != n {
            out.push(format!("{} error types for {n} turns", self.error_types.len()));
        }
        let is_err = |turn: usize| {
            turn >= 1 && self.error_types.get(turn - 1).is_some_and(Option::is_some)
        };
        let mut prev_end = 0;
        for &(start, len) in &self.cascades {
            if len == 0 || start == 0 || start + len - 1 > n {
                out.push(format!("cascade ({start},{len}) out of range"));
                continue;
            }
            if start <= prev_end + 1 && prev_end > 0 {
                out.push(format!("cascade ({start},{len}) overlaps or touches the previous one"));
            }
            if (start..start + len).any(|t| !is_err(t)) {
                out.push(format!("cascade ({start},{len}) contains a clean turn"));
            }
            if is_err(start - 1) || is_err(start + len) {
                out.push(format!("cascade ({start},{len}) is not maximal"));
            }
            prev_end = start + len - 1;
        }
        out
    }
}

pub fn classify_action(action: &Action, rules: &ClassifierRules) -> ActionCategory {
    rules.classify(action)
}

pub fn detect_errors(t: &Trajectory, rules: &ErrorRules) -> Vec<Option<String>> {
    t.turns
        .iter()
        .map(|turn| {
            rules
                .detect(&turn.observation.text, turn.observation.exit_code)
                .map(str::to_string)
        })
        .collect()
}

/// Every run of consecutive error turns counts as a cascade by default;
/// longer minimums are sensitivity settings.
pub const DEFAULT_CASCADE_MIN_LEN: usize = 1;

/// Maximal runs of `true` with length at least `min_len`, as 1-based
/// `(start, length)` pairs in turn order.
pub fn segment_cascades(flags: &[bool], min_len: usize) -> Vec<Cascade> {
    let min_len = min_len.max(1);
    let mut out = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        if i - start >= min_len {
            out.push((start + 1, i - start));
        }
    }
    out
}

pub fn annotate(t: Trajectory, rules: &RuleSet, cascade_min_len: usize) -> AnnotatedTrajectory {
    let categories = t.turns.iter().map(|turn| rules.classifier.classify(&turn.action)).collect();
    let error_types = detect_errors(&t, &rules.errors);
    let flags: Vec<bool> = error_types.iter().map(Option::is_some).collect();
    let cascades = segment_cascades(&flags, cascade_min_len);
    AnnotatedTrajectory {
        base: t,
        categories,
        error_types,
        cascades,
    }
}

/// Annotates a corpus in parallel, preserving input order.
pub fn annotate_all(
    trajectories: Vec<Trajectory>,
    rules: &RuleSet,
    cascade_min_len: usize,
) -> Vec<AnnotatedTrajectory> {
    trajectories
        .into_par_iter()
        .map(|t| annotate(t, rules, cascade_min_len))
        .collect()
}

pub fn write_annotated<W: Write>(out: &mut W, items: &[AnnotatedTrajectory]) -> std::io::Result<()> {
    for a in items {
        let cascades: Vec<Value> = a.cascades.iter().map(|&(s, l)| json!([s, l])).collect();
        writeln!(
            out,
            "{}",
            extend_object_line(&header_string(&a.base), &[("cascades", Value::Array(cascades))])
        )?;
        for (i, turn) in a.base.turns.iter().enumerate() {
            let extra = [
                ("category", Value::String(a.categories[i].as_str().to_string())),
                (
                    "error_type",
                    a.error_types[i].clone().map(Value::String).unwrap_or(Value::Null),
                ),
            ];
            writeln!(out, "{}", extend_object_line(&turn_string(turn), &extra))?;
        }
    }
    Ok(())
}

fn parse_cascades(v: Option<&Value>, label: &str) -> Result<Vec<Cascade>> {
    let bad = || Error::Schema(format!("{label}: cascades must be an array of [start, length] pairs"));
    let items = v.ok_or_else(|| Error::Schema(format!("{label}: missing cascades")))?;
    let items = items.as_array().ok_or_else(bad)?;
    items
        .iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([s, l]) => match (s.as_u64(), l.as_u64()) {
                (Some(s), Some(l)) => Ok((s as usize, l as usize)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        })
        .collect()
}

/// Reads annotated JSONL. Any malformed trajectory is an error.
pub fn read_annotated<R: BufRead>(reader: R) -> Result<Vec<AnnotatedTrajectory>> {
    let mut out = Vec::new();
    for record in RecordReader::new(reader) {
        let record = record.map_err(Error::Schema)?;
        let label = format!("trajectory {}", record.trajectory.id);
        let cascades = parse_cascades(record.header.get("cascades"), &label)?;
        let mut categories = Vec::with_capacity(record.turn_objects.len());
        let mut error_types = Vec::with_capacity(record.turn_objects.len());
        for (i, obj) in record.turn_objects.iter().enumerate() {
            let at = format!("{label}: turn {}", i + 1);
            let category = obj
                .get("category")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Schema(format!("{at}: missing category")))?
                .parse::<ActionCategory>()
                .map_err(|e| Error::Schema(format!("{at}: {e}")))?;
            let error_type = match obj.get("error_type") {
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Null) => None,
                Some(_) => return Err(Error::Schema(format!("{at}: error_type must be a string or null"))),
                None => return Err(Error::Schema(format!("{at}: missing error_type"))),
            };
            categories.push(category);
            error_types.push(error_type);
        }
        let a = AnnotatedTrajectory {
            base: record.trajectory,
            categories,
            error_types,
            cascades,
        };
        let problems = a.violations();
        if !problems.is_empty() {
            return Err(Error::Schema(format!("{label}: {}", problems.join("; "))));
        }
        out.push(a);
    }
    Ok(out)
}
