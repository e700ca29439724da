//! Readers for the raw input formats accepted by `transform`.
//!
//! Tuple format, one example per line:
//! `{"id": "e1", "tuples": [["Clyde F.C", "ground", "Broadwood Stadium"]], "target": "..."}`
//!
//! Key-value format:
//! `{"id": "e2", "pairs": [["name", "Loch Fyne"], ["food", "French"]], "target": "..."}`
//!
//! `target` is a string or a list of reference strings; the first one is the
//! training target.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use segrel_core::schema::{
    levi_transform, normalize_whitespace, DataSchema, OpenGraph, OpenTuple, Preset, PresetKind, Role, Segment, Tuple,
};

use crate::error::{io_error, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Tuple,
    KeyValue,
}

impl InputFormat {
    pub fn name(self) -> &'static str {
        match self {
            InputFormat::Tuple => "tuple",
            InputFormat::KeyValue => "key-value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum TargetField {
    One(String),
    Many(Vec<String>),
}

impl TargetField {
    fn texts(&self) -> Vec<String> {
        match self {
            TargetField::One(t) => vec![t.clone()],
            TargetField::Many(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    tuples: Option<Vec<(String, String, String)>>,
    #[serde(default)]
    pairs: Option<Vec<(String, String)>>,
    #[serde(default)]
    target: Option<TargetField>,
}

/// A parsed input example before schema construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExample {
    pub line: usize,
    pub id: String,
    pub format: InputFormat,
    pub tuples: Vec<(String, String, String)>,
    pub pairs: Vec<(String, String)>,
    /// Reference texts; empty when the line has no target.
    pub references: Vec<String>,
}

/// Reads and classifies every line; all lines must share one format.
pub fn read_raw(path: &Path) -> Result<Vec<RawExample>, CliError> {
    let file = fs::File::open(path).map_err(io_error(path))?;
    let mut out: Vec<RawExample> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", path.display(), i + 1);
        let raw: RawLine =
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{at}: malformed line: {e}")))?;
        let (format, tuples, pairs) = match (raw.tuples, raw.pairs) {
            (Some(t), None) => (InputFormat::Tuple, t, Vec::new()),
            (None, Some(p)) => (InputFormat::KeyValue, Vec::new(), p),
            _ => {
                return Err(CliError::Data(format!(
                    "{at}: malformed line: expected exactly one of `tuples` or `pairs`"
                )))
            }
        };
        if let Some(first) = out.first() {
            if first.format != format {
                return Err(CliError::Data(format!(
                    "{at}: mixed formats: {} line after {} line {}",
                    format.name(),
                    first.format.name(),
                    first.line
                )));
            }
        }
        let references = raw.target.map(|t| t.texts()).unwrap_or_default();
        out.push(RawExample {
            line: i + 1,
            id: raw.id.unwrap_or_else(|| (i + 1).to_string()),
            format,
            tuples,
            pairs,
            references,
        });
    }
    Ok(out)
}

/// Predicate names of a tuple-format corpus in first-seen order.
pub fn collect_predicates(examples: &[RawExample]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for ex in examples {
        for (_, p, _) in &ex.tuples {
            let p = normalize_whitespace(p).to_ascii_lowercase();
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Distinct entity texts in first-seen order plus each tuple's endpoints.
fn entities(tuples: &[(String, String, String)]) -> (Vec<String>, Vec<(usize, String, usize)>) {
    let mut nodes: Vec<String> = Vec::new();
    let mut index = |text: &str| {
        let t = normalize_whitespace(text);
        match nodes.iter().position(|n| *n == t) {
            Some(i) => i,
            None => {
                nodes.push(t);
                nodes.len() - 1
            }
        }
    };
    let links = tuples.iter().map(|(h, p, t)| (index(h), p.clone(), index(t))).collect();
    (nodes, links)
}

/// Converts one raw example under `preset`. The target segment comes last and
/// holds the first reference (empty when there is none).
pub fn to_schema(ex: &RawExample, preset: &Preset) -> Result<DataSchema, CliError> {
    let target_text = ex.references.first().cloned().unwrap_or_default();
    let target = Segment::new(&target_text, preset.target_type(), Role::Target);
    let at = |e: CliError| e.at(&format!("line {}", ex.line));
    match (ex.format, preset.kind()) {
        (InputFormat::Tuple, PresetKind::WebNlg) => {
            let (nodes, links) = entities(&ex.tuples);
            let node = preset.segment_type("node")?;
            let mut segments: Vec<Segment> = nodes.iter().map(|n| Segment::new(n, node, Role::Source)).collect();
            segments.push(target);
            let tuples = links.into_iter().map(|(head, predicate, tail)| OpenTuple { head, predicate, tail }).collect();
            levi_transform(&OpenGraph { segments, tuples }).map_err(|e| at(e.into()))
        }
        (InputFormat::Tuple, PresetKind::Generic | PresetKind::Agenda) => {
            let (nodes, links) = entities(&ex.tuples);
            let node_type = if preset.kind() == PresetKind::Agenda { "concept" } else { "node" };
            let node = preset.segment_type(node_type)?;
            let mut segments: Vec<Segment> = nodes.iter().map(|n| Segment::new(n, node, Role::Source)).collect();
            segments.push(target);
            let tuples = links
                .into_iter()
                .map(|(head, name, tail)| {
                    let predicate = preset
                        .resolve_predicate(&normalize_whitespace(&name))
                        .ok_or_else(|| at(CliError::Data(format!("unknown predicate `{name}`"))))?;
                    Ok(Tuple { head, predicate, tail })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            DataSchema::new(segments, preset.clone(), tuples, vec![]).map_err(|e| at(e.into()))
        }
        (InputFormat::KeyValue, PresetKind::KeyValue) => {
            let (key, value) = (preset.segment_type("key")?, preset.segment_type("value")?);
            let mut segments = Vec::new();
            let mut pairs = Vec::new();
            for (k, v) in &ex.pairs {
                pairs.push((segments.len(), segments.len() + 1));
                segments.push(Segment::new(k, key, Role::Source));
                segments.push(Segment::new(v, value, Role::Source));
            }
            segments.push(target);
            DataSchema::new(segments, preset.clone(), vec![], pairs).map_err(|e| at(e.into()))
        }
        (format, _) => {
            Err(CliError::Config(format!("preset {} does not accept {} input", preset.name(), format.name())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(tuples: &[(&str, &str, &str)]) -> RawExample {
        RawExample {
            line: 1,
            id: "x".into(),
            format: InputFormat::Tuple,
            tuples: tuples.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect(),
            pairs: vec![],
            references: vec!["ref".into()],
        }
    }

    #[test]
    fn one_tuple_becomes_three_segments_and_two_tuples() {
        let schema = to_schema(&raw(&[("Clyde F.C", "ground", "Broadwood Stadium")]), &Preset::webnlg()).unwrap();
        let sources = schema.source_indices().count();
        assert_eq!(sources, 3);
        assert_eq!(schema.tuples().len(), 2);
        assert_eq!(schema.segments().len(), 4);
    }

    #[test]
    fn shared_entities_are_one_node() {
        let ex = raw(&[("a", "r", "b"), ("b", "s", "a"), ("a", "r", "c")]);
        let schema = to_schema(&ex, &Preset::webnlg()).unwrap();
        assert_eq!(schema.segments().len(), 3 + 3 + 1);
        let generic = Preset::generic(&collect_predicates(std::slice::from_ref(&ex))).unwrap();
        let schema = to_schema(&ex, &generic).unwrap();
        assert_eq!(schema.segments().len(), 4);
        assert_eq!(schema.tuples().len(), 3);
    }

    #[test]
    fn preset_and_format_must_agree() {
        let err = to_schema(&raw(&[("a", "r", "b")]), &Preset::key_value()).unwrap_err();
        assert_eq!(err.category(), "config");
    }
}
