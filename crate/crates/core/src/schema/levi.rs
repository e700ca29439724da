//! Levi transform: every `(head, predicate, tail)` tuple with free-text predicate
//! becomes a predicate segment linked by two tuples from a closed predicate set.

use alloc::string::String;
use alloc::vec::Vec;

use super::{DataSchema, Preset, Role, SchemaError, Segment, Tuple};

pub const HEAD_TO_PREDICATE: &str = "head-to-predicate";
pub const PREDICATE_TO_TAIL: &str = "predicate-to-tail";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenTuple {
    pub head: usize,
    pub predicate: String,
    pub tail: usize,
}

/// A graph whose predicates are open-set texts. Segment types refer to the
/// webnlg preset (`node` for sources, `target` for targets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenGraph {
    pub segments: Vec<Segment>,
    pub tuples: Vec<OpenTuple>,
}

/// Appends one predicate segment per tuple (in tuple order) and rewires each
/// tuple through it. The result uses the webnlg preset.
pub fn levi_transform(graph: &OpenGraph) -> Result<DataSchema, SchemaError> {
    let preset = Preset::webnlg();
    let predicate_type = preset.segment_type("predicate")?;
    let head_rel = preset.relation_set().id(HEAD_TO_PREDICATE).expect("webnlg category");
    let tail_rel = preset.relation_set().id(PREDICATE_TO_TAIL).expect("webnlg category");
    let len = graph.segments.len();

    let mut segments = graph.segments.clone();
    let mut tuples = Vec::with_capacity(graph.tuples.len() * 2);
    for (k, t) in graph.tuples.iter().enumerate() {
        for index in [t.head, t.tail] {
            if index >= len {
                return Err(SchemaError::MissingSegment { index, len });
            }
        }
        let text = super::normalize_whitespace(&t.predicate);
        if text.is_empty() {
            return Err(SchemaError::EmptyPredicate(k));
        }
        let node = segments.len();
        segments.push(Segment { text, seg_type: predicate_type, role: Role::Source });
        tuples.push(Tuple { head: t.head, predicate: head_rel, tail: node });
        tuples.push(Tuple { head: node, predicate: tail_rel, tail: t.tail });
    }
    DataSchema::new(segments, preset, tuples, Vec::new())
}
