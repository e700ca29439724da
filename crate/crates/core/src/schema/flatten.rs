//! Linearization of a schema into one separator-delimited source segment.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{DataSchema, Origin, Preset, PresetKind, Role, SchemaError, Segment, HEAD_TO_PREDICATE, PREDICATE_TO_TAIL};
use crate::tokenizer;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Separators {
    pub head: String,
    pub predicate: String,
    pub tail: String,
    pub key: String,
    pub value: String,
}

impl Default for Separators {
    fn default() -> Self {
        Separators {
            head: tokenizer::SEP_H_TOKEN.to_string(),
            predicate: tokenizer::SEP_P_TOKEN.to_string(),
            tail: tokenizer::SEP_T_TOKEN.to_string(),
            key: tokenizer::SEP_K_TOKEN.to_string(),
            value: tokenizer::SEP_V_TOKEN.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlattenWarning {
    /// Nothing to linearize; the flattened schema has no source segment.
    EmptySource,
    /// Source segments in no tuple or pair were left out.
    DroppedSegments(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    /// The linearized source text.
    pub text: String,
    /// One source segment (absent when `text` is empty) followed by the targets,
    /// under the flat preset.
    pub schema: DataSchema,
    pub warning: Option<FlattenWarning>,
}

/// Pairs first (`K key V value`), then tuples in input order (`H head P predicate
/// T tail`). Levi-transformed graphs are folded back into one triple per
/// predicate segment.
pub fn flatten_schema(schema: &DataSchema, seps: &Separators) -> Result<Flattened, SchemaError> {
    let segs = schema.segments();
    let mut used = alloc::vec![false; segs.len()];
    let mut out: Vec<String> = Vec::new();
    for &(a, b) in schema.pairs() {
        out.push(seps.key.clone());
        out.push(segs[a].text.clone());
        out.push(seps.value.clone());
        out.push(segs[b].text.clone());
        used[a] = true;
        used[b] = true;
    }

    let rels = schema.relation_set();
    let tuples = schema.tuples().as_slice();
    if schema.preset().kind() == PresetKind::WebNlg {
        let head_rel = rels.id(HEAD_TO_PREDICATE);
        let tail_rel = rels.id(PREDICATE_TO_TAIL);
        let mut predicates: Vec<usize> = Vec::new();
        for t in tuples {
            let p = if Some(t.predicate) == head_rel { t.tail } else { t.head };
            if !predicates.contains(&p) {
                predicates.push(p);
            }
        }
        for p in predicates {
            if let Some(h) = tuples.iter().find(|t| t.tail == p && Some(t.predicate) == head_rel) {
                out.push(seps.head.clone());
                out.push(segs[h.head].text.clone());
                used[h.head] = true;
            }
            out.push(seps.predicate.clone());
            out.push(segs[p].text.clone());
            used[p] = true;
            if let Some(t) = tuples.iter().find(|t| t.head == p && Some(t.predicate) == tail_rel) {
                out.push(seps.tail.clone());
                out.push(segs[t.tail].text.clone());
                used[t.tail] = true;
            }
        }
    } else {
        for t in tuples {
            let name = rels.get(t.predicate).map(|c| c.name.as_str()).unwrap_or("");
            debug_assert!(rels.get(t.predicate).is_some_and(|c| c.origin == Origin::Predicate));
            out.push(seps.head.clone());
            out.push(segs[t.head].text.clone());
            out.push(seps.predicate.clone());
            out.push(name.to_string());
            out.push(seps.tail.clone());
            out.push(segs[t.tail].text.clone());
            used[t.head] = true;
            used[t.tail] = true;
        }
    }

    let dropped = segs.iter().zip(&used).filter(|(s, u)| s.role == Role::Source && !**u).count();
    let text = out.join(" ");

    let preset = Preset::flat();
    let source_type = preset.segment_type("source")?;
    let target_type = preset.target_type();
    let mut segments = Vec::new();
    if !text.is_empty() {
        segments.push(Segment { text: text.clone(), seg_type: source_type, role: Role::Source });
    }
    let mut order = Vec::new();
    for &t in schema.target_order() {
        order.push(segments.len());
        segments.push(Segment { text: segs[t].text.clone(), seg_type: target_type, role: Role::Target });
    }
    let flat = DataSchema::new(segments, preset, Vec::new(), Vec::new())?.with_target_order(order)?;
    let warning = if text.is_empty() {
        Some(FlattenWarning::EmptySource)
    } else if dropped > 0 {
        Some(FlattenWarning::DroppedSegments(dropped))
    } else {
        None
    };
    Ok(Flattened { text, schema: flat, warning })
}
