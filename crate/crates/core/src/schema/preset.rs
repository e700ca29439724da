//! Relation presets: category lists, segment-type lists and the rule procedure
//! that fills a relation matrix for each dataset family.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Origin, RelationCategory, RelationId, RelationSet, Role, SchemaError, Segment, SegmentTypeId, TupleSet};

pub const SAME_SEGMENT: &str = "same-segment";
pub const SOURCE_TO_TARGET: &str = "source-to-target";

const AGENDA_PREDICATES: [&str; 7] =
    ["used-for", "feature-of", "conjunction", "part-of", "evaluate-for", "hyponym-of", "compare"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// Keys and values paired into attributes (infobox / restaurant records).
    KeyValue,
    /// Concepts with classes, seven closed predicates, title as a concept.
    Agenda,
    /// Levi-transformed graphs with node and predicate segments.
    WebNlg,
    /// Caller-declared closed predicate set with an `unrelated` fallback.
    Generic,
    /// The linearized baseline: one source segment.
    Flat,
}

/// A relation set together with its segment types and matrix rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preset {
    kind: PresetKind,
    relations: RelationSet,
    segment_types: Vec<String>,
}

fn cat(name: &str, origin: Origin, visible: bool) -> RelationCategory {
    RelationCategory { name: name.to_string(), origin, visible }
}

fn supp(name: &str) -> RelationCategory {
    cat(name, Origin::Supplementary, true)
}

fn masked(name: &str) -> RelationCategory {
    cat(name, Origin::Supplementary, false)
}

fn types(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Looks up a preset by name. `generic` needs its predicate list; the others
/// ignore `predicates`.
pub fn relation_preset(name: &str, predicates: &[String]) -> Result<Preset, SchemaError> {
    match name {
        "key-value" => Ok(Preset::key_value()),
        "agenda" => Ok(Preset::agenda()),
        "webnlg" => Ok(Preset::webnlg()),
        "generic" => Preset::generic(predicates),
        "flat" => Ok(Preset::flat()),
        other => Err(SchemaError::UnknownPreset(other.to_string())),
    }
}

impl Preset {
    pub fn key_value() -> Self {
        let relations = RelationSet::new(alloc::vec![
            supp("paired"),
            supp("to-other-key"),
            supp("to-other-value"),
            masked(SOURCE_TO_TARGET),
            supp(SAME_SEGMENT),
        ])
        .expect("static preset");
        Preset { kind: PresetKind::KeyValue, relations, segment_types: types(&["key", "value", "target"]) }
    }

    pub fn agenda() -> Self {
        let mut cats: Vec<RelationCategory> =
            AGENDA_PREDICATES.iter().map(|p| cat(p, Origin::Predicate, true)).collect();
        cats.extend([
            supp("paired"),
            supp("to-other-concept"),
            supp("to-other-class"),
            masked(SOURCE_TO_TARGET),
            supp(SAME_SEGMENT),
        ]);
        let relations = RelationSet::new(cats).expect("static preset");
        Preset { kind: PresetKind::Agenda, relations, segment_types: types(&["concept", "class", "target"]) }
    }

    pub fn webnlg() -> Self {
        let relations = RelationSet::new(alloc::vec![
            cat(super::HEAD_TO_PREDICATE, Origin::Predicate, true),
            cat(super::PREDICATE_TO_TAIL, Origin::Predicate, true),
            supp("to-predicate"),
            supp("to-node"),
            supp("target-to-node"),
            supp("target-to-predicate"),
            supp(SAME_SEGMENT),
        ])
        .expect("static preset");
        Preset { kind: PresetKind::WebNlg, relations, segment_types: types(&["node", "predicate", "target"]) }
    }

    pub fn generic(predicates: &[String]) -> Result<Self, SchemaError> {
        let mut cats: Vec<RelationCategory> = predicates.iter().map(|p| cat(p, Origin::Predicate, true)).collect();
        cats.extend([supp("unrelated"), supp("target-to-source"), masked(SOURCE_TO_TARGET), supp(SAME_SEGMENT)]);
        let relations = RelationSet::new(cats)?;
        Ok(Preset { kind: PresetKind::Generic, relations, segment_types: types(&["node", "target"]) })
    }

    pub fn flat() -> Self {
        let relations = RelationSet::new(alloc::vec![supp("other"), masked(SOURCE_TO_TARGET), supp(SAME_SEGMENT)])
            .expect("static preset");
        Preset { kind: PresetKind::Flat, relations, segment_types: types(&["source", "target"]) }
    }

    pub fn kind(&self) -> PresetKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PresetKind::KeyValue => "key-value",
            PresetKind::Agenda => "agenda",
            PresetKind::WebNlg => "webnlg",
            PresetKind::Generic => "generic",
            PresetKind::Flat => "flat",
        }
    }

    pub fn relation_set(&self) -> &RelationSet {
        &self.relations
    }

    /// Predicate names, in category order (empty except for agenda, webnlg and generic).
    pub fn predicates(&self) -> Vec<String> {
        self.relations.categories().iter().filter(|c| c.origin == Origin::Predicate).map(|c| c.name.clone()).collect()
    }

    /// Resolves a predicate name case-insensitively. The agenda preset also accepts
    /// the `conjuction` and `hyponym-for` spellings.
    pub fn resolve_predicate(&self, name: &str) -> Option<RelationId> {
        let name = match (self.kind, name.to_ascii_lowercase().as_str()) {
            (PresetKind::Agenda, "conjuction") => "conjunction".to_string(),
            (PresetKind::Agenda, "hyponym-for") => "hyponym-of".to_string(),
            (_, other) => other.to_string(),
        };
        self.relations.predicate_id(&name)
    }

    pub fn segment_types(&self) -> &[String] {
        &self.segment_types
    }

    pub fn segment_type(&self, name: &str) -> Result<SegmentTypeId, SchemaError> {
        self.segment_types
            .iter()
            .position(|t| t == name)
            .map(SegmentTypeId)
            .ok_or_else(|| SchemaError::UnknownSegmentType(name.to_string()))
    }

    /// Every preset declares its target type last.
    pub fn target_type(&self) -> SegmentTypeId {
        SegmentTypeId(self.segment_types.len() - 1)
    }

    fn rel(&self, name: &str) -> RelationId {
        self.relations.id(name).expect("preset category")
    }

    fn type_name<'a>(&'a self, s: &Segment) -> &'a str {
        &self.segment_types[s.seg_type.0]
    }

    /// Category for the ordered pair `(i, j)`, `i != j`. Tuples take precedence over
    /// fallbacks. `None` means the preset has no rule for the pair.
    pub(crate) fn rule(
        &self,
        segments: &[Segment],
        tuples: &TupleSet,
        paired: bool,
        i: usize,
        j: usize,
    ) -> Option<RelationId> {
        let (from, to) = (&segments[i], &segments[j]);
        let from_src = from.role == Role::Source;
        let to_src = to.role == Role::Source;
        match self.kind {
            PresetKind::KeyValue => {
                if paired {
                    Some(self.rel("paired"))
                } else if from_src && !to_src {
                    Some(self.rel(SOURCE_TO_TARGET))
                } else {
                    match self.type_name(to) {
                        "key" => Some(self.rel("to-other-key")),
                        "value" => Some(self.rel("to-other-value")),
                        _ => None,
                    }
                }
            }
            PresetKind::Agenda => {
                if let Some(q) = tuples.find(i, j) {
                    Some(q)
                } else if paired {
                    Some(self.rel("paired"))
                } else if from_src && !to_src {
                    Some(self.rel(SOURCE_TO_TARGET))
                } else {
                    match self.type_name(to) {
                        "concept" => Some(self.rel("to-other-concept")),
                        "class" => Some(self.rel("to-other-class")),
                        _ => None,
                    }
                }
            }
            PresetKind::WebNlg => {
                // A tuple links both directions; the target is a dummy node.
                if let Some(q) = tuples.find(i, j).or_else(|| tuples.find(j, i)) {
                    return Some(q);
                }
                let to_predicate = self.type_name(to) == "predicate";
                Some(match (from_src, to_predicate) {
                    (false, true) => self.rel("target-to-predicate"),
                    (false, false) if to_src => self.rel("target-to-node"),
                    (true, true) => self.rel("to-predicate"),
                    _ => self.rel("to-node"),
                })
            }
            PresetKind::Generic => Some(if let Some(q) = tuples.find(i, j) {
                q
            } else {
                match (from_src, to_src) {
                    (true, false) => self.rel(SOURCE_TO_TARGET),
                    (false, true) => self.rel("target-to-source"),
                    _ => self.rel("unrelated"),
                }
            }),
            PresetKind::Flat => Some(if from_src && !to_src { self.rel(SOURCE_TO_TARGET) } else { self.rel("other") }),
        }
    }
}
