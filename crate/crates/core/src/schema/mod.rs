//! Graph and segment data model.
//!
//! A [`DataSchema`] is a set of text segments (sources and targets), a closed set
//! of relation categories, the tuples linking segments, and the square
//! [`RelationMatrix`] assigning one category to every ordered segment pair.
//! Segment indices are 0-based.

mod flatten;
mod levi;
mod preset;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flatten::{flatten_schema, FlattenWarning, Flattened, Separators};
pub use levi::{levi_transform, OpenGraph, OpenTuple, HEAD_TO_PREDICATE, PREDICATE_TO_TAIL};
pub use preset::{relation_preset, Preset, PresetKind, SAME_SEGMENT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("segment {0} has empty text")]
    EmptySegment(usize),
    #[error("segment {index} has type id {type_id}, preset declares {declared} types")]
    SegmentTypeOutOfRange { index: usize, type_id: usize, declared: usize },
    #[error("segment {index}: role does not match segment type `{type_name}`")]
    RoleTypeMismatch { index: usize, type_name: String },
    #[error("unknown segment type `{0}`")]
    UnknownSegmentType(String),
    #[error("reference to missing segment {index} (schema has {len} segments)")]
    MissingSegment { index: usize, len: usize },
    #[error("tuple links segment {0} to itself")]
    SelfLoop(usize),
    #[error("more than one predicate between segments {head} and {tail}")]
    DuplicatePair { head: usize, tail: usize },
    #[error("`{0}` is not a predicate category of the preset")]
    UnknownPredicate(String),
    #[error("tuple {0} has empty predicate text")]
    EmptyPredicate(usize),
    #[error("unknown relation preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{preset}` has no rule for the segment pair ({from}, {to})")]
    UncoveredPair { preset: String, from: usize, to: usize },
    #[error("duplicate relation category `{0}`")]
    DuplicateCategory(String),
    #[error("relation set lacks a visible `same-segment` category")]
    MissingSameSegment,
    #[error("target order must list every target segment exactly once")]
    BadTargetOrder,
    #[error("pair ({0}, {1}) must join two distinct source segments")]
    BadPair(usize, usize),
}

/// Index into a preset's declared segment-type list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentTypeId(pub usize);

/// Index into a [`RelationSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub seg_type: SegmentTypeId,
    pub role: Role,
}

impl Segment {
    /// Builds a segment, collapsing runs of whitespace to single spaces.
    pub fn new(text: &str, seg_type: SegmentTypeId, role: Role) -> Self {
        Segment { text: normalize_whitespace(text), seg_type, role }
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Predicate,
    Supplementary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub name: String,
    pub origin: Origin,
    /// `false` hides every key reached through this category.
    pub visible: bool,
}

/// The closed set of relation categories (predicates plus supplementary ones).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    categories: Vec<RelationCategory>,
}

impl RelationSet {
    pub fn new(categories: Vec<RelationCategory>) -> Result<Self, SchemaError> {
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|o| o.name == c.name) {
                return Err(SchemaError::DuplicateCategory(c.name.clone()));
            }
        }
        let same = categories.iter().any(|c| c.name == SAME_SEGMENT && c.origin == Origin::Supplementary && c.visible);
        if !same {
            return Err(SchemaError::MissingSameSegment);
        }
        Ok(RelationSet { categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[RelationCategory] {
        &self.categories
    }

    pub fn get(&self, id: RelationId) -> Option<&RelationCategory> {
        self.categories.get(id.0)
    }

    pub fn id(&self, name: &str) -> Option<RelationId> {
        self.categories.iter().position(|c| c.name == name).map(RelationId)
    }

    pub fn predicate_id(&self, name: &str) -> Option<RelationId> {
        self.categories
            .iter()
            .position(|c| c.origin == Origin::Predicate && c.name.eq_ignore_ascii_case(name))
            .map(RelationId)
    }

    pub fn is_visible(&self, id: RelationId) -> bool {
        self.categories.get(id.0).is_some_and(|c| c.visible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tuple {
    pub head: usize,
    pub predicate: RelationId,
    pub tail: usize,
}

/// Tuples with at most one predicate per ordered segment pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TupleSet {
    tuples: Vec<Tuple>,
}

impl TupleSet {
    pub fn new(tuples: Vec<Tuple>, segment_count: usize) -> Result<Self, SchemaError> {
        for (i, t) in tuples.iter().enumerate() {
            for index in [t.head, t.tail] {
                if index >= segment_count {
                    return Err(SchemaError::MissingSegment { index, len: segment_count });
                }
            }
            if t.head == t.tail {
                return Err(SchemaError::SelfLoop(t.head));
            }
            if tuples[..i].iter().any(|o| o.head == t.head && o.tail == t.tail) {
                return Err(SchemaError::DuplicatePair { head: t.head, tail: t.tail });
            }
        }
        Ok(TupleSet { tuples })
    }

    pub fn as_slice(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn find(&self, head: usize, tail: usize) -> Option<RelationId> {
        self.tuples.iter().find(|t| t.head == head && t.tail == tail).map(|t| t.predicate)
    }
}

/// Square table of relation ids, `entry(i, j)` being the category from segment `i`
/// (query side) to segment `j` (key side).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMatrix {
    side: usize,
    entries: Vec<RelationId>,
}

impl RelationMatrix {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, i: usize, j: usize) -> RelationId {
        self.entries[i * self.side + j]
    }

    pub fn entries(&self) -> &[RelationId] {
        &self.entries
    }

    /// Same matrix with rows and columns reordered: `new(i, j) = old(order[i], order[j])`.
    pub fn permuted(&self, order: &[usize]) -> RelationMatrix {
        let side = self.side;
        let mut entries = Vec::with_capacity(side * side);
        for &i in order {
            for &j in order {
                entries.push(self.get(i, j));
            }
        }
        RelationMatrix { side, entries }
    }
}

/// Fills every ordered pair using the preset's rules; errors if a rule is missing.
pub fn build_relation_matrix(
    segments: &[Segment],
    tuples: &TupleSet,
    pairs: &[(usize, usize)],
    preset: &Preset,
) -> Result<RelationMatrix, SchemaError> {
    let side = segments.len();
    let same = preset.relation_set().id(SAME_SEGMENT).ok_or(SchemaError::MissingSameSegment)?;
    let mut entries = vec![same; side * side];
    for i in 0..side {
        for j in 0..side {
            if i == j {
                continue;
            }
            let paired = pairs.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
            entries[i * side + j] = preset
                .rule(segments, tuples, paired, i, j)
                .ok_or_else(|| SchemaError::UncoveredPair { preset: String::from(preset.name()), from: i, to: j })?;
        }
    }
    Ok(RelationMatrix { side, entries })
}

/// The unit of ingestion, transformation and batching.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSchema {
    segments: Vec<Segment>,
    preset: Preset,
    tuples: TupleSet,
    pairs: Vec<(usize, usize)>,
    matrix: RelationMatrix,
    target_order: Vec<usize>,
}

impl DataSchema {
    /// Validates the parts and builds the relation matrix. Targets are generated
    /// in index order; see [`DataSchema::with_target_order`].
    ///
    /// `pairs` are attribute pairings (key with value, concept with class) used by
    /// the key-value and agenda presets.
    pub fn new(
        segments: Vec<Segment>,
        preset: Preset,
        tuples: Vec<Tuple>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, SchemaError> {
        let declared = preset.segment_types().len();
        let target_type = preset.target_type();
        for (index, s) in segments.iter().enumerate() {
            if s.seg_type.0 >= declared {
                return Err(SchemaError::SegmentTypeOutOfRange { index, type_id: s.seg_type.0, declared });
            }
            if (s.role == Role::Target) != (s.seg_type == target_type) {
                return Err(SchemaError::RoleTypeMismatch {
                    index,
                    type_name: String::from(preset.segment_types()[s.seg_type.0].as_str()),
                });
            }
            // Targets may be empty: generation fills them in.
            if s.role == Role::Source && s.text.trim().is_empty() {
                return Err(SchemaError::EmptySegment(index));
            }
        }
        let tuples = TupleSet::new(tuples, segments.len())?;
        for t in tuples.as_slice() {
            match preset.relation_set().get(t.predicate) {
                Some(c) if c.origin == Origin::Predicate => {}
                Some(c) => return Err(SchemaError::UnknownPredicate(c.name.clone())),
                None => return Err(SchemaError::UnknownPredicate(alloc::format!("#{}", t.predicate.0))),
            }
        }
        for &(a, b) in &pairs {
            for index in [a, b] {
                if index >= segments.len() {
                    return Err(SchemaError::MissingSegment { index, len: segments.len() });
                }
            }
            if a == b || segments[a].role == Role::Target || segments[b].role == Role::Target {
                return Err(SchemaError::BadPair(a, b));
            }
        }
        let matrix = build_relation_matrix(&segments, &tuples, &pairs, &preset)?;
        let target_order =
            segments.iter().enumerate().filter(|(_, s)| s.role == Role::Target).map(|(i, _)| i).collect();
        Ok(DataSchema { segments, preset, tuples, pairs, matrix, target_order })
    }

    pub fn with_target_order(mut self, order: Vec<usize>) -> Result<Self, SchemaError> {
        let mut expected = self.target_order.clone();
        let mut given = order.clone();
        expected.sort_unstable();
        given.sort_unstable();
        if expected != given {
            return Err(SchemaError::BadTargetOrder);
        }
        self.target_order = order;
        Ok(self)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    pub fn relation_set(&self) -> &RelationSet {
        self.preset.relation_set()
    }

    pub fn tuples(&self) -> &TupleSet {
        &self.tuples
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn matrix(&self) -> &RelationMatrix {
        &self.matrix
    }

    pub fn target_order(&self) -> &[usize] {
        &self.target_order
    }

    pub fn source_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().enumerate().filter(|(_, s)| s.role == Role::Source).map(|(i, _)| i)
    }

    /// Same schema with every target text replaced.
    pub fn with_target_texts(&self, texts: &[String]) -> Result<Self, SchemaError> {
        if texts.len() != self.target_order.len() {
            return Err(SchemaError::BadTargetOrder);
        }
        let mut out = self.clone();
        for (&idx, text) in self.target_order.iter().zip(texts) {
            out.segments[idx].text = normalize_whitespace(text);
        }
        Ok(out)
    }

    /// Reorders segments so that new segment `k` is old segment `order[k]`.
    /// Tuples, pairs, the matrix and target order are remapped accordingly.
    pub fn permute_segments(&self, order: &[usize]) -> Result<Self, SchemaError> {
        let n = self.segments.len();
        let mut seen = vec![false; n];
        if order.len() != n {
            return Err(SchemaError::MissingSegment { index: order.len(), len: n });
        }
        for &o in order {
            if o >= n || seen[o] {
                return Err(SchemaError::MissingSegment { index: o, len: n });
            }
            seen[o] = true;
        }
        let mut new_index = vec![0; n];
        for (k, &o) in order.iter().enumerate() {
            new_index[o] = k;
        }
        let segments = order.iter().map(|&o| self.segments[o].clone()).collect();
        let tuples = self
            .tuples
            .as_slice()
            .iter()
            .map(|t| Tuple { head: new_index[t.head], predicate: t.predicate, tail: new_index[t.tail] })
            .collect();
        let pairs = self.pairs.iter().map(|&(a, b)| (new_index[a], new_index[b])).collect();
        let out = DataSchema::new(segments, self.preset.clone(), tuples, pairs)?;
        let target_order = self.target_order.iter().map(|&t| new_index[t]).collect();
        out.with_target_order(target_order)
    }
}
