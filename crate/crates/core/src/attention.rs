//! Multi-segment relative attention.
//!
//! The score between query token `i` and key token `j` has three parts:
//!
//! - content: `(q_i + φ_c) · k_j`
//! - segment: `(q_i + φ_b) · H[G(σ_i, σ_j)]`, one learned row per relation category
//! - position: `(q_i + φ_p) · R[τ(i, j)]`
//!
//! and the total is their sum scaled by `1/√head_dim`. Within a segment `τ` is the
//! positional difference; across segments it is measured as if the key's segment
//! were placed directly before the query's segment.

use alloc::vec::Vec;

use crate::schema::{DataSchema, RelationMatrix, RelationSet, SegmentTypeId};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::Real;

/// Relative position of token `t_i` of segment `σ_i` with respect to token `t_j`
/// of segment `σ_j`, where `len_j = |segment σ_j|`.
pub fn relative_position(t_i: usize, sigma_i: usize, t_j: usize, sigma_j: usize, len_j: usize) -> i64 {
    let base = t_i as i64 - t_j as i64;
    if sigma_i == sigma_j {
        base
    } else {
        base + len_j as i64
    }
}

/// Row of the relative-position table for `tau`, clipped to `[-clip, clip]`.
pub fn position_row(tau: i64, clip: usize) -> usize {
    let c = clip as i64;
    (tau.clamp(-c, c) + c) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Content,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSlot {
    pub segment: usize,
    /// 0-based position within the segment.
    pub pos: usize,
    pub seg_type: SegmentTypeId,
    pub stream: Stream,
    /// Generation order over all target tokens; `None` for source tokens.
    pub order: Option<usize>,
}

/// Per-token metadata for one example: content tokens (sources in schema order,
/// then targets in generation order) and one query token per target token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    content: Vec<TokenSlot>,
    query: Vec<TokenSlot>,
    query_to_content: Vec<usize>,
    segment_lens: Vec<usize>,
}

impl TokenLayout {
    /// `lens[s]` is the token count of segment `s` (targets including EOS).
    pub fn new(schema: &DataSchema, lens: &[usize]) -> Self {
        let segs = schema.segments();
        assert_eq!(lens.len(), segs.len(), "one length per segment");
        let mut content = Vec::new();
        for s in schema.source_indices() {
            for pos in 0..lens[s] {
                content.push(TokenSlot {
                    segment: s,
                    pos,
                    seg_type: segs[s].seg_type,
                    stream: Stream::Content,
                    order: None,
                });
            }
        }
        let mut query = Vec::new();
        let mut query_to_content = Vec::new();
        let mut order = 0;
        for &s in schema.target_order() {
            for pos in 0..lens[s] {
                let slot = TokenSlot {
                    segment: s,
                    pos,
                    seg_type: segs[s].seg_type,
                    stream: Stream::Content,
                    order: Some(order),
                };
                query_to_content.push(content.len());
                content.push(slot);
                query.push(TokenSlot { stream: Stream::Query, ..slot });
                order += 1;
            }
        }
        TokenLayout { content, query, query_to_content, segment_lens: lens.to_vec() }
    }

    pub fn content(&self) -> &[TokenSlot] {
        &self.content
    }

    pub fn query(&self) -> &[TokenSlot] {
        &self.query
    }

    /// Content index paired with each query token.
    pub fn query_to_content(&self) -> &[usize] {
        &self.query_to_content
    }

    pub fn segment_lens(&self) -> &[usize] {
        &self.segment_lens
    }

    /// Number of source content tokens (they come first).
    pub fn source_len(&self) -> usize {
        self.content.iter().take_while(|s| s.order.is_none()).count()
    }
}

/// Whether `query` may attend to the content token `key`.
///
/// Sources never see targets. A target content token at order `k` sees target
/// tokens with order `≤ k`; a query-stream token at order `k` sees orders `< k`.
/// Any key reached through a hidden relation category is hidden.
pub fn key_visible(query: &TokenSlot, key: &TokenSlot, matrix: &RelationMatrix, relations: &RelationSet) -> bool {
    if !relations.is_visible(matrix.get(query.segment, key.segment)) {
        return false;
    }
    match (key.order, query.order) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(k), Some(q)) => match query.stream {
            Stream::Content => k <= q,
            Stream::Query => k < q,
        },
    }
}

/// Boolean query × key visibility table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl VisibilityMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamMasks {
    pub content: VisibilityMask,
    pub query: VisibilityMask,
}

pub fn build_visibility_mask(layout: &TokenLayout, matrix: &RelationMatrix, relations: &RelationSet) -> StreamMasks {
    let table = |queries: &[TokenSlot]| {
        let keys = layout.content();
        let mut data = Vec::with_capacity(queries.len() * keys.len());
        for q in queries {
            for k in keys {
                data.push(key_visible(q, k, matrix, relations));
            }
        }
        VisibilityMask { rows: queries.len(), cols: keys.len(), data }
    };
    StreamMasks { content: table(layout.content()), query: table(layout.query()) }
}

/// Index tables for one block of queries against one block of keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    pub rows: usize,
    pub cols: usize,
    /// Relation category per pair (row-major).
    pub relation: Vec<usize>,
    /// Distinct relative-position table rows used by this block, ascending.
    pub position_rows: Vec<usize>,
    /// Per pair, an index into `position_rows`.
    pub position: Vec<usize>,
    pub visible: Vec<bool>,
}

/// Options that change how pairs are indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexOptions {
    pub clip: usize,
    /// Every pair uses relation row 0 (ablation); visibility is unaffected.
    pub collapse_relations: bool,
}

pub fn pair_index(
    queries: &[TokenSlot],
    keys: &[TokenSlot],
    segment_lens: &[usize],
    matrix: &RelationMatrix,
    relations: &RelationSet,
    opts: IndexOptions,
) -> PairIndex {
    let n = queries.len() * keys.len();
    let mut relation = Vec::with_capacity(n);
    let mut raw_pos = Vec::with_capacity(n);
    let mut visible = Vec::with_capacity(n);
    for q in queries {
        for k in keys {
            relation.push(if opts.collapse_relations { 0 } else { matrix.get(q.segment, k.segment).0 });
            let tau = relative_position(q.pos, q.segment, k.pos, k.segment, segment_lens[k.segment]);
            raw_pos.push(position_row(tau, opts.clip));
            visible.push(key_visible(q, k, matrix, relations));
        }
    }
    let mut position_rows = raw_pos.clone();
    position_rows.sort_unstable();
    position_rows.dedup();
    let position = raw_pos.iter().map(|r| position_rows.binary_search(r).expect("row present")).collect();
    PairIndex { rows: queries.len(), cols: keys.len(), relation, position_rows, position, visible }
}

/// Tape handles for one layer's relation table `H` (`relations × d`), position
/// table `R` (`(2·clip+1) × d`) and the three `1 × d` biases.
#[derive(Debug, Clone, Copy)]
pub struct TableVars {
    pub relation: Var,
    pub position: Var,
    pub bias_content: Var,
    pub bias_segment: Var,
    pub bias_position: Var,
}

/// Score components for one head, each `queries × keys`.
#[derive(Debug, Clone, Copy)]
pub struct HeadScores {
    pub content: Var,
    pub segment: Var,
    pub position: Var,
    /// `(content + segment + position) / √head_dim`
    pub total: Var,
}

/// Scores for head `head`. `q` and `k` are that head's projected queries and keys
/// (`queries × head_dim`, `keys × head_dim`); `positions` must be the position
/// table restricted to `index.position_rows`.
#[allow(clippy::too_many_arguments)]
pub fn head_scores<S: Real>(
    tape: &mut Tape<S>,
    q: Var,
    k: Var,
    tables: &TableVars,
    positions: Var,
    head: usize,
    head_dim: usize,
    index: &PairIndex,
) -> Result<HeadScores, TensorError> {
    let start = head * head_dim;
    let bc = tape.slice_cols(tables.bias_content, start, head_dim)?;
    let bb = tape.slice_cols(tables.bias_segment, start, head_dim)?;
    let bp = tape.slice_cols(tables.bias_position, start, head_dim)?;

    let qc = tape.add(q, bc)?;
    let content = tape.matmul_nt(qc, k)?;

    let rel = tape.slice_cols(tables.relation, start, head_dim)?;
    let qb = tape.add(q, bb)?;
    let per_relation = tape.matmul_nt(qb, rel)?;
    let segment = tape.gather_cols(per_relation, &index.relation, index.cols)?;

    let pos = tape.slice_cols(positions, start, head_dim)?;
    let qp = tape.add(q, bp)?;
    let per_position = tape.matmul_nt(qp, pos)?;
    let position = tape.gather_cols(per_position, &index.position, index.cols)?;

    let sum = tape.add(content, segment)?;
    let sum = tape.add(sum, position)?;
    let total = tape.scale(sum, S::ONE / S::from_f64(head_dim as f64).sqrt());
    Ok(HeadScores { content, segment, position, total })
}

/// One layer's attention tables as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTables<S> {
    pub relation: Tensor<S>,
    pub position: Tensor<S>,
    pub bias_content: Tensor<S>,
    pub bias_segment: Tensor<S>,
    pub bias_position: Tensor<S>,
}

/// Evaluated score components for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDecomposition<S> {
    pub content: Tensor<S>,
    pub segment: Tensor<S>,
    pub position: Tensor<S>,
    pub total: Tensor<S>,
}

/// Per-head score decomposition for projected queries `h_q` (`queries × d`) and
/// keys `h_k` (`keys × d`). Uses the same code path as the model.
pub fn attention_scores<S: Real>(
    h_q: &Tensor<S>,
    h_k: &Tensor<S>,
    index: &PairIndex,
    tables: &AttentionTables<S>,
    heads: usize,
) -> Result<Vec<ScoreDecomposition<S>>, TensorError> {
    let (_, d) = h_q.dims2("attention_scores")?;
    let (rel_rows, _) = tables.relation.dims2("attention_scores")?;
    if let Some(&bad) = index.relation.iter().find(|&&r| r >= rel_rows) {
        return Err(TensorError::IndexOutOfRange { op: "attention_scores", index: bad, bound: rel_rows });
    }
    let head_dim = d / heads.max(1);
    let mut tape = Tape::new();
    let q = tape.constant(h_q.clone());
    let k = tape.constant(h_k.clone());
    let vars = TableVars {
        relation: tape.constant(tables.relation.clone()),
        position: tape.constant(tables.position.clone()),
        bias_content: tape.constant(tables.bias_content.clone()),
        bias_segment: tape.constant(tables.bias_segment.clone()),
        bias_position: tape.constant(tables.bias_position.clone()),
    };
    let positions = tape.select_rows(vars.position, &index.position_rows)?;
    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let s = head_scores(&mut tape, qh, kh, &vars, positions, h, head_dim, index)?;
        out.push(ScoreDecomposition {
            content: tape.value(s.content).clone(),
            segment: tape.value(s.segment).clone(),
            position: tape.value(s.position).clone(),
            total: tape.value(s.total).clone(),
        });
    }
    Ok(out)
}

/// Pair indices for the content stream and the query stream of an example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamIndex {
    pub content: PairIndex,
    pub query: PairIndex,
}

impl StreamIndex {
    pub fn new(layout: &TokenLayout, schema: &DataSchema, opts: IndexOptions) -> Self {
        let (m, r) = (schema.matrix(), schema.relation_set());
        let lens = layout.segment_lens();
        StreamIndex {
            content: pair_index(layout.content(), layout.content(), lens, m, r, opts),
            query: pair_index(layout.query(), layout.content(), lens, m, r, opts),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Preset, Role, Segment};
    use alloc::string::String;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_position_examples() {
        assert_eq!(relative_position(7, 0, 3, 0, 10), 4);
        assert_eq!(relative_position(0, 1, 2, 0, 3), 1);
        assert_eq!(relative_position(5, 2, 5, 2, 9), 0);
        assert_eq!(position_row(-500, 128), 0);
        assert_eq!(position_row(500, 128), 256);
        assert_eq!(position_row(0, 128), 128);
    }

    #[test]
    fn concatenation_law_for_all_cross_segment_pairs() {
        for len_i in 1..6 {
            for len_j in 1..6 {
                assert_eq!(relative_position(0, 0, len_j - 1, 1, len_j), 1);
                for t_i in 0..len_i {
                    for t_j in 0..len_j {
                        // Position of j in the concatenation [S_j, S_i] is t_j, of i is len_j + t_i.
                        let expected = (len_j + t_i) as i64 - t_j as i64;
                        assert_eq!(relative_position(t_i, 0, t_j, 1, len_j), expected);
                    }
                }
            }
        }
    }

    fn kv_schema() -> DataSchema {
        let p = Preset::key_value();
        let key = p.segment_type("key").unwrap();
        let value = p.segment_type("value").unwrap();
        let segments = alloc::vec![
            Segment::new("name", key, Role::Source),
            Segment::new("loch fyne", value, Role::Source),
            Segment::new("", p.target_type(), Role::Target),
        ];
        DataSchema::new(segments, p, alloc::vec![], alloc::vec![(0, 1)]).unwrap()
    }

    #[test]
    fn key_value_sources_see_each_other_but_not_the_target() {
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let masks = build_visibility_mask(&layout, schema.matrix(), schema.relation_set());
        let src = layout.source_len();
        assert_eq!(src, 3);
        for i in 0..src {
            for j in 0..src {
                assert!(masks.content.get(i, j));
            }
            for j in src..layout.content().len() {
                assert!(!masks.content.get(i, j));
            }
        }
    }

    #[test]
    fn query_stream_is_blind_to_its_own_token() {
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let masks = build_visibility_mask(&layout, schema.matrix(), schema.relation_set());
        let src = layout.source_len();
        // Query token 2 of the target sees content tokens 0 and 1 but not 2.
        assert!(masks.query.get(2, src));
        assert!(masks.query.get(2, src + 1));
        assert!(!masks.query.get(2, src + 2));
        // Content tokens see themselves.
        for (qi, &ci) in layout.query_to_content().iter().enumerate() {
            assert!(!masks.query.get(qi, ci));
            assert!(masks.content.get(ci, ci));
        }
    }

    /// Independent rule-by-rule enumeration of visibility.
    fn oracle_visible(schema: &DataSchema, q: &TokenSlot, k: &TokenSlot) -> bool {
        let cat = schema.matrix().get(q.segment, k.segment);
        let cat_visible = schema.relation_set().categories()[cat.0].visible;
        let q_target = schema.segments()[q.segment].role == Role::Target;
        let k_target = schema.segments()[k.segment].role == Role::Target;
        if !cat_visible {
            return false;
        }
        if !k_target {
            return true;
        }
        if !q_target {
            return false;
        }
        let (qo, ko) = (q.order.unwrap(), k.order.unwrap());
        if q.stream == Stream::Query {
            ko < qo
        } else {
            ko <= qo
        }
    }

    #[test]
    fn masks_match_rule_enumeration_for_three_segments() {
        let p = Preset::generic(&[String::from("rel")]).unwrap();
        let node = p.segment_type("node").unwrap();
        let segments = alloc::vec![
            Segment::new("a b", node, Role::Source),
            Segment::new("", p.target_type(), Role::Target),
            Segment::new("c", node, Role::Source),
        ];
        let rel = p.relation_set().id("rel").unwrap();
        let tuples = alloc::vec![crate::schema::Tuple { head: 0, predicate: rel, tail: 2 }];
        let schema = DataSchema::new(segments, p, tuples, alloc::vec![]).unwrap();
        let layout = TokenLayout::new(&schema, &[2, 3, 1]);
        let masks = build_visibility_mask(&layout, schema.matrix(), schema.relation_set());
        for (i, q) in layout.content().iter().enumerate() {
            for (j, k) in layout.content().iter().enumerate() {
                assert_eq!(masks.content.get(i, j), oracle_visible(&schema, q, k), "content {i},{j}");
            }
        }
        for (i, q) in layout.query().iter().enumerate() {
            for (j, k) in layout.content().iter().enumerate() {
                assert_eq!(masks.query.get(i, j), oracle_visible(&schema, q, k), "query {i},{j}");
            }
        }
    }

    fn zero_tables(rel: usize, clip: usize, d: usize) -> AttentionTables<f64> {
        AttentionTables {
            relation: Tensor::zeros(&[rel, d]),
            position: Tensor::zeros(&[2 * clip + 1, d]),
            bias_content: Tensor::zeros(&[1, d]),
            bias_segment: Tensor::zeros(&[1, d]),
            bias_position: Tensor::zeros(&[1, d]),
        }
    }

    #[test]
    fn all_zero_inputs_give_zero_scores() {
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let opts = IndexOptions { clip: 4, collapse_relations: false };
        let idx = StreamIndex::new(&layout, &schema, opts);
        let n = layout.content().len();
        let h = Tensor::zeros(&[n, 4]);
        let scores = attention_scores(&h, &h, &idx.content, &zero_tables(5, 4, 4), 2).unwrap();
        for s in &scores {
            for t in [&s.content, &s.segment, &s.position, &s.total] {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn total_is_sum_of_components_scaled() {
        // One token attending to itself: content 1.5, segment 0.25, position -0.5.
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let opts = IndexOptions { clip: 2, collapse_relations: false };
        let q = [layout.content()[0]];
        let idx = pair_index(&q, &q, layout.segment_lens(), schema.matrix(), schema.relation_set(), opts);
        let mut tables = zero_tables(5, 2, 1);
        let same = schema.matrix().get(0, 0).0;
        tables.relation.data_mut()[same] = 0.25;
        tables.position.data_mut()[2] = -0.5;
        let h = Tensor::matrix(1, 1, alloc::vec![1.0]).unwrap();
        let hk = Tensor::matrix(1, 1, alloc::vec![1.5]).unwrap();
        let s = &attention_scores(&h, &hk, &idx, &tables, 1).unwrap()[0];
        assert_eq!(s.content.item(), 1.5);
        assert_eq!(s.segment.item(), 0.25);
        assert_eq!(s.position.item(), -0.5);
        assert_eq!(s.total.item(), 1.25);
    }

    #[test]
    fn relation_index_out_of_table_is_an_error() {
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let idx = StreamIndex::new(&layout, &schema, IndexOptions { clip: 2, collapse_relations: false });
        let n = layout.content().len();
        let h = Tensor::zeros(&[n, 2]);
        let r = attention_scores(&h, &h, &idx.content, &zero_tables(2, 2, 2), 1);
        assert!(matches!(r, Err(TensorError::IndexOutOfRange { .. })));
    }

    #[test]
    fn scaling_relation_rows_never_changes_visibility() {
        let schema = kv_schema();
        let layout = TokenLayout::new(&schema, &[1, 2, 3]);
        let opts = IndexOptions { clip: 3, collapse_relations: false };
        let idx = StreamIndex::new(&layout, &schema, opts);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = layout.content().len();
        let h = Tensor::from_fn(&[n, 4], |_| rng.random_range(-1.0..1.0));
        let mut tables = zero_tables(5, 3, 4);
        for t in [&mut tables.relation, &mut tables.position] {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let zero_pattern = |tables: &AttentionTables<f64>| {
            let s = attention_scores(&h, &h, &idx.content, tables, 2).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(s[0].total.clone());
            let p = tape.softmax_masked(x, &idx.content.visible).unwrap();
            tape.value(p).data().iter().map(|&v| v == 0.0).collect::<Vec<_>>()
        };
        let before = zero_pattern(&tables);
        for v in tables.relation.data_mut() {
            *v *= 7.5;
        }
        assert_eq!(before, zero_pattern(&tables));
        let expected: Vec<bool> = idx.content.visible.iter().map(|v| !v).collect();
        assert_eq!(before, expected);
    }
}
