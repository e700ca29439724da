//! Greedy and beam generation of target segments.
//!
//! Source states are computed once. Each target token is then produced in two
//! moves: the query stream at the next position reads the cached keys and values
//! and yields logits; the chosen token is appended to the content stream, which
//! extends the caches. Keys are appended in the same order the full pass uses, so
//! the incremental logits equal those of a full forward pass.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{pair_index, Stream, TokenSlot};
use crate::model::{Bound, Model, ModelError};
use crate::schema::{DataSchema, Role};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{TokenizerError, Vocab, EOS, QUERY};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("invalid decode configuration: {0}")]
    Config(String),
    #[error("generation may need {len} tokens, over the max_seq_len budget of {budget}")]
    Sizing { len: usize, budget: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Length-normalization exponent for beam scores.
    pub alpha: f64,
    /// Maximum generated tokens per target segment, EOS excluded.
    pub max_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { strategy: Strategy::Greedy, beam_width: 4, alpha: 0.6, max_tokens: 64 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 || self.max_tokens == 0 {
            return Err(DecodeError::Config(String::from("beam_width and max_tokens must be at least 1")));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(DecodeError::Config(String::from("alpha must be finite and non-negative")));
        }
        Ok(())
    }

    fn width(&self) -> usize {
        match self.strategy {
            Strategy::Greedy => 1,
            Strategy::Beam => self.beam_width,
        }
    }
}

/// Generated tokens per target segment, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Tokens of each target segment without the terminating EOS.
    pub tokens: Vec<Vec<usize>>,
    /// Log-probability of each segment (EOS included when it was generated).
    pub log_probs: Vec<f64>,
}

/// Generates every target segment of `schema` and returns the decoded texts in
/// generation order. Existing target texts are ignored.
pub fn generate<S: Real>(
    model: &Model<S>,
    schema: &DataSchema,
    vocab: &Vocab,
    config: &DecodeConfig,
) -> Result<Vec<String>, DecodeError> {
    let sources: Vec<Vec<usize>> = schema
        .segments()
        .iter()
        .map(|s| if s.role == Role::Source { vocab.encode(&s.text) } else { Vec::new() })
        .collect();
    let generation = generate_tokens(model, schema, &sources, config)?;
    Ok(generation.tokens.iter().map(|t| vocab.decode(t)).collect::<Result<_, _>>()?)
}

/// Token-level generation; `tokens[s]` supplies the ids of every source segment
/// (entries for target segments are ignored).
pub fn generate_tokens<S: Real>(
    model: &Model<S>,
    schema: &DataSchema,
    tokens: &[Vec<usize>],
    config: &DecodeConfig,
) -> Result<Generation, DecodeError> {
    config.validate()?;
    let mut decoder = Decoder::new(model, schema, tokens, config)?;
    let mut hyp = decoder.start()?;
    let mut log_probs = Vec::new();
    for k in 0..schema.target_order().len() {
        let (next, lp) = decoder.segment(&hyp, k)?;
        hyp = next;
        log_probs.push(lp);
    }
    Ok(Generation { tokens: hyp.generated, log_probs })
}

/// Per-layer key and value rows for the content tokens generated so far.
#[derive(Debug, Clone)]
pub(crate) struct Hypothesis<S> {
    pub(crate) slots: Vec<TokenSlot>,
    pub(crate) keys: Vec<Vec<S>>,
    pub(crate) values: Vec<Vec<S>>,
    lens: Vec<usize>,
    pub(crate) generated: Vec<Vec<usize>>,
    /// Tokens of the segment being decoded, EOS excluded.
    pub(crate) current: Vec<usize>,
}

impl<S> Hypothesis<S> {
    fn rows(&self) -> usize {
        self.slots.len()
    }
}

pub(crate) struct Decoder<'a, S> {
    model: &'a Model<S>,
    schema: &'a DataSchema,
    tokens: Vec<Vec<usize>>,
    config: &'a DecodeConfig,
    tape: Tape<S>,
    bound: Bound,
}

/// A scored continuation during beam search.
struct Candidate {
    log_prob: f64,
    parent: usize,
    token: usize,
}

pub(crate) struct Finished<S> {
    pub(crate) hyp: Hypothesis<S>,
    pub(crate) log_prob: f64,
    /// Scored tokens including EOS.
    pub(crate) len: usize,
    pub(crate) completed_at: usize,
}

impl<'a, S: Real> Decoder<'a, S> {
    pub(crate) fn new(
        model: &'a Model<S>,
        schema: &'a DataSchema,
        tokens: &[Vec<usize>],
        config: &'a DecodeConfig,
    ) -> Result<Self, DecodeError> {
        let segs = schema.segments();
        if tokens.len() != segs.len() {
            return Err(ModelError::LengthMismatch(segs.len(), tokens.len()).into());
        }
        let tokens: Vec<Vec<usize>> =
            segs.iter().zip(tokens).map(|(s, t)| if s.role == Role::Source { t.clone() } else { Vec::new() }).collect();
        let source_len: usize = tokens.iter().map(Vec::len).sum();
        let budget = model.config().max_seq_len;
        let len = source_len + schema.target_order().len() * (config.max_tokens + 1);
        if len > budget {
            return Err(DecodeError::Sizing { len, budget });
        }
        let mut tape = Tape::new();
        let bound = model.bind_frozen(&mut tape);
        Ok(Decoder { model, schema, tokens, config, tape, bound })
    }

    /// Runs the source tokens through every layer and caches their keys and values.
    pub(crate) fn start(&mut self) -> Result<Hypothesis<S>, DecodeError> {
        let ex = self.model.prepare_tokens(self.schema, &self.tokens)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.model.forward(&mut self.tape, &self.bound, &ex, false, &mut rng)?;
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for layer in 0..self.model.config().layers {
            let hn = self.model.norm1(&mut self.tape, &self.bound, layer, out.content_hidden[layer])?;
            let (k, v) = self.model.keys_values(&mut self.tape, &self.bound, layer, hn)?;
            keys.push(self.tape.value(k).data().to_vec());
            values.push(self.tape.value(v).data().to_vec());
        }
        Ok(Hypothesis {
            slots: ex.layout.content().to_vec(),
            keys,
            values,
            lens: self.tokens.iter().map(Vec::len).collect(),
            generated: Vec::new(),
            current: Vec::new(),
        })
    }

    /// Query-stream logits for the token at generation order `order`, position
    /// `pos` of target segment `segment`.
    pub(crate) fn query_logits(
        &mut self,
        hyp: &Hypothesis<S>,
        segment: usize,
        pos: usize,
        order: usize,
    ) -> Result<Vec<S>, DecodeError> {
        let seg_type = self.schema.segments()[segment].seg_type;
        let slot = TokenSlot { segment, pos, seg_type, stream: Stream::Query, order: Some(order) };
        let index = pair_index(
            &[slot],
            &hyp.slots,
            &hyp.lens,
            self.schema.matrix(),
            self.schema.relation_set(),
            self.model.index_options(),
        );
        let (model, b) = (self.model, &self.bound);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = model.embed_inputs(&mut self.tape, b, &[QUERY], &[seg_type.0])?;
        for layer in 0..model.config().layers {
            let (k, v) = cached(&mut self.tape, model.config().d_model, hyp, layer, None)?;
            let gn = model.norm1(&mut self.tape, b, layer, g)?;
            let att = model.attend(&mut self.tape, b, layer, gn, k, v, &index)?;
            let mid = self.tape.add(g, att).map_err(ModelError::from)?;
            g = model.ffn_block(&mut self.tape, b, layer, mid, false, &mut rng)?;
        }
        let logits = model.project(&mut self.tape, b, g)?;
        Ok(self.tape.value(logits).data().to_vec())
    }

    /// Appends `token` to the content stream and extends every layer's cache.
    pub(crate) fn push_content(
        &mut self,
        hyp: &mut Hypothesis<S>,
        segment: usize,
        token: usize,
        order: usize,
    ) -> Result<(), DecodeError> {
        let seg_type = self.schema.segments()[segment].seg_type;
        let slot = TokenSlot { segment, pos: hyp.lens[segment], seg_type, stream: Stream::Content, order: Some(order) };
        let mut keys_slots = hyp.slots.clone();
        keys_slots.push(slot);
        let mut lens = hyp.lens.clone();
        lens[segment] += 1;
        let index = pair_index(
            &[slot],
            &keys_slots,
            &lens,
            self.schema.matrix(),
            self.schema.relation_set(),
            self.model.index_options(),
        );
        let (model, b) = (self.model, &self.bound);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = model.embed_inputs(&mut self.tape, b, &[token], &[seg_type.0])?;
        for layer in 0..model.config().layers {
            let hn = model.norm1(&mut self.tape, b, layer, h)?;
            let (k_new, v_new) = model.keys_values(&mut self.tape, b, layer, hn)?;
            let k_row = self.tape.value(k_new).data().to_vec();
            let v_row = self.tape.value(v_new).data().to_vec();
            let (k, v) = cached(&mut self.tape, model.config().d_model, hyp, layer, Some((&k_row, &v_row)))?;
            let att = model.attend(&mut self.tape, b, layer, hn, k, v, &index)?;
            let mid = self.tape.add(h, att).map_err(ModelError::from)?;
            h = model.ffn_block(&mut self.tape, b, layer, mid, false, &mut rng)?;
            hyp.keys[layer].extend_from_slice(&k_row);
            hyp.values[layer].extend_from_slice(&v_row);
        }
        hyp.slots.push(slot);
        hyp.lens = lens;
        Ok(())
    }

    /// Decodes the `k`-th target segment from `start`; returns the extended
    /// hypothesis and the segment's log-probability.
    pub(crate) fn segment(&mut self, start: &Hypothesis<S>, k: usize) -> Result<(Hypothesis<S>, f64), DecodeError> {
        let finished = self.beam(start, k)?;
        let best = select_best(finished, self.config.alpha);
        let log_prob = best.log_prob;
        let mut hyp = best.hyp;
        let text = core::mem::take(&mut hyp.current);
        hyp.generated.push(text);
        Ok((hyp, log_prob))
    }

    /// Beam search over one segment; returns the completed candidates.
    /// Candidates are ranked by cumulative log-probability, ties going to the
    /// earlier parent and then the lower token id.
    pub(crate) fn beam(&mut self, start: &Hypothesis<S>, k: usize) -> Result<Vec<Finished<S>>, DecodeError> {
        let segment = self.schema.target_order()[k];
        let width = self.config.width();
        let max_tokens = self.config.max_tokens;
        let source_rows = self.source_rows();
        let mut alive = vec![(start.clone(), 0.0f64)];
        let mut finished: Vec<Finished<S>> = Vec::new();
        for t in 0..=max_tokens {
            let mut candidates = Vec::new();
            for (parent, (hyp, lp)) in alive.iter().enumerate() {
                let logits = self.query_logits(hyp, segment, t, hyp.rows() - source_rows)?;
                for (token, l) in log_softmax(&logits).into_iter().enumerate() {
                    // The last step may only close the segment.
                    if t == max_tokens && token != EOS {
                        continue;
                    }
                    candidates.push(Candidate { log_prob: lp + l, parent, token });
                }
            }
            candidates.sort_by(|a, b| {
                b.log_prob
                    .partial_cmp(&a.log_prob)
                    .unwrap_or(Ordering::Equal)
                    .then(a.parent.cmp(&b.parent))
                    .then(a.token.cmp(&b.token))
            });
            candidates.truncate(width);
            let mut next = Vec::new();
            for c in candidates {
                let mut hyp = alive[c.parent].0.clone();
                let order = hyp.rows() - source_rows;
                self.push_content(&mut hyp, segment, c.token, order)?;
                if c.token == EOS {
                    finished.push(Finished { hyp, log_prob: c.log_prob, len: t + 1, completed_at: t });
                } else {
                    hyp.current.push(c.token);
                    next.push((hyp, c.log_prob));
                }
            }
            alive = next;
            if alive.is_empty() || finished.len() >= width {
                break;
            }
        }
        Ok(finished)
    }

    fn source_rows(&self) -> usize {
        self.tokens.iter().map(Vec::len).sum()
    }
}

/// The cached key and value rows of one layer (plus an optional new row) as tape constants.
fn cached<S: Real>(
    tape: &mut Tape<S>,
    d: usize,
    hyp: &Hypothesis<S>,
    layer: usize,
    extra: Option<(&[S], &[S])>,
) -> Result<(Var, Var), DecodeError> {
    let mut k = hyp.keys[layer].clone();
    let mut v = hyp.values[layer].clone();
    if let Some((ek, ev)) = extra {
        k.extend_from_slice(ek);
        v.extend_from_slice(ev);
    }
    let rows = k.len() / d;
    let kt = Tensor::matrix(rows, d, k).map_err(ModelError::from)?;
    let vt = Tensor::matrix(rows, d, v).map_err(ModelError::from)?;
    Ok((tape.constant(kt), tape.constant(vt)))
}

/// Length-normalized score `log_prob / len^alpha`.
pub(crate) fn normalized_score<S>(f: &Finished<S>, alpha: f64) -> f64 {
    f.log_prob / libm::pow(f.len as f64, alpha)
}

/// Highest normalized score; ties go to the earlier completion, then to the
/// lexicographically smaller token sequence.
fn select_best<S>(finished: Vec<Finished<S>>, alpha: f64) -> Finished<S> {
    finished
        .into_iter()
        .reduce(|best, f| {
            let (sb, sf) = (normalized_score(&best, alpha), normalized_score(&f, alpha));
            let better =
                sf > sb || (sf == sb && (f.completed_at, &f.hyp.current) < (best.completed_at, &best.hyp.current));
            if better {
                f
            } else {
                best
            }
        })
        .expect("the final step closes every live hypothesis")
}

fn log_softmax<S: Real>(logits: &[S]) -> Vec<f64> {
    let max = logits.iter().map(|x| x.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|x| libm::exp(x.to_f64() - max)).sum();
    let lse = max + libm::log(sum);
    logits.iter().map(|x| x.to_f64() - lse).collect()
}
