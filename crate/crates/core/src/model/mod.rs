//! The two-stream transformer.
//!
//! Each input token is the sum of a token embedding and a segment-type embedding.
//! Source and target tokens form the content stream. Every target token also has
//! a query-stream twin whose input is the `<query>` token; it attends to the
//! content stream but never to its own content token, and its final state
//! predicts the token. Layers use pre-normalization with a final norm, and the
//! output projection is tied to the token embedding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{head_scores, IndexOptions, PairIndex, StreamIndex, TableVars, TokenLayout};
use crate::schema::{DataSchema, Role};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::tokenizer::{Vocab, EOS, QUERY};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("example has {len} tokens, over the max_seq_len budget of {budget}")]
    Sizing { len: usize, budget: usize },
    #[error("{what} id {id} out of range {bound}")]
    OutOfRange { what: &'static str, id: usize, bound: usize },
    #[error("{0} targets but {1} logit rows")]
    LengthMismatch(usize, usize),
    #[error("parameter `{name}`: {problem}")]
    Parameter { name: String, problem: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    /// Relative positions are clipped to `[-clip, clip]`.
    pub clip: usize,
    pub dropout: f64,
    /// Budget on content tokens (sources plus targets with EOS) per example.
    pub max_seq_len: usize,
    pub init_std: f64,
    pub layer_norm_eps: f64,
    /// Ablation: every pair uses one relation embedding row.
    pub collapse_relations: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            heads: 4,
            layers: 4,
            ffn_mult: 4,
            clip: 128,
            dropout: 0.1,
            max_seq_len: 512,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
            collapse_relations: false,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.ffn_mult == 0 || self.max_seq_len == 0 {
            return Err(ModelError::Config(String::from("layers, ffn_mult and max_seq_len must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Table sizes fixed by the data: vocabulary, segment types, relation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab: usize,
    pub segment_types: usize,
    pub relations: usize,
}

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerIdx {
    ln1_gamma: usize,
    ln1_beta: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    relation: usize,
    position: usize,
    bias_content: usize,
    bias_segment: usize,
    bias_position: usize,
    ln2_gamma: usize,
    ln2_beta: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter names, shapes and initializers in storage order.
fn param_layout(config: &ModelConfig, dims: &ModelDims) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let f = d * config.ffn_mult;
    let mut out = vec![
        (String::from("tok_emb"), vec![dims.vocab, d], Init::Normal),
        (String::from("seg_emb"), vec![dims.segment_types, d], Init::Normal),
    ];
    for l in 0..config.layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("ln1.gamma"), vec![1, d], Init::Ones),
            (p("ln1.beta"), vec![1, d], Init::Zeros),
            (p("attn.wq"), vec![d, d], Init::Normal),
            (p("attn.wk"), vec![d, d], Init::Normal),
            (p("attn.wv"), vec![d, d], Init::Normal),
            (p("attn.wo"), vec![d, d], Init::Normal),
            (p("attn.relation"), vec![dims.relations, d], Init::Normal),
            (p("attn.position"), vec![2 * config.clip + 1, d], Init::Normal),
            (p("attn.bias_content"), vec![1, d], Init::Zeros),
            (p("attn.bias_segment"), vec![1, d], Init::Zeros),
            (p("attn.bias_position"), vec![1, d], Init::Zeros),
            (p("ln2.gamma"), vec![1, d], Init::Ones),
            (p("ln2.beta"), vec![1, d], Init::Zeros),
            (p("ffn.w1"), vec![d, f], Init::Normal),
            (p("ffn.b1"), vec![1, f], Init::Zeros),
            (p("ffn.w2"), vec![f, d], Init::Normal),
            (p("ffn.b2"), vec![1, d], Init::Zeros),
        ]);
    }
    out.push((String::from("ln_f.gamma"), vec![1, d], Init::Ones));
    out.push((String::from("ln_f.beta"), vec![1, d], Init::Zeros));
    out
}

/// A model's parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// An example turned into token ids, layout and attention index tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub layout: TokenLayout,
    pub index: StreamIndex,
    pub content_ids: Vec<usize>,
    pub content_types: Vec<usize>,
    pub query_types: Vec<usize>,
    /// Gold token per query position.
    pub target_ids: Vec<usize>,
}

/// Tape handles produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `target tokens × vocab`; `None` when the example has no target token.
    pub logits: Option<Var>,
    /// Content-stream states: the embeddings, then the output of every layer.
    pub content_hidden: Vec<Var>,
    /// Query-stream states, same indexing (empty without targets).
    pub query_hidden: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    dims: ModelDims,
    params: ParamStore<S>,
    layers: Vec<LayerIdx>,
}

impl<S: Real> Model<S> {
    /// Random initialization: normal(0, init_std) matrices and tables, zero
    /// biases, unit norm gains.
    pub fn new(config: ModelConfig, dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|_| ModelError::Config(format!("init_std {} invalid", config.init_std)))?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in param_layout(&config, &dims) {
            let t = match init {
                Init::Normal => Tensor::from_fn(&shape, |_| S::from_f64(normal.sample(&mut rng))),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, S::ONE),
            };
            names.push(name);
            tensors.push(t);
        }
        Self::from_params(config, dims, names.into_iter().zip(tensors).collect())
    }

    /// Assembles a model from named arrays, which must match the expected names
    /// and shapes exactly (in any order).
    pub fn from_params(
        config: ModelConfig,
        dims: ModelDims,
        mut named: Vec<(String, Tensor<S>)>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = param_layout(&config, &dims);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape, _) in layout {
            let pos = named
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| ModelError::Parameter { name: name.clone(), problem: String::from("missing") })?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Parameter {
                    name,
                    problem: format!("shape {:?}, expected {:?}", t.shape(), shape),
                });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(ModelError::Parameter { name: extra.clone(), problem: String::from("unexpected") });
        }
        let find = |n: &str| names.iter().position(|x| x == n).expect("layout name");
        let layers = (0..config.layers)
            .map(|l| {
                let p = |s: &str| find(&format!("layers.{l}.{s}"));
                LayerIdx {
                    ln1_gamma: p("ln1.gamma"),
                    ln1_beta: p("ln1.beta"),
                    wq: p("attn.wq"),
                    wk: p("attn.wk"),
                    wv: p("attn.wv"),
                    wo: p("attn.wo"),
                    relation: p("attn.relation"),
                    position: p("attn.position"),
                    bias_content: p("attn.bias_content"),
                    bias_segment: p("attn.bias_segment"),
                    bias_position: p("attn.bias_position"),
                    ln2_gamma: p("ln2.gamma"),
                    ln2_beta: p("ln2.beta"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                }
            })
            .collect();
        Ok(Model { config, dims, params: ParamStore { names, tensors }, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn index_options(&self) -> IndexOptions {
        IndexOptions { clip: self.config.clip, collapse_relations: self.config.collapse_relations }
    }

    /// Registers every parameter as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.params.tensors.iter().map(|t| tape.param(t.clone())).collect() }
    }

    /// Registers every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.params.tensors.iter().map(|t| tape.constant(t.clone())).collect() }
    }

    /// Encodes sources as-is and targets with a trailing EOS, then builds the example.
    pub fn prepare(&self, schema: &DataSchema, vocab: &Vocab) -> Result<PreparedExample, ModelError> {
        let tokens: Vec<Vec<usize>> = schema
            .segments()
            .iter()
            .map(|s| {
                let mut ids = vocab.encode(&s.text);
                if s.role == Role::Target {
                    ids.push(EOS);
                }
                ids
            })
            .collect();
        self.prepare_tokens(schema, &tokens)
    }

    /// Builds an example from explicit token ids per segment.
    pub fn prepare_tokens(&self, schema: &DataSchema, tokens: &[Vec<usize>]) -> Result<PreparedExample, ModelError> {
        if tokens.len() != schema.segments().len() {
            return Err(ModelError::LengthMismatch(schema.segments().len(), tokens.len()));
        }
        let total: usize = tokens.iter().map(Vec::len).sum();
        if total > self.config.max_seq_len {
            return Err(ModelError::Sizing { len: total, budget: self.config.max_seq_len });
        }
        if schema.relation_set().len() > self.dims.relations {
            return Err(ModelError::OutOfRange {
                what: "relation category",
                id: schema.relation_set().len() - 1,
                bound: self.dims.relations,
            });
        }
        for s in schema.segments() {
            if s.seg_type.0 >= self.dims.segment_types {
                return Err(ModelError::OutOfRange {
                    what: "segment type",
                    id: s.seg_type.0,
                    bound: self.dims.segment_types,
                });
            }
        }
        for &id in tokens.iter().flatten() {
            if id >= self.dims.vocab {
                return Err(ModelError::OutOfRange { what: "token", id, bound: self.dims.vocab });
            }
        }
        let lens: Vec<usize> = tokens.iter().map(Vec::len).collect();
        let layout = TokenLayout::new(schema, &lens);
        let index = StreamIndex::new(&layout, schema, self.index_options());
        let content_ids: Vec<usize> = layout.content().iter().map(|s| tokens[s.segment][s.pos]).collect();
        let content_types = layout.content().iter().map(|s| s.seg_type.0).collect();
        let query_types = layout.query().iter().map(|s| s.seg_type.0).collect();
        let target_ids = layout.query_to_content().iter().map(|&c| content_ids[c]).collect();
        Ok(PreparedExample { layout, index, content_ids, content_types, query_types, target_ids })
    }

    fn var(&self, b: &Bound, i: usize) -> Var {
        b.vars[i]
    }

    /// `token_emb[id] + segment_emb[type]` per position.
    pub fn embed_inputs(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        ids: &[usize],
        types: &[usize],
    ) -> Result<Var, ModelError> {
        if ids.len() != types.len() {
            return Err(ModelError::LengthMismatch(ids.len(), types.len()));
        }
        let tok = tape.embedding(self.var(b, 0), ids)?;
        let seg = tape.embedding(self.var(b, 1), types)?;
        Ok(tape.add(tok, seg)?)
    }

    fn norm(&self, tape: &mut Tape<S>, x: Var, gamma: Var, beta: Var) -> Result<Var, ModelError> {
        let y = tape.layer_norm(x, S::from_f64(self.config.layer_norm_eps))?;
        let y = tape.mul(y, gamma)?;
        Ok(tape.add(y, beta)?)
    }

    pub(crate) fn norm1(&self, tape: &mut Tape<S>, b: &Bound, layer: usize, x: Var) -> Result<Var, ModelError> {
        let l = self.layers[layer];
        self.norm(tape, x, b.vars[l.ln1_gamma], b.vars[l.ln1_beta])
    }

    /// Key and value projections of normalized content rows.
    pub(crate) fn keys_values(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        layer: usize,
        normed: Var,
    ) -> Result<(Var, Var), ModelError> {
        let l = self.layers[layer];
        let k = tape.matmul(normed, b.vars[l.wk])?;
        let v = tape.matmul(normed, b.vars[l.wv])?;
        Ok((k, v))
    }

    /// Multi-head attention of normalized query rows over key/value rows.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn attend(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        layer: usize,
        normed_q: Var,
        k: Var,
        v: Var,
        index: &PairIndex,
    ) -> Result<Var, ModelError> {
        let l = self.layers[layer];
        let tables = TableVars {
            relation: b.vars[l.relation],
            position: b.vars[l.position],
            bias_content: b.vars[l.bias_content],
            bias_segment: b.vars[l.bias_segment],
            bias_position: b.vars[l.bias_position],
        };
        let q = tape.matmul(normed_q, b.vars[l.wq])?;
        let positions = tape.select_rows(tables.position, &index.position_rows)?;
        let hd = self.config.head_dim();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let scores = head_scores(tape, qh, kh, &tables, positions, h, hd, index)?;
            let probs = tape.softmax_masked(scores.total, &index.visible)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let joined = tape.concat_cols(&heads)?;
        Ok(tape.matmul(joined, b.vars[l.wo])?)
    }

    /// `x + FFN(LN2(x))` with dropout on the branch.
    pub(crate) fn ffn_block<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        layer: usize,
        x: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let l = self.layers[layer];
        let n = self.norm(tape, x, b.vars[l.ln2_gamma], b.vars[l.ln2_beta])?;
        let h = tape.matmul(n, b.vars[l.w1])?;
        let h = tape.add(h, b.vars[l.b1])?;
        let h = tape.gelu(h);
        let h = tape.matmul(h, b.vars[l.w2])?;
        let h = tape.add(h, b.vars[l.b2])?;
        let h = tape.dropout(h, self.config.dropout, train, rng);
        Ok(tape.add(x, h)?)
    }

    /// Final norm and tied output projection.
    pub(crate) fn project(&self, tape: &mut Tape<S>, b: &Bound, g: Var) -> Result<Var, ModelError> {
        let n = b.vars.len();
        let x = self.norm(tape, g, b.vars[n - 2], b.vars[n - 1])?;
        Ok(tape.matmul_nt(x, b.vars[0])?)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        ex: &PreparedExample,
        train: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput, ModelError> {
        let rate = self.config.dropout;
        let h0 = self.embed_inputs(tape, b, &ex.content_ids, &ex.content_types)?;
        let mut h = tape.dropout(h0, rate, train, rng);
        let has_query = !ex.query_types.is_empty();
        let mut g = if has_query {
            let ids = vec![QUERY; ex.query_types.len()];
            let g0 = self.embed_inputs(tape, b, &ids, &ex.query_types)?;
            Some(tape.dropout(g0, rate, train, rng))
        } else {
            None
        };
        let mut content_hidden = vec![h];
        let mut query_hidden: Vec<Var> = g.into_iter().collect();
        for layer in 0..self.config.layers {
            let hn = self.norm1(tape, b, layer, h)?;
            let (k, v) = self.keys_values(tape, b, layer, hn)?;
            let att = self.attend(tape, b, layer, hn, k, v, &ex.index.content)?;
            let att = tape.dropout(att, rate, train, rng);
            let h_mid = tape.add(h, att)?;
            if let Some(gv) = g {
                let gn = self.norm1(tape, b, layer, gv)?;
                let att = self.attend(tape, b, layer, gn, k, v, &ex.index.query)?;
                let att = tape.dropout(att, rate, train, rng);
                let g_mid = tape.add(gv, att)?;
                g = Some(self.ffn_block(tape, b, layer, g_mid, train, rng)?);
            }
            h = self.ffn_block(tape, b, layer, h_mid, train, rng)?;
            content_hidden.push(h);
            query_hidden.extend(g);
        }
        let logits = match g {
            Some(gv) => Some(self.project(tape, b, gv)?),
            None => None,
        };
        Ok(ForwardOutput { logits, content_hidden, query_hidden })
    }

    /// Mean cross-entropy per target token.
    pub fn loss(&self, tape: &mut Tape<S>, logits: Var, targets: &[usize]) -> Result<Var, ModelError> {
        let (rows, _) = tape.value(logits).dims2("loss")?;
        if rows != targets.len() {
            return Err(ModelError::LengthMismatch(targets.len(), rows));
        }
        Ok(tape.cross_entropy(logits, targets)?)
    }

    /// Converts parameters to another precision.
    pub fn cast<T: Real>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            dims: self.dims,
            params: ParamStore {
                names: self.params.names.clone(),
                tensors: self.params.tensors.iter().map(Tensor::cast).collect(),
            },
            layers: self.layers.clone(),
        }
    }
}

#[cfg(test)]
mod tests;
