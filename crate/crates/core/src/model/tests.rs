use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::schema::{Preset, RelationId, Segment, Tuple};

fn micro_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        layers: 2,
        ffn_mult: 4,
        clip: 4,
        dropout: 0.0,
        max_seq_len: 64,
        init_std: 0.02,
        layer_norm_eps: 1e-5,
        collapse_relations: false,
    }
}

fn generic_preset() -> Preset {
    Preset::generic(&["p0".to_string(), "p1".to_string()]).unwrap()
}

fn dims_for(preset: &Preset, vocab: usize) -> ModelDims {
    ModelDims { vocab, segment_types: preset.segment_types().len(), relations: preset.relation_set().len() }
}

/// Random schema with interleaved sources and targets, random tuples between
/// sources, a shuffled target order and explicit token ids per segment.
fn random_example(rng: &mut ChaCha8Rng, vocab: usize) -> (DataSchema, Vec<Vec<usize>>) {
    let preset = generic_preset();
    let node = preset.segment_type("node").unwrap();
    let n_src = rng.random_range(1..=4);
    let n_tgt = rng.random_range(1..=2);
    let mut roles: Vec<Role> = vec![Role::Source; n_src];
    roles.extend(vec![Role::Target; n_tgt]);
    roles.shuffle(rng);
    let segments: Vec<Segment> = roles
        .iter()
        .map(|&r| match r {
            Role::Source => Segment::new("x", node, r),
            Role::Target => Segment::new("", preset.target_type(), r),
        })
        .collect();
    let sources: Vec<usize> = (0..segments.len()).filter(|&i| roles[i] == Role::Source).collect();
    let mut tuples = Vec::new();
    for &h in &sources {
        for &t in &sources {
            if h != t && rng.random_bool(0.4) {
                tuples.push(Tuple { head: h, predicate: RelationId(rng.random_range(0..2)), tail: t });
            }
        }
    }
    let mut order: Vec<usize> = (0..segments.len()).filter(|&i| roles[i] == Role::Target).collect();
    order.shuffle(rng);
    let tokens = roles
        .iter()
        .map(|r| {
            let len = match r {
                Role::Source => rng.random_range(1..=4),
                Role::Target => rng.random_range(1..=3),
            };
            (0..len).map(|_| rng.random_range(4..vocab)).collect()
        })
        .collect();
    let schema = DataSchema::new(segments, preset, tuples, vec![]).unwrap().with_target_order(order).unwrap();
    (schema, tokens)
}

fn randomize(model: &mut Model<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let names: Vec<String> = model.params().names().to_vec();
    for (name, t) in names.iter().zip(model.params_mut().tensors_mut()) {
        let offset = if name.ends_with("gamma") { 1.0 } else { 0.0 };
        for x in t.data_mut() {
            *x = offset + rng.random_range(-scale..scale);
        }
    }
}

struct Run {
    logits: Option<Tensor<f64>>,
    content_hidden: Vec<Tensor<f64>>,
    query_hidden: Vec<Tensor<f64>>,
}

fn run(model: &Model<f64>, ex: &PreparedExample) -> Run {
    let mut tape = Tape::new();
    let b = model.bind_frozen(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, &b, ex, false, &mut rng).unwrap();
    Run {
        logits: out.logits.map(|l| tape.value(l).clone()),
        content_hidden: out.content_hidden.iter().map(|&v| tape.value(v).clone()).collect(),
        query_hidden: out.query_hidden.iter().map(|&v| tape.value(v).clone()).collect(),
    }
}

#[test]
fn parameter_layout_and_init() {
    let preset = generic_preset();
    let model = Model::<f64>::new(ModelConfig::default(), dims_for(&preset, 50), 1).unwrap();
    let p = model.params();
    assert_eq!(p.get("tok_emb").unwrap().shape(), &[50, 128]);
    assert_eq!(p.get("seg_emb").unwrap().shape(), &[2, 128]);
    assert_eq!(p.get("layers.3.attn.position").unwrap().shape(), &[257, 128]);
    assert_eq!(p.get("layers.0.attn.relation").unwrap().shape(), &[6, 128]);
    assert!(p.get("layers.0.attn.bias_content").unwrap().data().iter().all(|&x| x == 0.0));
    assert!(p.get("ln_f.gamma").unwrap().data().iter().all(|&x| x == 1.0));
    let emb = p.get("tok_emb").unwrap().data();
    let mean = emb.iter().sum::<f64>() / emb.len() as f64;
    let std = (emb.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / emb.len() as f64).sqrt();
    assert!(mean.abs() < 2e-3 && (std - 0.02).abs() < 2e-3, "mean {mean} std {std}");
    let again = Model::<f64>::new(ModelConfig::default(), dims_for(&preset, 50), 1).unwrap();
    assert_eq!(model, again);
}

#[test]
fn config_validation() {
    let mut c = micro_config();
    c.heads = 3;
    assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    let mut c = micro_config();
    c.dropout = 1.0;
    assert!(c.validate().is_err());
}

#[test]
fn from_params_rejects_wrong_shapes_and_names() {
    let preset = generic_preset();
    let dims = dims_for(&preset, 20);
    let model = Model::<f64>::new(micro_config(), dims, 3).unwrap();
    let named: Vec<(String, Tensor<f64>)> = model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    assert_eq!(Model::from_params(micro_config(), dims, named.clone()).unwrap(), model);

    let mut missing = named.clone();
    missing.pop();
    assert!(matches!(Model::from_params(micro_config(), dims, missing), Err(ModelError::Parameter { .. })));

    let mut wrong = named.clone();
    wrong[0].1 = Tensor::zeros(&[3, 3]);
    assert!(matches!(Model::from_params(micro_config(), dims, wrong), Err(ModelError::Parameter { .. })));

    let mut extra = named;
    extra.push((String::from("bogus"), Tensor::zeros(&[1])));
    assert!(matches!(Model::from_params(micro_config(), dims, extra), Err(ModelError::Parameter { .. })));
}

#[test]
fn embeddings_zero_one_hot_and_random() {
    let preset = generic_preset();
    let mut model = Model::<f64>::new(micro_config(), dims_for(&preset, 20), 0).unwrap();
    let ids = [3, 7, 19];
    let types = [0, 1, 0];

    for t in model.params_mut().tensors_mut().iter_mut().take(2) {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut tape = Tape::new();
    let b = model.bind_frozen(&mut tape);
    let e = model.embed_inputs(&mut tape, &b, &ids, &types).unwrap();
    assert!(tape.value(e).data().iter().all(|&x| x == 0.0));

    *model.params_mut().get_mut("tok_emb").unwrap() =
        Tensor::from_fn(&[20, 16], |i| if i / 16 == i % 16 { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let b = model.bind_frozen(&mut tape);
    let e = model.embed_inputs(&mut tape, &b, &ids, &types).unwrap();
    for (r, &id) in ids.iter().enumerate() {
        assert_eq!(tape.value(e).row(r), model.params().get("tok_emb").unwrap().row(id));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    randomize(&mut model, &mut rng, 1.0);
    let mut tape = Tape::new();
    let b = model.bind_frozen(&mut tape);
    let e = model.embed_inputs(&mut tape, &b, &ids, &types).unwrap();
    let tok = model.params().get("tok_emb").unwrap();
    let seg = model.params().get("seg_emb").unwrap();
    for r in 0..3 {
        for c in 0..16 {
            assert_eq!(tape.value(e).at2(r, c), tok.at2(ids[r], c) + seg.at2(types[r], c));
        }
    }
    assert!(model.embed_inputs(&mut tape, &b, &[20], &[0]).is_err());
    assert!(model.embed_inputs(&mut tape, &b, &[1], &[2]).is_err());
    assert!(model.embed_inputs(&mut tape, &b, &[1, 2], &[0]).is_err());
}

#[test]
fn forward_shape_and_no_source_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = Model::<f64>::new(micro_config(), dims_for(&generic_preset(), 20), 7).unwrap();
    for _ in 0..10 {
        let (schema, tokens) = random_example(&mut rng, 20);
        let ex = model.prepare_tokens(&schema, &tokens).unwrap();
        let out = run(&model, &ex);
        let logits = out.logits.unwrap();
        assert_eq!(logits.shape(), &[ex.target_ids.len(), 20]);
        assert!(logits.all_finite());
        assert_eq!(out.content_hidden.len(), 3);
        assert_eq!(out.query_hidden.len(), 3);
    }
}

#[test]
fn overlength_example_is_a_sizing_error() {
    let mut config = micro_config();
    config.max_seq_len = 5;
    let preset = generic_preset();
    let model = Model::<f64>::new(config, dims_for(&preset, 20), 0).unwrap();
    let node = preset.segment_type("node").unwrap();
    let schema = DataSchema::new(
        vec![Segment::new("x", node, Role::Source), Segment::new("", preset.target_type(), Role::Target)],
        preset,
        vec![],
        vec![],
    )
    .unwrap();
    let err = model.prepare_tokens(&schema, &[vec![5, 6, 7], vec![8, 9, 2]]).unwrap_err();
    assert_eq!(err, ModelError::Sizing { len: 6, budget: 5 });
    assert!(err.to_string().contains("max_seq_len"));
    assert!(model.prepare_tokens(&schema, &[vec![5, 6], vec![8, 9, 2]]).is_ok());
    assert!(matches!(model.prepare_tokens(&schema, &[vec![25], vec![2]]), Err(ModelError::OutOfRange { .. })));
}

#[test]
fn source_only_example_has_no_logits() {
    let preset = generic_preset();
    let node = preset.segment_type("node").unwrap();
    let model = Model::<f64>::new(micro_config(), dims_for(&preset, 20), 0).unwrap();
    let schema = DataSchema::new(vec![Segment::new("x", node, Role::Source)], preset, vec![], vec![]).unwrap();
    let ex = model.prepare_tokens(&schema, &[vec![5, 6]]).unwrap();
    let out = run(&model, &ex);
    assert!(out.logits.is_none());
    assert!(out.query_hidden.is_empty());
}

#[test]
fn source_permutation_leaves_target_logits_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = Model::<f64>::new(micro_config(), dims_for(&generic_preset(), 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.5);
    for _ in 0..20 {
        let (schema, tokens) = random_example(&mut rng, 20);
        let mut order: Vec<usize> = (0..schema.segments().len()).collect();
        order.shuffle(&mut rng);
        let permuted = schema.permute_segments(&order).unwrap();
        let permuted_tokens: Vec<Vec<usize>> = order.iter().map(|&o| tokens[o].clone()).collect();
        let a = run(&model, &model.prepare_tokens(&schema, &tokens).unwrap()).logits.unwrap();
        let b = run(&model, &model.prepare_tokens(&permuted, &permuted_tokens).unwrap()).logits.unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn query_logits_ignore_current_and_later_target_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut model = Model::<f64>::new(micro_config(), dims_for(&generic_preset(), 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.5);
    for _ in 0..20 {
        let (schema, tokens) = random_example(&mut rng, 20);
        let ex = model.prepare_tokens(&schema, &tokens).unwrap();
        let base = run(&model, &ex);
        let n_targets = ex.target_ids.len();
        let k = rng.random_range(0..n_targets);
        let mut altered = ex.clone();
        let c = ex.layout.query_to_content()[k];
        altered.content_ids[c] = 4 + (ex.content_ids[c] - 4 + 1) % 16;
        let out = run(&model, &altered);
        let (a, b) = (base.logits.unwrap(), out.logits.unwrap());
        for row in 0..=k {
            assert_eq!(a.row(row), b.row(row), "order {row} changed after altering order {k}");
        }
        if k + 1 < n_targets {
            assert_ne!(a.rows(k + 1..n_targets), b.rows(k + 1..n_targets));
        }
    }
}

trait Rows {
    fn rows(&self, r: core::ops::Range<usize>) -> Vec<f64>;
}

impl Rows for Tensor<f64> {
    fn rows(&self, r: core::ops::Range<usize>) -> Vec<f64> {
        let cols = self.shape()[1];
        self.data()[r.start * cols..r.end * cols].to_vec()
    }
}

#[test]
fn source_states_ignore_target_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut model = Model::<f64>::new(micro_config(), dims_for(&generic_preset(), 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.5);
    for _ in 0..20 {
        let (schema, tokens) = random_example(&mut rng, 20);
        let ex = model.prepare_tokens(&schema, &tokens).unwrap();
        let base = run(&model, &ex);
        let mut altered = ex.clone();
        for &c in ex.layout.query_to_content() {
            altered.content_ids[c] = rng.random_range(4..20);
        }
        let out = run(&model, &altered);
        let n_src = ex.layout.source_len();
        for (a, b) in base.content_hidden.iter().zip(&out.content_hidden) {
            assert_eq!(a.rows(0..n_src), b.rows(0..n_src));
        }
    }
}

#[test]
fn uniform_relation_rows_shift_scores_without_changing_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut model = Model::<f64>::new(micro_config(), dims_for(&generic_preset(), 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.5);
    let mut zeroed = model.clone();
    let mut uniform = model.clone();
    for l in 0..2 {
        let name = format!("layers.{l}.attn.relation");
        let shape = model.params().get(&name).unwrap().shape().to_vec();
        *zeroed.params_mut().get_mut(&name).unwrap() = Tensor::zeros(&shape);
        let row: Vec<f64> = (0..shape[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
        *uniform.params_mut().get_mut(&name).unwrap() = Tensor::from_fn(&shape, |i| row[i % shape[1]]);
    }
    for _ in 0..10 {
        let (schema, tokens) = random_example(&mut rng, 20);
        let ex = model.prepare_tokens(&schema, &tokens).unwrap();
        let a = run(&zeroed, &ex).logits.unwrap();
        let b = run(&uniform, &ex).logits.unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10);
        }
        let c = run(&model, &ex).logits.unwrap();
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| (x - y).abs() > 1e-8));
    }
}

#[test]
fn collapsed_relations_use_row_zero_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut config = micro_config();
    config.collapse_relations = true;
    let mut model = Model::<f64>::new(config, dims_for(&generic_preset(), 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.5);
    let (schema, tokens) = random_example(&mut rng, 20);
    let ex = model.prepare_tokens(&schema, &tokens).unwrap();
    assert!(ex.index.content.relation.iter().all(|&r| r == 0));
    let base = run(&model, &ex).logits.unwrap();
    let mut changed = model.clone();
    let rel = changed.params_mut().get_mut("layers.0.attn.relation").unwrap();
    for x in rel.data_mut()[16..].iter_mut() {
        *x += 1.0;
    }
    assert_eq!(run(&changed, &ex).logits.unwrap(), base);
}

#[test]
fn loss_uniform_one_hot_and_scalar_oracle() {
    let preset = generic_preset();
    let mut model = Model::<f64>::new(micro_config(), dims_for(&preset, 20), 0).unwrap();
    let mut tape = Tape::new();
    let uniform = tape.constant(Tensor::zeros(&[3, 20]));
    let l = model.loss(&mut tape, uniform, &[1, 5, 7]).unwrap();
    assert!((tape.value(l).item() - 20f64.ln()).abs() < 1e-12);

    let peaked = tape.constant(Tensor::from_fn(&[2, 20], |i| if i % 20 == 3 { 60.0 } else { 0.0 }));
    let l = model.loss(&mut tape, peaked, &[3, 3]).unwrap();
    assert!(tape.value(l).item() < 1e-20);

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let logits = Tensor::from_fn(&[4, 20], |_| rng.random_range(-3.0..3.0));
    let targets = [0, 19, 4, 4];
    let v = tape.constant(logits.clone());
    let l = model.loss(&mut tape, v, &targets).unwrap();
    let mut expected = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        expected += lse - row[t];
    }
    assert!((tape.value(l).item() - expected / 4.0).abs() < 1e-12);
    assert!(matches!(model.loss(&mut tape, v, &[1]), Err(ModelError::LengthMismatch(1, 4))));

    // Zeroed output embedding gives uniform logits through the full model.
    model.params_mut().get_mut("tok_emb").unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let (schema, tokens) = random_example(&mut rng, 20);
    let ex = model.prepare_tokens(&schema, &tokens).unwrap();
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let out = model.forward(&mut tape, &b, &ex, false, &mut rng).unwrap();
    let l = model.loss(&mut tape, out.logits.unwrap(), &ex.target_ids).unwrap();
    assert!((tape.value(l).item() - 20f64.ln()).abs() < 1e-12);
}

#[test]
fn dropout_only_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut config = micro_config();
    config.dropout = 0.3;
    let model = Model::<f64>::new(config, dims_for(&generic_preset(), 20), 0).unwrap();
    let (schema, tokens) = random_example(&mut rng, 20);
    let ex = model.prepare_tokens(&schema, &tokens).unwrap();
    let logits = |train: bool, seed: u64| {
        let mut tape = Tape::new();
        let b = model.bind_frozen(&mut tape);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = model.forward(&mut tape, &b, &ex, train, &mut r).unwrap();
        tape.value(out.logits.unwrap()).clone()
    };
    assert_eq!(logits(false, 1), logits(false, 2));
    assert_eq!(logits(true, 1), logits(true, 1));
    assert_ne!(logits(true, 1), logits(true, 2));
}

/// Loss and analytic gradients of one full forward pass with `dropout` active
/// under a fixed mask seed.
fn loss_and_grads(model: &Model<f64>, ex: &PreparedExample, train: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let out = model.forward(&mut tape, &b, ex, train, &mut rng).unwrap();
    let loss = model.loss(&mut tape, out.logits.unwrap(), &ex.target_ids).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    (value, b.vars().iter().map(|&v| grads.get(v).unwrap().to_vec()).collect())
}

#[test]
fn micro_config_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut config = micro_config();
    config.dropout = 0.2;
    let preset = generic_preset();
    let mut model = Model::<f64>::new(config, dims_for(&preset, 20), 0).unwrap();
    randomize(&mut model, &mut rng, 0.4);
    let node = preset.segment_type("node").unwrap();
    let schema = DataSchema::new(
        vec![Segment::new("x", node, Role::Source), Segment::new("", preset.target_type(), Role::Target)],
        preset,
        vec![],
        vec![],
    )
    .unwrap();
    let ex = model.prepare_tokens(&schema, &[vec![5, 9, 11], vec![7, 13, 2]]).unwrap();
    let (_, analytic) = loss_and_grads(&model, &ex, true);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for p in 0..model.params().len() {
        for e in 0..model.params().tensors()[p].numel() {
            let mut plus = model.clone();
            plus.params_mut().tensors_mut()[p].data_mut()[e] += h;
            let mut minus = model.clone();
            minus.params_mut().tensors_mut()[p].data_mut()[e] -= h;
            let numeric = (loss_and_grads(&plus, &ex, true).0 - loss_and_grads(&minus, &ex, true).0) / (2.0 * h);
            let a = analytic[p][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{} [{e}]: analytic {a} numeric {numeric}", model.params().names()[p]);
        }
    }
    assert!(worst < 1e-4);
}
