//! The command implementations behind the CLI. Each takes a plain argument
//! struct so it can be driven from tests without going through the parser.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use segrel_core::decode::{generate, DecodeConfig};
use segrel_core::eval::{bleu4, exact_match, rouge, tokenize_all, MetricReport, RougeVariant, Tokens};
use segrel_core::model::{Model, ModelDims, PreparedExample};
use segrel_core::schema::{flatten_schema, DataSchema, FlattenWarning, Preset, Separators};
use segrel_core::tokenizer::Vocab;
use segrel_core::train::{
    evaluate_loss, make_synthetic_direction_dataset, subsample_few_shot, SubsampleSpec, Trainer, Variant,
};
use segrel_core::Real;

use crate::artifacts::{read_generations, GenerationLine, Report, TrainLogLine, VariantFlags};
use crate::checkpoint::{self, AnyCheckpoint, Checkpoint, Meta};
use crate::config::{Precision, RunConfig};
use crate::error::{io_error, CliError};
use crate::readers::{collect_predicates, read_raw, to_schema, InputFormat};
use crate::record::{common_preset, read_dataset, strip_targets, write_jsonl, Example, Record};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn flatten_warning(line: usize, w: FlattenWarning) {
    match w {
        FlattenWarning::EmptySource => warn(&format!("line {line}: nothing to linearize, source is empty")),
        FlattenWarning::DroppedSegments(n) => {
            warn(&format!("line {line}: {n} source segments in no tuple or pair were left out"))
        }
    }
}

/// The schema the model sees for an example under `variant`.
fn model_input(ex: &Example, variant: Variant) -> Result<DataSchema, CliError> {
    match variant {
        Variant::Structured => Ok(ex.schema.clone()),
        Variant::Flattened => {
            let flat = flatten_schema(&ex.schema, &Separators::default()).map_err(|e| CliError::from(e).at(&ex.id))?;
            if let Some(w) = flat.warning {
                flatten_warning(ex.line, w);
            }
            Ok(flat.schema)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Defaults to `webnlg` for tuple input and `key-value` for key-value input.
    pub preset: Option<String>,
    pub flatten: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransformSummary {
    pub records: usize,
    pub format: String,
    pub preset: String,
    pub segments: usize,
    pub tuples: usize,
}

pub fn transform(args: &TransformArgs) -> Result<TransformSummary, CliError> {
    let raw = read_raw(&args.input)?;
    let format = raw.first().map_or(InputFormat::Tuple, |r| r.format);
    let preset_name = args.preset.clone().unwrap_or_else(|| match format {
        InputFormat::Tuple => "webnlg".to_string(),
        InputFormat::KeyValue => "key-value".to_string(),
    });
    let preset = match preset_name.as_str() {
        "generic" => Preset::generic(&collect_predicates(&raw))?,
        name => segrel_core::schema::relation_preset(name, &[]).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let mut records = Vec::with_capacity(raw.len());
    let (mut segments, mut tuples) = (0, 0);
    for ex in &raw {
        let mut schema = to_schema(ex, &preset)?;
        if args.flatten {
            let flat = flatten_schema(&schema, &Separators::default())?;
            if let Some(w) = flat.warning {
                flatten_warning(ex.line, w);
            }
            schema = flat.schema;
        }
        segments += schema.segments().len();
        tuples += schema.tuples().len();
        records.push(Record::from_schema(&schema, Some(ex.id.clone()), ex.references.clone()));
    }
    write_jsonl(&args.output, &records)?;
    Ok(TransformSummary {
        records: records.len(),
        format: format.name().to_string(),
        preset: if args.flatten { "flat".to_string() } else { preset.name().to_string() },
        segments,
        tuples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleArgs {
    pub input: PathBuf,
    /// A count (`500`) or a percentage (`1%`).
    pub spec: String,
    pub seed: u64,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub spec: String,
    pub seed: u64,
    pub total: usize,
    pub count: usize,
    pub percent: f64,
    /// `(number of samples / percent of training data)`, e.g. `(5k / 1%)`.
    pub label: String,
    /// Selected 0-based line indices among the non-blank lines, ascending.
    pub indices: Vec<usize>,
}

/// Selects lines of any JSONL file; the selected lines are copied verbatim in
/// their original order.
pub fn subsample(args: &SubsampleArgs) -> Result<SubsampleReport, CliError> {
    let file = fs::File::open(&args.input).map_err(io_error(&args.input))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_error(&args.input))?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let spec = SubsampleSpec::parse(&args.spec).map_err(|e| CliError::Config(e.to_string()))?;
    let subset = subsample_few_shot(lines.len(), spec, args.seed)?;
    let mut text = String::new();
    for &i in &subset.indices {
        text.push_str(&lines[i]);
        text.push('\n');
    }
    checkpoint::write_atomic(&args.output, text.as_bytes())?;
    let report = SubsampleReport {
        spec: args.spec.clone(),
        seed: args.seed,
        total: subset.total,
        count: subset.count(),
        percent: subset.percent(),
        label: format!("({})", subset.label()),
        indices: subset.indices.clone(),
    };
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        checkpoint::write_atomic(path, json.as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub n: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<usize, CliError> {
    if args.n == 0 {
        return Err(CliError::Config("n must be at least 1".to_string()));
    }
    let data = make_synthetic_direction_dataset(args.n, args.seed);
    let records = data
        .iter()
        .enumerate()
        .map(|(i, ex)| Record::from_schema(&ex.schema, Some(format!("synth-{}-{i}", args.seed)), vec![]));
    write_jsonl(&args.output, records)?;
    Ok(data.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub config: RunConfig,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    /// Defaults to the config's `output_dir`.
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Stop (and save) after this many completed steps.
    pub stop_at: Option<u64>,
    /// Stop at the first log line whose loss (dev loss when a dev set is given)
    /// is below this value.
    pub target_loss: Option<f64>,
    /// Resume even when the checkpoint was written under a different config.
    pub allow_config_change: bool,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub log: PathBuf,
    pub step: u64,
    pub log_lines: Vec<TrainLogLine>,
    pub config_hash: String,
    pub reached_target: bool,
}

struct TrainData {
    schemas: Vec<(String, DataSchema)>,
    vocab: Vocab,
    meta: Meta,
}

fn load_split(path: &Path, config: &RunConfig) -> Result<Vec<(String, DataSchema)>, CliError> {
    let examples = read_dataset(path)?;
    if examples.is_empty() {
        return Err(CliError::Data(format!("{}: no examples", path.display())));
    }
    common_preset(&examples).map_err(|e| e.at(&path.display().to_string()))?;
    examples.iter().map(|ex| Ok((ex.id.clone(), model_input(ex, config.train.variant)?))).collect()
}

fn prepare_all<S: Real>(
    model: &Model<S>,
    schemas: &[(String, DataSchema)],
    vocab: &Vocab,
) -> Result<Vec<PreparedExample>, CliError> {
    schemas
        .iter()
        .map(|(id, s)| model.prepare(s, vocab).map_err(|e| CliError::from(e).at(&format!("example {id}"))))
        .collect()
}

pub fn train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let config = &args.config;
    config.validate()?;
    let schemas = load_split(&args.train, config)?;
    let preset = schemas[0].1.preset().clone();
    let texts = schemas.iter().flat_map(|(_, s)| s.segments().iter().map(|seg| seg.text.as_str()));
    let vocab = Vocab::build(texts, config.data.min_freq, config.data.lowercase)?;
    let dims = ModelDims {
        vocab: vocab.len(),
        segment_types: preset.segment_types().len(),
        relations: preset.relation_set().len(),
    };
    let meta =
        Meta { config: config.clone(), dims, preset: preset.name().to_string(), predicates: preset.predicates() };
    let data = TrainData { schemas, vocab, meta };
    match config.precision {
        Precision::F32 => train_typed::<f32>(args, data),
        Precision::F64 => train_typed::<f64>(args, data),
    }
}

fn resume_state<S: Real>(args: &TrainArgs, meta: &Meta, path: &Path) -> Result<Trainer<S>, CliError> {
    let loaded: Checkpoint<S> = match checkpoint::load(path)? {
        AnyCheckpoint::F32(c) if S::DTYPE == "f32" => cast_checkpoint(c),
        AnyCheckpoint::F64(c) if S::DTYPE == "f64" => cast_checkpoint(c),
        other => {
            return Err(CliError::Checkpoint(format!(
                "{} holds {} parameters but the config asks for {}",
                path.display(),
                other.header().dtype,
                S::DTYPE
            )))
        }
    };
    let h = &loaded.header;
    if h.config_hash != meta.config.hash() && !args.allow_config_change {
        return Err(CliError::HashMismatch(format!(
            "{} was written under config {} but the current config is {}",
            path.display(),
            h.config_hash,
            meta.config.hash()
        )));
    }
    if h.dims != meta.dims || h.preset != meta.preset || h.predicates != meta.predicates {
        return Err(CliError::Checkpoint(format!("{} does not match the training data", path.display())));
    }
    let optimizer =
        loaded.optimizer.ok_or_else(|| CliError::Checkpoint(format!("{} has no optimizer state", path.display())))?;
    // Parameters come from the checkpoint; their shapes must fit the current config.
    let params = loaded.model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let model = Model::from_params(meta.config.model.clone(), meta.dims, params)?;
    Ok(Trainer::resume(model, optimizer, meta.config.train.clone(), meta.config.seed)?)
}

/// Identity conversion once the dtype has been matched at runtime.
fn cast_checkpoint<A: Real, B: Real>(c: Checkpoint<A>) -> Checkpoint<B> {
    Checkpoint {
        header: c.header,
        model: c.model.cast::<B>(),
        optimizer: c.optimizer.map(|o| segrel_core::train::OptimizerState {
            step: o.step,
            m: o.m.iter().map(|t| t.cast::<B>()).collect(),
            v: o.v.iter().map(|t| t.cast::<B>()).collect(),
        }),
    }
}

fn train_typed<S: Real>(args: &TrainArgs, data: TrainData) -> Result<TrainOutcome, CliError> {
    let config = &args.config;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.output_dir));
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let vocab_path = dir.join(VOCAB_FILE);
    checkpoint::write_vocab(&vocab_path, &data.vocab)?;
    let mut trainer: Trainer<S> = match &args.resume {
        Some(path) => resume_state(args, &data.meta, path)?,
        None => {
            let model = Model::new(config.model.clone(), data.meta.dims, config.seed)?;
            Trainer::new(model, config.train.clone(), config.seed)?
        }
    };
    let examples = prepare_all(&trainer.model, &data.schemas, &data.vocab)?;
    let dev = match &args.dev {
        Some(path) => {
            let schemas = load_split(path, config)?;
            if schemas[0].1.preset() != data.schemas[0].1.preset() {
                return Err(CliError::Data(format!("{}: preset differs from the training data", path.display())));
            }
            Some(prepare_all(&trainer.model, &schemas, &data.vocab)?)
        }
        None => None,
    };
    let hash = config.hash();
    if !args.quiet {
        eprintln!("config {hash}\n{}", config.to_toml());
    }
    let log_path = dir.join(TRAIN_LOG_FILE);
    let log_file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(io_error(&log_path))?;
    let mut log = BufWriter::new(log_file);
    let mut log_lines = Vec::new();
    let start = Instant::now();
    let stop = args.stop_at.unwrap_or(u64::MAX);
    let (mut loss_sum, mut token_sum) = (0.0, 0usize);
    let mut reached_target = false;
    while !trainer.is_done() && trainer.step() < stop {
        let r = trainer.train_step(&examples).map_err(|e| {
            let e = CliError::from(e);
            match e {
                CliError::Train(m) => {
                    let ids: Vec<&str> = data.schemas.iter().map(|(id, _)| id.as_str()).collect();
                    CliError::Train(format!("{m}; example ids by index: {ids:?}"))
                }
                other => other,
            }
        })?;
        loss_sum += r.loss * r.tokens as f64;
        token_sum += r.tokens;
        let interval = config.train.eval_interval.max(1) as u64;
        if r.step % interval == 0 || trainer.is_done() || r.step == stop {
            let dev_loss = match &dev {
                Some(d) => Some(evaluate_loss(&trainer.model, d)?.0),
                None => None,
            };
            let line = TrainLogLine {
                step: r.step,
                loss: if token_sum == 0 { 0.0 } else { loss_sum / token_sum as f64 },
                lr: r.lr,
                grad_norm: r.grad_norm,
                tokens: token_sum,
                dev_loss,
                elapsed_s: start.elapsed().as_secs_f64(),
                config_hash: hash.clone(),
            };
            let text = serde_json::to_string(&line).expect("log line serializes");
            writeln!(log, "{text}").map_err(io_error(&log_path))?;
            log.flush().map_err(io_error(&log_path))?;
            if !args.quiet {
                eprintln!("{text}");
            }
            let watched = line.dev_loss.unwrap_or(line.loss);
            log_lines.push(line);
            loss_sum = 0.0;
            token_sum = 0;
            if args.target_loss.is_some_and(|t| watched < t) {
                reached_target = true;
                break;
            }
        }
    }
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt_path, &data.meta, &trainer.model, Some(&trainer.optimizer))?;
    Ok(TrainOutcome {
        dir,
        checkpoint: ckpt_path,
        vocab: vocab_path,
        log: log_path,
        step: trainer.step(),
        log_lines,
        config_hash: hash,
        reached_target,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    /// Defaults to `vocab.txt` next to the checkpoint.
    pub vocab: Option<PathBuf>,
    pub input: PathBuf,
    pub output: PathBuf,
    /// `decode.*` overrides applied to the checkpoint's config.
    pub overrides: Vec<String>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    pub quiet: bool,
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<Vec<GenerationLine>, CliError> {
    if let Some(bad) = args.overrides.iter().find(|o| !o.trim_start().starts_with("decode.")) {
        return Err(CliError::Config(format!("generate only accepts decode.* overrides, got `{bad}`")));
    }
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let header = ckpt.header().clone();
    let config = header.config.with_overrides(&args.overrides)?;
    if !args.quiet {
        eprintln!("checkpoint config {}\n{}", header.config_hash, config.to_toml());
    }
    let vocab_path =
        args.vocab.clone().unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE));
    let vocab = checkpoint::read_vocab(&vocab_path, config.data.lowercase)?;
    if vocab.len() != header.dims.vocab {
        return Err(CliError::Checkpoint(format!(
            "{} has {} tokens but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            header.dims.vocab
        )));
    }
    let examples = read_dataset(&args.input)?;
    let mut inputs = Vec::with_capacity(examples.len());
    for ex in &examples {
        let schema = strip_targets(&model_input(ex, config.train.variant)?)?;
        let preset = schema.preset();
        if preset.name() != header.preset || preset.predicates() != header.predicates {
            return Err(CliError::Data(format!(
                "{}:{}: preset {} does not match the checkpoint's {}",
                args.input.display(),
                ex.line,
                preset.name(),
                header.preset
            )));
        }
        inputs.push(schema);
    }
    let texts = match &ckpt {
        AnyCheckpoint::F32(c) => generate_all(&c.model, &inputs, &vocab, &config.decode, args.threads)?,
        AnyCheckpoint::F64(c) => generate_all(&c.model, &inputs, &vocab, &config.decode, args.threads)?,
    };
    let lines: Vec<GenerationLine> = examples
        .iter()
        .zip(texts)
        .map(|(ex, generated)| GenerationLine {
            id: ex.id.clone(),
            generated,
            references: ex.references(),
            config_hash: header.config_hash.clone(),
        })
        .collect();
    write_jsonl(&args.output, &lines)?;
    Ok(lines)
}

/// Decodes every schema, fanning out over threads; output order follows input.
pub fn generate_all<S: Real>(
    model: &Model<S>,
    schemas: &[DataSchema],
    vocab: &Vocab,
    config: &DecodeConfig,
    threads: usize,
) -> Result<Vec<Vec<String>>, CliError> {
    let threads = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(schemas.len().max(1));
    let chunk = schemas.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<Vec<String>>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = schemas
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| generate(model, s, vocab, config).map_err(CliError::from))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(schemas.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bleu4,
    RougeL,
    Rouge4,
    ExactMatch,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Bleu4, Metric::RougeL, Metric::Rouge4, Metric::ExactMatch];

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "bleu" | "bleu4" | "bleu-4" => Ok(Metric::Bleu4),
            "rouge-l" | "rougel" => Ok(Metric::RougeL),
            "rouge-4" | "rouge4" => Ok(Metric::Rouge4),
            "exact" | "exact-match" => Ok(Metric::ExactMatch),
            other => Err(CliError::Config(format!("unknown metric `{other}`"))),
        }
    }

    pub fn compute(self, hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<MetricReport, CliError> {
        Ok(match self {
            Metric::Bleu4 => bleu4(hyps, refs)?,
            Metric::RougeL => rouge(hyps, refs, RougeVariant::L)?,
            Metric::Rouge4 => rouge(hyps, refs, RougeVariant::N(4))?,
            Metric::ExactMatch => exact_match(hyps, refs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateArgs {
    pub generations: PathBuf,
    pub metrics: Vec<Metric>,
    /// Supplies the expected config hash, flags, dataset name and casing.
    pub checkpoint: Option<PathBuf>,
    /// Used like the checkpoint's config when no checkpoint is given.
    pub config: Option<RunConfig>,
    pub expect_hash: Option<String>,
    pub allow_hash_mismatch: bool,
    pub dataset: Option<String>,
    /// Overrides the config's casing; defaults to lowercasing.
    pub lowercase: Option<bool>,
    pub output: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Report, CliError> {
    let lines = read_generations(&args.generations)?;
    let first =
        lines.first().ok_or_else(|| CliError::Data(format!("{}: no generations", args.generations.display())))?;
    let hash = first.config_hash.clone();
    let config = match &args.checkpoint {
        Some(path) => Some(checkpoint::load(path)?.header().config.clone()),
        None => args.config.clone(),
    };
    let mut expected = args.expect_hash.clone();
    if expected.is_none() {
        expected = config.as_ref().map(RunConfig::hash);
    }
    if !args.allow_hash_mismatch {
        if let Some(g) = lines.iter().find(|g| g.config_hash != hash) {
            return Err(CliError::HashMismatch(format!(
                "generation {} has config {} but generation {} has {hash}",
                g.id, g.config_hash, first.id
            )));
        }
        if let Some(e) = expected.filter(|e| *e != hash) {
            return Err(CliError::HashMismatch(format!("generations carry config {hash}, expected {e}")));
        }
    }
    let lowercase = args.lowercase.or(config.as_ref().map(|c| c.data.lowercase)).unwrap_or(true);
    let hyps: Vec<Tokens> = tokenize_all(&lines.iter().map(|g| g.generated.join(" ")).collect::<Vec<_>>(), lowercase);
    let refs: Vec<Vec<Tokens>> = lines.iter().map(|g| tokenize_all(&g.references, lowercase)).collect();
    let metrics = if args.metrics.is_empty() { Metric::ALL.to_vec() } else { args.metrics.clone() };
    let metrics = metrics.iter().map(|m| m.compute(&hyps, &refs)).collect::<Result<Vec<_>, _>>()?;
    let dataset =
        args.dataset.clone().or_else(|| config.as_ref().map(|c| c.data.name.clone())).unwrap_or_else(|| {
            args.generations.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned())
        });
    let report = Report {
        dataset,
        config_hash: hash,
        flags: config.as_ref().map(VariantFlags::from_config),
        examples: lines.len(),
        metrics,
    };
    if let Some(path) = &args.output {
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        checkpoint::write_atomic(path, json.as_bytes())?;
    }
    Ok(report)
}

/// Mean and sample standard deviation of each metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(reports: &[PathBuf]) -> Result<Vec<AggregateRow>, CliError> {
    let mut by_metric: Vec<(String, Vec<f64>)> = Vec::new();
    for path in reports {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let report: Report =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for m in report.metrics {
            match by_metric.iter_mut().find(|(name, _)| *name == m.metric) {
                Some((_, scores)) => scores.push(m.score),
                None => by_metric.push((m.metric, vec![m.score])),
            }
        }
    }
    Ok(by_metric
        .into_iter()
        .map(|(metric, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            AggregateRow { metric, runs: xs.len(), mean, std: var.sqrt() }
        })
        .collect())
}
