//! Vocabulary files and checkpoints.
//!
//! A checkpoint starts with one ASCII line `segrel-checkpoint 1 <header bytes>`,
//! followed by a JSON header of exactly that many bytes and a newline, followed
//! by the raw little-endian arrays in header order. Offsets in the header are
//! relative to the first array byte. Adam moments, when present, are stored as
//! `adam.m.<name>` and `adam.v.<name>` after the parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use segrel_core::model::{Model, ModelDims};
use segrel_core::tensor::Tensor;
use segrel_core::tokenizer::Vocab;
use segrel_core::train::OptimizerState;
use segrel_core::Real;

use crate::config::{Precision, RunConfig};
use crate::error::{io_error, CliError};

pub const MAGIC: &str = "segrel-checkpoint";
pub const VERSION: u32 = 1;

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<(), CliError> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_vocab(path: &Path, lowercase: bool) -> Result<Vocab, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let tokens = text.lines().map(str::to_string).collect();
    Vocab::from_tokens(tokens, lowercase).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub dtype: String,
    pub config_hash: String,
    /// The merged run configuration, verbatim as printed at startup.
    pub config_text: String,
    pub config: RunConfig,
    pub dims: ModelDims,
    pub preset: String,
    pub predicates: Vec<String>,
    /// Completed optimizer steps.
    pub step: u64,
    pub has_optimizer: bool,
    pub arrays: Vec<ArrayEntry>,
}

/// A loaded model with optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub header: Header,
    pub model: Model<S>,
    pub optimizer: Option<OptimizerState<S>>,
}

/// Either precision, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn header(&self) -> &Header {
        match self {
            AnyCheckpoint::F32(c) => &c.header,
            AnyCheckpoint::F64(c) => &c.header,
        }
    }
}

/// Metadata the caller supplies; array entries are filled in by [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub config: RunConfig,
    pub dims: ModelDims,
    pub preset: String,
    pub predicates: Vec<String>,
}

pub fn encode<S: Real>(meta: &Meta, model: &Model<S>, optimizer: Option<&OptimizerState<S>>) -> Vec<u8> {
    let mut arrays = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut push = |name: String, t: &Tensor<S>| {
        let offset = data.len() as u64;
        for &x in t.data() {
            x.write_le(&mut data);
        }
        arrays.push(ArrayEntry { name, shape: t.shape().to_vec(), offset, bytes: data.len() as u64 - offset });
    };
    for (name, t) in model.params().iter() {
        push(name.to_string(), t);
    }
    if let Some(opt) = optimizer {
        for (name, t) in model.params().names().iter().zip(&opt.m) {
            push(format!("adam.m.{name}"), t);
        }
        for (name, t) in model.params().names().iter().zip(&opt.v) {
            push(format!("adam.v.{name}"), t);
        }
    }
    let header = Header {
        version: VERSION,
        dtype: S::DTYPE.to_string(),
        config_hash: meta.config.hash(),
        config_text: meta.config.to_toml(),
        config: meta.config.clone(),
        dims: meta.dims,
        preset: meta.preset.clone(),
        predicates: meta.predicates.clone(),
        step: optimizer.map_or(0, |o| o.step),
        has_optimizer: optimizer.is_some(),
        arrays,
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    let mut out = format!("{MAGIC} {VERSION} {}\n", json.len()).into_bytes();
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

pub fn save<S: Real>(
    path: &Path,
    meta: &Meta,
    model: &Model<S>,
    optimizer: Option<&OptimizerState<S>>,
) -> Result<(), CliError> {
    write_atomic(path, &encode(meta, model, optimizer))
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

/// Splits the file into its header and array bytes.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, &[u8]), CliError> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header line is not text"))?;
    let parts: Vec<&str> = first.split(' ').collect();
    let [magic, version, len] = parts[..] else {
        return Err(bad(format!("unexpected header line `{first}`")));
    };
    if magic != MAGIC {
        return Err(bad("not a segrel checkpoint"));
    }
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len: usize = len.parse().map_err(|_| bad("bad header length"))?;
    let start = nl + 1;
    let end = start.checked_add(len).filter(|&e| e < bytes.len()).ok_or_else(|| bad("truncated header"))?;
    if bytes[end] != b'\n' {
        return Err(bad("header is not newline terminated"));
    }
    let header: Header = serde_json::from_slice(&bytes[start..end]).map_err(|e| bad(format!("header: {e}")))?;
    Ok((header, &bytes[end + 1..]))
}

fn arrays<S: Real>(header: &Header, data: &[u8]) -> Result<Vec<(String, Tensor<S>)>, CliError> {
    let mut expected = 0u64;
    let mut out = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        let numel: usize = a.shape.iter().product();
        if a.offset != expected || a.bytes != (numel * S::BYTES) as u64 {
            return Err(bad(format!("array {} has inconsistent offset or size", a.name)));
        }
        let end = (a.offset + a.bytes) as usize;
        let raw = data.get(a.offset as usize..end).ok_or_else(|| bad(format!("array {} is truncated", a.name)))?;
        let values = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
        let t = Tensor::new(a.shape.clone(), values).map_err(|e| bad(e.to_string()))?;
        if !t.all_finite() {
            return Err(bad(format!("array {} has non-finite values", a.name)));
        }
        out.push((a.name.clone(), t));
        expected = end as u64;
    }
    if expected != data.len() as u64 {
        return Err(bad(format!("{} trailing bytes", data.len() as u64 - expected)));
    }
    Ok(out)
}

fn decode_typed<S: Real>(header: Header, data: &[u8]) -> Result<Checkpoint<S>, CliError> {
    let mut all = arrays::<S>(&header, data)?;
    let n_params = all.iter().take_while(|(n, _)| !n.starts_with("adam.")).count();
    let moments = all.split_off(n_params);
    let model = Model::from_params(header.config.model.clone(), header.dims, all)
        .map_err(|e| bad(format!("parameters: {e}")))?;
    let optimizer = if header.has_optimizer {
        let names = model.params().names();
        if moments.len() != 2 * names.len() {
            return Err(bad("optimizer moments do not match the parameters"));
        }
        let (m, v) = moments.split_at(names.len());
        for (i, name) in names.iter().enumerate() {
            if m[i].0 != format!("adam.m.{name}") || v[i].0 != format!("adam.v.{name}") {
                return Err(bad(format!("optimizer moments out of order at {name}")));
            }
        }
        let state = OptimizerState {
            step: header.step,
            m: m.iter().map(|(_, t)| t.clone()).collect(),
            v: v.iter().map(|(_, t)| t.clone()).collect(),
        };
        state.check(model.params()).map_err(|e| bad(e.to_string()))?;
        Some(state)
    } else {
        if !moments.is_empty() {
            return Err(bad("unexpected optimizer arrays"));
        }
        None
    };
    Ok(Checkpoint { header, model, optimizer })
}

pub fn decode(bytes: &[u8]) -> Result<AnyCheckpoint, CliError> {
    let (header, data) = decode_header(bytes)?;
    let declared = header.config.precision.name();
    if header.dtype != declared {
        return Err(bad(format!("dtype {} but config precision {declared}", header.dtype)));
    }
    if header.config.hash() != header.config_hash {
        return Err(bad("stored config does not match its hash"));
    }
    match header.config.precision {
        Precision::F32 => Ok(AnyCheckpoint::F32(decode_typed(header, data)?)),
        Precision::F64 => Ok(AnyCheckpoint::F64(decode_typed(header, data)?)),
    }
}

pub fn load(path: &Path) -> Result<AnyCheckpoint, CliError> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    decode(&bytes).map_err(|e| e.at(&path.display().to_string()))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_error(&tmp))?;
    f.write_all(bytes).map_err(io_error(&tmp))?;
    f.sync_all().map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}
