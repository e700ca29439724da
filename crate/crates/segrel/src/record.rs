//! The canonical JSONL dataset record and its conversion to and from
//! [`DataSchema`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use segrel_core::schema::{relation_preset, DataSchema, Preset, PresetKind, Role, Segment, Tuple};

use crate::error::{io_error, CliError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub text: String,
    #[serde(rename = "type")]
    pub seg_type: String,
    pub role: Role,
}

/// One example. `predicates` declares the closed predicate set of the `generic`
/// preset; `pairs` links keys with values (or concepts with classes);
/// `references` lists alternative full target texts for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub segments: Vec<SegmentRecord>,
    #[serde(default)]
    pub tuples: Vec<(usize, String, usize)>,
    pub preset: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_order: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl Record {
    pub fn to_schema(&self) -> Result<DataSchema, CliError> {
        let preset = relation_preset(&self.preset, &self.predicates)?;
        let segments = self
            .segments
            .iter()
            .map(|s| Ok(Segment::new(&s.text, preset.segment_type(&s.seg_type)?, s.role)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let tuples = self
            .tuples
            .iter()
            .map(|(head, name, tail)| {
                let predicate = preset
                    .resolve_predicate(name)
                    .ok_or_else(|| CliError::Data(format!("unknown predicate `{name}` for preset {}", self.preset)))?;
                Ok(Tuple { head: *head, predicate, tail: *tail })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let schema = DataSchema::new(segments, preset, tuples, self.pairs.clone())?;
        Ok(match &self.target_order {
            Some(order) => schema.with_target_order(order.clone())?,
            None => schema,
        })
    }

    pub fn from_schema(schema: &DataSchema, id: Option<String>, references: Vec<String>) -> Self {
        let preset = schema.preset();
        let rels = schema.relation_set();
        let segments = schema
            .segments()
            .iter()
            .map(|s| SegmentRecord {
                text: s.text.clone(),
                seg_type: preset.segment_types()[s.seg_type.0].clone(),
                role: s.role,
            })
            .collect();
        let tuples = schema
            .tuples()
            .as_slice()
            .iter()
            .map(|t| (t.head, rels.get(t.predicate).expect("valid id").name.clone(), t.tail))
            .collect();
        let in_index_order = schema.target_order().windows(2).all(|w| w[0] < w[1]);
        Record {
            id,
            preset: preset.name().to_string(),
            predicates: if preset.kind() == PresetKind::Generic { preset.predicates() } else { Vec::new() },
            segments,
            tuples,
            pairs: schema.pairs().to_vec(),
            target_order: (!in_index_order).then(|| schema.target_order().to_vec()),
            references,
        }
    }

    /// Gold target texts in generation order.
    pub fn targets(&self, schema: &DataSchema) -> Vec<String> {
        schema.target_order().iter().map(|&i| schema.segments()[i].text.clone()).collect()
    }

    /// Evaluation references: `references` when given, else the gold targets
    /// joined in generation order.
    pub fn reference_texts(&self, schema: &DataSchema) -> Vec<String> {
        if self.references.is_empty() {
            vec![self.targets(schema).join(" ")]
        } else {
            self.references.clone()
        }
    }
}

/// A record with its 1-based line number and parsed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub line: usize,
    pub id: String,
    pub record: Record,
    pub schema: DataSchema,
}

impl Example {
    pub fn references(&self) -> Vec<String> {
        self.record.reference_texts(&self.schema)
    }
}

/// Reads a canonical JSONL file. Blank lines are skipped; errors name the line.
/// Records without an id get their line number.
pub fn read_dataset(path: &Path) -> Result<Vec<Example>, CliError> {
    let file = fs::File::open(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", path.display(), i + 1);
        let record: Record = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{at}: {e}")))?;
        let schema = record.to_schema().map_err(|e| e.at(&at))?;
        let id = record.id.clone().unwrap_or_else(|| (i + 1).to_string());
        out.push(Example { line: i + 1, id, record, schema });
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let file = fs::File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(io_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Preset shared by every example; a model's relation table is sized by it.
pub fn common_preset(examples: &[Example]) -> Result<Preset, CliError> {
    let first = examples.first().ok_or_else(|| CliError::Data("dataset is empty".to_string()))?;
    let preset = first.schema.preset();
    for ex in examples {
        if ex.schema.preset() != preset {
            return Err(CliError::Data(format!(
                "line {}: preset {} {:?} differs from line {}: {} {:?}",
                ex.line,
                ex.schema.preset().name(),
                ex.schema.preset().predicates(),
                first.line,
                preset.name(),
                preset.predicates()
            )));
        }
    }
    Ok(preset.clone())
}

/// Builds a source-only copy of `schema` with empty targets, as given to the
/// decoder.
pub fn strip_targets(schema: &DataSchema) -> Result<DataSchema, CliError> {
    let empty = vec![String::new(); schema.target_order().len()];
    Ok(schema.with_target_texts(&empty)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_shape() {
        let line = r#"{"segments":[{"text":"Clyde F.C","type":"node","role":"source"},{"text":"Broadwood Stadium","type":"node","role":"source"},{"text":"ground","type":"predicate","role":"source"},{"text":"Clyde F.C play at Broadwood Stadium","type":"target","role":"target"}],"tuples":[[0,"head-to-predicate",2],[2,"predicate-to-tail",1]],"preset":"webnlg"}"#;
        let record: Record = serde_json::from_str(line).unwrap();
        let schema = record.to_schema().unwrap();
        assert_eq!(schema.segments().len(), 4);
        assert_eq!(schema.tuples().len(), 2);
        let back = Record::from_schema(&schema, None, vec![]);
        assert_eq!(back, record);
        assert_eq!(serde_json::to_string(&back).unwrap(), line);
        assert_eq!(record.reference_texts(&schema), ["Clyde F.C play at Broadwood Stadium"]);
    }

    #[test]
    fn generic_records_carry_their_predicates() {
        let line = r#"{"preset":"generic","predicates":["precedes","follows"],"segments":[{"text":"a","type":"node","role":"source"},{"text":"b","type":"node","role":"source"},{"text":"","type":"target","role":"target"}],"tuples":[[1,"follows",0]]}"#;
        let record: Record = serde_json::from_str(line).unwrap();
        let schema = record.to_schema().unwrap();
        assert_eq!(schema.preset().predicates(), ["precedes", "follows"]);
        assert_eq!(Record::from_schema(&schema, None, vec![]), record);
    }

    #[test]
    fn bad_records_are_data_errors() {
        let unknown = r#"{"preset":"webnlg","segments":[{"text":"a","type":"node","role":"source"},{"text":"b","type":"node","role":"source"}],"tuples":[[0,"ground",1]]}"#;
        let record: Record = serde_json::from_str(unknown).unwrap();
        assert_eq!(record.to_schema().unwrap_err().category(), "data");
        let bad_type = r#"{"preset":"key-value","segments":[{"text":"a","type":"node","role":"source"}]}"#;
        let record: Record = serde_json::from_str(bad_type).unwrap();
        assert_eq!(record.to_schema().unwrap_err().category(), "data");
        assert!(serde_json::from_str::<Record>(r#"{"preset":"flat","segments":[],"extra":1}"#).is_err());
    }

    #[test]
    fn custom_target_order_is_preserved() {
        let line = r#"{"preset":"generic","predicates":["r"],"segments":[{"text":"a","type":"node","role":"source"},{"text":"x","type":"target","role":"target"},{"text":"y","type":"target","role":"target"}],"tuples":[],"target_order":[2,1]}"#;
        let record: Record = serde_json::from_str(line).unwrap();
        let schema = record.to_schema().unwrap();
        assert_eq!(schema.target_order(), [2, 1]);
        assert_eq!(record.targets(&schema), ["y", "x"]);
        assert_eq!(record.reference_texts(&schema), ["y x"]);
        assert_eq!(Record::from_schema(&schema, None, vec![]), record);
    }
}
