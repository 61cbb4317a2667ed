use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use super::features::read_feature_file;
use super::{AgeGroup, FeatureKey, FeatureSequence, IngestError, Label, Result, Sex, Split};

/// Label and metadata of one recording plus the location of its feature files.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: Label,
    pub age_group: AgeGroup,
    pub sex: Sex,
    pub split: Split,
    pub feature_paths: BTreeMap<FeatureKey, PathBuf>,
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>, label: Label, age_group: AgeGroup, sex: Sex, split: Split) -> Self {
        Self {
            sample_id: sample_id.into(),
            label,
            age_group,
            sex,
            split,
            feature_paths: BTreeMap::new(),
        }
    }

    pub fn feature_path(&self, key: FeatureKey) -> Option<&Path> {
        self.feature_paths.get(&key).map(PathBuf::as_path)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    sample_id: Option<Value>,
    label: Option<Value>,
    age_group: Option<Value>,
    sex: Option<Value>,
    split: Option<Value>,
    features: Option<BTreeMap<String, Value>>,
}

fn enum_text(line: usize, field: &'static str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        other => Err(IngestError::UnknownEnumValue {
            line,
            field,
            value: other.to_string(),
        }),
    }
}

fn convert(line: usize, raw: RawRecord, base_dir: &Path) -> Result<SampleRecord> {
    let sample_id = match raw.sample_id {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::String(_)) | None | Some(Value::Null) => {
            return Err(IngestError::MissingField { line, field: "sample_id" })
        }
        Some(other) => {
            return Err(IngestError::MalformedRecord {
                line,
                message: format!("sample_id must be a string, got {other}"),
            })
        }
    };

    let label = match raw.label {
        None | Some(Value::Null) => return Err(IngestError::MissingField { line, field: "label" }),
        Some(v) => v
            .as_u64()
            .and_then(|c| u8::try_from(c).ok())
            .and_then(Label::from_code)
            .ok_or_else(|| IngestError::UnknownEnumValue {
                line,
                field: "label",
                value: v.to_string(),
            })?,
    };

    let age_group = match raw.age_group {
        None | Some(Value::Null) => AgeGroup::Unknown,
        Some(v) => {
            let s = enum_text(line, "age_group", &v)?;
            AgeGroup::parse(&s).ok_or(IngestError::UnknownEnumValue {
                line,
                field: "age_group",
                value: s,
            })?
        }
    };

    let sex = match raw.sex {
        None | Some(Value::Null) => Sex::Unknown,
        Some(v) => {
            let s = enum_text(line, "sex", &v)?;
            Sex::parse(&s).ok_or(IngestError::UnknownEnumValue { line, field: "sex", value: s })?
        }
    };

    let split = match raw.split {
        None | Some(Value::Null) => return Err(IngestError::MissingField { line, field: "split" }),
        Some(v) => {
            let s = enum_text(line, "split", &v)?;
            s.parse::<Split>()
                .map_err(|_| IngestError::UnknownEnumValue { line, field: "split", value: s })?
        }
    };

    let features = raw.features.ok_or(IngestError::MissingField { line, field: "features" })?;
    let mut feature_paths = BTreeMap::new();
    for (key, path) in features {
        let parsed: FeatureKey = key.parse().map_err(|_| IngestError::UnknownEnumValue {
            line,
            field: "features",
            value: key.clone(),
        })?;
        let Value::String(path) = path else {
            return Err(IngestError::MalformedRecord {
                line,
                message: format!("feature path for {key} must be a string"),
            });
        };
        feature_paths.insert(parsed, base_dir.join(path));
    }

    Ok(SampleRecord {
        sample_id,
        label,
        age_group,
        sex,
        split,
        feature_paths,
    })
}

/// Parses manifest lines. Relative feature paths are resolved against `base_dir`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_manifest(reader: impl BufRead, base_dir: &Path) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IngestError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| IngestError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = convert(line_no, raw, base_dir)?;
        if let Some(&first_line) = seen.get(&record.sample_id) {
            return Err(IngestError::DuplicateId {
                line: line_no,
                first_line,
                sample_id: record.sample_id,
            });
        }
        seen.insert(record.sample_id.clone(), line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(BufReader::new(file), base)
}

/// Writes records as JSON lines. Feature paths under the manifest's directory
/// are written relative to it.
pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for r in records {
        let features: serde_json::Map<String, Value> = r
            .feature_paths
            .iter()
            .map(|(k, p)| {
                let rel = p.strip_prefix(base).unwrap_or(p);
                (k.to_string(), Value::String(rel.to_string_lossy().into_owned()))
            })
            .collect();
        let obj = serde_json::json!({
            "sample_id": r.sample_id,
            "label": r.label.code(),
            "age_group": r.age_group.as_str(),
            "sex": r.sex.as_str(),
            "split": r.split.as_str(),
            "features": features,
        });
        writeln!(out, "{obj}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Loads one feature stream of a sample, checking the file header against the
/// manifest key and stamping the manifest's sample id on the result.
pub fn load_features(record: &SampleRecord, key: FeatureKey) -> Result<FeatureSequence> {
    let path = record.feature_path(key).ok_or_else(|| IngestError::MissingFeature {
        sample_id: record.sample_id.clone(),
        key,
    })?;
    let seq = read_feature_file(path)?;
    if seq.key() != key {
        return Err(IngestError::HeaderMismatch {
            path: path.to_path_buf(),
            expected: key,
            found: seq.key(),
        });
    }
    Ok(seq.with_sample_id(record.sample_id.clone()))
}
