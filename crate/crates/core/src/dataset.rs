//! Queries, the candidate-model registry and reward datasets.
//!
//! Dataset files are UTF-8, one JSON object per line:
//!
//! ```text
//! {"id":"q1","query":"integrate x^2","tags":["math"],"subset":"calc","rewards":{"m0":0.1,"m1":0.7}}
//! ```
//!
//! `tags` and `subset` may be omitted. `rewards` must name every registered
//! model exactly once and nothing else. Blank lines are ignored.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: reward for unknown model_id \"{model_id}\"")]
    UnknownModel { line: usize, model_id: String },
    #[error("line {line}: missing reward for model_id \"{model_id}\"")]
    MissingReward { line: usize, model_id: String },
    #[error("line {line}: reward for \"{model_id}\" is not a finite number")]
    NonFiniteReward { line: usize, model_id: String },
    #[error("line {line}: duplicate query id \"{id}\"")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: query \"{id}\" has empty text")]
    EmptyText { line: usize, id: String },
    #[error("empty dataset")]
    Empty,
    #[error("invalid registry: {0}")]
    Registry(String),
    #[error("reward vector has {got} entries, registry has {expected} models")]
    Length { expected: usize, got: usize },
}

/// One routed unit of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub tags: BTreeSet<String>,
    pub subset: Option<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            tags: BTreeSet::new(),
            subset: None,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_subset(mut self, subset: impl Into<String>) -> Self {
        self.subset = Some(subset.into());
        self
    }
}

/// One candidate backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "id")]
    pub model_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>) -> Self {
        let model_id = model_id.into();
        Self {
            display_name: model_id.clone(),
            model_id,
            endpoint: None,
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }
}

/// The candidate set in canonical order. Every reward vector and routing
/// distribution is indexed by position in this list.
///
/// Registry files are TOML:
///
/// ```toml
/// [[models]]
/// id = "m0"
/// display_name = "Model zero"        # optional, defaults to id
/// endpoint = "http://127.0.0.1:9000" # optional
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryFile", into = "RegistryFile")]
pub struct ModelRegistry {
    models: Vec<ModelSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    models: Vec<ModelSpec>,
}

impl TryFrom<RegistryFile> for ModelRegistry {
    type Error = DatasetError;

    fn try_from(file: RegistryFile) -> Result<Self, Self::Error> {
        ModelRegistry::new(file.models)
    }
}

impl From<ModelRegistry> for RegistryFile {
    fn from(registry: ModelRegistry) -> Self {
        RegistryFile {
            models: registry.models,
        }
    }
}

impl ModelRegistry {
    pub fn new(mut models: Vec<ModelSpec>) -> Result<Self, DatasetError> {
        if models.is_empty() {
            return Err(DatasetError::Registry("no models".into()));
        }
        let mut seen = HashSet::new();
        for m in &mut models {
            if m.model_id.trim().is_empty() {
                return Err(DatasetError::Registry("empty model id".into()));
            }
            if !seen.insert(m.model_id.clone()) {
                return Err(DatasetError::Registry(format!(
                    "duplicate model id \"{}\"",
                    m.model_id
                )));
            }
            if m.display_name.is_empty() {
                m.display_name = m.model_id.clone();
            }
        }
        Ok(Self { models })
    }

    /// Registry of `ids` with no endpoints.
    pub fn from_ids<I, S>(ids: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(ids.into_iter().map(ModelSpec::new).collect())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        toml::from_str(text).map_err(|e| DatasetError::Registry(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn model(&self, index: usize) -> &ModelSpec {
        &self.models[index]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.model_id.as_str())
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.model_id == model_id)
    }
}

/// Per-model scalar rewards in registry order. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    /// Fails if any entry is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self, NonFinite> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(NonFinite { index }),
            None => Ok(Self(values)),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("reward entry {index} is not finite")]
pub struct NonFinite {
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardRow {
    pub query: Query,
    pub rewards: RewardVector,
}

/// Training queries with one reward vector each, sharing one registry.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDataset {
    registry: ModelRegistry,
    rows: Vec<RewardRow>,
}

impl RewardDataset {
    /// Validates id uniqueness, text and vector lengths. An empty row list is
    /// allowed here; loaders and training reject it.
    pub fn new(registry: ModelRegistry, rows: Vec<RewardRow>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i + 1;
            if !seen.insert(row.query.id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    line,
                    id: row.query.id.clone(),
                });
            }
            if row.query.text.trim().is_empty() {
                return Err(DatasetError::EmptyText {
                    line,
                    id: row.query.id.clone(),
                });
            }
            if row.rewards.len() != registry.len() {
                return Err(DatasetError::Length {
                    expected: registry.len(),
                    got: row.rewards.len(),
                });
            }
        }
        Ok(Self { registry, rows })
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn rows(&self) -> &[RewardRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RewardRow> {
        self.rows.iter().find(|r| r.query.id == id)
    }

    /// Keeps rows matching `keep`, preserving order.
    pub fn filtered<F>(&self, mut keep: F) -> RewardDataset
    where
        F: FnMut(&RewardRow) -> bool,
    {
        RewardDataset {
            registry: self.registry.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn into_rows(self) -> Vec<RewardRow> {
        self.rows
    }
}

/// The on-disk shape of one dataset line, before registry validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub rewards: Map<String, Value>,
}

impl DatasetRecord {
    fn from_row(row: &RewardRow, registry: &ModelRegistry) -> Self {
        let mut rewards = Map::new();
        for (id, &v) in registry.ids().zip(row.rewards.as_slice()) {
            rewards.insert(id.to_owned(), Value::from(v));
        }
        DatasetRecord {
            id: row.query.id.clone(),
            query: row.query.text.clone(),
            tags: row.query.tags.iter().cloned().collect(),
            subset: row.query.subset.clone(),
            rewards,
        }
    }

    fn into_row(self, line: usize, registry: &ModelRegistry) -> Result<RewardRow, DatasetError> {
        if self.query.trim().is_empty() {
            return Err(DatasetError::EmptyText { line, id: self.id });
        }
        let mut values = vec![None; registry.len()];
        for (model_id, value) in &self.rewards {
            let idx = registry
                .index_of(model_id)
                .ok_or_else(|| DatasetError::UnknownModel {
                    line,
                    model_id: model_id.clone(),
                })?;
            let v = value
                .as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::NonFiniteReward {
                    line,
                    model_id: model_id.clone(),
                })?;
            values[idx] = Some(v);
        }
        let values = values
            .into_iter()
            .zip(registry.ids())
            .map(|(v, id)| {
                v.ok_or_else(|| DatasetError::MissingReward {
                    line,
                    model_id: id.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RewardRow {
            query: Query {
                id: self.id,
                text: self.query,
                tags: self.tags.into_iter().collect(),
                subset: self.subset,
            },
            rewards: RewardVector(values),
        })
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_record(line: usize, text: &str) -> Result<DatasetRecord, DatasetError> {
    serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line,
        message: e.to_string(),
    })
}

/// Reads raw records without registry validation.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    read_lines(path)?
        .iter()
        .map(|(line, text)| parse_record(*line, text))
        .collect()
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Parses dataset text against `registry`. Line numbers are 1-based.
pub fn parse_dataset(text: &str, registry: &ModelRegistry) -> Result<RewardDataset, DatasetError> {
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l));
    build_dataset(lines, registry)
}

fn build_dataset<'a, I>(lines: I, registry: &ModelRegistry) -> Result<RewardDataset, DatasetError>
where
    I: IntoIterator<Item = (usize, &'a str)>,
{
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in lines {
        let row = parse_record(line, text)?.into_row(line, registry)?;
        if !seen.insert(row.query.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line,
                id: row.query.id,
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(RewardDataset {
        registry: registry.clone(),
        rows,
    })
}

pub fn load_dataset(path: &Path, registry: &ModelRegistry) -> Result<RewardDataset, DatasetError> {
    let lines = read_lines(path)?;
    build_dataset(lines.iter().map(|(n, l)| (*n, l.as_str())), registry)
}

/// Serializes rows in file order with rewards keyed in registry order.
pub fn dataset_to_string(dataset: &RewardDataset) -> String {
    let mut out = String::new();
    for row in &dataset.rows {
        let record = DatasetRecord::from_row(row, &dataset.registry);
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &RewardDataset) -> Result<(), DatasetError> {
    write_file(path, &dataset_to_string(dataset))
}

fn write_file(path: &Path, contents: &str) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}
