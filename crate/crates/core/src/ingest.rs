//! Dataset registry and source-format adapters.
//!
//! Every adapter is line-oriented: a malformed line is reported with its
//! line number and skipped, and the load continues.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::corpus::{
    char_slice, validate_sample, AnnotationKind, Annotations, LabelSource, Language, Paradigm, RawSample,
    SpanAnnotation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    ProductInfo,
    UserReview,
    UserDialogue,
    SearchQuery,
    Address,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub paradigm: Paradigm,
    pub language: Language,
    pub source: PathBuf,
    pub adapter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub data_type: DataType,
    /// Annotation variant carried by the records; defaults by paradigm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<AnnotationKind>,
}

impl DatasetManifest {
    pub fn annotation_kind(&self) -> AnnotationKind {
        self.annotation
            .unwrap_or_else(|| AnnotationKind::default_for(self.paradigm))
    }
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    #[serde(default)]
    dataset: Vec<DatasetManifest>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unknown adapter {0:?}")]
    UnknownAdapter(String),
    #[error("duplicate dataset_id {0:?}")]
    DuplicateDataset(String),
    #[error("dataset {0:?} is not registered")]
    UnknownDataset(String),
    #[error("invalid manifest for {dataset}: {message}")]
    InvalidManifest { dataset: String, message: String },
    #[error("cannot read source {path}: {source}")]
    Unreadable { path: PathBuf, source: io::Error },
    #[error("cannot parse manifest file {path}: {message}")]
    ManifestFile { path: PathBuf, message: String },
}

/// Reads a manifest document (`[[dataset]]` tables); relative source paths
/// are resolved against the document's directory.
pub fn read_manifest_file(path: &Path) -> Result<Vec<DatasetManifest>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: ManifestFile = toml::from_str(&text).map_err(|e| IngestError::ManifestFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parsed
        .dataset
        .into_iter()
        .map(|mut m| {
            if m.source.is_relative() {
                m.source = base.join(&m.source);
            }
            m
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DatasetHandle(String);

impl DatasetHandle {
    pub fn id(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadDiagnostic {
    pub dataset_id: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub samples: Vec<RawSample>,
    pub errors: Vec<LoadDiagnostic>,
    pub warnings: Vec<LoadDiagnostic>,
}

/// Result of parsing one source line.
pub struct ParsedLine {
    pub sample: RawSample,
    pub warnings: Vec<String>,
}

pub trait SourceAdapter: Send + Sync {
    fn name(&self) -> &'static str;

    /// `Ok(None)` skips the line (blank lines).
    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String>;
}

pub struct Registry {
    adapters: BTreeMap<&'static str, Box<dyn SourceAdapter>>,
    datasets: BTreeMap<String, DatasetManifest>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    /// A registry with the built-in adapters.
    pub fn new() -> Self {
        let mut r = Registry {
            adapters: BTreeMap::new(),
            datasets: BTreeMap::new(),
        };
        r.add_adapter(Box::new(CanonicalAdapter));
        r.add_adapter(Box::new(ClsTsvAdapter));
        r.add_adapter(Box::new(NerOffsetsAdapter));
        r.add_adapter(Box::new(KvTitleAdapter));
        r.add_adapter(Box::new(LinesAdapter));
        r
    }

    pub fn add_adapter(&mut self, adapter: Box<dyn SourceAdapter>) {
        self.adapters.insert(adapter.name(), adapter);
    }

    pub fn register_dataset(&mut self, manifest: DatasetManifest) -> Result<DatasetHandle, IngestError> {
        if !self.adapters.contains_key(manifest.adapter.as_str()) {
            return Err(IngestError::UnknownAdapter(manifest.adapter));
        }
        if self.datasets.contains_key(&manifest.dataset_id) {
            return Err(IngestError::DuplicateDataset(manifest.dataset_id));
        }
        let invalid = |message: &str| IngestError::InvalidManifest {
            dataset: manifest.dataset_id.clone(),
            message: message.to_string(),
        };
        if manifest.dataset_id.is_empty() {
            return Err(invalid("empty dataset_id"));
        }
        let has_labels = manifest.labels.as_ref().is_some_and(|l| !l.is_empty());
        if manifest.paradigm == Paradigm::Cls && manifest.annotation_kind() == AnnotationKind::ClassLabels && !has_labels {
            return Err(invalid("label set required for CLS datasets"));
        }
        if !manifest.paradigm.accepts(manifest.annotation_kind()) {
            return Err(invalid("annotation kind does not fit the paradigm"));
        }
        let handle = DatasetHandle(manifest.dataset_id.clone());
        self.datasets.insert(manifest.dataset_id.clone(), manifest);
        Ok(handle)
    }

    pub fn handles(&self) -> Vec<DatasetHandle> {
        self.datasets.keys().cloned().map(DatasetHandle).collect()
    }

    pub fn manifest(&self, handle: &DatasetHandle) -> Option<&DatasetManifest> {
        self.datasets.get(&handle.0)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &DatasetManifest> {
        self.datasets.values()
    }

    /// Loads one dataset in source order. Malformed or invalid lines are
    /// counted in `errors` and skipped.
    pub fn load_samples(&self, handle: &DatasetHandle) -> Result<LoadOutcome, IngestError> {
        let manifest = self
            .datasets
            .get(&handle.0)
            .ok_or_else(|| IngestError::UnknownDataset(handle.0.clone()))?;
        let adapter = &self.adapters[manifest.adapter.as_str()];
        let unreadable = |source| IngestError::Unreadable {
            path: manifest.source.clone(),
            source,
        };
        let file = fs::File::open(&manifest.source).map_err(unreadable)?;
        let mut out = LoadOutcome::default();
        let mut seen = HashSet::new();
        let diag = |line, message: String| LoadDiagnostic {
            dataset_id: manifest.dataset_id.clone(),
            line,
            message,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(unreadable)?;
            let parsed = match adapter.parse_line(line_no, &line, manifest) {
                Ok(Some(p)) => p,
                Ok(None) => continue,
                Err(message) => {
                    out.errors.push(diag(line_no, message));
                    continue;
                }
            };
            let violations = validate_sample(&parsed.sample, manifest);
            if !violations.is_empty() {
                let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
                out.errors.push(diag(line_no, msgs.join("; ")));
                continue;
            }
            if !seen.insert(parsed.sample.id.clone()) {
                out.errors.push(diag(line_no, format!("duplicate id {:?}", parsed.sample.id)));
                continue;
            }
            out.warnings
                .extend(parsed.warnings.into_iter().map(|w| diag(line_no, w)));
            out.samples.push(parsed.sample);
        }
        Ok(out)
    }
}

fn default_id(manifest: &DatasetManifest, line_no: usize) -> String {
    format!("{}:{}", manifest.dataset_id, line_no)
}

fn source_sample(manifest: &DatasetManifest, id: String, input_text: String, annotations: Annotations) -> RawSample {
    RawSample {
        id,
        dataset_id: manifest.dataset_id.clone(),
        language: manifest.language,
        input_text,
        annotations,
        label_source: LabelSource::Golden,
        lineage: Vec::new(),
        source_ids: Vec::new(),
    }
}

/// The canonical newline-delimited `RawSample` form. `dataset_id` and
/// `language` may be omitted and are then taken from the manifest.
pub struct CanonicalAdapter;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalLine {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    dataset_id: Option<String>,
    #[serde(default)]
    language: Option<Language>,
    input_text: String,
    annotations: Annotations,
    #[serde(default)]
    label_source: LabelSource,
    #[serde(default)]
    lineage: Vec<String>,
    #[serde(default)]
    source_ids: Vec<String>,
}

impl SourceAdapter for CanonicalAdapter {
    fn name(&self) -> &'static str {
        "canonical"
    }

    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        let rec: CanonicalLine = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
        if rec.label_source == LabelSource::Pseudo {
            return Err("source records must be GOLDEN".into());
        }
        Ok(Some(ParsedLine {
            sample: RawSample {
                id: rec.id.unwrap_or_else(|| default_id(manifest, line_no)),
                dataset_id: rec.dataset_id.unwrap_or_else(|| manifest.dataset_id.clone()),
                language: rec.language.unwrap_or(manifest.language),
                input_text: rec.input_text,
                annotations: rec.annotations,
                label_source: LabelSource::Golden,
                lineage: rec.lineage,
                source_ids: rec.source_ids,
            },
            warnings: Vec::new(),
        }))
    }
}

/// Tab-separated classification rows: `id<TAB>label|label<TAB>text`.
/// An empty id column falls back to `<dataset>:<line>`.
pub struct ClsTsvAdapter;

impl SourceAdapter for ClsTsvAdapter {
    fn name(&self) -> &'static str {
        "cls_tsv"
    }

    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let [id, labels, text] = cols[..] else {
            return Err(format!("expected 3 tab-separated columns, found {}", cols.len()));
        };
        if text.trim().is_empty() {
            return Err("empty text column".into());
        }
        let labels: Vec<String> = labels
            .split('|')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let id = if id.trim().is_empty() {
            default_id(manifest, line_no)
        } else {
            id.trim().to_string()
        };
        Ok(Some(ParsedLine {
            sample: source_sample(manifest, id, text.to_string(), Annotations::ClassLabels(labels)),
            warnings: Vec::new(),
        }))
    }
}

/// Span-annotated NER rows: `{"id": .., "text": .., "entities": [[start, end, label], ..]}`
/// with Unicode-scalar offsets; surfaces are sliced from the text.
pub struct NerOffsetsAdapter;

#[derive(Deserialize)]
struct NerLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    entities: Vec<(usize, usize, String)>,
}

impl SourceAdapter for NerOffsetsAdapter {
    fn name(&self) -> &'static str {
        "ner_offsets"
    }

    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        let rec: NerLine = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
        let mut spans = Vec::with_capacity(rec.entities.len());
        for (start, end, label) in rec.entities {
            let surface = char_slice(&rec.text, start, end)
                .filter(|_| start < end)
                .ok_or_else(|| format!("entity offsets ({start},{end}) out of range"))?;
            spans.push(SpanAnnotation::new(start, end, surface, label));
        }
        let id = rec.id.unwrap_or_else(|| default_id(manifest, line_no));
        Ok(Some(ParsedLine {
            sample: source_sample(manifest, id, rec.text, Annotations::Spans(spans)),
            warnings: Vec::new(),
        }))
    }
}

/// Product attribute strings paired with a target title:
/// `id<TAB>#key#:#value#;...<TAB>title`.
pub struct KvTitleAdapter;

impl SourceAdapter for KvTitleAdapter {
    fn name(&self) -> &'static str {
        "kv_title"
    }

    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String> {
        if line.trim().is_empty() {
            return Ok(None);
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        let [id, kv, title] = cols[..] else {
            return Err(format!("expected 3 tab-separated columns, found {}", cols.len()));
        };
        let parsed = parse_attribute_kv(kv);
        if parsed.pairs.is_empty() {
            return Err("no attribute pairs parsed".into());
        }
        let warnings = parsed
            .diagnostics
            .iter()
            .map(|d| format!("unparseable attribute segment {}: {:?}", d.segment_index, d.segment))
            .collect();
        let id = if id.trim().is_empty() {
            default_id(manifest, line_no)
        } else {
            id.trim().to_string()
        };
        Ok(Some(ParsedLine {
            sample: source_sample(manifest, id, kv.to_string(), Annotations::TargetText(title.trim().to_string())),
            warnings,
        }))
    }
}

/// One input-only record per non-blank line (search queries, product titles).
pub struct LinesAdapter;

impl SourceAdapter for LinesAdapter {
    fn name(&self) -> &'static str {
        "lines"
    }

    fn parse_line(&self, line_no: usize, line: &str, manifest: &DatasetManifest) -> Result<Option<ParsedLine>, String> {
        let text = line.trim();
        if text.is_empty() {
            return Ok(None);
        }
        Ok(Some(ParsedLine {
            sample: source_sample(
                manifest,
                default_id(manifest, line_no),
                text.to_string(),
                Annotations::TargetText(String::new()),
            ),
            warnings: Vec::new(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvDiagnostic {
    pub segment_index: usize,
    pub segment: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvParse {
    pub pairs: Vec<(String, String)>,
    pub diagnostics: Vec<KvDiagnostic>,
}

/// Parses `#key#:#value#;` segments. Segments that do not match, including
/// keys or values containing `#`, are reported in `diagnostics`.
pub fn parse_attribute_kv(text: &str) -> KvParse {
    let mut out = KvParse::default();
    for (segment_index, raw) in text.split(';').enumerate() {
        let segment = raw.trim();
        if segment.is_empty() {
            continue;
        }
        match parse_kv_segment(segment) {
            Some(pair) => out.pairs.push(pair),
            None => out.diagnostics.push(KvDiagnostic {
                segment_index,
                segment: segment.to_string(),
            }),
        }
    }
    out
}

fn parse_kv_segment(segment: &str) -> Option<(String, String)> {
    let inner = segment.strip_prefix('#')?.strip_suffix('#')?;
    let (key, value) = inner.split_once("#:#")?;
    if key.is_empty() || key.contains('#') || value.contains('#') {
        return None;
    }
    Some((key.to_string(), value.to_string()))
}

pub fn serialize_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("#{k}#:#{v}#;")).collect()
}
