//! Shared domain types: samples, task specs, rendered instruction records.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::eval::TokenizerMode;
use crate::ingest::DatasetManifest;
use crate::render::template;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    #[serde(rename = "CLS")]
    Cls,
    #[serde(rename = "EXT")]
    Ext,
    #[serde(rename = "GEN")]
    Gen,
    /// NER-style tasks: part extraction, part generation (the negative token).
    #[serde(rename = "OTHER")]
    Other,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::Cls, Paradigm::Ext, Paradigm::Gen, Paradigm::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Cls => "CLS",
            Paradigm::Ext => "EXT",
            Paradigm::Gen => "GEN",
            Paradigm::Other => "OTHER",
        }
    }

    /// Annotation variants a dataset of this paradigm may carry.
    pub fn accepts(self, kind: AnnotationKind) -> bool {
        use AnnotationKind::*;
        match self {
            Paradigm::Cls => matches!(kind, ClassLabels | MatchPair),
            Paradigm::Ext => matches!(kind, Spans | QaPair | AttributeKv | TargetText | InputOnly),
            Paradigm::Gen => matches!(kind, TargetText | QaPair | InputOnly),
            Paradigm::Other => matches!(kind, Spans),
        }
    }

    /// Whether the task carries a candidate-label component and is scored with P/R/F1.
    pub fn is_labelled(self) -> bool {
        matches!(self, Paradigm::Cls | Paradigm::Other)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "ZH")]
    Zh,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::En, Language::Zh];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Zh => "ZH",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LabelSource {
    #[default]
    #[serde(rename = "GOLDEN")]
    Golden,
    #[serde(rename = "PSEUDO")]
    Pseudo,
}

/// A labelled character span. Offsets count Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub label: String,
}

impl SpanAnnotation {
    pub fn new(start: usize, end: usize, surface: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            surface: surface.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Product {
    pub title: String,
    #[serde(default)]
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Annotations {
    ClassLabels(Vec<String>),
    Spans(Vec<SpanAnnotation>),
    QaPair { question: String, answer: String },
    TargetText(String),
    AttributeKv(Vec<(String, String)>),
    MatchPair {
        product_a: Product,
        product_b: Product,
        is_match: bool,
    },
}

impl Annotations {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            Annotations::ClassLabels(_) => AnnotationKind::ClassLabels,
            Annotations::Spans(_) => AnnotationKind::Spans,
            Annotations::QaPair { .. } => AnnotationKind::QaPair,
            Annotations::TargetText(t) if t.is_empty() => AnnotationKind::InputOnly,
            Annotations::TargetText(_) => AnnotationKind::TargetText,
            Annotations::AttributeKv(_) => AnnotationKind::AttributeKv,
            Annotations::MatchPair { .. } => AnnotationKind::MatchPair,
        }
    }
}

/// Annotation variant declared by a dataset manifest. `InputOnly` datasets
/// carry an empty `TargetText` until pseudo-labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    ClassLabels,
    Spans,
    QaPair,
    TargetText,
    AttributeKv,
    MatchPair,
    InputOnly,
}

impl AnnotationKind {
    pub fn default_for(paradigm: Paradigm) -> Self {
        match paradigm {
            Paradigm::Cls => AnnotationKind::ClassLabels,
            Paradigm::Ext => AnnotationKind::QaPair,
            Paradigm::Gen => AnnotationKind::TargetText,
            Paradigm::Other => AnnotationKind::Spans,
        }
    }

    /// A sample annotation of `actual` kind is acceptable for a dataset
    /// declaring `self`. Input-only datasets accept only empty targets; target
    /// datasets tolerate an empty target (it is rejected later as a null output).
    fn admits(self, actual: AnnotationKind) -> bool {
        self == actual || (self == AnnotationKind::TargetText && actual == AnnotationKind::InputOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub dataset_id: String,
    pub language: Language,
    pub input_text: String,
    pub annotations: Annotations,
    #[serde(default)]
    pub label_source: LabelSource,
    #[serde(default)]
    pub lineage: Vec<String>,
    /// Ids of the original source records this sample was derived from.
    /// Empty for source records.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_ids: Vec<String>,
}

impl RawSample {
    /// Original source record ids; a source record is its own source.
    pub fn root_sources(&self) -> Vec<String> {
        if self.source_ids.is_empty() {
            vec![self.id.clone()]
        } else {
            self.source_ids.clone()
        }
    }

    /// A new sample derived from `self` by `transform`.
    pub fn derive(
        &self,
        id: String,
        dataset_id: &str,
        input_text: String,
        annotations: Annotations,
        transform: &str,
    ) -> RawSample {
        let mut lineage = self.lineage.clone();
        lineage.push(transform.to_string());
        RawSample {
            id,
            dataset_id: dataset_id.to_string(),
            language: self.language,
            input_text,
            annotations,
            label_source: self.label_source,
            lineage,
            source_ids: self.root_sources(),
        }
    }
}

/// Slice `text` by Unicode scalar offsets `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let byte_start = indices.nth(start)?;
    let byte_end = if end == start {
        byte_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[byte_start..byte_end])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    DatasetMismatch { expected: String, found: String },
    LanguageMismatch,
    OffsetOutOfRange { index: usize },
    SurfaceMismatch { index: usize },
    ParadigmMismatch { paradigm: Paradigm, kind: AnnotationKind },
    UnknownLabel(String),
    PseudoAtIngestion,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::DatasetMismatch { expected, found } => {
                write!(f, "dataset mismatch: expected {expected}, found {found}")
            }
            Violation::LanguageMismatch => write!(f, "language mismatch"),
            Violation::OffsetOutOfRange { index } => write!(f, "out-of-range offsets (span {index})"),
            Violation::SurfaceMismatch { index } => write!(f, "surface mismatch (span {index})"),
            Violation::ParadigmMismatch { paradigm, kind } => {
                write!(f, "paradigm/annotation mismatch ({paradigm} with {kind:?})")
            }
            Violation::UnknownLabel(l) => write!(f, "label {l:?} not in dataset label set"),
            Violation::PseudoAtIngestion => write!(f, "pseudo label source on a source record"),
        }
    }
}

/// Checks a sample against its dataset's declared shape. An empty result means valid.
pub fn validate_sample(sample: &RawSample, dataset: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    if sample.id.is_empty() {
        out.push(Violation::EmptyId);
    }
    if sample.dataset_id != dataset.dataset_id {
        out.push(Violation::DatasetMismatch {
            expected: dataset.dataset_id.clone(),
            found: sample.dataset_id.clone(),
        });
    }
    if sample.language != dataset.language {
        out.push(Violation::LanguageMismatch);
    }
    let kind = sample.annotations.kind();
    let declared = dataset.annotation_kind();
    if !dataset.paradigm.accepts(kind) || !declared.admits(kind) {
        out.push(Violation::ParadigmMismatch {
            paradigm: dataset.paradigm,
            kind,
        });
    }
    if let Annotations::Spans(spans) = &sample.annotations {
        out.extend(span_violations(&sample.input_text, spans));
    }
    if let Some(labels) = &dataset.labels {
        let used: Vec<&str> = match &sample.annotations {
            Annotations::ClassLabels(ls) => ls.iter().map(String::as_str).collect(),
            Annotations::Spans(spans) => spans.iter().map(|s| s.label.as_str()).collect(),
            _ => Vec::new(),
        };
        for l in used {
            if !labels.iter().any(|known| known == l) {
                out.push(Violation::UnknownLabel(l.to_string()));
            }
        }
    }
    out
}

/// Offset and slice-equality checks for a span list.
pub fn span_violations(text: &str, spans: &[SpanAnnotation]) -> Vec<Violation> {
    let len = text.chars().count();
    let mut out = Vec::new();
    for (index, span) in spans.iter().enumerate() {
        if span.start >= span.end || span.end > len {
            out.push(Violation::OffsetOutOfRange { index });
        } else if char_slice(text, span.start, span.end) != Some(span.surface.as_str()) {
            out.push(Violation::SurfaceMismatch { index });
        }
    }
    out
}

/// Serialization settings for gold outputs and candidate lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderRules {
    /// Between span pairs.
    pub pair_separator: String,
    /// Inside a span pair, between label and surface.
    pub kv_separator: String,
    pub negative_token: String,
    pub label_join: String,
    pub yes_token: String,
    pub no_token: String,
    pub candidate_prefix: String,
}

impl Default for RenderRules {
    fn default() -> Self {
        Self {
            pair_separator: "\n".into(),
            kv_separator: ": ".into(),
            negative_token: "None".into(),
            label_join: ", ".into(),
            yes_token: "Yes".into(),
            no_token: "No".into(),
            candidate_prefix: "Candidate Labels".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseRules {
    /// Case-insensitive label matching; defaults to true for EN, false for ZH.
    pub case_insensitive: Option<bool>,
    /// ROUGE-L tokenization; defaults to WORD for EN, CHAR for ZH.
    pub tokenizer: Option<TokenizerMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub dataset_id: String,
    pub paradigm: Paradigm,
    pub language: Language,
    pub task_description: String,
    pub prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_constraints: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_labels: Option<Vec<String>>,
    #[serde(default)]
    pub render_rules: RenderRules,
    #[serde(default)]
    pub parse_rules: ParseRules,
    /// Generalization level used for report rollups (e.g. "held_in").
    #[serde(default = "default_level")]
    pub level: String,
}

pub(crate) fn default_level() -> String {
    "held_in".to_string()
}

impl TaskSpec {
    pub fn case_insensitive(&self) -> bool {
        self.parse_rules
            .case_insensitive
            .unwrap_or(self.language == Language::En)
    }

    pub fn tokenizer(&self) -> TokenizerMode {
        self.parse_rules
            .tokenizer
            .unwrap_or_else(|| TokenizerMode::default_for(self.language))
    }

    /// Invariant check; returns human-readable problems.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.task_id.is_empty() {
            out.push("empty task_id".to_string());
        }
        if self.prompts.is_empty() {
            out.push("prompts must be non-empty".to_string());
        }
        let has_labels = self.candidate_labels.as_ref().is_some_and(|l| !l.is_empty());
        if has_labels != self.paradigm.is_labelled() {
            out.push(format!(
                "candidate_labels must be present iff paradigm is CLS or OTHER (paradigm {})",
                self.paradigm
            ));
        }
        let templates = std::iter::once(&self.task_description)
            .chain(self.prompts.iter())
            .chain(self.output_constraints.iter());
        for t in templates {
            for name in template::placeholders(t) {
                if !template::VOCABULARY.contains(&name.as_str()) {
                    out.push(format!("undeclared placeholder {{{name}}}"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub sample_id: String,
    pub source_ids: Vec<String>,
    pub lineage: Vec<String>,
    pub label_source: LabelSource,
}

/// A rendered instruction instance: six schema components plus lineage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub record_id: String,
    pub task_id: String,
    pub task_description: String,
    pub prompt: String,
    pub input_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_constraints: Option<String>,
    pub output: String,
    pub provenance: Provenance,
}

impl InstructionRecord {
    /// The model-facing instruction text. Components appear in schema order,
    /// one per line: description, prompt, input, candidates, constraints.
    pub fn model_input(&self, candidate_prefix: &str) -> String {
        let mut parts = vec![
            self.task_description.clone(),
            self.prompt.clone(),
            format!("Input: {}", self.input_text),
        ];
        if let Some(labels) = &self.candidate_labels {
            parts.push(format!("{candidate_prefix}: {}", labels.join(", ")));
        }
        if let Some(c) = &self.output_constraints {
            parts.push(c.clone());
        }
        parts.join("\n")
    }
}

/// Stable record id over (task, sample, sources, prompt index, lineage).
pub fn record_id(task_id: &str, sample_id: &str, source_ids: &[String], prompt_index: usize, lineage: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(task_id.as_bytes());
    h.update([0]);
    h.update(sample_id.as_bytes());
    h.update([0]);
    for s in source_ids {
        h.update(s.as_bytes());
        h.update([0x1f]);
    }
    h.update([0]);
    h.update((prompt_index as u64).to_le_bytes());
    for l in lineage {
        h.update(l.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(&h.finalize()[..16])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DataType, DatasetManifest};
    use proptest::prelude::*;

    fn manifest(paradigm: Paradigm, labels: Option<Vec<&str>>) -> DatasetManifest {
        DatasetManifest {
            dataset_id: "d".into(),
            paradigm,
            language: Language::En,
            source: "unused".into(),
            adapter: "canonical".into(),
            labels: labels.map(|ls| ls.into_iter().map(String::from).collect()),
            data_type: DataType::Other,
            annotation: None,
        }
    }

    fn span_sample(spans: Vec<SpanAnnotation>) -> RawSample {
        RawSample {
            id: "s1".into(),
            dataset_id: "d".into(),
            language: Language::En,
            input_text: "red shoes".into(),
            annotations: Annotations::Spans(spans),
            label_source: LabelSource::Golden,
            lineage: vec![],
            source_ids: vec![],
        }
    }

    #[test]
    fn matching_span_is_valid() {
        let s = span_sample(vec![SpanAnnotation::new(0, 3, "red", "COLOR")]);
        assert!(validate_sample(&s, &manifest(Paradigm::Other, None)).is_empty());
    }

    #[test]
    fn surface_mismatch_is_reported() {
        let s = span_sample(vec![SpanAnnotation::new(0, 3, "blue", "COLOR")]);
        let v = validate_sample(&s, &manifest(Paradigm::Other, None));
        assert_eq!(v, vec![Violation::SurfaceMismatch { index: 0 }]);
        assert!(v[0].to_string().starts_with("surface mismatch"));
    }

    #[test]
    fn spans_under_cls_is_a_paradigm_mismatch() {
        let s = span_sample(vec![SpanAnnotation::new(0, 3, "red", "COLOR")]);
        let v = validate_sample(&s, &manifest(Paradigm::Cls, Some(vec!["COLOR"])));
        assert!(v.iter().any(|x| matches!(x, Violation::ParadigmMismatch { .. })));
        assert!(v.iter().any(|x| x.to_string().starts_with("paradigm/annotation mismatch")));
    }

    #[test]
    fn out_of_range_and_unknown_label() {
        let s = span_sample(vec![SpanAnnotation::new(5, 40, "x", "SIZE")]);
        let v = validate_sample(&s, &manifest(Paradigm::Other, Some(vec!["COLOR"])));
        assert!(v.contains(&Violation::OffsetOutOfRange { index: 0 }));
        assert!(v.contains(&Violation::UnknownLabel("SIZE".into())));
    }

    #[test]
    fn char_slice_counts_scalars() {
        let t = "撞色拼接的领口";
        assert_eq!(char_slice(t, 0, 2), Some("撞色"));
        assert_eq!(char_slice(t, 5, 7), Some("领口"));
        assert_eq!(char_slice(t, 7, 7), Some(""));
        assert_eq!(char_slice(t, 6, 8), None);
    }

    #[test]
    fn record_id_is_stable_and_sensitive() {
        let a = record_id("t", "s", &["s".into()], 0, &[]);
        assert_eq!(a, record_id("t", "s", &["s".into()], 0, &[]));
        assert_ne!(a, record_id("t", "s", &["s".into()], 1, &[]));
        assert_eq!(a.len(), 32);
    }

    proptest! {
        #[test]
        fn generated_spans_satisfy_slice_equality(
            text in "[a-z\u{4e00}-\u{4e20} ]{1,30}",
            a in 0usize..30,
            b in 0usize..30,
        ) {
            let len = text.chars().count();
            let (start, end) = (a.min(b) % len, (a.max(b) % len) + 1);
            prop_assume!(start < end);
            let surface = char_slice(&text, start, end).unwrap().to_string();
            let mut s = span_sample(vec![SpanAnnotation::new(start, end, surface, "L")]);
            s.input_text = text;
            let m = manifest(Paradigm::Other, None);
            prop_assert!(validate_sample(&s, &m).is_empty());
            prop_assert_eq!(validate_sample(&s, &m), validate_sample(&s, &m));
        }
    }
}
