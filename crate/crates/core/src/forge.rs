//! Atomic-task derivation: atomic tasks built from source samples by
//! simplification, reversal and recombination, plus input-only tasks that are
//! pseudo-labelled downstream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::corpus::{
    AnnotationKind, Annotations, Language, Paradigm, ParseRules, Product, RawSample, RenderRules, SpanAnnotation,
    TaskSpec,
};
use crate::ingest::{DataType, DatasetManifest};
use crate::seed;

pub const SIMPLIFY_NER: &str = "simplify_ner";
pub const REVERSE: &str = "reverse";
pub const RECOMBINE_MATCHING: &str = "recombine_matching";
pub const PSEUDO_LABEL: &str = "pseudo_label";

const BUILTIN_CATALOG: &str = include_str!("catalog.toml");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForgeError {
    #[error("sample {id}: {kind:?} annotations cannot be {transform}")]
    NotApplicable {
        id: String,
        kind: AnnotationKind,
        transform: &'static str,
    },
    #[error("catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    #[default]
    None,
    SourceLabels,
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub transform: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub when_annotation: Option<AnnotationKind>,
    #[serde(default)]
    pub when_data_type: Option<DataType>,
    pub paradigm: Paradigm,
    pub task_description: String,
    pub prompts: Vec<String>,
    #[serde(default)]
    pub output_constraints: Option<String>,
    #[serde(default)]
    pub candidates: CandidateSource,
    #[serde(default)]
    pub level: Option<String>,
}

impl CatalogEntry {
    fn applies_to(&self, m: &DatasetManifest) -> bool {
        let has_condition = self.when_annotation.is_some() || self.when_data_type.is_some();
        let annotation_ok = self.when_annotation.is_none_or(|k| k == m.annotation_kind());
        let data_type_ok = self.when_data_type.is_none_or(|d| d == m.data_type);
        let labels_ok = self.candidates != CandidateSource::SourceLabels
            || m.labels.as_ref().is_some_and(|l| !l.is_empty());
        has_condition && annotation_ok && data_type_ok && labels_ok
    }
}

/// The atomic-task catalog, one entry per derivable task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(rename = "entry")]
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn builtin() -> Catalog {
        Catalog::from_toml(BUILTIN_CATALOG).expect("built-in catalog parses")
    }

    pub fn from_toml(text: &str) -> Result<Catalog, ForgeError> {
        let c: Catalog = toml::from_str(text).map_err(|e| ForgeError::Catalog(e.to_string()))?;
        for e in &c.entries {
            if ![SIMPLIFY_NER, REVERSE, RECOMBINE_MATCHING, PSEUDO_LABEL].contains(&e.transform.as_str()) {
                return Err(ForgeError::Catalog(format!("entry {}: unknown transform {:?}", e.name, e.transform)));
            }
        }
        Ok(c)
    }

    fn applicable<'a>(&'a self, m: &'a DatasetManifest) -> impl Iterator<Item = &'a CatalogEntry> + 'a {
        self.entries.iter().filter(move |e| e.applies_to(m))
    }
}

pub fn derived_task_id(dataset_id: &str, entry_name: &str) -> String {
    format!("{dataset_id}.{entry_name}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub transform: String,
    pub task_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub dataset_id: String,
    #[serde(default)]
    pub steps: Vec<PlanStep>,
}

impl TransformPlan {
    pub fn contains(&self, transform: &str) -> bool {
        self.steps.iter().any(|s| s.transform == transform)
    }
}

/// Every catalog entry applicable to the dataset's annotation kind and data type.
pub fn plan_atomic_tasks(manifest: &DatasetManifest, catalog: &Catalog) -> TransformPlan {
    TransformPlan {
        dataset_id: manifest.dataset_id.clone(),
        steps: catalog
            .applicable(manifest)
            .map(|e| PlanStep {
                transform: e.transform.clone(),
                task_id: derived_task_id(&manifest.dataset_id, &e.name),
                params: e.params.clone(),
            })
            .collect(),
    }
}

/// Task specs for the derived tasks of a dataset.
pub fn derived_specs(manifest: &DatasetManifest, catalog: &Catalog) -> Vec<TaskSpec> {
    catalog
        .applicable(manifest)
        .map(|e| {
            let task_id = derived_task_id(&manifest.dataset_id, &e.name);
            let render_rules = RenderRules::default();
            let candidate_labels = match e.candidates {
                CandidateSource::None => None,
                CandidateSource::SourceLabels => manifest.labels.clone(),
                CandidateSource::YesNo => Some(vec![render_rules.yes_token.clone(), render_rules.no_token.clone()]),
            };
            TaskSpec {
                dataset_id: task_id.clone(),
                task_id,
                paradigm: e.paradigm,
                language: manifest.language,
                task_description: e.task_description.clone(),
                prompts: e.prompts.clone(),
                output_constraints: e.output_constraints.clone(),
                candidate_labels,
                render_rules,
                parse_rules: ParseRules::default(),
                level: e.level.clone().unwrap_or_else(crate::corpus::default_level),
            }
        })
        .collect()
}

fn ordered_spans(spans: &[SpanAnnotation]) -> Vec<SpanAnnotation> {
    let mut out = spans.to_vec();
    out.sort_by_key(|s| (s.start, s.end));
    out
}

/// Marks the entity for a typing sample: appended after the text so span
/// offsets into the original text stay valid.
pub fn typing_input(text: &str, surface: &str) -> String {
    format!("{text}\nEntity: {surface}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerSimplified {
    pub detection: RawSample,
    pub typing: Vec<RawSample>,
}

/// One span-detection sample (labels erased, offset order) and one typing
/// sample per span.
pub fn simplify_ner(sample: &RawSample, detection_task: &str, typing_task: &str) -> Result<NerSimplified, ForgeError> {
    let Annotations::Spans(spans) = &sample.annotations else {
        return Err(ForgeError::NotApplicable {
            id: sample.id.clone(),
            kind: sample.annotations.kind(),
            transform: SIMPLIFY_NER,
        });
    };
    let ordered = ordered_spans(spans);
    let erased = ordered
        .iter()
        .map(|s| SpanAnnotation::new(s.start, s.end, s.surface.clone(), ""))
        .collect();
    let detection = sample.derive(
        format!("{}::detect", sample.id),
        detection_task,
        sample.input_text.clone(),
        Annotations::Spans(erased),
        SIMPLIFY_NER,
    );
    let typing = ordered
        .into_iter()
        .enumerate()
        .map(|(k, span)| {
            sample.derive(
                format!("{}::type::{k}", sample.id),
                typing_task,
                typing_input(&sample.input_text, &span.surface),
                Annotations::Spans(vec![span]),
                SIMPLIFY_NER,
            )
        })
        .collect();
    Ok(NerSimplified { detection, typing })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReversalSpec {
    /// Dataset id of the derived samples.
    pub task_id: String,
    /// Put between the context and the answer in question-generation inputs.
    pub answer_marker: String,
}

impl ReversalSpec {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            answer_marker: "\nAnswer: ".into(),
        }
    }
}

/// QA → question generation (context + answer in, question out); paired
/// text → the swapped pair.
pub fn reverse_task(sample: &RawSample, direction: &ReversalSpec) -> Result<RawSample, ForgeError> {
    let (input, target) = match &sample.annotations {
        Annotations::QaPair { question, answer } => (
            format!("{}{}{}", sample.input_text, direction.answer_marker, answer),
            question.clone(),
        ),
        Annotations::TargetText(t) if !t.is_empty() => (t.clone(), sample.input_text.clone()),
        other => {
            return Err(ForgeError::NotApplicable {
                id: sample.id.clone(),
                kind: other.kind(),
                transform: REVERSE,
            })
        }
    };
    Ok(sample.derive(
        format!("{}::reverse", sample.id),
        &direction.task_id,
        input,
        Annotations::TargetText(target),
        REVERSE,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecombineOutcome {
    pub samples: Vec<RawSample>,
    pub diagnostics: Vec<String>,
}

fn match_input(title: &str, attr: &(String, String)) -> String {
    format!("Title: {title}\nAttribute: {}: {}", attr.0, attr.1)
}

/// Title/attribute matching built from product-matching pairs.
///
/// Each attribute of product A yields a positive (A's title, that attribute)
/// and a negative (A's title, an attribute drawn uniformly from another
/// sample's product A). Attributes identical to one of A's own are never
/// drawn. Positives without an available negative are dropped with a
/// diagnostic, so positives and negatives stay balanced; a batch of fewer than
/// two samples yields positives only.
pub fn recombine_matching(samples: &[RawSample], seed_value: u64, task_id: &str) -> Result<RecombineOutcome, ForgeError> {
    let mut products = Vec::with_capacity(samples.len());
    for s in samples {
        match &s.annotations {
            Annotations::MatchPair { product_a, .. } => products.push(product_a),
            other => {
                return Err(ForgeError::NotApplicable {
                    id: s.id.clone(),
                    kind: other.kind(),
                    transform: RECOMBINE_MATCHING,
                })
            }
        }
    }
    let mut out = RecombineOutcome::default();
    let build = |s: &RawSample, title: &str, attr: &(String, String), is_match: bool, id: String, extra: &[String]| {
        let annotations = Annotations::MatchPair {
            product_a: Product {
                title: title.to_string(),
                attributes: Vec::new(),
            },
            product_b: Product {
                title: String::new(),
                attributes: vec![attr.clone()],
            },
            is_match,
        };
        let mut d = s.derive(id, task_id, match_input(title, attr), annotations, RECOMBINE_MATCHING);
        for e in extra {
            if !d.source_ids.contains(e) {
                d.source_ids.push(e.clone());
            }
        }
        d
    };
    if samples.len() < 2 {
        out.diagnostics
            .push(format!("batch of {} cannot build negatives; positives only", samples.len()));
        for (s, p) in samples.iter().zip(&products) {
            for (j, attr) in p.attributes.iter().enumerate() {
                out.samples
                    .push(build(s, &p.title, attr, true, format!("{}::match_pos::{j}", s.id), &[]));
            }
        }
        return Ok(out);
    }
    let mut rng = seed::rng(seed_value);
    for (i, (s, p)) in samples.iter().zip(&products).enumerate() {
        let pool: Vec<(usize, &(String, String))> = products
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .flat_map(|(k, other)| other.attributes.iter().map(move |a| (k, a)))
            .filter(|(_, a)| !p.attributes.contains(a))
            .collect();
        for (j, attr) in p.attributes.iter().enumerate() {
            if pool.is_empty() {
                out.diagnostics
                    .push(format!("{}: no foreign attribute for a negative; positive {j} dropped", s.id));
                continue;
            }
            let (k, neg_attr) = pool[rng.gen_range(0..pool.len())];
            out.samples
                .push(build(s, &p.title, attr, true, format!("{}::match_pos::{j}", s.id), &[]));
            out.samples.push(build(
                s,
                &p.title,
                neg_attr,
                false,
                format!("{}::match_neg::{j}", s.id),
                &samples[k].root_sources(),
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForgeOutcome {
    pub samples: Vec<RawSample>,
    pub diagnostics: Vec<String>,
}

/// Applies the non-pseudo steps of a plan to a dataset's samples. Derived
/// samples come out grouped by step, in source order within a step.
pub fn apply_plan(plan: &TransformPlan, samples: &[RawSample], seed_value: u64) -> ForgeOutcome {
    let mut out = ForgeOutcome::default();
    for step in &plan.steps {
        match step.transform.as_str() {
            SIMPLIFY_NER => {
                let typing = step.params.get("output").map(String::as_str) == Some("typing");
                for s in samples {
                    match simplify_ner(s, &step.task_id, &step.task_id) {
                        Ok(mut simplified) if typing => out.samples.append(&mut simplified.typing),
                        Ok(simplified) => out.samples.push(simplified.detection),
                        Err(e) => out.diagnostics.push(e.to_string()),
                    }
                }
            }
            REVERSE => {
                let spec = ReversalSpec::new(step.task_id.clone());
                for s in samples {
                    match reverse_task(s, &spec) {
                        Ok(r) => out.samples.push(r),
                        Err(e) => out.diagnostics.push(e.to_string()),
                    }
                }
            }
            RECOMBINE_MATCHING => {
                let step_seed = seed::derive(seed_value, &step.task_id);
                match recombine_matching(samples, step_seed, &step.task_id) {
                    Ok(mut r) => {
                        out.samples.append(&mut r.samples);
                        out.diagnostics.append(&mut r.diagnostics);
                    }
                    Err(e) => out.diagnostics.push(e.to_string()),
                }
            }
            _ => {}
        }
    }
    out
}

/// Language of a derived task equals that of its source; kept for callers
/// building specs by hand.
pub fn derived_language(manifest: &DatasetManifest) -> Language {
    manifest.language
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{char_slice, LabelSource};
    use crate::render::{render, serialize_output};

    fn ner_sample(text: &str, spans: Vec<SpanAnnotation>) -> RawSample {
        RawSample {
            id: "n1".into(),
            dataset_id: "ner".into(),
            language: Language::Zh,
            input_text: text.into(),
            annotations: Annotations::Spans(spans),
            label_source: LabelSource::Golden,
            lineage: vec![],
            source_ids: vec![],
        }
    }

    fn manifest(annotation: AnnotationKind, data_type: DataType, labels: Option<Vec<&str>>) -> DatasetManifest {
        DatasetManifest {
            dataset_id: "ds".into(),
            paradigm: match annotation {
                AnnotationKind::Spans => Paradigm::Other,
                AnnotationKind::MatchPair => Paradigm::Cls,
                AnnotationKind::QaPair => Paradigm::Ext,
                _ => Paradigm::Gen,
            },
            language: Language::En,
            source: "x".into(),
            adapter: "canonical".into(),
            labels: labels.map(|l| l.into_iter().map(String::from).collect()),
            data_type,
            annotation: Some(annotation),
        }
    }

    #[test]
    fn typing_sample_renders_attribute_pair() {
        let s = ner_sample("撞色拼接的领口以及大口袋", vec![SpanAnnotation::new(0, 2, "撞色", "图案")]);
        let out = simplify_ner(&s, "ner.entity_detection", "ner.entity_typing").unwrap();
        assert_eq!(out.typing.len(), 1);
        let t = &out.typing[0];
        assert_eq!(serialize_output(&t.annotations, Paradigm::Other, &RenderRules::default()), "图案: 撞色");
        assert_eq!(t.input_text, "撞色拼接的领口以及大口袋\nEntity: 撞色");
        assert_eq!(t.lineage, vec![SIMPLIFY_NER.to_string()]);
        assert_eq!(t.source_ids, vec!["n1".to_string()]);

        let m = manifest(AnnotationKind::Spans, DataType::ProductInfo, Some(vec!["图案"]));
        let specs = derived_specs(&m, &Catalog::builtin());
        let typing_spec = specs.iter().find(|s| s.task_id == "ds.entity_typing").unwrap();
        let rec = render(t, typing_spec, 0).unwrap();
        assert_eq!(rec.output, "图案: 撞色");
        assert!(rec.prompt.contains("\"撞色\""));
    }

    #[test]
    fn zero_spans_gives_detection_only() {
        let s = ner_sample("没有实体", vec![]);
        let out = simplify_ner(&s, "d", "t").unwrap();
        assert!(out.typing.is_empty());
        assert_eq!(
            serialize_output(&out.detection.annotations, Paradigm::Ext, &RenderRules::default()),
            "None"
        );
    }

    #[test]
    fn detection_targets_in_offset_order() {
        let s = ner_sample(
            "abcdefghij",
            vec![SpanAnnotation::new(5, 7, "fg", "X"), SpanAnnotation::new(1, 3, "bc", "Y")],
        );
        let out = simplify_ner(&s, "d", "t").unwrap();
        let Annotations::Spans(d) = &out.detection.annotations else { panic!() };
        assert_eq!(d.iter().map(|s| s.start).collect::<Vec<_>>(), vec![1, 5]);
        assert!(d.iter().all(|s| s.label.is_empty()));
        assert_eq!(serialize_output(&out.detection.annotations, Paradigm::Ext, &RenderRules::default()), "bc\nfg");
        for t in &out.typing {
            let Annotations::Spans(sp) = &t.annotations else { panic!() };
            assert_eq!(char_slice(&t.input_text, sp[0].start, sp[0].end), Some(sp[0].surface.as_str()));
        }
    }

    #[test]
    fn qa_reversal() {
        let s = RawSample {
            annotations: Annotations::QaPair {
                question: "电池续航多久?".into(),
                answer: "10小时".into(),
            },
            input_text: "电池很耐用，充满能用10小时".into(),
            ..ner_sample("", vec![])
        };
        let r = reverse_task(&s, &ReversalSpec::new("qa.question_generation")).unwrap();
        assert_eq!(r.annotations, Annotations::TargetText("电池续航多久?".into()));
        assert!(r.input_text.starts_with("电池很耐用"));
        assert!(r.input_text.ends_with("10小时"));
        assert!(r.input_text.contains("Answer: 10小时"));
        assert_eq!(r.lineage, vec![REVERSE.to_string()]);
    }

    #[test]
    fn target_text_reversal_is_an_involution() {
        let s = RawSample {
            annotations: Annotations::TargetText("a long product description".into()),
            input_text: "Short Title".into(),
            ..ner_sample("", vec![])
        };
        let spec = ReversalSpec::new("r");
        let once = reverse_task(&s, &spec).unwrap();
        assert_eq!(once.input_text, "a long product description");
        let twice = reverse_task(&once, &spec).unwrap();
        assert_eq!((twice.input_text, twice.annotations), (s.input_text, s.annotations));
        assert!(reverse_task(&ner_sample("x", vec![]), &spec).is_err());
    }

    fn product_sample(id: &str, title: &str, attrs: &[(&str, &str)]) -> RawSample {
        let product = Product {
            title: title.into(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        };
        RawSample {
            id: id.into(),
            dataset_id: "match".into(),
            language: Language::En,
            input_text: title.into(),
            annotations: Annotations::MatchPair {
                product_a: product.clone(),
                product_b: product,
                is_match: true,
            },
            label_source: LabelSource::Golden,
            lineage: vec![],
            source_ids: vec![],
        }
    }

    #[test]
    fn recombination_balanced_and_deterministic() {
        let batch = vec![
            product_sample("p1", "Cast iron wok", &[("material", "cast iron"), ("size", "32cm")]),
            product_sample("p2", "Cotton shirt", &[("material", "cotton"), ("color", "blue")]),
        ];
        let a = recombine_matching(&batch, 7, "m").unwrap();
        let b = recombine_matching(&batch, 7, "m").unwrap();
        assert_eq!(a, b);
        let is_match = |s: &RawSample| matches!(s.annotations, Annotations::MatchPair { is_match: true, .. });
        let pos = a.samples.iter().filter(|s| is_match(s)).count();
        assert_eq!(pos, 4);
        assert_eq!(a.samples.len(), 8);
        for s in a.samples.iter().filter(|s| !is_match(s)) {
            let own = if s.id.starts_with("p1") { "p1" } else { "p2" };
            let other = if own == "p1" { "p2" } else { "p1" };
            assert!(s.source_ids.contains(&other.to_string()));
            let Annotations::MatchPair { product_b, .. } = &s.annotations else { panic!() };
            let Annotations::MatchPair { product_a: own_p, .. } = &batch.iter().find(|b| b.id == own).unwrap().annotations
            else {
                panic!()
            };
            assert!(!own_p.attributes.contains(&product_b.attributes[0]));
        }
    }

    #[test]
    fn single_product_gives_positives_only() {
        let out = recombine_matching(&[product_sample("p1", "Wok", &[("a", "b")])], 7, "m").unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn plans_from_rule_table() {
        let cat = Catalog::builtin();
        let ner = plan_atomic_tasks(&manifest(AnnotationKind::Spans, DataType::Address, Some(vec!["城市"])), &cat);
        let ner_steps: Vec<_> = ner.steps.iter().filter(|s| s.transform == SIMPLIFY_NER).collect();
        assert_eq!(ner_steps.len(), 2);
        assert_ne!(ner_steps[0].task_id, ner_steps[1].task_id);

        let q = plan_atomic_tasks(&manifest(AnnotationKind::InputOnly, DataType::SearchQuery, None), &cat);
        let ids: Vec<_> = q.steps.iter().map(|s| s.task_id.as_str()).collect();
        assert_eq!(ids, ["ds.query_rewriting", "ds.query_segmentation", "ds.query_question_generation"]);
        assert!(q.steps.iter().all(|s| s.transform == PSEUDO_LABEL));

        let g = plan_atomic_tasks(&manifest(AnnotationKind::TargetText, DataType::ProductInfo, None), &cat);
        assert!(g.contains(REVERSE));
        let toml_text = toml::to_string(&g).unwrap();
        assert_eq!(toml::from_str::<TransformPlan>(&toml_text).unwrap(), g);
    }

    #[test]
    fn derived_specs_are_valid() {
        let cat = Catalog::builtin();
        for kind in [
            AnnotationKind::Spans,
            AnnotationKind::QaPair,
            AnnotationKind::TargetText,
            AnnotationKind::MatchPair,
            AnnotationKind::InputOnly,
        ] {
            let m = manifest(kind, DataType::SearchQuery, Some(vec!["L"]));
            for spec in derived_specs(&m, &cat) {
                assert!(spec.validate().is_empty(), "{}: {:?}", spec.task_id, spec.validate());
            }
        }
    }

    #[test]
    fn unknown_transform_rejected() {
        let bad = "[[entry]]\nname='x'\ntransform='nope'\nparadigm='GEN'\ntask_description='d'\nprompts=['p']\nwhen_data_type='other'\n";
        assert!(Catalog::from_toml(bad).is_err());
    }
}
