//! Sample + task spec → instruction record.

pub mod template;

use rand::Rng;

use crate::corpus::{
    record_id, AnnotationKind, Annotations, InstructionRecord, Paradigm, Provenance, RawSample, RenderRules,
    TaskSpec,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("task {task_id}: {kind:?} annotations do not fit paradigm {paradigm}")]
    ParadigmMismatch {
        task_id: String,
        paradigm: Paradigm,
        kind: AnnotationKind,
    },
    #[error("task {task_id}: prompt index {index} out of range ({count} prompts)")]
    PromptIndex { task_id: String, index: usize, count: usize },
    #[error("task {task_id}: placeholder {{{name}}} has no binding")]
    UnresolvedPlaceholder { task_id: String, name: String },
    #[error("task {task_id}: empty {component}")]
    EmptyComponent { task_id: String, component: &'static str },
}

/// Renders one sample under `spec` with the prompt at `prompt_index`.
///
/// Components: task description, prompt, input text, candidate labels and
/// output constraints (only when the spec declares them), output. The
/// output may be empty for input-only samples; the quality gate rejects it.
pub fn render(sample: &RawSample, spec: &TaskSpec, prompt_index: usize) -> Result<InstructionRecord, RenderError> {
    let kind = sample.annotations.kind();
    if !spec.paradigm.accepts(kind) {
        return Err(RenderError::ParadigmMismatch {
            task_id: spec.task_id.clone(),
            paradigm: spec.paradigm,
            kind,
        });
    }
    let prompt_template = spec.prompts.get(prompt_index).ok_or_else(|| RenderError::PromptIndex {
        task_id: spec.task_id.clone(),
        index: prompt_index,
        count: spec.prompts.len(),
    })?;
    let rules = &spec.render_rules;
    let candidates = spec.candidate_labels.as_ref().map(|c| c.join(&rules.label_join));
    let entity = match &sample.annotations {
        Annotations::Spans(spans) if spans.len() == 1 => Some(spans[0].surface.clone()),
        _ => None,
    };
    // QA inputs carry the question after the context.
    let input_text = match &sample.annotations {
        Annotations::QaPair { question, .. } => format!("{}\nQuestion: {question}", sample.input_text),
        _ => sample.input_text.clone(),
    };
    let bind = |name: &str| match name {
        "input" => Some(input_text.clone()),
        "candidates" => candidates.clone(),
        "constraints" => spec.output_constraints.clone(),
        "entity" => entity.clone(),
        _ => None,
    };
    let fill = |t: &str| {
        template::fill(t, bind).map_err(|name| RenderError::UnresolvedPlaceholder {
            task_id: spec.task_id.clone(),
            name,
        })
    };
    let task_description = fill(&spec.task_description)?;
    let prompt = fill(prompt_template)?;
    let output_constraints = match &spec.output_constraints {
        Some(c) => Some(template::fill(c, |n| if n == "constraints" { None } else { bind(n) }).map_err(|name| {
            RenderError::UnresolvedPlaceholder {
                task_id: spec.task_id.clone(),
                name,
            }
        })?),
        None => None,
    };
    for (component, value) in [
        ("task description", &task_description),
        ("prompt", &prompt),
        ("input text", &input_text),
    ] {
        if value.trim().is_empty() {
            return Err(RenderError::EmptyComponent {
                task_id: spec.task_id.clone(),
                component,
            });
        }
    }
    let source_ids = sample.root_sources();
    Ok(InstructionRecord {
        record_id: record_id(&spec.task_id, &sample.id, &source_ids, prompt_index, &sample.lineage),
        task_id: spec.task_id.clone(),
        task_description,
        prompt,
        input_text,
        candidate_labels: spec.candidate_labels.clone(),
        output_constraints,
        output: serialize_output(&sample.annotations, spec.paradigm, rules),
        provenance: Provenance {
            dataset_id: sample.dataset_id.clone(),
            sample_id: sample.id.clone(),
            source_ids,
            lineage: sample.lineage.clone(),
            label_source: sample.label_source,
        },
    })
}

/// Gold output text for an annotation.
///
/// Spans become one `label: surface` pair per line in offset order (a bare
/// surface when the label is erased); empty label or span lists become the
/// negative token.
pub fn serialize_output(annotations: &Annotations, _paradigm: Paradigm, rules: &RenderRules) -> String {
    match annotations {
        Annotations::ClassLabels(labels) if labels.is_empty() => rules.negative_token.clone(),
        Annotations::ClassLabels(labels) => labels.join(&rules.label_join),
        Annotations::Spans(spans) if spans.is_empty() => rules.negative_token.clone(),
        Annotations::Spans(spans) => {
            let mut ordered: Vec<_> = spans.iter().collect();
            ordered.sort_by_key(|s| (s.start, s.end));
            ordered
                .iter()
                .map(|s| {
                    if s.label.is_empty() {
                        s.surface.clone()
                    } else {
                        format!("{}{}{}", s.label, rules.kv_separator, s.surface)
                    }
                })
                .collect::<Vec<_>>()
                .join(&rules.pair_separator)
        }
        Annotations::QaPair { answer, .. } => answer.clone(),
        Annotations::TargetText(t) => t.clone(),
        Annotations::AttributeKv(pairs) if pairs.is_empty() => rules.negative_token.clone(),
        Annotations::AttributeKv(pairs) => pairs
            .iter()
            .map(|(k, v)| format!("{k}{}{v}", rules.kv_separator))
            .collect::<Vec<_>>()
            .join(&rules.pair_separator),
        Annotations::MatchPair { is_match: true, .. } => rules.yes_token.clone(),
        Annotations::MatchPair { is_match: false, .. } => rules.no_token.clone(),
    }
}

/// Uniform seeded prompt choice.
pub fn choose_prompt(spec: &TaskSpec, record_seed: u64) -> usize {
    match spec.prompts.len() {
        0 | 1 => 0,
        n => seed::rng(record_seed).gen_range(0..n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Language, LabelSource, ParseRules, SpanAnnotation};

    fn absa_spec() -> TaskSpec {
        TaskSpec {
            task_id: "absa_topic".into(),
            dataset_id: "absa".into(),
            paradigm: Paradigm::Cls,
            language: Language::En,
            task_description: "Review topic classification.".into(),
            prompts: vec!["Which topic does the review discuss?".into(), "Pick the topic of: {input}".into()],
            output_constraints: Some("Answer with one of {candidates}.".into()),
            candidate_labels: Some(vec![
                "Food".into(),
                "Price".into(),
                "Service".into(),
                "Ambience".into(),
                "Anecdotes/Miscellaneous".into(),
            ]),
            render_rules: RenderRules {
                candidate_prefix: "Candidate Topic".into(),
                ..RenderRules::default()
            },
            parse_rules: ParseRules::default(),
            level: "held_in".into(),
        }
    }

    fn sample(annotations: Annotations) -> RawSample {
        RawSample {
            id: "r1".into(),
            dataset_id: "absa".into(),
            language: Language::En,
            input_text: "My personal favorite is Nick and Joe's.".into(),
            annotations,
            label_source: LabelSource::Golden,
            lineage: vec![],
            source_ids: vec![],
        }
    }

    #[test]
    fn absa_classification_record() {
        let s = sample(Annotations::ClassLabels(vec!["Anecdotes/Miscellaneous".into()]));
        let rec = render(&s, &absa_spec(), 0).unwrap();
        assert_eq!(rec.output, "Anecdotes/Miscellaneous");
        assert_eq!(rec.candidate_labels.as_ref().unwrap().len(), 5);
        let text = rec.model_input("Candidate Topic");
        assert!(text.contains("Candidate Topic: Food, Price, Service, Ambience, Anecdotes/Miscellaneous"));
        assert_eq!(
            rec.output_constraints.as_deref(),
            Some("Answer with one of Food, Price, Service, Ambience, Anecdotes/Miscellaneous.")
        );
    }

    #[test]
    fn prompt_index_changes_only_prompt() {
        let s = sample(Annotations::ClassLabels(vec!["Food".into()]));
        let a = render(&s, &absa_spec(), 0).unwrap();
        let b = render(&s, &absa_spec(), 1).unwrap();
        assert_ne!(a.prompt, b.prompt);
        assert_eq!(
            (&a.task_description, &a.input_text, &a.candidate_labels, &a.output_constraints, &a.output),
            (&b.task_description, &b.input_text, &b.candidate_labels, &b.output_constraints, &b.output)
        );
    }

    #[test]
    fn gen_spec_omits_optional_components() {
        let mut spec = absa_spec();
        spec.paradigm = Paradigm::Gen;
        spec.candidate_labels = None;
        spec.output_constraints = None;
        let rec = render(&sample(Annotations::TargetText("a title".into())), &spec, 0).unwrap();
        assert!(rec.candidate_labels.is_none());
        assert!(rec.output_constraints.is_none());
        let json = serde_json::to_string(&rec).unwrap();
        assert!(!json.contains("candidate_labels"));
        assert!(!rec.model_input("Candidate Topic").contains("Candidate"));
    }

    #[test]
    fn typo_placeholder_is_an_error() {
        let mut spec = absa_spec();
        spec.prompts = vec!["Classify {inptu}".into()];
        let err = render(&sample(Annotations::ClassLabels(vec!["Food".into()])), &spec, 0).unwrap_err();
        assert!(matches!(err, RenderError::UnresolvedPlaceholder { ref name, .. } if name == "inptu"));
        assert!(!spec.validate().is_empty());
    }

    #[test]
    fn paradigm_mismatch_is_an_error() {
        let s = sample(Annotations::Spans(vec![]));
        assert!(matches!(render(&s, &absa_spec(), 0), Err(RenderError::ParadigmMismatch { .. })));
        assert!(matches!(
            render(&sample(Annotations::ClassLabels(vec![])), &absa_spec(), 9),
            Err(RenderError::PromptIndex { .. })
        ));
    }

    #[test]
    fn serialize_output_shapes() {
        let rules = RenderRules::default();
        let spans = Annotations::Spans(vec![SpanAnnotation::new(0, 2, "撞色", "图案")]);
        assert_eq!(serialize_output(&spans, Paradigm::Other, &rules), "图案: 撞色");
        assert_eq!(serialize_output(&Annotations::Spans(vec![]), Paradigm::Other, &rules), "None");
        let labels = Annotations::ClassLabels(vec!["Food".into(), "Price".into()]);
        assert_eq!(serialize_output(&labels, Paradigm::Cls, &rules), "Food, Price");
        let ordered = Annotations::Spans(vec![
            SpanAnnotation::new(5, 7, "领口", "部位"),
            SpanAnnotation::new(0, 2, "撞色", "图案"),
        ]);
        assert_eq!(serialize_output(&ordered, Paradigm::Other, &rules), "图案: 撞色\n部位: 领口");
    }

    #[test]
    fn choose_prompt_single_and_deterministic() {
        let mut spec = absa_spec();
        assert_eq!(choose_prompt(&spec, 99), choose_prompt(&spec, 99));
        spec.prompts.truncate(1);
        assert!((0..100).all(|s| choose_prompt(&spec, s) == 0));
    }

    #[test]
    fn choose_prompt_is_roughly_uniform() {
        let mut spec = absa_spec();
        spec.prompts = (0..4).map(|i| format!("prompt {i}")).collect();
        let mut counts = [0usize; 4];
        for s in 0..10_000u64 {
            counts[choose_prompt(&spec, s)] += 1;
        }
        // Each bucket within ±5% (relative) of 2,500; chi-square with 3 dof below the 0.1% critical value.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(counts.iter().all(|&c| (2375..=2625).contains(&c)), "{counts:?}");
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }
}
