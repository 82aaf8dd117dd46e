//! Scoring of model generations against gold instruction records.

pub mod human;
pub mod metrics;
pub mod parse;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::Language;

pub use human::{build_human_eval_manifest, HumanEvalRow};
pub use metrics::{lcs_length, pearson, prf, rouge_l, Averaging, Prf};
pub use parse::{parse_cls_prediction, parse_ner_prediction, ClsPrediction, NerParse};
pub use report::{evaluate_run, EvalReport, Rollup, TaskScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenizerMode {
    /// Whitespace-separated words.
    #[serde(rename = "WORD")]
    Word,
    /// One token per non-whitespace Unicode scalar.
    #[serde(rename = "CHAR")]
    Char,
}

impl TokenizerMode {
    pub fn default_for(language: Language) -> Self {
        match language {
            Language::En => TokenizerMode::Word,
            Language::Zh => TokenizerMode::Char,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    pub generated: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for unknown record_id {0:?}")]
    UnknownRecord(String),
    #[error("duplicate prediction for record_id {0:?}")]
    DuplicatePrediction(String),
    #[error("no task spec for task {0:?}")]
    MissingSpec(String),
    #[error("run coverage mismatch: {0}")]
    CoverageMismatch(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstructionRecord, LabelSource, Paradigm, ParseRules, Provenance, RenderRules, TaskSpec};
    use std::collections::BTreeMap;

    fn spec(task_id: &str, paradigm: Paradigm, language: Language, labels: Option<&[&str]>) -> TaskSpec {
        TaskSpec {
            task_id: task_id.into(),
            dataset_id: task_id.into(),
            paradigm,
            language,
            task_description: "d".into(),
            prompts: vec!["p".into()],
            output_constraints: None,
            candidate_labels: labels.map(|ls| ls.iter().map(|s| s.to_string()).collect()),
            render_rules: RenderRules::default(),
            parse_rules: ParseRules::default(),
            level: "held_in".into(),
        }
    }

    fn gold(task_id: &str, i: usize, output: &str) -> InstructionRecord {
        InstructionRecord {
            record_id: format!("{task_id}-{i}"),
            task_id: task_id.into(),
            task_description: "d".into(),
            prompt: "p".into(),
            input_text: "x".into(),
            candidate_labels: None,
            output_constraints: None,
            output: output.into(),
            provenance: Provenance {
                dataset_id: task_id.into(),
                sample_id: format!("s{i}"),
                source_ids: vec![format!("s{i}")],
                lineage: vec![],
                label_source: LabelSource::Golden,
            },
        }
    }

    fn fixture() -> (Vec<InstructionRecord>, BTreeMap<String, TaskSpec>) {
        let mut specs = BTreeMap::new();
        specs.insert("cls".into(), spec("cls", Paradigm::Cls, Language::En, Some(&["Food", "Price", "Service"])));
        specs.insert("ner".into(), spec("ner", Paradigm::Other, Language::Zh, Some(&["图案", "材质"])));
        specs.insert("gen".into(), spec("gen", Paradigm::Gen, Language::En, None));
        let mut g = Vec::new();
        for (i, o) in ["Food", "Price", "Service", "Food", "Price", "Food", "Service"].iter().enumerate() {
            g.push(gold("cls", i, o));
        }
        for (i, o) in ["图案: 撞色", "None", "材质: 熟铁\n图案: 条纹", "材质: 棉"].iter().enumerate() {
            g.push(gold("ner", i, o));
        }
        for (i, o) in ["a light red dress", "cheap phone case", "warm winter coat", "blue running shoes", "ok"]
            .iter()
            .enumerate()
        {
            g.push(gold("gen", i, o));
        }
        (g, specs)
    }

    #[test]
    fn identity_run_is_perfect() {
        let (g, specs) = fixture();
        let preds: Vec<_> = g
            .iter()
            .map(|r| PredictionRecord {
                record_id: r.record_id.clone(),
                generated: r.output.clone(),
            })
            .collect();
        let rep = evaluate_run(&preds, &g, &specs).unwrap();
        for t in rep.tasks.values() {
            assert_eq!(t.rouge_l, 100.0);
            if let Some(m) = t.micro {
                assert_eq!(m.f1, 1.0);
                assert_eq!(t.macro_.unwrap().f1, 1.0);
            }
        }
        assert_eq!(rep.n_missing, 0);
    }

    #[test]
    fn empty_run_scores_zero() {
        let (g, specs) = fixture();
        let rep = evaluate_run(&[], &g, &specs).unwrap();
        assert_eq!(rep.n_missing, g.len());
        for t in rep.tasks.values() {
            assert_eq!(t.rouge_l, 0.0);
            if let Some(m) = t.micro {
                assert_eq!(m.f1, 0.0);
            }
        }
    }

    #[test]
    fn mixed_run_matches_record_by_record_oracle() {
        let (g, specs) = fixture();
        let generations = [
            "Food", "I guess Price", "sorry, I can't retrieve the information", "service", "Price", "Food", "Food",
            "图案: 撞色", "材质: 铁", "材质: 熟铁\ngarbage", "None",
            "a red dress", "phone case cheap", "", "blue running shoes", "ok ok",
        ];
        let preds: Vec<_> = g
            .iter()
            .zip(generations)
            .filter(|(_, t)| !t.is_empty())
            .map(|(r, t)| PredictionRecord {
                record_id: r.record_id.clone(),
                generated: t.to_string(),
            })
            .collect();
        let rep = evaluate_run(&preds, &g, &specs).unwrap();

        // CLS, by hand: predictions Food, Price, -, Service, Price, Food, Food
        // vs gold Food, Price, Service, Food, Price, Food, Service.
        // Food: tp 2 fp 1 fn 1; Price: tp 2; Service: tp 0 fp 1 fn 2.
        let cls = &rep.tasks["cls"];
        let micro = cls.micro.unwrap();
        assert!((micro.precision - 4.0 / 6.0).abs() < 1e-12);
        assert!((micro.recall - 4.0 / 7.0).abs() < 1e-12);
        let f = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let macro_f1 = (f(2.0 / 3.0, 2.0 / 3.0) + f(1.0, 1.0) + 0.0) / 3.0;
        assert!((cls.macro_.unwrap().f1 - macro_f1).abs() < 1e-12);
        assert_eq!(cls.n_unparsed, 1);

        // NER: gold {图案/撞色}, {}, {材质/熟铁, 图案/条纹}, {材质/棉};
        // pred {图案/撞色}, {材质/铁}, {材质/熟铁}, {} → tp 2, fp 1, fn 2.
        let ner = &rep.tasks["ner"];
        let m = ner.micro.unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert_eq!(ner.n_unparsed, 1);

        // GEN ROUGE-L per record (WORD): 2·3/(3+4), 2·2/(3+3), 0 (missing), 1, 2·1/(2+1).
        let expected = [6.0 / 7.0, 4.0 / 6.0, 0.0, 1.0, 2.0 / 3.0].iter().sum::<f64>() * 100.0 / 5.0;
        let gen = &rep.tasks["gen"];
        assert!((gen.rouge_l - expected).abs() < 1e-9);
        assert_eq!(gen.n_missing, 1);
        assert!(gen.micro.is_none());

        let mean_rouge = rep.tasks.values().map(|t| t.rouge_l).sum::<f64>() / 3.0;
        assert!((rep.overall.rouge_l - mean_rouge).abs() < 1e-12);
        assert_eq!(rep.by_language["EN"].n_tasks, 2);
        let table = rep.to_table();
        assert!(table.lines().count() >= 4);
        assert!(table.contains("[ALL]"));
    }

    #[test]
    fn unknown_and_duplicate_predictions() {
        let (g, specs) = fixture();
        let p = |id: &str| PredictionRecord {
            record_id: id.into(),
            generated: "x".into(),
        };
        assert!(matches!(evaluate_run(&[p("nope")], &g, &specs), Err(EvalError::UnknownRecord(_))));
        assert!(matches!(
            evaluate_run(&[p("cls-0"), p("cls-0")], &g, &specs),
            Err(EvalError::DuplicatePrediction(_))
        ));
    }

    #[test]
    fn human_eval_manifest_caps_and_determinism() {
        let g: Vec<_> = (0..150)
            .map(|i| gold("big", i, "x"))
            .chain((0..60).map(|i| gold("small", i, "y")))
            .collect();
        let run = |tag: &str| -> Vec<PredictionRecord> {
            g.iter()
                .map(|r| PredictionRecord {
                    record_id: r.record_id.clone(),
                    generated: format!("{tag} {}", r.record_id),
                })
                .collect()
        };
        let (a, b) = (run("a"), run("b"));
        let m1 = build_human_eval_manifest(&a, &b, &g, 100, 5).unwrap();
        let m2 = build_human_eval_manifest(&a, &b, &g, 100, 5).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.iter().filter(|r| r.task_id == "big").count(), 100);
        assert_eq!(m1.iter().filter(|r| r.task_id == "small").count(), 60);
        assert!(m1.iter().any(|r| r.left_system == "A") && m1.iter().any(|r| r.left_system == "B"));
        for r in &m1 {
            let expect_left = if r.left_system == "A" { "a" } else { "b" };
            assert!(r.left_text.starts_with(expect_left));
            assert!(r.decision.is_empty());
        }
        let short = &a[..10];
        assert!(matches!(
            build_human_eval_manifest(short, &b, &g, 100, 5),
            Err(EvalError::CoverageMismatch(_))
        ));
    }
}
