//! Two-stage filtering: deterministic rules, then a pluggable quality judge.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::corpus::InstructionRecord;
use crate::seed;

/// Collapses whitespace runs to one space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-line normalization for multi-line outputs; blank lines are dropped.
pub fn normalize_lines(text: &str) -> String {
    text.split('\n')
        .map(normalize_whitespace)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Normalizes every text component of a record in place. Outputs keep their
/// line structure.
pub fn normalize_record(record: &mut InstructionRecord) {
    record.task_description = normalize_whitespace(&record.task_description);
    record.prompt = normalize_whitespace(&record.prompt);
    record.input_text = normalize_whitespace(&record.input_text);
    if let Some(c) = &record.output_constraints {
        record.output_constraints = Some(normalize_whitespace(c));
    }
    record.output = normalize_lines(&record.output);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllegalClass {
    /// Unicode `Cc` characters other than tab and newline.
    Control,
    /// U+FFFD, left behind by lossy decoding.
    ReplacementCharacter,
    PrivateUse,
    /// Any character of the given string.
    Chars(String),
}

impl IllegalClass {
    pub fn matches(&self, c: char) -> bool {
        match self {
            IllegalClass::Control => c.is_control() && c != '\t' && c != '\n',
            IllegalClass::ReplacementCharacter => c == '\u{FFFD}',
            IllegalClass::PrivateUse => matches!(c as u32, 0xE000..=0xF8FF | 0xF0000..=0xFFFFD | 0x100000..=0x10FFFD),
            IllegalClass::Chars(set) => set.contains(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub illegal: Vec<IllegalClass>,
    pub max_input_chars: usize,
    pub max_output_chars: usize,
    pub reject_empty_output: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            illegal: vec![IllegalClass::Control, IllegalClass::ReplacementCharacter],
            max_input_chars: 2048,
            max_output_chars: 1024,
            reject_empty_output: true,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_input_chars == 0 || self.max_output_chars == 0 {
            return Err("length caps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    IllegalChar,
    NullOutput,
    OverlongInput,
    OverlongOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "KEEP")]
    Keep,
    #[serde(rename = "REJECT")]
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub record_id: String,
    pub decision: Decision,
    pub reasons: Vec<Reason>,
}

pub fn verdict(record: &InstructionRecord, policy: &FilterPolicy) -> FilterVerdict {
    let mut reasons = Vec::new();
    if record.input_text.chars().any(|c| policy.illegal.iter().any(|cls| cls.matches(c))) {
        reasons.push(Reason::IllegalChar);
    }
    if policy.reject_empty_output && record.output.trim().is_empty() {
        reasons.push(Reason::NullOutput);
    }
    if record.input_text.chars().count() > policy.max_input_chars {
        reasons.push(Reason::OverlongInput);
    }
    if record.output.chars().count() > policy.max_output_chars {
        reasons.push(Reason::OverlongOutput);
    }
    FilterVerdict {
        record_id: record.record_id.clone(),
        decision: if reasons.is_empty() { Decision::Keep } else { Decision::Reject },
        reasons,
    }
}

/// Rule stage. Returns the kept records in input order and one verdict per
/// record sorted by record_id.
pub fn rule_filter(records: Vec<InstructionRecord>, policy: &FilterPolicy) -> (Vec<InstructionRecord>, Vec<FilterVerdict>) {
    let mut verdicts = Vec::with_capacity(records.len());
    let mut kept = Vec::new();
    for r in records {
        let v = verdict(&r, policy);
        if v.decision == Decision::Keep {
            kept.push(r);
        }
        verdicts.push(v);
    }
    verdicts.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    (kept, verdicts)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("judge failed: {0}")]
pub struct JudgeError(pub String);

pub trait QualityJudge: Sync {
    /// Quality in [0, 1].
    fn score(&self, record: &InstructionRecord) -> Result<f64, JudgeError>;

    fn threshold(&self) -> f64;
}

/// A judge returning the same score for every record.
pub struct ConstantJudge {
    pub score: f64,
    pub threshold: f64,
}

impl QualityJudge for ConstantJudge {
    fn score(&self, _: &InstructionRecord) -> Result<f64, JudgeError> {
        Ok(self.score)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Default judge. Scores 0 for outputs that copy a candidate-free prompt
/// verbatim or that are dominated (> `max_repeat_ratio`) by one repeated
/// token, 1 otherwise. Tokens are words, or characters for single-word
/// outputs; outputs shorter than `min_tokens` are not checked for repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicJudge {
    pub max_repeat_ratio: f64,
    pub min_tokens: usize,
    pub threshold: f64,
}

impl Default for HeuristicJudge {
    fn default() -> Self {
        Self {
            max_repeat_ratio: 0.8,
            min_tokens: 8,
            threshold: 0.5,
        }
    }
}

/// Share of the most frequent token.
pub fn repetition_ratio(text: &str) -> (f64, usize) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let tokens: Vec<String> = if words.len() > 1 {
        words.iter().map(|w| w.to_string()).collect()
    } else {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    };
    if tokens.is_empty() {
        return (0.0, 0);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tokens {
        *counts.entry(t).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    (max as f64 / tokens.len() as f64, tokens.len())
}

impl QualityJudge for HeuristicJudge {
    fn score(&self, record: &InstructionRecord) -> Result<f64, JudgeError> {
        let output = normalize_whitespace(&record.output);
        if record.candidate_labels.is_none() && !output.is_empty() && output == normalize_whitespace(&record.prompt) {
            return Ok(0.0);
        }
        let (ratio, n) = repetition_ratio(&output);
        if n >= self.min_tokens && ratio > self.max_repeat_ratio {
            return Ok(0.0);
        }
        Ok(1.0)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelFilterOutcome {
    pub kept: Vec<InstructionRecord>,
    pub flagged: Vec<InstructionRecord>,
    /// `(record_id, message)` for records the judge failed on; they are kept.
    pub diagnostics: Vec<(String, String)>,
}

/// Judge stage. Scores below the judge threshold are flagged; judge errors
/// keep the record and log a diagnostic.
pub fn model_filter(records: Vec<InstructionRecord>, judge: &dyn QualityJudge) -> ModelFilterOutcome {
    let mut out = ModelFilterOutcome::default();
    for r in records {
        match judge.score(&r) {
            Ok(s) if s < judge.threshold() => out.flagged.push(r),
            Ok(_) => out.kept.push(r),
            Err(e) => {
                out.diagnostics.push((r.record_id.clone(), e.to_string()));
                out.kept.push(r);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub dataset_id: String,
    pub record_id: String,
    /// Annotator decision (KEEP / REJECT), blank until reviewed.
    pub decision: String,
    pub note: String,
}

/// Per dataset, a seeded uniform sample of up to `n` records for manual review.
pub fn sample_review_manifest(records: &[InstructionRecord], n: usize, seed_value: u64) -> Vec<ReviewRow> {
    let mut by_dataset: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_dataset
            .entry(r.provenance.dataset_id.as_str())
            .or_default()
            .push(r.record_id.as_str());
    }
    let mut rows = Vec::new();
    for (dataset_id, mut ids) in by_dataset {
        ids.sort_unstable();
        ids.dedup();
        let mut rng = seed::stream_rng(seed_value, &format!("review/{dataset_id}"));
        for i in seed::sample_indices(&mut rng, ids.len(), n) {
            rows.push(ReviewRow {
                dataset_id: dataset_id.to_string(),
                record_id: ids[i].to_string(),
                decision: String::new(),
                note: String::new(),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSource, Provenance};
    use proptest::prelude::*;
    use std::collections::HashSet;

    pub(crate) fn record(id: &str, dataset: &str, input: &str, output: &str) -> InstructionRecord {
        InstructionRecord {
            record_id: id.into(),
            task_id: dataset.into(),
            task_description: "describe".into(),
            prompt: "do it".into(),
            input_text: input.into(),
            candidate_labels: None,
            output_constraints: None,
            output: output.into(),
            provenance: Provenance {
                dataset_id: dataset.into(),
                sample_id: id.into(),
                source_ids: vec![id.into()],
                lineage: vec![],
                label_source: LabelSource::Golden,
            },
        }
    }

    #[test]
    fn whitespace_examples() {
        assert_eq!(normalize_whitespace("  a\t b \n"), "a b");
        assert_eq!(normalize_whitespace(""), "");
        assert_eq!(normalize_whitespace("a b"), "a b");
        assert_eq!(normalize_lines(" 图案:  撞色 \n\n材质: 熟铁"), "图案: 撞色\n材质: 熟铁");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}|[ \t\n\u{3000}a-c]{0,20}") {
            let once = normalize_whitespace(&s);
            prop_assert_eq!(normalize_whitespace(&once), once.clone());
            let lines = normalize_lines(&s);
            prop_assert_eq!(normalize_lines(&lines), lines);
        }
    }

    #[test]
    fn rule_examples() {
        let policy = FilterPolicy::default();
        let v = verdict(&record("a", "d", "bad\u{0}input", "ok"), &policy);
        assert_eq!((v.decision, v.reasons), (Decision::Reject, vec![Reason::IllegalChar]));
        let v = verdict(&record("b", "d", "fine", ""), &policy);
        assert_eq!(v.reasons, vec![Reason::NullOutput]);
        let v = verdict(&record("c", "d", &"x".repeat(5000), "ok"), &policy);
        assert_eq!(v.reasons, vec![Reason::OverlongInput]);
        let v = verdict(&record("d", "d", "tab\tand\nnewline", "ok"), &policy);
        assert_eq!(v.decision, Decision::Keep);
        let v = verdict(&record("e", "d", &"字".repeat(2048), "ok"), &policy);
        assert_eq!(v.decision, Decision::Keep);
    }

    #[test]
    fn rule_filter_partitions() {
        let recs = vec![
            record("z", "d", "fine", "ok"),
            record("a", "d", "\u{FFFD}", ""),
            record("m", "d", "fine", "ok"),
        ];
        let (kept, verdicts) = rule_filter(recs, &FilterPolicy::default());
        assert_eq!(kept.iter().map(|r| r.record_id.as_str()).collect::<Vec<_>>(), ["z", "m"]);
        assert_eq!(verdicts.iter().map(|v| v.record_id.as_str()).collect::<Vec<_>>(), ["a", "m", "z"]);
        assert_eq!(verdicts[0].reasons, vec![Reason::IllegalChar, Reason::NullOutput]);
    }

    #[test]
    fn judge_thresholds() {
        let recs: Vec<_> = (0..5).map(|i| record(&i.to_string(), "d", "x", "fine output")).collect();
        let all_ok = model_filter(recs.clone(), &ConstantJudge { score: 1.0, threshold: 0.5 });
        assert_eq!((all_ok.kept.len(), all_ok.flagged.len()), (5, 0));
        let none_ok = model_filter(recs, &ConstantJudge { score: 0.0, threshold: 0.5 });
        assert_eq!((none_ok.kept.len(), none_ok.flagged.len()), (0, 5));
    }

    #[test]
    fn heuristic_judge_rules() {
        let judge = HeuristicJudge::default();
        // 10 of 10 characters are 'a'.
        assert_eq!(repetition_ratio("aaaaaaaaaa"), (1.0, 10));
        assert_eq!(judge.score(&record("1", "d", "x", "aaaaaaaaaa")), Ok(0.0));
        assert_eq!(judge.score(&record("2", "d", "x", "Food")), Ok(1.0));
        assert_eq!(judge.score(&record("3", "d", "x", "do it")), Ok(0.0));
        assert_eq!(judge.score(&record("4", "d", "x", "a short sensible product title here")), Ok(1.0));
    }

    struct Failing;
    impl QualityJudge for Failing {
        fn score(&self, _: &InstructionRecord) -> Result<f64, JudgeError> {
            Err(JudgeError("offline".into()))
        }
        fn threshold(&self) -> f64 {
            0.5
        }
    }

    #[test]
    fn judge_failure_fails_open() {
        let out = model_filter(vec![record("1", "d", "x", "y")], &Failing);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn review_manifest_sampling() {
        let mut recs: Vec<_> = (0..1000).map(|i| record(&format!("big{i:04}"), "big", "x", "y")).collect();
        recs.extend((0..50).map(|i| record(&format!("small{i}"), "small", "x", "y")));
        let m = sample_review_manifest(&recs, 200, 11);
        let big: HashSet<_> = m.iter().filter(|r| r.dataset_id == "big").map(|r| &r.record_id).collect();
        assert_eq!(big.len(), 200);
        assert_eq!(m.iter().filter(|r| r.dataset_id == "small").count(), 50);
        assert_eq!(m, sample_review_manifest(&recs, 200, 11));
        assert_ne!(m, sample_review_manifest(&recs, 200, 12));
    }
}
