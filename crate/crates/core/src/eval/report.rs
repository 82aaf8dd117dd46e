//! Per-task scoring of a prediction run and rollups.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::metrics::{prf, rouge_l, Averaging, Prf};
use super::parse::items_for;
use super::{EvalError, PredictionRecord};
use crate::corpus::{InstructionRecord, Language, Paradigm, TaskSpec};
use crate::scalar::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub paradigm: Paradigm,
    pub language: Language,
    pub level: String,
    pub n: usize,
    pub n_unparsed: usize,
    pub n_missing: usize,
    /// Mean ROUGE-L over records, 0..=100.
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro: Option<Prf<f64>>,
    #[serde(rename = "macro", skip_serializing_if = "Option::is_none")]
    pub macro_: Option<Prf<f64>>,
}

/// Unweighted mean over member tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub n_tasks: usize,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro: Option<Prf<f64>>,
    #[serde(rename = "macro", skip_serializing_if = "Option::is_none")]
    pub macro_: Option<Prf<f64>>,
}

impl Rollup {
    pub fn of<'a>(tasks: impl IntoIterator<Item = &'a TaskScores>) -> Rollup {
        let tasks: Vec<&TaskScores> = tasks.into_iter().collect();
        let rouge: Vec<f64> = tasks.iter().map(|t| t.rouge_l).collect();
        let micro: Vec<Prf<f64>> = tasks.iter().filter_map(|t| t.micro).collect();
        let macro_: Vec<Prf<f64>> = tasks.iter().filter_map(|t| t.macro_).collect();
        Rollup {
            n_tasks: tasks.len(),
            rouge_l: mean(&rouge).unwrap_or(0.0),
            micro: Prf::mean(&micro),
            macro_: Prf::mean(&macro_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<String, TaskScores>,
    pub by_paradigm: BTreeMap<String, Rollup>,
    pub by_language: BTreeMap<String, Rollup>,
    pub by_level: BTreeMap<String, Rollup>,
    pub overall: Rollup,
    pub n_missing: usize,
}

/// Scores `predictions` against the gold test set.
///
/// Every gold record is scored; a record without a prediction counts as an
/// empty generation and is reported in `n_missing`.
pub fn evaluate_run(
    predictions: &[PredictionRecord],
    gold: &[InstructionRecord],
    specs: &BTreeMap<String, TaskSpec>,
) -> Result<EvalReport, EvalError> {
    let gold_ids: HashMap<&str, &InstructionRecord> = gold.iter().map(|g| (g.record_id.as_str(), g)).collect();
    let mut generated: HashMap<&str, &str> = HashMap::new();
    for p in predictions {
        if !gold_ids.contains_key(p.record_id.as_str()) {
            return Err(EvalError::UnknownRecord(p.record_id.clone()));
        }
        if generated.insert(&p.record_id, &p.generated).is_some() {
            return Err(EvalError::DuplicatePrediction(p.record_id.clone()));
        }
    }
    let mut by_task: BTreeMap<&str, Vec<&InstructionRecord>> = BTreeMap::new();
    for g in gold {
        by_task.entry(g.task_id.as_str()).or_default().push(g);
    }
    let mut tasks = BTreeMap::new();
    let mut n_missing_total = 0;
    for (task_id, records) in by_task {
        let spec = specs
            .get(task_id)
            .ok_or_else(|| EvalError::MissingSpec(task_id.to_string()))?;
        let scores = score_task(spec, &records, &generated);
        n_missing_total += scores.n_missing;
        tasks.insert(task_id.to_string(), scores);
    }
    Ok(rollup(tasks, n_missing_total))
}

fn score_task(spec: &TaskSpec, records: &[&InstructionRecord], generated: &HashMap<&str, &str>) -> TaskScores {
    let mode = spec.tokenizer();
    let mut rouge = Vec::with_capacity(records.len());
    let mut pairs = Vec::new();
    let (mut n_missing, mut n_unparsed) = (0, 0);
    for g in records {
        let text = match generated.get(g.record_id.as_str()) {
            Some(t) => *t,
            None => {
                n_missing += 1;
                ""
            }
        };
        rouge.push(rouge_l::<f64>(text, &g.output, mode));
        if let (Some((pred, unparsed)), Some((gold_items, _))) = (items_for(spec, text), items_for(spec, &g.output)) {
            if unparsed {
                n_unparsed += 1;
            }
            pairs.push((pred, gold_items));
        }
    }
    let labelled = spec.paradigm.is_labelled();
    TaskScores {
        paradigm: spec.paradigm,
        language: spec.language,
        level: spec.level.clone(),
        n: records.len(),
        n_unparsed,
        n_missing,
        rouge_l: mean(&rouge).unwrap_or(0.0),
        micro: labelled.then(|| prf(&pairs, Averaging::Micro)),
        macro_: labelled.then(|| prf(&pairs, Averaging::Macro)),
    }
}

/// Builds the paradigm/language/level rollups from per-task entries.
pub fn rollup(tasks: BTreeMap<String, TaskScores>, n_missing: usize) -> EvalReport {
    let group = |key: &dyn Fn(&TaskScores) -> String| {
        let mut groups: BTreeMap<String, Vec<&TaskScores>> = BTreeMap::new();
        for t in tasks.values() {
            groups.entry(key(t)).or_default().push(t);
        }
        groups
            .into_iter()
            .map(|(k, v)| (k, Rollup::of(v)))
            .collect::<BTreeMap<_, _>>()
    };
    let by_paradigm = group(&|t| t.paradigm.to_string());
    let by_language = group(&|t| t.language.to_string());
    let by_level = group(&|t| t.level.clone());
    let overall = Rollup::of(tasks.values());
    EvalReport {
        tasks,
        by_paradigm,
        by_language,
        by_level,
        overall,
        n_missing,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    /// Aligned-column text rendering.
    pub fn to_table(&self) -> String {
        let header = [
            "task", "para", "lang", "level", "n", "unparsed", "missing", "rougeL", "micro_P", "micro_R", "micro_F1",
            "macro_P", "macro_R", "macro_F1",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for (id, t) in &self.tasks {
            rows.push(vec![
                id.clone(),
                t.paradigm.to_string(),
                t.language.to_string(),
                t.level.clone(),
                t.n.to_string(),
                t.n_unparsed.to_string(),
                t.n_missing.to_string(),
                format!("{:.2}", t.rouge_l),
                fmt_opt(t.micro.map(|p| p.precision)),
                fmt_opt(t.micro.map(|p| p.recall)),
                fmt_opt(t.micro.map(|p| p.f1)),
                fmt_opt(t.macro_.map(|p| p.precision)),
                fmt_opt(t.macro_.map(|p| p.recall)),
                fmt_opt(t.macro_.map(|p| p.f1)),
            ]);
        }
        let groups = [
            ("paradigm", &self.by_paradigm),
            ("language", &self.by_language),
            ("level", &self.by_level),
        ];
        let mut rollup_rows = Vec::new();
        for (kind, map) in groups {
            for (k, r) in map {
                rollup_rows.push((format!("[{kind}={k}]"), r));
            }
        }
        rollup_rows.push(("[ALL]".to_string(), &self.overall));
        for (name, r) in rollup_rows {
            let mut row = vec![name, String::new(), String::new(), String::new(), r.n_tasks.to_string()];
            row.extend([String::new(), String::new(), format!("{:.2}", r.rouge_l)]);
            for p in [r.micro, r.macro_] {
                row.extend([
                    fmt_opt(p.map(|x| x.precision)),
                    fmt_opt(p.map(|x| x.recall)),
                    fmt_opt(p.map(|x| x.f1)),
                ]);
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    let pad = widths[c] - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
