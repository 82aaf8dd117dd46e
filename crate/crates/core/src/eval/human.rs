//! Side-by-side human evaluation manifests.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{EvalError, PredictionRecord};
use crate::corpus::InstructionRecord;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalRow {
    pub task_id: String,
    pub record_id: String,
    pub left_system: String,
    pub right_system: String,
    pub left_text: String,
    pub right_text: String,
    /// Annotator fills in win / tie / lose for the left system.
    pub decision: String,
}

fn ids(run: &[PredictionRecord]) -> BTreeSet<&str> {
    run.iter().map(|p| p.record_id.as_str()).collect()
}

/// Per task, a seeded sample of up to `n` records with the two systems'
/// generations in seeded left/right order.
pub fn build_human_eval_manifest(
    run_a: &[PredictionRecord],
    run_b: &[PredictionRecord],
    gold: &[InstructionRecord],
    n: usize,
    seed_value: u64,
) -> Result<Vec<HumanEvalRow>, EvalError> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.record_id.as_str()).collect();
    for (name, run) in [("A", run_a), ("B", run_b)] {
        let run_ids = ids(run);
        if run_ids != gold_ids || run_ids.len() != run.len() {
            return Err(EvalError::CoverageMismatch(format!(
                "run {name} covers {} of {} gold records ({} rows)",
                run_ids.intersection(&gold_ids).count(),
                gold_ids.len(),
                run.len()
            )));
        }
    }
    let a: HashMap<&str, &str> = run_a.iter().map(|p| (p.record_id.as_str(), p.generated.as_str())).collect();
    let b: HashMap<&str, &str> = run_b.iter().map(|p| (p.record_id.as_str(), p.generated.as_str())).collect();
    let mut by_task: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for g in gold {
        by_task.entry(g.task_id.as_str()).or_default().push(g.record_id.as_str());
    }
    let mut rows = Vec::new();
    for (task_id, mut record_ids) in by_task {
        record_ids.sort_unstable();
        let mut rng = seed::stream_rng(seed_value, &format!("human_eval/{task_id}"));
        for i in seed::sample_indices(&mut rng, record_ids.len(), n) {
            let id = record_ids[i];
            let a_left = rng.gen_bool(0.5);
            let (ls, rs, lt, rt) = if a_left {
                ("A", "B", a[id], b[id])
            } else {
                ("B", "A", b[id], a[id])
            };
            rows.push(HumanEvalRow {
                task_id: task_id.to_string(),
                record_id: id.to_string(),
                left_system: ls.into(),
                right_system: rs.into(),
                left_text: lt.into(),
                right_text: rt.into(),
                decision: String::new(),
            });
        }
    }
    Ok(rows)
}
