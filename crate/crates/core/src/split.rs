//! Train/test partition with per-task and per-dataset caps.
//!
//! Test records are sampled per task, training records per dataset. Datasets
//! that feed a test task are excluded from training entirely.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::corpus::InstructionRecord;
use crate::seed;

pub const DEFAULT_TRAIN_CAP: usize = 800;
pub const DEFAULT_TEST_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("test task {0:?} has no records")]
    EmptyTestTask(String),
    #[error("caps must be positive")]
    ZeroCap,
    #[error("duplicate record_id {0:?} in corpus")]
    DuplicateRecordId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub available: usize,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub train_record_id: String,
    pub shared_source_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(with = "crate::seed::decimal")]
    pub seed: u64,
    pub train_cap: usize,
    pub test_cap: usize,
    /// Sampling happens on the filtered corpus.
    pub sampled_after_filtering: bool,
    pub train_total: usize,
    pub test_total: usize,
    pub test_tasks: BTreeMap<String, GroupCount>,
    pub train_datasets: BTreeMap<String, GroupCount>,
    pub leakage: Vec<LeakageViolation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<InstructionRecord>,
    pub test: Vec<InstructionRecord>,
    pub manifest: SplitManifest,
}

fn sample_group<'a>(
    mut members: Vec<&'a InstructionRecord>,
    cap: usize,
    seed_value: u64,
    stream: &str,
) -> (Vec<&'a InstructionRecord>, GroupCount) {
    members.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut rng = seed::stream_rng(seed_value, stream);
    let picked: Vec<_> = seed::sample_indices(&mut rng, members.len(), cap)
        .into_iter()
        .map(|i| members[i])
        .collect();
    let count = GroupCount {
        available: members.len(),
        sampled: picked.len(),
    };
    (picked, count)
}

pub fn split(
    corpus: &[InstructionRecord],
    test_task_ids: &BTreeSet<String>,
    train_cap: usize,
    test_cap: usize,
    seed_value: u64,
) -> Result<Split, SplitError> {
    if train_cap == 0 || test_cap == 0 {
        return Err(SplitError::ZeroCap);
    }
    let mut seen = HashSet::new();
    for r in corpus {
        if !seen.insert(r.record_id.as_str()) {
            return Err(SplitError::DuplicateRecordId(r.record_id.clone()));
        }
    }
    let mut test_pools: BTreeMap<&str, Vec<&InstructionRecord>> =
        test_task_ids.iter().map(|t| (t.as_str(), Vec::new())).collect();
    for r in corpus {
        if let Some(pool) = test_pools.get_mut(r.task_id.as_str()) {
            pool.push(r);
        }
    }
    let test_datasets: BTreeSet<&str> = test_pools
        .values()
        .flatten()
        .map(|r| r.provenance.dataset_id.as_str())
        .collect();

    let mut test = Vec::new();
    let mut test_counts = BTreeMap::new();
    for (task, pool) in &test_pools {
        if pool.is_empty() {
            return Err(SplitError::EmptyTestTask(task.to_string()));
        }
        let (picked, count) = sample_group(pool.clone(), test_cap, seed_value, &format!("test/{task}"));
        test.extend(picked.into_iter().cloned());
        test_counts.insert(task.to_string(), count);
    }

    let mut train_pools: BTreeMap<&str, Vec<&InstructionRecord>> = BTreeMap::new();
    for r in corpus {
        let ds = r.provenance.dataset_id.as_str();
        if test_task_ids.contains(&r.task_id) || test_datasets.contains(ds) {
            continue;
        }
        train_pools.entry(ds).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut train_counts = BTreeMap::new();
    for (ds, pool) in train_pools {
        let (picked, count) = sample_group(pool, train_cap, seed_value, &format!("train/{ds}"));
        train.extend(picked.into_iter().cloned());
        train_counts.insert(ds.to_string(), count);
    }

    let all_test: Vec<InstructionRecord> = test_pools.values().flatten().map(|r| (*r).clone()).collect();
    let leakage = leakage_check(&train, &all_test);
    let manifest = SplitManifest {
        seed: seed_value,
        train_cap,
        test_cap,
        sampled_after_filtering: true,
        train_total: train.len(),
        test_total: test.len(),
        test_tasks: test_counts,
        train_datasets: train_counts,
        leakage,
    };
    Ok(Split { train, test, manifest })
}

/// Training records whose source samples also feed a test record.
pub fn leakage_check(train: &[InstructionRecord], test: &[InstructionRecord]) -> Vec<LeakageViolation> {
    let test_sources: HashSet<&str> = test
        .iter()
        .flat_map(|r| r.provenance.source_ids.iter().map(String::as_str))
        .collect();
    train
        .iter()
        .filter_map(|r| {
            let shared: Vec<String> = r
                .provenance
                .source_ids
                .iter()
                .filter(|s| test_sources.contains(s.as_str()))
                .cloned()
                .collect();
            (!shared.is_empty()).then(|| LeakageViolation {
                train_record_id: r.record_id.clone(),
                shared_source_ids: shared,
            })
        })
        .collect()
}
