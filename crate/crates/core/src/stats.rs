//! Corpus statistics: task and instance counts by language and paradigm.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{InstructionRecord, Language, Paradigm, TaskSpec};
use crate::ndjson;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCount {
    pub task_id: String,
    pub language: Language,
    pub paradigm: Paradigm,
    pub train: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsManifest {
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskCount>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tasks: u64,
    pub train: u64,
    pub test: u64,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.tasks += other.tasks;
        self.train += other.train;
        self.test += other.test;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsTable {
    /// Every language × paradigm cell, zeros included.
    pub cells: BTreeMap<(Language, Paradigm), Counts>,
    pub by_language: BTreeMap<Language, Counts>,
    pub all: Counts,
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error(transparent)]
    Ndjson(#[from] ndjson::NdjsonError),
}

pub fn compute(tasks: &[TaskCount]) -> StatsTable {
    let mut cells: BTreeMap<(Language, Paradigm), Counts> = [Language::En, Language::Zh]
        .into_iter()
        .flat_map(|l| Paradigm::ALL.into_iter().map(move |p| ((l, p), Counts::default())))
        .collect();
    for t in tasks {
        cells.entry((t.language, t.paradigm)).or_default().add(Counts {
            tasks: 1,
            train: t.train,
            test: t.test,
        });
    }
    let mut by_language: BTreeMap<Language, Counts> = BTreeMap::new();
    let mut all = Counts::default();
    for ((lang, _), c) in &cells {
        by_language.entry(*lang).or_default().add(*c);
        all.add(*c);
    }
    StatsTable { cells, by_language, all }
}

impl StatsTable {
    /// Each marginal equals the sum of its cells.
    pub fn is_consistent(&self) -> bool {
        let mut all = Counts::default();
        for (lang, total) in &self.by_language {
            let mut sum = Counts::default();
            for ((l, _), c) in &self.cells {
                if l == lang {
                    sum.add(*c);
                }
            }
            if sum != *total {
                return false;
            }
            all.add(sum);
        }
        all == self.all
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6}{:<8}{:>8}{:>16}{:>16}\n", "Lang.", "Para.", "# task", "# train inst.", "# test inst.");
        let line = |out: &mut String, a: &str, b: &str, c: &Counts| {
            out.push_str(&format!(
                "{a:<6}{b:<8}{:>8}{:>16}{:>16}\n",
                thousands(c.tasks),
                thousands(c.train),
                thousands(c.test)
            ));
        };
        for ((lang, para), c) in &self.cells {
            line(&mut out, lang.as_str(), para.as_str(), c);
        }
        line(&mut out, "ALL", "", &self.all);
        out
    }
}

/// `1533300` → `1,533,300`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<Vec<TaskCount>, StatsError> {
    let text = std::fs::read_to_string(path).map_err(|e| StatsError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let m: StatsManifest = toml::from_str(&text).map_err(|e| StatsError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(m.tasks)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskCatalogFile {
    #[serde(rename = "task", default)]
    pub tasks: Vec<TaskSpec>,
}

/// Counts per task from split outputs; tasks absent from both splits are left out.
pub fn count_split(specs: &[TaskSpec], train: &[InstructionRecord], test: &[InstructionRecord]) -> Vec<TaskCount> {
    let mut train_n: BTreeMap<&str, u64> = BTreeMap::new();
    let mut test_n: BTreeMap<&str, u64> = BTreeMap::new();
    for r in train {
        *train_n.entry(&r.task_id).or_default() += 1;
    }
    for r in test {
        *test_n.entry(&r.task_id).or_default() += 1;
    }
    specs
        .iter()
        .map(|s| TaskCount {
            task_id: s.task_id.clone(),
            language: s.language,
            paradigm: s.paradigm,
            train: train_n.get(s.task_id.as_str()).copied().unwrap_or(0),
            test: test_n.get(s.task_id.as_str()).copied().unwrap_or(0),
        })
        .filter(|t| t.train + t.test > 0)
        .collect()
}

/// Task counts of a run directory: rendered task specs plus the split files.
pub fn read_run_dir(dir: &Path) -> Result<Vec<TaskCount>, StatsError> {
    let tasks_path = dir.join(crate::pipeline::TASKS_FILE);
    let text = std::fs::read_to_string(&tasks_path).map_err(|e| StatsError::Read {
        path: tasks_path.display().to_string(),
        message: e.to_string(),
    })?;
    let specs: TaskCatalogFile = toml::from_str(&text).map_err(|e| StatsError::Read {
        path: tasks_path.display().to_string(),
        message: e.to_string(),
    })?;
    let train: Vec<InstructionRecord> = ndjson::read_file(&dir.join(crate::pipeline::TRAIN_FILE))?;
    let test: Vec<InstructionRecord> = ndjson::read_file(&dir.join(crate::pipeline::TEST_FILE))?;
    Ok(count_split(&specs.tasks, &train, &test))
}

/// A TOML task-count manifest, or a run directory.
pub fn stats_for_path(path: &Path) -> Result<StatsTable, StatsError> {
    let tasks = if path.is_dir() { read_run_dir(path)? } else { read_manifest(path)? };
    Ok(compute(&tasks))
}
