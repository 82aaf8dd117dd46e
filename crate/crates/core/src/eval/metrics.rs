//! ROUGE-L, precision/recall/F1 and Pearson correlation.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use super::TokenizerMode;
use crate::scalar::{mean, Scalar};

/// Length of a longest common subsequence. O(|a|·|b|) time, O(min(|a|,|b|)) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[short.len()]
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<&str> {
    match mode {
        TokenizerMode::Word => text.split_whitespace().collect(),
        TokenizerMode::Char => text
            .char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect(),
    }
}

/// ROUGE-L F-measure (β = 1) on a 0..=100 scale.
pub fn rouge_l<S: Scalar>(candidate: &str, reference: &str, mode: TokenizerMode) -> S {
    rouge_l_tokens(&tokenize(candidate, mode), &tokenize(reference, mode))
}

pub fn rouge_l_tokens<S: Scalar, T: PartialEq>(candidate: &[T], reference: &[T]) -> S {
    if candidate.is_empty() || reference.is_empty() {
        return S::zero();
    }
    // With β = 1, 2PR/(P+R) reduces to 2L/(|c|+|r|).
    let l = lcs_length(candidate, reference);
    S::from_count(200 * l) / S::from_count(candidate.len() + reference.len())
}

/// ROUGE-L with an explicit recall weight β: (1+β²)PR / (R + β²P), scaled to 100.
pub fn rouge_l_beta<S: Scalar, T: PartialEq>(candidate: &[T], reference: &[T], beta: S) -> S {
    if candidate.is_empty() || reference.is_empty() {
        return S::zero();
    }
    let l = S::from_count(lcs_length(candidate, reference));
    let p = l / S::from_count(candidate.len());
    let r = l / S::from_count(reference.len());
    let b2 = beta * beta;
    let denom = r + b2 * p;
    if denom == S::zero() {
        return S::zero();
    }
    S::from_count(100) * (S::one() + b2) * p * r / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
}

impl<S: Scalar> Prf<S> {
    pub fn perfect() -> Self {
        Prf {
            precision: S::one(),
            recall: S::one(),
            f1: S::one(),
        }
    }

    pub fn zero() -> Self {
        Prf {
            precision: S::zero(),
            recall: S::zero(),
            f1: S::zero(),
        }
    }

    /// From pooled counts. Zero denominators give zero, except that a run with
    /// nothing to find and nothing predicted is perfect.
    pub fn from_counts(c: Counts) -> Self {
        if c.tp + c.fp + c.fn_ == 0 {
            return Self::perfect();
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                S::zero()
            } else {
                S::from_count(num) / S::from_count(den)
            }
        };
        Self::from_pr(ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
    }

    pub fn from_pr(precision: S, recall: S) -> Self {
        let sum = precision + recall;
        let f1 = if sum == S::zero() {
            S::zero()
        } else {
            S::from_count(2) * precision * recall / sum
        };
        Prf { precision, recall, f1 }
    }

    /// Component-wise unweighted mean; `None` for an empty slice.
    pub fn mean(items: &[Prf<S>]) -> Option<Self> {
        let p: Vec<S> = items.iter().map(|x| x.precision).collect();
        let r: Vec<S> = items.iter().map(|x| x.recall).collect();
        let f: Vec<S> = items.iter().map(|x| x.f1).collect();
        Some(Prf {
            precision: mean(&p)?,
            recall: mean(&r)?,
            f1: mean(&f)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Averaging {
    Micro,
    Macro,
}

/// An item scored by P/R/F1 that belongs to a label class.
pub trait ClassItem: Eq + Hash + Clone {
    fn class(&self) -> &str;
}

impl ClassItem for String {
    fn class(&self) -> &str {
        self
    }
}

impl ClassItem for (String, String) {
    fn class(&self) -> &str {
        &self.0
    }
}

/// Multiset matching counts for one record, split by class.
fn record_counts<'a, I: ClassItem>(pred: &'a [I], gold: &'a [I]) -> BTreeMap<&'a str, Counts> {
    let mut pred_n: HashMap<&I, usize> = HashMap::new();
    let mut gold_n: HashMap<&I, usize> = HashMap::new();
    for p in pred {
        *pred_n.entry(p).or_default() += 1;
    }
    for g in gold {
        *gold_n.entry(g).or_default() += 1;
    }
    let mut out: BTreeMap<&str, Counts> = BTreeMap::new();
    for (item, &np) in &pred_n {
        let ng = gold_n.get(item).copied().unwrap_or(0);
        let c = out.entry(item.class()).or_default();
        c.tp += np.min(ng);
        c.fp += np.saturating_sub(ng);
    }
    for (item, &ng) in &gold_n {
        let np = pred_n.get(item).copied().unwrap_or(0);
        out.entry(item.class()).or_default().fn_ += ng.saturating_sub(np);
    }
    out
}

/// P/R/F1 over `(prediction, gold)` item multisets, one pair per record.
///
/// Micro pools TP/FP/FN over all records. Macro computes P/R/F1 per label
/// class and takes the unweighted mean over the classes that occur in gold.
pub fn prf<S: Scalar, I: ClassItem>(records: &[(Vec<I>, Vec<I>)], averaging: Averaging) -> Prf<S> {
    let mut per_class: BTreeMap<&str, Counts> = BTreeMap::new();
    let mut gold_classes: BTreeSet<&str> = BTreeSet::new();
    for (pred, gold) in records {
        gold_classes.extend(gold.iter().map(ClassItem::class));
        for (class, c) in record_counts(pred, gold) {
            *per_class.entry(class).or_default() += c;
        }
    }
    match averaging {
        Averaging::Micro => {
            let mut total = Counts::default();
            for c in per_class.values() {
                total += *c;
            }
            Prf::from_counts(total)
        }
        Averaging::Macro => {
            if gold_classes.is_empty() {
                return if per_class.values().any(|c| c.fp > 0) {
                    Prf::zero()
                } else {
                    Prf::perfect()
                };
            }
            let scores: Vec<Prf<S>> = gold_classes
                .iter()
                .map(|class| Prf::from_counts(per_class.get(class).copied().unwrap_or_default()))
                .collect();
            Prf::mean(&scores).expect("non-empty class list")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooShort,
    #[error("zero variance")]
    ZeroVariance,
}

/// Sample Pearson correlation coefficient.
pub fn pearson<F: Float>(x: &[F], y: &[F]) -> Result<F, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort);
    }
    let n = F::from(x.len()).expect("length fits the float type");
    let mx = x.iter().fold(F::zero(), |a, &v| a + v) / n;
    let my = y.iter().fold(F::zero(), |a, &v| a + v) / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(MetricError::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-F::one()).min(F::one()))
}
