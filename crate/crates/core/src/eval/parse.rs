//! Reading labels back out of free-text generations.

use std::collections::BTreeSet;

use crate::corpus::{Paradigm, RenderRules, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClsPrediction {
    Label(String),
    NoPrediction,
}

impl ClsPrediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            ClsPrediction::Label(l) => Some(l),
            ClsPrediction::NoPrediction => None,
        }
    }
}

fn normalize(text: &str, case_insensitive: bool) -> String {
    let joined = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if case_insensitive {
        joined.to_lowercase()
    } else {
        joined
    }
}

/// Single-label reading of a generation.
///
/// After whitespace (and optionally case) normalization: an exact candidate
/// match wins; otherwise the candidate occurring earliest as a substring,
/// ties going to the longer candidate and then to candidate-list order.
pub fn parse_cls_prediction(generated: &str, candidates: &[String], case_insensitive: bool) -> ClsPrediction {
    let text = normalize(generated, case_insensitive);
    let normed: Vec<String> = candidates.iter().map(|c| normalize(c, case_insensitive)).collect();
    if let Some(i) = normed.iter().position(|c| !c.is_empty() && *c == text) {
        return ClsPrediction::Label(candidates[i].clone());
    }
    normed
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .filter_map(|(i, c)| text.find(c.as_str()).map(|pos| (pos, std::cmp::Reverse(c.len()), i)))
        .min()
        .map_or(ClsPrediction::NoPrediction, |(_, _, i)| ClsPrediction::Label(candidates[i].clone()))
}

/// Multi-label reading: the negative token means no labels; a generation
/// whose delimiter-separated pieces are all exact candidates yields each of
/// them; anything else falls back to [`parse_cls_prediction`].
pub fn parse_cls_labels(generated: &str, candidates: &[String], rules: &RenderRules, case_insensitive: bool) -> Vec<String> {
    let text = normalize(generated, case_insensitive);
    if text == normalize(&rules.negative_token, case_insensitive) {
        return Vec::new();
    }
    if let ClsPrediction::Label(l) = exact_only(&text, candidates, case_insensitive) {
        return vec![l];
    }
    let delim = rules.label_join.trim();
    if !delim.is_empty() && text.contains(delim) {
        let pieces: Vec<ClsPrediction> = text
            .split(delim)
            .map(|p| exact_only(p.trim(), candidates, case_insensitive))
            .collect();
        if pieces.iter().all(|p| p.label().is_some()) {
            let mut out: Vec<String> = Vec::new();
            for p in pieces {
                if let ClsPrediction::Label(l) = p {
                    if !out.contains(&l) {
                        out.push(l);
                    }
                }
            }
            return out;
        }
    }
    match parse_cls_prediction(generated, candidates, case_insensitive) {
        ClsPrediction::Label(l) => vec![l],
        ClsPrediction::NoPrediction => Vec::new(),
    }
}

fn exact_only(normalized: &str, candidates: &[String], case_insensitive: bool) -> ClsPrediction {
    candidates
        .iter()
        .find(|c| normalize(c, case_insensitive) == normalized)
        .map_or(ClsPrediction::NoPrediction, |c| ClsPrediction::Label(c.clone()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NerParse {
    pub pairs: BTreeSet<(String, String)>,
    pub malformed: usize,
}

/// Reads `label: surface` lines. Lines without the separator or with an empty
/// side are counted as malformed; the negative token alone yields no pairs.
pub fn parse_ner_prediction(generated: &str, rules: &RenderRules) -> NerParse {
    let mut out = NerParse::default();
    let negative = rules.negative_token.trim();
    let kv = rules.kv_separator.trim_end();
    for line in generated.split(rules.pair_separator.as_str()) {
        let line = line.trim();
        if line.is_empty() || line == negative {
            continue;
        }
        let parsed = line
            .split_once(rules.kv_separator.as_str())
            .or_else(|| if kv.is_empty() { None } else { line.split_once(kv) })
            .map(|(l, s)| (l.trim(), s.trim()))
            .filter(|(l, s)| !l.is_empty() && !s.is_empty());
        match parsed {
            Some((l, s)) => {
                out.pairs.insert((l.to_string(), s.to_string()));
            }
            None => out.malformed += 1,
        }
    }
    out
}

/// Scored items of a text under a task: labels (class = label, surface empty)
/// for CLS, `(label, surface)` pairs for OTHER. `None` for unscored paradigms.
/// The flag reports whether the text failed to parse cleanly.
pub fn items_for(spec: &TaskSpec, text: &str) -> Option<(Vec<(String, String)>, bool)> {
    let rules = &spec.render_rules;
    match spec.paradigm {
        Paradigm::Cls => {
            let candidates = spec.candidate_labels.as_deref().unwrap_or(&[]);
            let labels = parse_cls_labels(text, candidates, rules, spec.case_insensitive());
            let is_negative = text.trim() == rules.negative_token;
            let unparsed = labels.is_empty() && !is_negative;
            Some((labels.into_iter().map(|l| (l, String::new())).collect(), unparsed))
        }
        Paradigm::Other => {
            let p = parse_ner_prediction(text, rules);
            Some((p.pairs.into_iter().collect(), p.malformed > 0))
        }
        Paradigm::Ext | Paradigm::Gen => None,
    }
}
