//! Answer scoring, evaluation reports, negation accuracies, predicate–argument
//! reports and faithfulness verdicts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaItem, Variant};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::synth::QuestionForm;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips punctuation, drops articles and splits on whitespace.
pub fn normalize(answer: &str) -> Vec<String> {
    let cleaned: String = answer
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .map(str::to_string)
        .collect()
}

pub fn em(pred: &str, gold: &str) -> f64 {
    if normalize(pred) == normalize(gold) {
        1.0
    } else {
        0.0
    }
}

pub fn f1(pred: &str, gold: &str) -> f64 {
    let p = normalize(pred);
    let g = normalize(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    // harmonic mean of precision c/|p| and recall c/|g|
    2.0 * common as f64 / (p.len() + g.len()) as f64
}

pub fn is_unknown(pred: &str) -> bool {
    normalize(pred) == ["unknown"]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub variant: Variant,
    pub prediction: String,
    /// The answer the prediction is scored against.
    pub gold: String,
    /// The item's own gold (`unknown` for deletion records).
    pub expected: String,
    pub em: f64,
    pub f1: f64,
    pub predicted_unknown: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub unk_pct: f64,
    pub n: usize,
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<SkippedItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub em: f64,
    pub f1: f64,
    pub unk_pct: f64,
    pub n: usize,
    pub skipped: Vec<SkippedItem>,
}

/// The gold a prediction is scored against: the original answer for
/// deletion records, the edited gold for negation records.
pub fn scoring_gold(item: &QaItem) -> &str {
    match item.variant() {
        Variant::Neg => &item.gold_answer,
        _ => item.original_answer(),
    }
}

pub fn score_row(item: &QaItem, prediction: &str) -> EvalRow {
    let gold = scoring_gold(item);
    EvalRow {
        id: item.id.clone(),
        variant: item.variant(),
        prediction: prediction.to_string(),
        gold: gold.to_string(),
        expected: item.gold_answer.clone(),
        em: em(prediction, gold),
        f1: f1(prediction, gold),
        predicted_unknown: is_unknown(prediction),
    }
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, skipped: Vec<SkippedItem>) -> Result<EvalReport> {
        if rows.is_empty() {
            return Err(Error::EmptyReport);
        }
        let n = rows.len();
        let pct = |f: &dyn Fn(&EvalRow) -> f64| 100.0 * rows.iter().map(f).sum::<f64>() / n as f64;
        Ok(EvalReport {
            em: pct(&|r| r.em),
            f1: pct(&|r| r.f1),
            unk_pct: pct(&|r| f64::from(u8::from(r.predicted_unknown))),
            n,
            rows,
            skipped,
        })
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            em: self.em,
            f1: self.f1,
            unk_pct: self.unk_pct,
            n: self.n,
            skipped: self.skipped.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs `model` over `corpus`. Items too long to pack are skipped and listed.
pub fn evaluate(model: &dyn Predictor, corpus: &Corpus) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(corpus.len());
    let mut skipped = Vec::new();
    for item in &corpus.items {
        match model.predict(item) {
            Ok(pred) => rows.push(score_row(item, &pred.text)),
            Err(e @ Error::Capacity(_)) => skipped.push(SkippedItem {
                id: item.id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    EvalReport::from_rows(rows, skipped)
}

/// Variant × {F1, EM, unk%} grid.
pub fn render_grid(reports: &[(String, &EvalReport)]) -> String {
    let width = reports.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>5}\n", "variant", "F1", "EM", "unk%", "n");
    for (label, r) in reports {
        let _ = writeln!(out, "{label:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>5}", r.f1, r.em, r.unk_pct, r.n);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegationReport {
    pub org_acc: f64,
    pub mod_acc: f64,
    pub comb_acc: f64,
    pub n: usize,
}

/// Org/Mod/Comb accuracy over items keyed by id. A prediction is correct when
/// it matches its gold exactly after normalization.
pub fn negation_report(
    preds_before: &BTreeMap<String, String>,
    preds_after: &BTreeMap<String, String>,
    golds_before: &BTreeMap<String, String>,
    golds_after: &BTreeMap<String, String>,
) -> Result<NegationReport> {
    let ids: BTreeSet<&String> = preds_before.keys().collect();
    for (name, map) in [("after predictions", preds_after), ("before golds", golds_before), ("after golds", golds_after)] {
        if map.keys().collect::<BTreeSet<_>>() != ids {
            return Err(Error::Integrity(format!("{name} cover different ids than before predictions")));
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyReport);
    }
    let (mut org, mut modified, mut comb) = (0usize, 0usize, 0usize);
    for id in &ids {
        let b = em(&preds_before[*id], &golds_before[*id]) == 1.0;
        let a = em(&preds_after[*id], &golds_after[*id]) == 1.0;
        org += usize::from(b);
        modified += usize::from(a);
        comb += usize::from(a && b);
    }
    let n = ids.len();
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    Ok(NegationReport {
        org_acc: pct(org),
        mod_acc: pct(modified),
        comb_acc: pct(comb),
        n,
    })
}

/// Scores `model` on each negated item and on the original it was edited from.
pub fn evaluate_negation(model: &dyn Predictor, originals: &Corpus, negated: &Corpus) -> Result<NegationReport> {
    let mut maps: [BTreeMap<String, String>; 4] = Default::default();
    for neg in &negated.items {
        let base = originals
            .get(&neg.id)
            .ok_or_else(|| Error::Integrity(format!("negated item {} has no original", neg.id)))?;
        if neg.original_answer() != base.gold_answer {
            return Err(Error::Integrity(format!(
                "negated item {} records original gold {:?}, the original has {:?}",
                neg.id,
                neg.original_answer(),
                base.gold_answer
            )));
        }
        maps[0].insert(neg.id.clone(), model.predict(base)?.text);
        maps[1].insert(neg.id.clone(), model.predict(neg)?.text);
        maps[2].insert(neg.id.clone(), base.gold_answer.clone());
        maps[3].insert(neg.id.clone(), neg.gold_answer.clone());
    }
    negation_report(&maps[0], &maps[1], &maps[2], &maps[3])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaFormRow {
    pub n: usize,
    pub accuracy: f64,
    pub pct_no: f64,
    /// Share of predictions that were neither yes nor no.
    pub pct_other: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaReport {
    pub forms: BTreeMap<QuestionForm, PaFormRow>,
}

/// Accuracy and share of `no` predictions per question form. Predictions
/// other than yes or no count as wrong.
pub fn pa_report<'a>(preds: impl IntoIterator<Item = (QuestionForm, &'a str, &'a str)>) -> PaReport {
    let mut tally: BTreeMap<QuestionForm, (usize, usize, usize, usize)> = BTreeMap::new();
    for (form, pred, gold) in preds {
        let p = normalize(pred);
        let t = tally.entry(form).or_default();
        t.0 += 1;
        t.1 += usize::from(p == normalize(gold) && (p == ["yes"] || p == ["no"]));
        t.2 += usize::from(p == ["no"]);
        t.3 += usize::from(p != ["yes"] && p != ["no"]);
    }
    let forms = tally
        .into_iter()
        .map(|(form, (n, ok, no, other))| {
            let pct = |k: usize| 100.0 * k as f64 / n as f64;
            (
                form,
                PaFormRow {
                    n,
                    accuracy: pct(ok),
                    pct_no: pct(no),
                    pct_other: pct(other),
                },
            )
        })
        .collect();
    PaReport { forms }
}

impl PaFormRow {
    /// `accuracy (%no)`.
    pub fn cell(&self) -> String {
        format!("{:.1} ({:.1})", self.accuracy, self.pct_no)
    }
}

impl PaReport {
    pub fn render(&self) -> String {
        let mut out = format!("{:<16}  {:>14}  {:>6}  {:>5}\n", "form", "acc (%no)", "other%", "n");
        for (form, row) in &self.forms {
            let _ = writeln!(out, "{:<16}  {:>14}  {:>6.1}  {:>5}", form.as_str(), row.cell(), row.pct_other, row.n);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Deletion,
    Negation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostBehavior {
    AppropriatelyShifted,
    UnfaithfulPersistence,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaithfulnessVerdict {
    pub id: String,
    pub kind: InterventionKind,
    pub pre_correct: bool,
    pub post: PostBehavior,
}

/// Pairs rows by id. After a deletion the appropriate answer is `unknown`;
/// after a negation it is the edited gold. Repeating the original gold is
/// unfaithful persistence.
pub fn faithfulness_verdicts(kind: InterventionKind, pre: &[EvalRow], post: &[EvalRow]) -> Result<Vec<FaithfulnessVerdict>> {
    let post_by_id: BTreeMap<&str, &EvalRow> = post.iter().map(|r| (r.id.as_str(), r)).collect();
    if post_by_id.len() != post.len() || post.len() != pre.len() {
        return Err(Error::Integrity("pre and post rows do not pair one to one".into()));
    }
    pre.iter()
        .map(|p| {
            let q = post_by_id
                .get(p.id.as_str())
                .ok_or_else(|| Error::Integrity(format!("item {} has no post-intervention row", p.id)))?;
            let original = &p.gold;
            let shifted = match kind {
                InterventionKind::Deletion => q.predicted_unknown,
                InterventionKind::Negation => em(&q.prediction, &q.expected) == 1.0,
            };
            let post = if shifted {
                PostBehavior::AppropriatelyShifted
            } else if em(&q.prediction, original) == 1.0 {
                PostBehavior::UnfaithfulPersistence
            } else {
                PostBehavior::Other
            };
            Ok(FaithfulnessVerdict {
                id: p.id.clone(),
                kind,
                pre_correct: em(&p.prediction, original) == 1.0,
                post,
            })
        })
        .collect()
}

pub fn verdict_counts(verdicts: &[FaithfulnessVerdict]) -> BTreeMap<PostBehavior, usize> {
    let mut counts = BTreeMap::new();
    for v in verdicts {
        *counts.entry(v.post).or_default() += 1;
    }
    counts
}
