use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerType, Origin, QaItem, Span, Variant};
use crate::error::{Error, Result};
use crate::model::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Warn,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlip {
    pub pred_before: String,
    pub pred_after: String,
    pub flipped: bool,
    /// Set when either prediction failed; both texts are then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationValidationReport {
    pub edited_differs: bool,
    /// `(old gold, new gold)`.
    pub answer_flip_declared: (String, String),
    /// The edit touches the rationale.
    pub span_presence_ok: bool,
    pub model_flip: Option<ModelFlip>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Changed region of an edit: the span replaced in `original` and the span
/// that replaces it in `edited`, by longest common prefix and suffix.
pub fn edit_region(original: &str, edited: &str) -> (Span, Span) {
    let a: Vec<char> = original.chars().collect();
    let b: Vec<char> = edited.chars().collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(max_suffix)
        .take_while(|(x, y)| x == y)
        .count();
    (
        Span::new(prefix, a.len() - suffix),
        Span::new(prefix, b.len() - suffix),
    )
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

fn gold_type(gold: &str) -> AnswerType {
    match norm(gold).as_str() {
        "yes" => AnswerType::Yes,
        "no" => AnswerType::No,
        "unknown" => AnswerType::Unknown,
        _ => AnswerType::Span,
    }
}

/// The NEG item an accepted edit turns into. Its rationale covers the
/// original rationale (shifted by the edit) together with the edited text.
pub fn negated_item(item: &QaItem, edited_story: &str, new_gold: &str) -> Result<QaItem> {
    let (old, new) = edit_region(&item.story, edited_story);
    let delta = new.end as isize - old.end as isize;
    let shift = |p: usize| if p >= old.end { (p as isize + delta) as usize } else { p.min(new.end) };
    let rationale = if item.rationale.is_empty() {
        new
    } else {
        Span::new(item.rationale.start.min(new.start), shift(item.rationale.end).max(new.end))
    };
    let answer_type = gold_type(new_gold);
    let mut neg = QaItem::new(
        item.id.clone(),
        edited_story,
        item.history.clone(),
        item.question.clone(),
        new_gold.trim(),
        answer_type,
        rationale,
    );
    neg.origin = Some(Origin {
        variant: Variant::Neg,
        provenance: "negation edit".into(),
        original_answer: Some(item.gold_answer.clone()),
        original_answer_type: Some(item.answer_type),
    });
    if neg.rationale.end > neg.story_chars() {
        return Err(Error::Integrity(format!("item {}: edited rationale out of bounds", item.id)));
    }
    Ok(neg)
}

/// Checks a hand-written negation edit of `item`. Never fails: problems are
/// reported through the verdict and notes.
pub fn validate_negation_edit(
    item: &QaItem,
    edited_story: &str,
    new_gold: &str,
    model: Option<&dyn Predictor>,
) -> NegationValidationReport {
    let edited_differs = edited_story != item.story;
    let flips = norm(new_gold) != norm(&item.gold_answer);
    let (old, new) = edit_region(&item.story, edited_story);
    let span_presence_ok = edited_differs
        && if old.is_empty() {
            old.start >= item.rationale.start && old.start <= item.rationale.end
        } else {
            old.overlaps(&item.rationale)
        };
    let mut notes = Vec::new();
    if !edited_differs {
        notes.push("edited story is identical to the original".to_string());
    }
    if !flips {
        notes.push("declared gold does not change".to_string());
    }
    if edited_differs && !span_presence_ok {
        notes.push(format!("edit at [{}, {}) does not touch the rationale", new.start, new.end));
    }
    if !item.answer_type.is_yes_no() {
        notes.push(format!("item answer type is {}, not yes/no", item.answer_type.as_str()));
    }
    if !matches!(gold_type(new_gold), AnswerType::Yes | AnswerType::No) {
        notes.push(format!("new gold {new_gold:?} is not yes/no"));
    }

    let model_flip = model.map(|m| {
        let after = negated_item(item, edited_story, new_gold);
        let preds = m.predict(item).and_then(|before| Ok((before, m.predict(&after?)?)));
        match preds {
            Ok((before, after)) => ModelFlip {
                flipped: norm(&before.text) != norm(&after.text),
                pred_before: before.text,
                pred_after: after.text,
                error: None,
            },
            Err(e) => ModelFlip {
                pred_before: String::new(),
                pred_after: String::new(),
                flipped: false,
                error: Some(e.to_string()),
            },
        }
    });
    let crashed = model_flip.as_ref().is_some_and(|f| f.error.is_some());
    if crashed {
        notes.push("model prediction failed".to_string());
    }

    let verdict = if !edited_differs || !flips {
        Verdict::Reject
    } else if crashed || !item.answer_type.is_yes_no() {
        Verdict::Warn
    } else {
        Verdict::Accept
    };
    NegationValidationReport {
        edited_differs,
        answer_flip_declared: (item.gold_answer.clone(), new_gold.trim().to_string()),
        span_presence_ok,
        model_flip,
        verdict,
        notes,
    }
}
