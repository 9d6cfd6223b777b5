//! Deletion interventions (TS, TS_R, TS_R_AUG) and validation of
//! hand-written negation edits.

mod generator;
mod negation;
mod suite;

pub use generator::{GeneratorClient, SentenceGenerator, HttpGenerator, TemplateStub, GENERATOR_ATTEMPTS};
pub use negation::{edit_region, negated_item, validate_negation_edit, ModelFlip, NegationValidationReport, Verdict};
pub use suite::{build_deletion_suite, load_suite, DeletionSuite, DiscardEntry, SuiteHeader};

use crate::corpus::{char_slice, AnswerType, Origin, QaItem, SourceFormat, Span, Variant};
use crate::error::{Error, Result};

pub const PROVENANCE_REINSERTED: &str = "answer reinserted";
pub const PROVENANCE_PRESENT: &str = "answer already present";
pub const PROVENANCE_NO_SPAN: &str = "no span answer";

/// One intervened item: the derived story plus what the model should answer.
///
/// The materialized [`QaItem`] keeps the base item's id, question and
/// history; its gold answer is the expected answer and its origin records the
/// base gold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterventionRecord {
    pub item: QaItem,
}

impl InterventionRecord {
    fn derive(
        base: &QaItem,
        variant: Variant,
        story: String,
        rationale: Span,
        expected: (&str, AnswerType),
        provenance: impl Into<String>,
    ) -> Self {
        let mut item = QaItem::new(
            base.id.clone(),
            story,
            base.history.clone(),
            base.question.clone(),
            expected.0,
            expected.1,
            rationale,
        );
        item.origin = Some(Origin {
            variant,
            provenance: provenance.into(),
            original_answer: Some(base.original_answer().to_string()),
            original_answer_type: Some(original_type(base)),
        });
        InterventionRecord { item }
    }

    /// The untouched original story.
    pub fn original(base: &QaItem) -> Self {
        let story = base.story.clone();
        InterventionRecord::derive(
            base,
            Variant::Os,
            story,
            base.rationale,
            (&base.gold_answer, base.answer_type),
            "original",
        )
    }

    pub fn base_item_id(&self) -> &str {
        &self.item.id
    }

    pub fn variant(&self) -> Variant {
        self.item.variant()
    }

    pub fn story(&self) -> &str {
        &self.item.story
    }

    pub fn expected_answer(&self) -> &str {
        &self.item.gold_answer
    }

    pub fn expected_answer_type(&self) -> AnswerType {
        self.item.answer_type
    }

    pub fn provenance(&self) -> &str {
        self.item.origin.as_ref().map_or("", |o| o.provenance.as_str())
    }
}

fn original_type(item: &QaItem) -> AnswerType {
    item.origin
        .as_ref()
        .and_then(|o| o.original_answer_type)
        .unwrap_or(item.answer_type)
}

fn discarded(item: &QaItem, reason: impl Into<String>) -> Error {
    Error::Discarded {
        id: item.id.clone(),
        reason: reason.into(),
    }
}

/// Indices of the sentences that overlap the rationale.
pub fn rationale_sentences(item: &QaItem) -> Vec<usize> {
    if item.rationale.is_empty() {
        return Vec::new();
    }
    item.sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.overlaps(&item.rationale))
        .map(|(i, _)| i)
        .collect()
}

/// Cuts the story after the last sentence that overlaps the rationale.
pub fn truncate_at_rationale(item: &QaItem) -> Result<InterventionRecord> {
    let hits = rationale_sentences(item);
    let Some(&last) = hits.last() else {
        return Err(discarded(item, "rationale overlaps no sentence"));
    };
    let end = item.sentences[last].end;
    let story = char_slice(&item.story, Span::new(0, end)).to_string();
    if item.answer_type == AnswerType::Span && !story.contains(&item.gold_answer) {
        return Err(discarded(item, "span answer lies after the rationale"));
    }
    let rationale = Span::new(item.rationale.start, item.rationale.end.min(end));
    Ok(InterventionRecord::derive(
        item,
        Variant::Ts,
        story,
        rationale,
        (&item.gold_answer, item.answer_type),
        "truncated after rationale",
    ))
}

/// Story text with the given sentences removed. Kept neighbours retain the
/// original text between them; a gap left by removed sentences becomes one
/// space.
fn remove_sentences(story: &str, sentences: &[Span], removed: &[usize]) -> String {
    let mut out = String::new();
    let mut prev: Option<usize> = None;
    for (i, s) in sentences.iter().enumerate() {
        if removed.contains(&i) {
            continue;
        }
        match prev {
            Some(p) if p + 1 == i => out.push_str(char_slice(story, Span::new(sentences[p].end, s.start))),
            Some(_) => out.push(' '),
            None => {}
        }
        out.push_str(char_slice(story, *s));
        prev = Some(i);
    }
    out
}

fn ends_with_terminator(s: &str) -> bool {
    s.ends_with(['.', '!', '?'])
}

/// Appended fragment for a span answer missing from the story: terminated
/// with a period for CoQA-style stories, bare for HotpotQA-style ones.
pub fn answer_fragment(answer: &str, format: SourceFormat) -> String {
    if format == SourceFormat::Hotpot || ends_with_terminator(answer) {
        answer.to_string()
    } else {
        format!("{answer}.")
    }
}

/// Removes every sentence that overlaps the rationale from `source` (the TS
/// record for CoQA-style corpora, the original for HotpotQA-style ones).
/// Span answers no longer present are appended as a bare fragment.
pub fn delete_rationale(source: &InterventionRecord, item: &QaItem, format: SourceFormat) -> Result<InterventionRecord> {
    let hits = rationale_sentences(item);
    if hits.is_empty() {
        return Err(discarded(item, "rationale overlaps no sentence"));
    }
    if format != SourceFormat::Hotpot && hits[0] == 0 {
        return Err(discarded(item, "rationale begins in the first sentence"));
    }
    let src = &source.item;
    let removed: Vec<usize> = src
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.overlaps(&item.rationale))
        .map(|(i, _)| i)
        .collect();
    let mut story = remove_sentences(&src.story, &src.sentences, &removed);
    if story.trim().is_empty() {
        return Err(discarded(item, "no sentence left after deleting the rationale"));
    }
    let provenance = if item.answer_type != AnswerType::Span {
        PROVENANCE_NO_SPAN
    } else if story.contains(&item.gold_answer) {
        PROVENANCE_PRESENT
    } else {
        story.push(' ');
        story.push_str(&answer_fragment(&item.gold_answer, format));
        PROVENANCE_REINSERTED
    };
    Ok(InterventionRecord::derive(
        item,
        Variant::TsR,
        story,
        Span::new(0, 0),
        ("unknown", AnswerType::Unknown),
        provenance,
    ))
}

/// Replaces the bare answer fragment of a TS_R record with a generated
/// sentence that contains the answer. Records without a fragment pass
/// through unchanged apart from their variant.
pub fn augment_answer_sentence(
    tsr: &InterventionRecord,
    item: &QaItem,
    gen: &dyn SentenceGenerator,
) -> Result<InterventionRecord> {
    let story = tsr.story();
    if tsr.provenance() != PROVENANCE_REINSERTED {
        return Ok(InterventionRecord::derive(
            item,
            Variant::TsRAug,
            story.to_string(),
            Span::new(0, 0),
            ("unknown", AnswerType::Unknown),
            tsr.provenance(),
        ));
    }
    let context = [SourceFormat::Coqa, SourceFormat::Hotpot]
        .iter()
        .find_map(|f| story.strip_suffix(&format!(" {}", answer_fragment(&item.gold_answer, *f))))
        .ok_or_else(|| Error::Integrity(format!("item {}: TS_R record lost its answer fragment", item.id)))?;
    let mut last_err = None;
    for _ in 0..GENERATOR_ATTEMPTS {
        match gen.generate(&item.gold_answer, context) {
            Ok(sentence) if sentence.contains(&item.gold_answer) => {
                let sentence = sentence.trim();
                return Ok(InterventionRecord::derive(
                    item,
                    Variant::TsRAug,
                    format!("{context} {sentence}"),
                    Span::new(0, 0),
                    ("unknown", AnswerType::Unknown),
                    format!("answer sentence from {}", gen.name()),
                ));
            }
            Ok(_) => last_err = None,
            Err(e) if e.is_retryable() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match last_err {
        Some(e) => Err(e),
        None => Err(discarded(
            item,
            format!("generated sentence lacked the answer after {GENERATOR_ATTEMPTS} attempts"),
        )),
    }
}

#[cfg(test)]
mod tests;
