use serde::{Deserialize, Serialize};

use super::backward::AnswerClass;
use super::forward::ForwardTrace;
use super::params::NUM_CLASSES;
use crate::corpus::{char_slice, AnswerType, PackedInput, Span};

pub const DEFAULT_SPAN_CAP: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    pub answer_type: AnswerType,
    /// Answer text: the sliced span, or `yes` / `no` / `unknown`.
    pub text: String,
    /// Inclusive story-relative token indices of the best span.
    pub span_tokens: Option<(usize, usize)>,
    pub char_span: Option<Span>,
    /// `start_logit + end_logit` of the best span.
    pub span_score: f64,
    /// Decision scores for yes, no, unknown on the same scale as `span_score`.
    pub class_scores: [f64; NUM_CLASSES],
}

impl AnswerPrediction {
    pub fn is_unknown(&self) -> bool {
        self.answer_type == AnswerType::Unknown
    }
}

/// Best `(start, end, score)` with `start <= end < start + span_cap`.
/// Ties go to the earliest start, then the earliest end.
pub fn best_span(start_logits: &[f64], end_logits: &[f64], span_cap: usize) -> Option<(usize, usize, f64)> {
    let n = start_logits.len().min(end_logits.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for s in 0..n {
        for e in s..n.min(s + span_cap.max(1)) {
            let score = start_logits[s] + end_logits[e];
            if best.map_or(true, |(_, _, b)| score > b) {
                best = Some((s, e, score));
            }
        }
    }
    best
}

/// Picks the answer: the best span against the class outputs.
///
/// Each class output enters both the start and the end distribution, so its
/// decision score is twice its raw score. Ties resolve in the order span,
/// yes, no, unknown.
pub fn decode(trace: &ForwardTrace, input: &PackedInput, story: &str, span_cap: usize) -> AnswerPrediction {
    let start = trace.start_logits.as_slice().expect("contiguous logits");
    let end = trace.end_logits.as_slice().expect("contiguous logits");
    let class_scores = trace.class_scores.map(|c| 2.0 * c);
    let span = best_span(start, end, span_cap);
    let span_score = span.map_or(f64::NEG_INFINITY, |(_, _, sc)| sc);

    let mut best_class = AnswerClass::Yes;
    for class in AnswerClass::ALL {
        if class_scores[class as usize] > class_scores[best_class as usize] {
            best_class = class;
        }
    }
    match span {
        Some((s, e, score)) if score >= class_scores[best_class as usize] => {
            let chars = Span::new(input.story_token_map[s].start, input.story_token_map[e].end);
            AnswerPrediction {
                answer_type: AnswerType::Span,
                text: char_slice(story, chars).to_string(),
                span_tokens: Some((s, e)),
                char_span: Some(chars),
                span_score,
                class_scores,
            }
        }
        _ => AnswerPrediction {
            answer_type: best_class.answer_type(),
            text: best_class.label().to_string(),
            span_tokens: None,
            char_span: None,
            span_score,
            class_scores,
        },
    }
}
