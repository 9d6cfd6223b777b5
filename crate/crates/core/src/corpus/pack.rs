use serde::{Deserialize, Serialize};

use super::{tokenize, tokenize_words, QaItem, Span, Vocab, CLS_ID, SEP_ID};
use crate::error::{Error, Result};

pub const MIN_PACK_LEN: usize = 16;

/// Order of story and question context in the packed sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `<cls> history question <sep> story <sep>`
    #[default]
    QuestionFirst,
    /// `story <sep> history question <sep> <cls>`
    StoryFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentTag {
    Special,
    Question,
    Story,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<u32>,
    pub segments: Vec<SegmentTag>,
    /// Character span in the story of each kept story token, in order.
    pub story_token_map: Vec<Span>,
    pub story_tokens: Vec<String>,
    /// Position of the first story token in `ids`.
    pub story_offset: usize,
    pub cls_index: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn story_len(&self) -> usize {
        self.story_token_map.len()
    }

    /// Index range of story tokens within the sequence.
    pub fn story_range(&self) -> std::ops::Range<usize> {
        self.story_offset..self.story_offset + self.story_len()
    }

    /// Story-relative token indices whose spans overlap `span`.
    pub fn story_tokens_overlapping(&self, span: Span) -> Vec<usize> {
        self.story_token_map
            .iter()
            .enumerate()
            .filter(|(_, s)| s.overlaps(&span))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Packs one item into a model input.
///
/// The question context is the last (at most two) history turns followed by
/// the current question. When the sequence does not fit, the story tail is
/// dropped first; history turns are dropped oldest-first only if not even
/// one story token would fit. The current question is never truncated.
pub fn pack_input(item: &QaItem, layout: Layout, vocab: &Vocab, max_len: usize) -> Result<PackedInput> {
    if max_len < MIN_PACK_LEN {
        return Err(Error::Config(format!(
            "max_len {max_len} below minimum {MIN_PACK_LEN}"
        )));
    }
    let question_ids: Vec<u32> = tokenize_words(&item.question).iter().map(|t| vocab.id(t)).collect();
    let turns: Vec<Vec<u32>> = item
        .history
        .iter()
        .map(|(q, a)| {
            tokenize_words(q)
                .iter()
                .chain(tokenize_words(a).iter())
                .map(|t| vocab.id(t))
                .collect()
        })
        .collect();

    let mut first_turn = 0;
    let context_len = |from: usize| -> usize {
        turns[from..].iter().map(Vec::len).sum::<usize>() + question_ids.len()
    };
    // three special tokens plus at least one story token
    while first_turn < turns.len() && context_len(first_turn) + 4 > max_len {
        first_turn += 1;
    }
    if context_len(first_turn) + 4 > max_len {
        return Err(Error::Capacity(format!(
            "item {}: question of {} tokens does not fit in max_len {max_len}",
            item.id,
            question_ids.len()
        )));
    }
    let context: Vec<u32> = turns[first_turn..]
        .iter()
        .flatten()
        .chain(question_ids.iter())
        .copied()
        .collect();

    let budget = max_len - 3 - context.len();
    let story: Vec<_> = tokenize(&item.story).into_iter().take(budget).collect();
    let story_ids: Vec<u32> = story.iter().map(|t| vocab.id(&t.text)).collect();

    let mut ids = Vec::with_capacity(story_ids.len() + context.len() + 3);
    let mut segments = Vec::with_capacity(ids.capacity());
    let push = |ids: &mut Vec<u32>, segments: &mut Vec<SegmentTag>, toks: &[u32], tag: SegmentTag| {
        ids.extend_from_slice(toks);
        segments.extend(std::iter::repeat(tag).take(toks.len()));
    };
    let (story_offset, cls_index) = match layout {
        Layout::QuestionFirst => {
            push(&mut ids, &mut segments, &[CLS_ID], SegmentTag::Special);
            push(&mut ids, &mut segments, &context, SegmentTag::Question);
            push(&mut ids, &mut segments, &[SEP_ID], SegmentTag::Special);
            let offset = ids.len();
            push(&mut ids, &mut segments, &story_ids, SegmentTag::Story);
            push(&mut ids, &mut segments, &[SEP_ID], SegmentTag::Special);
            (offset, 0)
        }
        Layout::StoryFirst => {
            push(&mut ids, &mut segments, &story_ids, SegmentTag::Story);
            push(&mut ids, &mut segments, &[SEP_ID], SegmentTag::Special);
            push(&mut ids, &mut segments, &context, SegmentTag::Question);
            push(&mut ids, &mut segments, &[SEP_ID], SegmentTag::Special);
            push(&mut ids, &mut segments, &[CLS_ID], SegmentTag::Special);
            (0, ids.len() - 1)
        }
    };
    Ok(PackedInput {
        ids,
        segments,
        story_token_map: story.iter().map(|t| t.span).collect(),
        story_tokens: story.into_iter().map(|t| t.text).collect(),
        story_offset,
        cls_index,
    })
}
