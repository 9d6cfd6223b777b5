//! Synthetic corpora: the predicate–argument colour corpus and templated
//! CoQA-style stories for training the toy model.

mod pa;
mod stories;

pub use pa::{
    determiner_swap, generate_pa_corpus, generate_pa_items, negate_pa_story, pa_corpus, pa_variants, paraphrase_question,
    parse_question, PaItem, PaSchema, QuestionForm, DEFAULT_COLORS, PA_PAIRS, PA_SCHEMAS,
};
pub use stories::{generate_story_corpus, StoryConfig};
