use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize_words, Corpus};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk-token>", "<cls>", "<sep>"];

/// Token-to-id map. Ids are dense from 0; ids 0..4 are the reserved
/// `<pad>`, `<unk-token>`, `<cls>` and `<sep>` tokens in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocab from non-reserved words, assigned ids in the given order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::from(tokens)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Total size including reserved tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-reserved entries.
    pub fn word_count(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Every text field a model ever sees from this corpus.
pub(crate) fn corpus_texts(corpus: &Corpus) -> impl Iterator<Item = &str> {
    corpus.items.iter().flat_map(|item| {
        std::iter::once(item.story.as_str())
            .chain(item.history.iter().flat_map(|(q, a)| [q.as_str(), a.as_str()]))
            .chain([item.question.as_str(), item.gold_answer.as_str()])
    })
}

/// Counts tokens over stories, history turns, questions and answers.
/// Tokens seen fewer than `min_count` times are left out (they map to
/// `<unk-token>`). Ids are assigned by descending frequency, then token.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocab {
    build_vocab_from(std::slice::from_ref(corpus), min_count)
}

/// [`build_vocab`] over the union of several corpora.
pub fn build_vocab_from(corpora: &[Corpus], min_count: usize) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpora.iter().flat_map(corpus_texts) {
        for tok in tokenize_words(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_count.max(1) && !RESERVED.contains(&tok.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_words(entries.into_iter().map(|(t, _)| t))
}
