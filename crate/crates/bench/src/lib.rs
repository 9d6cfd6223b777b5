//! Shared inputs for the benchmarks.

use semfaith::model::ModelConfig;
use semfaith::synth::{generate_story_corpus, StoryConfig};
use semfaith::training::fresh_model;
use semfaith::{Corpus, Layout, QaModel};

pub fn story_corpus(n: usize) -> Corpus {
    generate_story_corpus(n, 7, &StoryConfig::default()).expect("templated corpus")
}

pub fn toy_model(corpus: &Corpus) -> QaModel {
    let config = ModelConfig {
        d_model: 64,
        layers: 2,
        heads: 4,
        ffn_width: 128,
        max_len: 128,
        vocab_size: 0,
        seed: 7,
    };
    fresh_model(config, std::slice::from_ref(corpus), 1, Layout::QuestionFirst).expect("toy model")
}
