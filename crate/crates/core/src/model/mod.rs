//! A small transformer encoder with span, rationale-tagging, attention
//! pooling and yes/no/unknown heads, trained from scratch.
//!
//! Rationale tagging assigns each story token `p_t = σ(u · ReLU(V h_t))`.
//! The gated embeddings `p'_t = p_t h_t` are pooled with
//! `a = softmax_t(w · ReLU(W p'_t))` into `q = Σ a_t p'_t`, and the class
//! scores come from a linear map of `[h_cls ; q]`. Start and end logits are
//! a linear map of each story token's last-layer embedding.

mod backward;
mod checkpoint;
mod decode;
mod forward;
mod params;

pub use backward::{accumulate_grads, loss, loss_and_grads, AnswerClass, Gold, GoldTarget, LossBreakdown};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use decode::{best_span, decode, AnswerPrediction, DEFAULT_SPAN_CAP};
pub use forward::{forward, self_attention, ForwardTrace};
pub use params::{init_params, parameter_count, LayerSlots, ModelConfig, ModelParams, ParamLayout, Slot, TensorKind, NUM_CLASSES};

use crate::corpus::{pack_input, Corpus, Layout, PackedInput, QaItem, Vocab};
use crate::error::Result;
use crate::probe::{EmbeddingDump, EmbeddingRecord, TokenEmbedding};

/// Anything that answers questions about items.
pub trait Predictor {
    fn predict(&self, item: &QaItem) -> Result<AnswerPrediction>;
}

/// Parameters bundled with the vocab and packing settings they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct QaModel {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub layout: Layout,
    pub span_cap: usize,
}

impl QaModel {
    pub fn new(params: ModelParams, vocab: Vocab, layout: Layout) -> Self {
        QaModel {
            params,
            vocab,
            layout,
            span_cap: DEFAULT_SPAN_CAP,
        }
    }

    pub fn max_len(&self) -> usize {
        self.params.config.max_len
    }

    pub fn pack(&self, item: &QaItem) -> Result<PackedInput> {
        pack_input(item, self.layout, &self.vocab, self.max_len())
    }

    pub fn embed(&self, item: &QaItem) -> Result<EmbeddingRecord> {
        let input = self.pack(item)?;
        embed_dump(&self.params, &input, &item.id)
    }

    /// Short description of the architecture, stored in embedding dumps.
    pub fn fingerprint(&self) -> String {
        let c = &self.params.config;
        format!(
            "d={} layers={} heads={} ffn={} max_len={} vocab={} seed={}",
            c.d_model, c.layers, c.heads, c.ffn_width, c.max_len, c.vocab_size, c.seed
        )
    }

    /// Embeds every item of `corpus`.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<EmbeddingDump> {
        let records = corpus.items.iter().map(|item| self.embed(item)).collect::<Result<Vec<_>>>()?;
        EmbeddingDump::new(self.params.config.d_model, self.fingerprint(), records)
    }
}

impl Predictor for QaModel {
    fn predict(&self, item: &QaItem) -> Result<AnswerPrediction> {
        let input = self.pack(item)?;
        let trace = forward(&self.params, &input)?;
        Ok(decode(&trace, &input, &item.story, self.span_cap))
    }
}

/// Exports `h_cls` and every story token's last-layer embedding.
pub fn embed_dump(params: &ModelParams, input: &PackedInput, id: &str) -> Result<EmbeddingRecord> {
    let trace = forward(params, input)?;
    let tokens = input
        .story_tokens
        .iter()
        .zip(&input.story_token_map)
        .zip(input.story_range())
        .map(|((text, span), pos)| TokenEmbedding {
            text: text.clone(),
            span: *span,
            vector: trace.hidden.row(pos).to_vec(),
        })
        .collect();
    Ok(EmbeddingRecord {
        id: id.to_string(),
        cls: trace.h_cls.to_vec(),
        tokens,
    })
}
