use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of class outputs: yes, no, unknown.
pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            ffn_width: 128,
            max_len: 256,
            vocab_size: 0,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_width", self.ffn_width),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Location of one tensor inside the flat parameter buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub ffn_in: Slot,
    pub ffn_in_bias: Slot,
    pub ffn_out: Slot,
    pub ffn_out_bias: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
}

/// Tensor layout derived from a config. Matrices act on row vectors
/// (`y = x · W`), so a `d_in × d_out` matrix has `d_in` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub token_embedding: Slot,
    pub position_embedding: Slot,
    pub layers: Vec<LayerSlots>,
    pub span_weight: Slot,
    pub span_bias: Slot,
    /// Rationale tagger hidden map (d × d).
    pub rationale_hidden: Slot,
    /// Rationale tagger output vector (d).
    pub rationale_out: Slot,
    /// Pooling hidden map (d × d).
    pub pool_hidden: Slot,
    /// Pooling score vector (d).
    pub pool_score: Slot,
    /// Class head over `[h_cls ; pooled]` (2d × 3).
    pub class_weight: Slot,
    pub class_bias: Slot,
    names: Vec<(String, Slot)>,
    kinds: Vec<TensorKind>,
    total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Weight,
    Gain,
    Bias,
}

struct Allocator {
    next: usize,
    names: Vec<(String, Slot)>,
    kinds: Vec<TensorKind>,
}

impl Allocator {
    fn take(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        let name = name.into();
        let kind = if name.starts_with("embed.") {
            TensorKind::Embedding
        } else if name.ends_with("gain") {
            TensorKind::Gain
        } else if rows == 1 && name.contains(".b") {
            TensorKind::Bias
        } else {
            TensorKind::Weight
        };
        let slot = Slot {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        self.names.push((name, slot));
        self.kinds.push(kind);
        slot
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_width;
        let mut a = Allocator {
            next: 0,
            names: Vec::new(),
            kinds: Vec::new(),
        };
        let token_embedding = a.take("embed.token", cfg.vocab_size, d);
        let position_embedding = a.take("embed.position", cfg.max_len, d);
        let layers = (0..cfg.layers)
            .map(|l| LayerSlots {
                wq: a.take(format!("layer{l}.attn.wq"), d, d),
                bq: a.take(format!("layer{l}.attn.bq"), 1, d),
                wk: a.take(format!("layer{l}.attn.wk"), d, d),
                bk: a.take(format!("layer{l}.attn.bk"), 1, d),
                wv: a.take(format!("layer{l}.attn.wv"), d, d),
                bv: a.take(format!("layer{l}.attn.bv"), 1, d),
                wo: a.take(format!("layer{l}.attn.wo"), d, d),
                bo: a.take(format!("layer{l}.attn.bo"), 1, d),
                ln1_gain: a.take(format!("layer{l}.ln1.gain"), 1, d),
                ln1_bias: a.take(format!("layer{l}.ln1.bias"), 1, d),
                ffn_in: a.take(format!("layer{l}.ffn.w_in"), d, f),
                ffn_in_bias: a.take(format!("layer{l}.ffn.b_in"), 1, f),
                ffn_out: a.take(format!("layer{l}.ffn.w_out"), f, d),
                ffn_out_bias: a.take(format!("layer{l}.ffn.b_out"), 1, d),
                ln2_gain: a.take(format!("layer{l}.ln2.gain"), 1, d),
                ln2_bias: a.take(format!("layer{l}.ln2.bias"), 1, d),
            })
            .collect();
        let span_weight = a.take("head.span.weight", d, 2);
        let span_bias = a.take("head.span.bias", 1, 2);
        let rationale_hidden = a.take("head.rationale.hidden", d, d);
        let rationale_out = a.take("head.rationale.out", 1, d);
        let pool_hidden = a.take("head.pool.hidden", d, d);
        let pool_score = a.take("head.pool.score", 1, d);
        let class_weight = a.take("head.class.weight", 2 * d, NUM_CLASSES);
        let class_bias = a.take("head.class.bias", 1, NUM_CLASSES);
        ParamLayout {
            token_embedding,
            position_embedding,
            layers,
            span_weight,
            span_bias,
            rationale_hidden,
            rationale_out,
            pool_hidden,
            pool_score,
            class_weight,
            class_bias,
            total: a.next,
            names: a.names,
            kinds: a.kinds,
        }
    }

    /// Tensors in declaration order, which is also the checkpoint order.
    pub fn tensors(&self) -> &[(String, Slot)] {
        &self.names
    }

    pub fn kinds(&self) -> &[TensorKind] {
        &self.kinds
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Model weights stored in one flat buffer. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let data = vec![0.0; layout.total()];
        Ok(ModelParams {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mat(&self, slot: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.rows, slot.cols), &self.data[slot.range()]).expect("slot within buffer")
    }

    pub fn mat_mut(&mut self, slot: Slot) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut self.data[slot.range()])
            .expect("slot within buffer")
    }

    pub fn vector(&self, slot: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[slot.range()])
    }

    pub fn vector_mut(&mut self, slot: Slot) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[slot.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Seeded initialization. Weight matrices draw from a Glorot-scaled uniform,
/// embeddings from `U(-0.5, 0.5)`, layer-norm gains start at 1 and every
/// bias at 0. The same seed always yields the same parameters.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors: Vec<(Slot, TensorKind)> = params
        .layout
        .tensors()
        .iter()
        .map(|(_, s)| *s)
        .zip(params.layout.kinds().iter().copied())
        .collect();
    for (slot, kind) in tensors {
        let values = &mut params.data[slot.range()];
        match kind {
            TensorKind::Gain => values.fill(1.0),
            TensorKind::Bias => {}
            TensorKind::Embedding => values.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5)),
            TensorKind::Weight => {
                // a row vector maps d inputs to one output
                let (fan_in, fan_out) = if slot.rows == 1 { (slot.cols, 1) } else { (slot.rows, slot.cols) };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                values.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
            }
        }
    }
    Ok(params)
}

/// Closed-form parameter count for a config.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let f = cfg.ffn_width;
    let per_layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
    cfg.vocab_size * d
        + cfg.max_len * d
        + cfg.layers * per_layer
        + (2 * d + 2)
        + (d * d + d)
        + (d * d + d)
        + (2 * d * NUM_CLASSES + NUM_CLASSES)
}
