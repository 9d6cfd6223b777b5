use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{LayerSlots, ModelParams, NUM_CLASSES};
use crate::corpus::PackedInput;
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Everything the heads compute for one packed input.
///
/// Per-story-token vectors are indexed by story position (0 is the first
/// story token), not by sequence position.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Last-layer embeddings for the whole sequence (n × d).
    pub hidden: Array2<f64>,
    pub h_cls: Array1<f64>,
    /// Rationale probability per story token, `σ(u · ReLU(V h_t))`.
    pub rationale_prob: Array1<f64>,
    /// `p_t · h_t` per story token (m × d).
    pub gated: Array2<f64>,
    /// Pooling weights over story tokens; non-negative, sum to one.
    pub attention: Array1<f64>,
    /// `Σ_t a_t · p'_t`.
    pub pooled: Array1<f64>,
    pub start_logits: Array1<f64>,
    pub end_logits: Array1<f64>,
    /// Scores for yes, no, unknown, from `[h_cls ; pooled]`.
    pub class_scores: [f64; NUM_CLASSES],
}

pub(crate) struct LayerCache {
    pub input: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub attn: Vec<Array2<f64>>,
    pub context: Array2<f64>,
    pub ln1: NormCache,
    pub ln1_out: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
    pub ln2: NormCache,
}

pub(crate) struct NormCache {
    pub normed: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) struct HeadCache {
    pub rationale_pre: Array2<f64>,
    pub rationale_act: Array2<f64>,
    pub rationale_logit: Array1<f64>,
    pub pool_pre: Array2<f64>,
    pub pool_act: Array2<f64>,
}

pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub heads: HeadCache,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

pub(crate) fn softmax(xs: ArrayView1<f64>) -> Array1<f64> {
    let max = xs.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = xs.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn softmax_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    a
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut normed = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.mapv(|v| v * v).sum() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let out = &normed * &gain + &bias;
    (out, NormCache { normed, inv_std })
}

fn affine(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w) + &b
}

fn layer_forward(params: &ModelParams, slots: &LayerSlots, x: Array2<f64>) -> (Array2<f64>, LayerCache) {
    let heads = params.config.heads;
    let dh = params.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let xv = x.view();
    let q = affine(&xv, params.mat(slots.wq), params.vector(slots.bq));
    let k = affine(&xv, params.mat(slots.wk), params.vector(slots.bk));
    let v = affine(&xv, params.mat(slots.wv), params.vector(slots.bv));
    let mut context = Array2::zeros(x.raw_dim());
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let probs = softmax_rows(scores);
        context.slice_mut(cols).assign(&probs.dot(&v.slice(cols)));
        attn.push(probs);
    }
    let projected = affine(&context.view(), params.mat(slots.wo), params.vector(slots.bo));
    let (ln1_out, ln1) = layer_norm(&(&x + &projected), params.vector(slots.ln1_gain), params.vector(slots.ln1_bias));
    let ffn_pre = affine(&ln1_out.view(), params.mat(slots.ffn_in), params.vector(slots.ffn_in_bias));
    let ffn_act = relu(&ffn_pre);
    let ffn_out = affine(&ffn_act.view(), params.mat(slots.ffn_out), params.vector(slots.ffn_out_bias));
    let (out, ln2) = layer_norm(&(&ln1_out + &ffn_out), params.vector(slots.ln2_gain), params.vector(slots.ln2_bias));
    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        attn,
        context,
        ln1,
        ln1_out,
        ffn_pre,
        ffn_act,
        ln2,
    };
    (out, cache)
}

pub(crate) fn check_input(params: &ModelParams, input: &PackedInput) -> Result<()> {
    let cfg = &params.config;
    if input.len() > cfg.max_len {
        return Err(Error::Capacity(format!(
            "input of {} tokens exceeds max_len {}",
            input.len(),
            cfg.max_len
        )));
    }
    if input.story_len() == 0 {
        return Err(Error::Capacity("input has no story tokens".into()));
    }
    if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Integrity(format!(
            "token id {id} outside vocab of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

pub(crate) fn forward_cached(params: &ModelParams, input: &PackedInput) -> Result<(ForwardTrace, ForwardCache)> {
    check_input(params, input)?;
    let layout = &params.layout;
    let d = params.config.d_model;
    let n = input.len();

    let tok = params.mat(layout.token_embedding);
    let pos = params.mat(layout.position_embedding);
    let mut x = Array2::zeros((n, d));
    for (i, &id) in input.ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&tok.row(id as usize));
        row += &pos.row(i);
    }

    let mut layers = Vec::with_capacity(layout.layers.len());
    for slots in &layout.layers {
        let (out, cache) = layer_forward(params, slots, x);
        layers.push(cache);
        x = out;
    }
    let hidden = x;
    let h_cls = hidden.row(input.cls_index).to_owned();
    let story = hidden.slice(s![input.story_range(), ..]);

    // span head
    let span = affine(&story, params.mat(layout.span_weight), params.vector(layout.span_bias));
    let start_logits = span.column(0).to_owned();
    let end_logits = span.column(1).to_owned();

    // rationale tagger
    let rationale_pre = story.dot(&params.mat(layout.rationale_hidden));
    let rationale_act = relu(&rationale_pre);
    let rationale_logit = rationale_act.dot(&params.vector(layout.rationale_out));
    let rationale_prob = rationale_logit.mapv(sigmoid);

    // attention pooling over gated story embeddings
    let gated = &story * &rationale_prob.view().insert_axis(Axis(1));
    let pool_pre = gated.dot(&params.mat(layout.pool_hidden));
    let pool_act = relu(&pool_pre);
    let pool_logit = pool_act.dot(&params.vector(layout.pool_score));
    let attention = softmax(pool_logit.view());
    let pooled = gated.t().dot(&attention);

    let mut joint = Array1::zeros(2 * d);
    joint.slice_mut(s![..d]).assign(&h_cls);
    joint.slice_mut(s![d..]).assign(&pooled);
    let scores = joint.dot(&params.mat(layout.class_weight)) + &params.vector(layout.class_bias);
    let class_scores = [scores[0], scores[1], scores[2]];

    let trace = ForwardTrace {
        hidden,
        h_cls,
        rationale_prob,
        gated,
        attention,
        pooled,
        start_logits,
        end_logits,
        class_scores,
    };
    let cache = ForwardCache {
        layers,
        heads: HeadCache {
            rationale_pre,
            rationale_act,
            rationale_logit,
            pool_pre,
            pool_act,
        },
    };
    Ok((trace, cache))
}

/// Runs the encoder and all heads on one packed input.
pub fn forward(params: &ModelParams, input: &PackedInput) -> Result<ForwardTrace> {
    forward_cached(params, input).map(|(trace, _)| trace)
}

/// Self-attention weights of every layer and head; each matrix is n × n with
/// rows indexed by query position.
pub fn self_attention(params: &ModelParams, input: &PackedInput) -> Result<Vec<Vec<Array2<f64>>>> {
    let (_, cache) = forward_cached(params, input)?;
    Ok(cache.layers.into_iter().map(|l| l.attn).collect())
}
