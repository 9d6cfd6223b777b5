use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::forward::{forward_cached, softmax, ForwardCache, ForwardTrace, LayerCache, NormCache};
use super::params::{LayerSlots, ModelParams, NUM_CLASSES};
use crate::corpus::{find_chars, AnswerType, PackedInput, QaItem, Span};
use crate::error::{Error, Result};

/// Class targets in head order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnswerClass {
    Yes = 0,
    No = 1,
    Unknown = 2,
}

impl AnswerClass {
    pub const ALL: [AnswerClass; NUM_CLASSES] = [AnswerClass::Yes, AnswerClass::No, AnswerClass::Unknown];

    pub fn answer_type(self) -> AnswerType {
        match self {
            AnswerClass::Yes => AnswerType::Yes,
            AnswerClass::No => AnswerType::No,
            AnswerClass::Unknown => AnswerType::Unknown,
        }
    }

    pub fn label(self) -> &'static str {
        self.answer_type().as_str()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GoldTarget {
    /// Inclusive start and end token indices, relative to the story segment.
    Span { start: usize, end: usize },
    Class(AnswerClass),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gold {
    pub target: GoldTarget,
    /// 1.0 for story tokens inside the rationale, else 0.0.
    pub rationale_mask: Vec<f64>,
}

impl Gold {
    /// Derives training targets for `item` as packed in `input`.
    ///
    /// A span answer is located inside the rationale when it occurs there,
    /// otherwise at its first occurrence in the story.
    pub fn from_item(item: &QaItem, input: &PackedInput) -> Result<Gold> {
        let target = match item.answer_type {
            AnswerType::Yes => GoldTarget::Class(AnswerClass::Yes),
            AnswerType::No => GoldTarget::Class(AnswerClass::No),
            AnswerType::Unknown => GoldTarget::Class(AnswerClass::Unknown),
            AnswerType::Span => {
                let chars = answer_char_span(item).ok_or_else(|| {
                    Error::Integrity(format!("item {}: span answer not found in story", item.id))
                })?;
                let toks = input.story_tokens_overlapping(chars);
                match (toks.first(), toks.last()) {
                    (Some(&start), Some(&end)) if end < input.story_len() => GoldTarget::Span { start, end },
                    _ => {
                        return Err(Error::Integrity(format!(
                            "item {}: gold span outside the packed story segment",
                            item.id
                        )))
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "item {}: answer type {} has no output head",
                    item.id,
                    other.as_str()
                )))
            }
        };
        let mask = input
            .story_token_map
            .iter()
            .map(|s| if !item.rationale.is_empty() && s.overlaps(&item.rationale) { 1.0 } else { 0.0 })
            .collect();
        Ok(Gold {
            target,
            rationale_mask: mask,
        })
    }
}

fn answer_char_span(item: &QaItem) -> Option<Span> {
    if item.gold_answer.is_empty() {
        return None;
    }
    let rationale = crate::corpus::char_slice(&item.story, item.rationale);
    if let Some(inner) = find_chars(rationale, &item.gold_answer) {
        return Some(Span::new(inner.start + item.rationale.start, inner.end + item.rationale.start));
    }
    find_chars(&item.story, &item.gold_answer)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub qa: f64,
    pub rationale: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Joint distribution over the three class outputs followed by per-token logits.
fn joint_logits(classes: &[f64; NUM_CLASSES], tokens: ArrayView1<f64>) -> Array1<f64> {
    let mut joint = Array1::zeros(NUM_CLASSES + tokens.len());
    joint.slice_mut(s![..NUM_CLASSES]).assign(&ArrayView1::from(&classes[..]));
    joint.slice_mut(s![NUM_CLASSES..]).assign(&tokens);
    joint
}

fn cross_entropy(logits: &Array1<f64>, target: usize) -> (f64, Array1<f64>) {
    let probs = softmax(logits.view());
    let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Loss terms for a finished forward pass, plus gradients w.r.t. the head
/// inputs: `(breakdown, d_start, d_end, d_class, d_rationale_logit)`.
fn head_loss(
    trace: &ForwardTrace,
    cache: &ForwardCache,
    gold: &Gold,
    rationale_weight: f64,
) -> (LossBreakdown, Array1<f64>, Array1<f64>, [f64; NUM_CLASSES], Array1<f64>) {
    let m = trace.start_logits.len();
    let start_joint = joint_logits(&trace.class_scores, trace.start_logits.view());
    let end_joint = joint_logits(&trace.class_scores, trace.end_logits.view());
    let (start_target, end_target) = match gold.target {
        GoldTarget::Span { start, end } => (NUM_CLASSES + start, NUM_CLASSES + end),
        GoldTarget::Class(c) => (c as usize, c as usize),
    };
    let (ls, gs) = cross_entropy(&start_joint, start_target);
    let (le, ge) = cross_entropy(&end_joint, end_target);
    let mut d_class = [0.0; NUM_CLASSES];
    for (k, dc) in d_class.iter_mut().enumerate() {
        *dc = gs[k] + ge[k];
    }
    let d_start = gs.slice(s![NUM_CLASSES..]).to_owned();
    let d_end = ge.slice(s![NUM_CLASSES..]).to_owned();

    let logits = &cache.heads.rationale_logit;
    let mut bce = 0.0;
    let mut d_logit = Array1::zeros(m);
    for t in 0..m {
        let y = gold.rationale_mask[t];
        bce += softplus(logits[t]) - y * logits[t];
        d_logit[t] = rationale_weight * (trace.rationale_prob[t] - y) / m as f64;
    }
    let rationale = bce / m as f64;
    let breakdown = LossBreakdown {
        total: ls + le + rationale_weight * rationale,
        qa: ls + le,
        rationale,
    };
    (breakdown, d_start, d_end, d_class, d_logit)
}

/// Multi-task loss for one example: cross-entropy of the start and end
/// distributions (each over the three class outputs joined with the story
/// token logits) plus `rationale_weight` times the mean binary cross-entropy
/// of the rationale tagger.
pub fn loss(params: &ModelParams, input: &PackedInput, gold: &Gold, rationale_weight: f64) -> Result<LossBreakdown> {
    check_gold(input, gold)?;
    let (trace, cache) = forward_cached(params, input)?;
    Ok(head_loss(&trace, &cache, gold, rationale_weight).0)
}

fn check_gold(input: &PackedInput, gold: &Gold) -> Result<()> {
    let m = input.story_len();
    if gold.rationale_mask.len() != m {
        return Err(Error::Integrity(format!(
            "rationale mask has {} entries for {m} story tokens",
            gold.rationale_mask.len()
        )));
    }
    if let GoldTarget::Span { start, end } = gold.target {
        if start > end || end >= m {
            return Err(Error::Integrity(format!(
                "gold span [{start}, {end}] outside story segment of {m} tokens"
            )));
        }
    }
    Ok(())
}

fn layer_norm_backward(d_out: &Array2<f64>, cache: &NormCache, gain: ArrayView1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d_gain = (d_out * &cache.normed).sum_axis(Axis(0));
    let d_bias = d_out.sum_axis(Axis(0));
    let d_norm = d_out * &gain;
    let d = d_out.ncols() as f64;
    let mut dx = Array2::zeros(d_out.raw_dim());
    for ((mut row, dn), (xh, inv)) in dx
        .rows_mut()
        .into_iter()
        .zip(d_norm.rows())
        .zip(cache.normed.rows().into_iter().zip(cache.inv_std.iter()))
    {
        let mean_dn = dn.sum() / d;
        let mean_dn_x = dn.dot(&xh) / d;
        Zip::from(&mut row)
            .and(&dn)
            .and(&xh)
            .for_each(|o, &g, &xv| *o = inv * (g - mean_dn - xv * mean_dn_x));
    }
    (dx, d_gain, d_bias)
}

fn add_to(grads: &mut ModelParams, slot: super::params::Slot, value: &Array2<f64>) {
    let mut target = grads.mat_mut(slot);
    target += value;
}

fn add_vec(grads: &mut ModelParams, slot: super::params::Slot, value: &Array1<f64>) {
    let mut target = grads.vector_mut(slot);
    target += value;
}

fn relu_mask(pre: &Array2<f64>, upstream: Array2<f64>) -> Array2<f64> {
    let mut out = upstream;
    Zip::from(&mut out).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    out
}

fn layer_backward(
    params: &ModelParams,
    slots: &LayerSlots,
    cache: &LayerCache,
    d_out: Array2<f64>,
    grads: &mut ModelParams,
) -> Array2<f64> {
    let dh = params.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (d_res2, dg2, db2) = layer_norm_backward(&d_out, &cache.ln2, params.vector(slots.ln2_gain));
    add_vec(grads, slots.ln2_gain, &dg2);
    add_vec(grads, slots.ln2_bias, &db2);

    // feed-forward block
    add_to(grads, slots.ffn_out, &cache.ffn_act.t().dot(&d_res2));
    add_vec(grads, slots.ffn_out_bias, &d_res2.sum_axis(Axis(0)));
    let d_act = d_res2.dot(&params.mat(slots.ffn_out).t());
    let d_pre = relu_mask(&cache.ffn_pre, d_act);
    add_to(grads, slots.ffn_in, &cache.ln1_out.t().dot(&d_pre));
    add_vec(grads, slots.ffn_in_bias, &d_pre.sum_axis(Axis(0)));
    let d_ln1_out = d_res2 + d_pre.dot(&params.mat(slots.ffn_in).t());

    let (d_res1, dg1, db1) = layer_norm_backward(&d_ln1_out, &cache.ln1, params.vector(slots.ln1_gain));
    add_vec(grads, slots.ln1_gain, &dg1);
    add_vec(grads, slots.ln1_bias, &db1);

    // self-attention block
    add_to(grads, slots.wo, &cache.context.t().dot(&d_res1));
    add_vec(grads, slots.bo, &d_res1.sum_axis(Axis(0)));
    let d_context = d_res1.dot(&params.mat(slots.wo).t());
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, probs) in cache.attn.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_ctx = d_context.slice(cols);
        let d_probs = d_ctx.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&d_ctx));
        let row_dot = (&d_probs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = probs * &(&d_probs - &row_dot) * scale;
        dq.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
    }
    let x = &cache.input;
    add_to(grads, slots.wq, &x.t().dot(&dq));
    add_vec(grads, slots.bq, &dq.sum_axis(Axis(0)));
    add_to(grads, slots.wk, &x.t().dot(&dk));
    add_vec(grads, slots.bk, &dk.sum_axis(Axis(0)));
    add_to(grads, slots.wv, &x.t().dot(&dv));
    add_vec(grads, slots.bv, &dv.sum_axis(Axis(0)));
    d_res1
        + dq.dot(&params.mat(slots.wq).t())
        + dk.dot(&params.mat(slots.wk).t())
        + dv.dot(&params.mat(slots.wv).t())
}

/// Computes the loss and accumulates its gradient into `grads`.
pub fn accumulate_grads(
    params: &ModelParams,
    input: &PackedInput,
    gold: &Gold,
    rationale_weight: f64,
    grads: &mut ModelParams,
) -> Result<LossBreakdown> {
    check_gold(input, gold)?;
    let (trace, cache) = forward_cached(params, input)?;
    let (breakdown, d_start, d_end, d_class, d_rat_logit) = head_loss(&trace, &cache, gold, rationale_weight);
    let layout = &params.layout;
    let d = params.config.d_model;
    let m = input.story_len();
    let story_range = input.story_range();
    let story = trace.hidden.slice(s![story_range.clone(), ..]);
    let mut d_hidden: Array2<f64> = Array2::zeros(trace.hidden.raw_dim());
    let mut d_story: Array2<f64> = Array2::zeros((m, d));

    // span head
    let mut d_span = Array2::zeros((m, 2));
    d_span.column_mut(0).assign(&d_start);
    d_span.column_mut(1).assign(&d_end);
    add_to(grads, layout.span_weight, &story.t().dot(&d_span));
    add_vec(grads, layout.span_bias, &d_span.sum_axis(Axis(0)));
    d_story += &d_span.dot(&params.mat(layout.span_weight).t());

    // class head over [h_cls ; pooled]
    let d_class = Array1::from(d_class.to_vec());
    let mut joint = Array1::zeros(2 * d);
    joint.slice_mut(s![..d]).assign(&trace.h_cls);
    joint.slice_mut(s![d..]).assign(&trace.pooled);
    let outer = joint
        .view()
        .insert_axis(Axis(1))
        .dot(&d_class.view().insert_axis(Axis(0)));
    add_to(grads, layout.class_weight, &outer);
    add_vec(grads, layout.class_bias, &d_class);
    let d_joint = params.mat(layout.class_weight).dot(&d_class);
    let d_cls = d_joint.slice(s![..d]).to_owned();
    let d_pooled = d_joint.slice(s![d..]).to_owned();

    // attention pooling: pooled = Σ a_t p'_t, a = softmax(w1 · ReLU(W2 p'_t))
    let a = &trace.attention;
    let mut d_gated = a.view().insert_axis(Axis(1)).dot(&d_pooled.view().insert_axis(Axis(0)));
    let d_a = trace.gated.dot(&d_pooled);
    let d_score = a * &(&d_a - a.dot(&d_a));
    let heads = &cache.heads;
    add_vec(grads, layout.pool_score, &heads.pool_act.t().dot(&d_score));
    let d_pool_act = d_score
        .view()
        .insert_axis(Axis(1))
        .dot(&params.vector(layout.pool_score).insert_axis(Axis(0)));
    let d_pool_pre = relu_mask(&heads.pool_pre, d_pool_act);
    add_to(grads, layout.pool_hidden, &trace.gated.t().dot(&d_pool_pre));
    d_gated += &d_pool_pre.dot(&params.mat(layout.pool_hidden).t());

    // gating: p'_t = p_t h_t
    let p = &trace.rationale_prob;
    let d_p = (&d_gated * &story).sum_axis(Axis(1));
    d_story += &(&d_gated * &p.view().insert_axis(Axis(1)));

    // rationale tagger: p_t = σ(u · ReLU(V h_t))
    let d_logit = d_rat_logit + &(&d_p * &p.mapv(|v| v * (1.0 - v)));
    add_vec(grads, layout.rationale_out, &heads.rationale_act.t().dot(&d_logit));
    let d_rat_act = d_logit
        .view()
        .insert_axis(Axis(1))
        .dot(&params.vector(layout.rationale_out).insert_axis(Axis(0)));
    let d_rat_pre = relu_mask(&heads.rationale_pre, d_rat_act);
    add_to(grads, layout.rationale_hidden, &story.t().dot(&d_rat_pre));
    d_story += &d_rat_pre.dot(&params.mat(layout.rationale_hidden).t());

    d_hidden.slice_mut(s![story_range, ..]).assign(&d_story);
    {
        let mut row = d_hidden.row_mut(input.cls_index);
        row += &d_cls;
    }

    let mut d_x = d_hidden;
    for (slots, layer_cache) in layout.layers.iter().zip(&cache.layers).rev() {
        d_x = layer_backward(params, slots, layer_cache, d_x, grads);
    }

    let tok_slot = layout.token_embedding;
    let pos_slot = layout.position_embedding;
    for (i, &id) in input.ids.iter().enumerate() {
        let row = d_x.row(i);
        {
            let mut tok = grads.mat_mut(tok_slot);
            let mut t = tok.row_mut(id as usize);
            t += &row;
        }
        let mut pos = grads.mat_mut(pos_slot);
        let mut pr = pos.row_mut(i);
        pr += &row;
    }
    Ok(breakdown)
}

/// Loss and a fresh gradient buffer for one example.
pub fn loss_and_grads(
    params: &ModelParams,
    input: &PackedInput,
    gold: &Gold,
    rationale_weight: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    let mut grads = params.zeros_like();
    let loss = accumulate_grads(params, input, gold, rationale_weight, &mut grads)?;
    Ok((loss, grads))
}
