//! Triplet training: previous key, current key, and one sampled non-key
//! frame per example. The forward pass is long-term fusion across the two
//! keys, short-term fusion to the non-key, then the head; the loss is
//! sigmoid cross-entropy over all cells plus smooth-L1 box regression on
//! positive cells. Motion fields and residual cues are constants; the
//! backward pass is written out against the forward caches. SGD with
//! momentum, one decay event, deterministic for a fixed seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{flow_at_feature_scale, mul_broadcast, mul_broadcast_grads};
use crate::compressed_stream::{
    accumulate_to_key, encode_stream, motion_cues_at_feature_scale, CodecParams, Frame,
    ResidualMap,
};
use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::networks::{estimate_flow, ModelWeights, NetCache, NetworkSpec};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::synth::SyntheticClip;
use crate::tensor_ops::{
    bilinear_resize, bilinear_warp, softmax_pair, softmax_pair_grad, warp_grad_features,
    FeatureMap, KernelGrads, MotionField, ScoreMap, WeightMap,
};

/// Precomputed cues for one candidate non-key frame.
struct NonKeySample {
    m_feat: MotionField,
    r_feat: ResidualMap,
    /// Quarter-resolution frame, the tiny extractor's input.
    quarter: FeatureMap,
    gts: Vec<GroundTruthBox>,
}

/// Compact per-clip training material: the two key frames, frozen
/// inter-key flow at feature scale, and every non-key candidate.
struct ClipSamples {
    prev_key: Frame,
    cur_key: Frame,
    prev_gts: Vec<GroundTruthBox>,
    cur_gts: Vec<GroundTruthBox>,
    o_t: MotionField,
    nonkeys: Vec<NonKeySample>,
}

/// Prepared dataset plus config: owns everything a loss evaluation needs.
pub struct TrainContext {
    samples: Vec<ClipSamples>,
    cfg: PipelineConfig,
}

/// Gradients shaped like the model, aligned with `ModelWeights::groups`.
struct ModelGrads {
    per_group: Vec<Vec<KernelGrads>>,
}

impl ModelGrads {
    fn zeros(w: &ModelWeights) -> Self {
        let per_group = w
            .groups()
            .iter()
            .map(|net| {
                net.layers
                    .iter()
                    .map(|l| KernelGrads {
                        weights: vec![0.0; l.kernel.weights.len()],
                        bias: vec![0.0; l.kernel.bias.len()],
                    })
                    .collect()
            })
            .collect();
        ModelGrads { per_group }
    }

    fn add(&mut self, group: usize, grads: &[KernelGrads]) {
        for (acc, g) in self.per_group[group].iter_mut().zip(grads) {
            for (a, v) in acc.weights.iter_mut().zip(&g.weights) {
                *a += v;
            }
            for (a, v) in acc.bias.iter_mut().zip(&g.bias) {
                *a += v;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for group in &mut self.per_group {
            for g in group {
                g.weights.iter_mut().for_each(|v| *v *= s);
                g.bias.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Flat layout identical to `ModelWeights::flatten_params`.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for group in &self.per_group {
            for g in group {
                out.extend_from_slice(&g.weights);
                out.extend_from_slice(&g.bias);
            }
        }
        out
    }
}

/// Group indices into `ModelWeights::groups()`.
const G_LARGE: usize = 0;
const G_TINY: usize = 1;
const G_ATTENTION: usize = 2;
const G_RESIDUAL: usize = 3;
const G_TRUNK: usize = 4;
const G_CLS: usize = 5;
const G_BOX: usize = 6;

impl TrainContext {
    /// Encode each clip and precompute frozen cues. Clips must hold at
    /// least two full GOPs so a (prev key, cur key, non-key) triplet
    /// exists.
    pub fn prepare(clips: &[SyntheticClip], cfg: &PipelineConfig) -> Result<TrainContext> {
        cfg.validate()?;
        if clips.is_empty() {
            return Err(Error::InvalidParameter("no training clips".into()));
        }
        let l = cfg.gop_length;
        let stride = 16;
        let mut samples = Vec::with_capacity(clips.len());
        for clip in clips {
            if clip.frames.len() < 2 * l {
                return Err(Error::InvalidParameter(format!(
                    "training clips need at least {} frames (two GOPs), got {}",
                    2 * l,
                    clip.frames.len()
                )));
            }
            let prev_key = clip.frames[0].clone();
            let cur_key = clip.frames[l].clone();
            let mut nonkeys = Vec::with_capacity(l - 1);
            if cfg.frame_baseline {
                // The baseline trains a per-frame detector; the two key
                // frames already cover its input distribution.
                samples.push(ClipSamples {
                    prev_key,
                    cur_key,
                    prev_gts: clip.gts[0].clone(),
                    cur_gts: clip.gts[l].clone(),
                    o_t: MotionField::zeros(
                        clip.frames[0].height() / stride,
                        clip.frames[0].width() / stride,
                        crate::tensor_ops::MotionResolution::FeatureCells,
                    ),
                    nonkeys,
                });
                continue;
            }
            let params = CodecParams {
                gop_length: l,
                ..CodecParams::default()
            };
            let stream = encode_stream(&clip.frames[..2 * l], &params)?;
            let flow = estimate_flow(&prev_key, &cur_key)?;
            let o_t = flow_at_feature_scale(&flow, stride)?;
            let gop = &stream.gops[1];
            for x in 1..l {
                let (m, r) = accumulate_to_key(gop, x)?;
                let (m_feat, r_feat) = motion_cues_at_feature_scale(&m, &r, stride)?;
                let frame = &clip.frames[l + x];
                let quarter = bilinear_resize(
                    &frame.to_feature_map(),
                    frame.height() / 4,
                    frame.width() / 4,
                )?;
                nonkeys.push(NonKeySample {
                    m_feat,
                    r_feat,
                    quarter,
                    gts: clip.gts[l + x].clone(),
                });
            }
            samples.push(ClipSamples {
                prev_key,
                cur_key,
                prev_gts: clip.gts[0].clone(),
                cur_gts: clip.gts[l].clone(),
                o_t,
                nonkeys,
            });
        }
        Ok(TrainContext {
            samples,
            cfg: cfg.clone(),
        })
    }

    pub fn clip_count(&self) -> usize {
        self.samples.len()
    }

    pub fn nonkeys_per_clip(&self) -> usize {
        self.samples.first().map_or(0, |s| s.nonkeys.len())
    }

    /// Loss of one sample, forward only. `nonkey_idx` selects the offset
    /// x = nonkey_idx + 1; in baseline mode it selects one of the two key
    /// frames instead (even = previous, odd = current).
    pub fn loss(&self, w: &ModelWeights, clip_idx: usize, nonkey_idx: usize) -> Result<f64> {
        Ok(self.forward(w, clip_idx, nonkey_idx)?.loss)
    }

    /// Loss plus the analytic gradient, flattened in
    /// `ModelWeights::flatten_params` order.
    pub fn loss_grad(
        &self,
        w: &ModelWeights,
        clip_idx: usize,
        nonkey_idx: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grads = ModelGrads::zeros(w);
        let loss = self.accumulate_grad(w, clip_idx, nonkey_idx, &mut grads)?;
        Ok((loss, grads.flatten()))
    }

    fn forward(&self, w: &ModelWeights, clip_idx: usize, nonkey_idx: usize) -> Result<Forward> {
        let clip = self
            .samples
            .get(clip_idx)
            .ok_or_else(|| Error::InvalidParameter(format!("clip index {clip_idx}")))?;
        if self.cfg.frame_baseline {
            return self.forward_baseline(w, clip, nonkey_idx);
        }
        let sample = clip.nonkeys.get(nonkey_idx).ok_or_else(|| {
            Error::InvalidParameter(format!("non-key index {nonkey_idx}"))
        })?;
        let flags = &self.cfg.flags;

        let (f_cur, cache_cur) = w.large.forward_cached(&clip.cur_key.to_feature_map())?;
        let lfa = if flags.use_lfa {
            let (f_prev, cache_prev) = w.large.forward_cached(&clip.prev_key.to_feature_map())?;
            let warped_prev = bilinear_warp(&f_prev, &clip.o_t)?;
            let (s_cur, cache_att_cur) = w.attention.forward_cached(&f_cur)?;
            let (s_prev, cache_att_prev) = w.attention.forward_cached(&warped_prev)?;
            let (a_cur, a_prev) = softmax_pair(&s_cur, &s_prev)?;
            let fused = mul_broadcast(&f_cur, &a_cur)?.add(&mul_broadcast(&warped_prev, &a_prev)?)?;
            Some(LfaPass {
                f_prev,
                cache_prev,
                o_t: clip.o_t.clone(),
                warped_prev,
                s_cur,
                s_prev,
                cache_att_cur,
                cache_att_prev,
                a_cur,
                a_prev,
                fused,
            })
        } else {
            None
        };
        let fused = lfa.as_ref().map_or(&f_cur, |p| &p.fused);

        let zero = || FeatureMap::zeros(fused.channels(), fused.height(), fused.width());
        let warp_term = if flags.use_motion_vectors {
            bilinear_warp(fused, &sample.m_feat)?
        } else {
            zero()
        };
        let resid = if flags.use_residual_term {
            let (out, cache) = w
                .residual_proj
                .forward_cached(&sample.r_feat.to_feature_map())?;
            Some((out, cache))
        } else {
            None
        };
        let tiny = if flags.use_tiny_term {
            let (out, cache) = w.tiny.forward_cached(&sample.quarter)?;
            Some((out, cache))
        } else {
            None
        };
        let mut feat = warp_term;
        if let Some((out, _)) = &resid {
            feat = feat.add(out)?;
        }
        if let Some((out, _)) = &tiny {
            feat = feat.add(out)?;
        }

        let (trunk, cache_trunk) = w.head_trunk.forward_cached(&feat)?;
        let (cls, cache_cls) = w.head_cls.forward_cached(&trunk)?;
        let (boxes, cache_box) = w.head_box.forward_cached(&trunk)?;
        let (loss, d_cls, d_box) = detection_loss(&cls, &boxes, &sample.gts, &self.cfg)?;

        Ok(Forward {
            loss,
            d_cls,
            d_box,
            f_cur,
            cache_cur,
            lfa,
            resid_cache: resid.map(|(_, c)| c),
            tiny_cache: tiny.map(|(_, c)| c),
            cache_trunk,
            cache_cls,
            cache_box,
            sample_flow: Some(sample.m_feat.clone()),
            baseline: false,
        })
    }

    fn forward_baseline(
        &self,
        w: &ModelWeights,
        clip: &ClipSamples,
        pick: usize,
    ) -> Result<Forward> {
        let (frame, gts) = if pick % 2 == 0 {
            (&clip.prev_key, &clip.prev_gts)
        } else {
            (&clip.cur_key, &clip.cur_gts)
        };
        let (feat, cache_cur) = w.large.forward_cached(&frame.to_feature_map())?;
        let (trunk, cache_trunk) = w.head_trunk.forward_cached(&feat)?;
        let (cls, cache_cls) = w.head_cls.forward_cached(&trunk)?;
        let (boxes, cache_box) = w.head_box.forward_cached(&trunk)?;
        let (loss, d_cls, d_box) = detection_loss(&cls, &boxes, gts, &self.cfg)?;
        Ok(Forward {
            loss,
            d_cls,
            d_box,
            f_cur: feat,
            cache_cur,
            lfa: None,
            resid_cache: None,
            tiny_cache: None,
            cache_trunk,
            cache_cls,
            cache_box,
            sample_flow: None,
            baseline: true,
        })
    }

    /// Backward pass of one sample; gradients are added into `grads`.
    fn accumulate_grad(
        &self,
        w: &ModelWeights,
        clip_idx: usize,
        nonkey_idx: usize,
        grads: &mut ModelGrads,
    ) -> Result<f64> {
        let fwd = self.forward(w, clip_idx, nonkey_idx)?;
        let flags = &self.cfg.flags;

        let (d_trunk_cls, g_cls) = w.head_cls.backward(&fwd.cache_cls, &fwd.d_cls)?;
        grads.add(G_CLS, &g_cls);
        let (d_trunk_box, g_box) = w.head_box.backward(&fwd.cache_box, &fwd.d_box)?;
        grads.add(G_BOX, &g_box);
        let d_trunk = d_trunk_cls.add(&d_trunk_box)?;
        let (d_feat, g_trunk) = w.head_trunk.backward(&fwd.cache_trunk, &d_trunk)?;
        grads.add(G_TRUNK, &g_trunk);

        if fwd.baseline {
            let (_, g_large) = w.large.backward(&fwd.cache_cur, &d_feat)?;
            grads.add(G_LARGE, &g_large);
            return Ok(fwd.loss);
        }

        if let Some(cache) = &fwd.resid_cache {
            let (_, g_proj) = w.residual_proj.backward(cache, &d_feat)?;
            grads.add(G_RESIDUAL, &g_proj);
        }
        if let Some(cache) = &fwd.tiny_cache {
            let (_, g_tiny) = w.tiny.backward(cache, &d_feat)?;
            grads.add(G_TINY, &g_tiny);
        }

        // Gradient into the fused key feature through the warp term.
        let d_fused = if flags.use_motion_vectors {
            let fused_map = fwd.lfa.as_ref().map_or(&fwd.f_cur, |p| &p.fused);
            warp_grad_features(
                fused_map,
                fwd.sample_flow.as_ref().expect("non-baseline sample"),
                &d_feat,
            )?
        } else {
            FeatureMap::zeros(d_feat.channels(), d_feat.height(), d_feat.width())
        };

        match &fwd.lfa {
            None => {
                let (_, g_large) = w.large.backward(&fwd.cache_cur, &d_fused)?;
                grads.add(G_LARGE, &g_large);
            }
            Some(p) => {
                let (d_f_cur_mul, d_a_cur) = mul_broadcast_grads(&fwd.f_cur, &p.a_cur, &d_fused)?;
                let (d_warped_mul, d_a_prev) =
                    mul_broadcast_grads(&p.warped_prev, &p.a_prev, &d_fused)?;
                let (d_s_cur, d_s_prev) =
                    softmax_pair_grad(&p.s_cur, &p.s_prev, &d_a_cur, &d_a_prev)?;
                let (d_f_cur_att, g_att_cur) = w.attention.backward(&p.cache_att_cur, &d_s_cur)?;
                grads.add(G_ATTENTION, &g_att_cur);
                let (d_warped_att, g_att_prev) =
                    w.attention.backward(&p.cache_att_prev, &d_s_prev)?;
                grads.add(G_ATTENTION, &g_att_prev);
                let d_f_cur = d_f_cur_mul.add(&d_f_cur_att)?;
                let d_warped = d_warped_mul.add(&d_warped_att)?;
                let d_f_prev = warp_grad_features(&p.f_prev, &p.o_t, &d_warped)?;
                let (_, g_large_cur) = w.large.backward(&fwd.cache_cur, &d_f_cur)?;
                grads.add(G_LARGE, &g_large_cur);
                let (_, g_large_prev) = w.large.backward(&p.cache_prev, &d_f_prev)?;
                grads.add(G_LARGE, &g_large_prev);
            }
        }
        Ok(fwd.loss)
    }
}

/// Retained long-term-fusion intermediates.
struct LfaPass {
    f_prev: FeatureMap,
    cache_prev: NetCache,
    o_t: MotionField,
    warped_prev: FeatureMap,
    s_cur: ScoreMap,
    s_prev: ScoreMap,
    cache_att_cur: NetCache,
    cache_att_prev: NetCache,
    a_cur: WeightMap,
    a_prev: WeightMap,
    fused: FeatureMap,
}

struct Forward {
    loss: f64,
    d_cls: FeatureMap,
    d_box: FeatureMap,
    f_cur: FeatureMap,
    cache_cur: NetCache,
    lfa: Option<LfaPass>,
    resid_cache: Option<NetCache>,
    tiny_cache: Option<NetCache>,
    cache_trunk: NetCache,
    cache_cls: NetCache,
    cache_box: NetCache,
    sample_flow: Option<MotionField>,
    baseline: bool,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cell-level target assignment: a cell is positive when its center lies
/// inside a ground-truth box (nearest box center wins contested cells).
/// Returns one-hot class targets and per-positive box edge distances.
fn assign_targets(
    gts: &[GroundTruthBox],
    num_classes: usize,
    hc: usize,
    wc: usize,
    stride: usize,
) -> (Vec<f64>, Vec<(usize, [f64; 4])>) {
    let mut cls_targets = vec![0.0; num_classes * hc * wc];
    let mut positives = Vec::new();
    for r in 0..hc {
        for c in 0..wc {
            let cx = (c * stride + stride / 2) as f64;
            let cy = (r * stride + stride / 2) as f64;
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if cx >= gt.x1 && cx < gt.x2 && cy >= gt.y1 && cy < gt.y2 {
                    let bx = (gt.x1 + gt.x2) * 0.5;
                    let by = (gt.y1 + gt.y2) * 0.5;
                    let d2 = (cx - bx).powi(2) + (cy - by).powi(2);
                    if best.map_or(true, |(_, bd)| d2 < bd) {
                        best = Some((gi, d2));
                    }
                }
            }
            if let Some((gi, _)) = best {
                let gt = &gts[gi];
                let cell = r * wc + c;
                if gt.class_id < num_classes {
                    cls_targets[gt.class_id * hc * wc + cell] = 1.0;
                    positives.push((
                        cell,
                        [cx - gt.x1, cy - gt.y1, gt.x2 - cx, gt.y2 - cy],
                    ));
                }
            }
        }
    }
    (cls_targets, positives)
}

/// Sigmoid cross-entropy over every (class, cell) logit plus smooth-L1 on
/// positive cells' box channels. Returns the scalar loss and gradients
/// w.r.t. both head outputs.
fn detection_loss(
    cls: &FeatureMap,
    boxes: &FeatureMap,
    gts: &[GroundTruthBox],
    cfg: &PipelineConfig,
) -> Result<(f64, FeatureMap, FeatureMap)> {
    let (k, hc, wc) = cls.shape();
    if boxes.shape() != (4, hc, wc) {
        return Err(Error::ShapeMismatch(format!(
            "box head output {:?}",
            boxes.shape()
        )));
    }
    let t = &cfg.train;
    let (cls_targets, positives) = assign_targets(gts, k, hc, wc, 16);
    let n = (k * hc * wc) as f64;

    let mut cls_loss = 0.0;
    let mut d_cls = FeatureMap::zeros(k, hc, wc);
    for i in 0..cls.data().len() {
        let z = cls.data()[i];
        let y = cls_targets[i];
        let w = if y > 0.5 { t.cls_pos_weight } else { 1.0 };
        // Stable form of -[y ln s + (1-y) ln (1-s)].
        cls_loss += w * (z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln());
        d_cls.data_mut()[i] = w * (sigmoid(z) - y) / n;
    }
    cls_loss /= n;

    let mut box_loss = 0.0;
    let mut d_box = FeatureMap::zeros(4, hc, wc);
    if !positives.is_empty() {
        let delta = t.huber_delta;
        let norm = (4 * positives.len()) as f64;
        let plane = hc * wc;
        for &(cell, target) in &positives {
            for j in 0..4 {
                let d = boxes.data()[j * plane + cell] - target[j];
                box_loss += if d.abs() < delta {
                    0.5 * d * d / delta
                } else {
                    d.abs() - 0.5 * delta
                };
                d_box.data_mut()[j * plane + cell] =
                    t.box_loss_weight * (d / delta).clamp(-1.0, 1.0) / norm;
            }
        }
        box_loss /= norm;
    }

    Ok((
        cls_loss + t.box_loss_weight * box_loss,
        d_cls,
        d_box,
    ))
}

/// Train and also return the per-step batch loss curve.
pub fn train_with_losses(
    clips: &[SyntheticClip],
    cfg: &PipelineConfig,
) -> Result<(ModelWeights, Vec<f64>)> {
    let ctx = TrainContext::prepare(clips, cfg)?;
    let spec = NetworkSpec::with_classes(cfg.num_classes);
    let mut w = crate::networks::init_weights(&spec, cfg.weight_seed)?;
    let t = cfg.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let mut theta = w.flatten_params();
    let mut velocity = vec![0.0; theta.len()];
    let mut losses = Vec::with_capacity(t.steps);

    let per_clip = if cfg.frame_baseline {
        2
    } else {
        ctx.nonkeys_per_clip()
    };
    if per_clip == 0 {
        return Err(Error::InvalidParameter("no samples per clip".into()));
    }

    for step in 0..t.steps {
        let mut grads = ModelGrads::zeros(&w);
        let mut batch_loss = 0.0;
        for _ in 0..t.batch_size {
            let clip_idx = rng.gen_range(0..ctx.clip_count());
            let sample_idx = rng.gen_range(0..per_clip);
            match ctx.accumulate_grad(&w, clip_idx, sample_idx, &mut grads) {
                Ok(loss) => batch_loss += loss,
                // Exploded activations surface as non-finite tensors before
                // the loss is even formed; both mean the same thing here.
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
                Err(e) => return Err(e),
            }
        }
        batch_loss /= t.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(batch_loss);
        grads.scale(1.0 / t.batch_size as f64);
        let flat = grads.flatten();
        let lr = if step >= t.lr_decay_step {
            t.learning_rate * t.lr_decay_factor
        } else {
            t.learning_rate
        };
        for ((v, g), p) in velocity.iter_mut().zip(&flat).zip(theta.iter_mut()) {
            *v = t.momentum * *v + g;
            *p -= lr * *v;
        }
        w.load_flat(&theta)?;
    }
    Ok((w, losses))
}

/// Train detection and aggregation weights on synthetic clips.
pub fn train(clips: &[SyntheticClip], cfg: &PipelineConfig) -> Result<ModelWeights> {
    train_with_losses(clips, cfg).map(|(w, _)| w)
}
