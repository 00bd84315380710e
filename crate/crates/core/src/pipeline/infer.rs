//! Key/non-key inference scheduler over a compressed stream.
//!
//! Key frames run the large extractor, inter-key flow, and long-term
//! fusion; non-key frames run accumulation-driven short-term fusion. The
//! accumulated motion/residual pair is folded forward one record per
//! frame, which keeps per-frame cost flat in the GOP length and agrees
//! with the reference accumulation bit for bit.
//!
//! Timing buckets cover model arithmetic only; bitstream decoding is
//! excluded (motion and residual cues come with the stream). The first
//! GOP is treated as warm-up and left out of reported means whenever more
//! than one GOP is present.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    flow_at_feature_scale, long_term_aggregate, short_term_aggregate,
};
use crate::compressed_stream::{
    accumulate_step, decode_frame, lift_residual, lower_residual, motion_cues_at_feature_scale,
    CompressedClip, Frame,
};
use crate::detection::{detect, DetectionBox};
use crate::error::{Error, Result};
use crate::networks::{
    estimate_flow, extract_large, extract_tiny, residual_project, ModelWeights,
};
use crate::pipeline::config::PipelineConfig;
use crate::tensor_ops::{FeatureMap, MotionField};

/// Wall-clock decomposition of one inference run. Component fields are
/// mean milliseconds per frame of the kind that runs them; totals follow
/// the same convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub gop_length: usize,
    /// Frames that entered the means (warm-up GOP excluded).
    pub key_frames: usize,
    pub nonkey_frames: usize,
    /// Key-frame components.
    pub large_ms: f64,
    pub flow_ms: f64,
    pub lfa_ms: f64,
    /// Non-key components.
    pub tiny_ms: f64,
    pub sfa_ms: f64,
    /// Mean over all measured frames.
    pub head_ms: f64,
    /// Mean total per key frame and per non-key frame.
    pub t_key_ms: f64,
    pub t_nonkey_ms: f64,
    /// Measured mean over all frames.
    pub avg_frame_ms: f64,
    /// Scheduling identity (T_key + (L-1) * T_nonkey) / L.
    pub identity_ms: f64,
}

#[derive(Default)]
struct Buckets {
    large: f64,
    flow: f64,
    lfa: f64,
    tiny: f64,
    sfa: f64,
    head_key: f64,
    head_nonkey: f64,
    key_frames: usize,
    nonkey_frames: usize,
}

impl Buckets {
    fn report(&self, gop_length: usize) -> TimingReport {
        let kf = self.key_frames.max(1) as f64;
        let nf = self.nonkey_frames.max(1) as f64;
        let t_key = (self.large + self.flow + self.lfa + self.head_key) / kf;
        let t_nonkey = if self.nonkey_frames == 0 {
            0.0
        } else {
            (self.tiny + self.sfa + self.head_nonkey) / nf
        };
        let total_frames = (self.key_frames + self.nonkey_frames).max(1) as f64;
        let avg = (self.large
            + self.flow
            + self.lfa
            + self.head_key
            + self.tiny
            + self.sfa
            + self.head_nonkey)
            / total_frames;
        let identity = if self.nonkey_frames == 0 {
            t_key
        } else {
            (t_key + (gop_length as f64 - 1.0) * t_nonkey) / gop_length as f64
        };
        TimingReport {
            gop_length,
            key_frames: self.key_frames,
            nonkey_frames: self.nonkey_frames,
            large_ms: self.large / kf,
            flow_ms: self.flow / kf,
            lfa_ms: self.lfa / kf,
            tiny_ms: if self.nonkey_frames == 0 { 0.0 } else { self.tiny / nf },
            sfa_ms: if self.nonkey_frames == 0 { 0.0 } else { self.sfa / nf },
            head_ms: (self.head_key + self.head_nonkey) / total_frames,
            t_key_ms: t_key,
            t_nonkey_ms: t_nonkey,
            avg_frame_ms: avg,
            identity_ms: identity,
        }
    }
}

#[inline]
fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Run detection over a full compressed stream. Scheduling follows the
/// stream's own GOP length; frame `i` is a key frame iff `i mod L == 0`.
/// Strictly online: frame `i` consumes nothing past record `i`.
pub fn run_inference(
    clip: &CompressedClip,
    w: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<(Vec<Vec<DetectionBox>>, TimingReport)> {
    cfg.validate()?;
    if clip.gops.is_empty() {
        return Err(Error::InvalidParameter("empty compressed stream".into()));
    }
    for gop in &clip.gops {
        if gop.height() != clip.height() || gop.width() != clip.width() {
            return Err(Error::ShapeMismatch(format!(
                "stream dims drift: {}x{} vs {}x{}",
                gop.height(),
                gop.width(),
                clip.height(),
                clip.width()
            )));
        }
    }
    if cfg.frame_baseline {
        return run_frame_baseline(clip, w, cfg);
    }

    let l = clip.params.gop_length;
    let stride = w.spec.stride;
    let mut detections = Vec::with_capacity(clip.frame_count());
    let mut buckets = Buckets::default();
    let warmup_gops = if clip.gops.len() > 1 { 1 } else { 0 };

    let mut f_prime_key: Option<FeatureMap> = None;
    let mut prev_key_frame: Option<Frame> = None;

    for (g, gop) in clip.gops.iter().enumerate() {
        let measure = g >= warmup_gops;
        let key = gop.key_frame();

        let t0 = Instant::now();
        let f_t = extract_large(key, w)?;
        let large_ms = ms_since(t0);

        let mut flow_ms = 0.0;
        let mut lfa_ms = 0.0;
        let fused = match (&f_prime_key, cfg.flags.use_lfa) {
            (Some(prev_feat), true) => {
                let t0 = Instant::now();
                let flow = estimate_flow(prev_key_frame.as_ref().expect("key retained"), key)?;
                let o_t = flow_at_feature_scale(&flow, stride)?;
                flow_ms = ms_since(t0);
                let t0 = Instant::now();
                let (fused, _, _) = long_term_aggregate(&f_t, prev_feat, &o_t, w)?;
                lfa_ms = ms_since(t0);
                fused
            }
            _ => f_t,
        };

        let t0 = Instant::now();
        detections.push(detect(&fused, w, cfg.score_thresh, cfg.nms_iou)?);
        let head_ms = ms_since(t0);

        if measure {
            buckets.large += large_ms;
            buckets.flow += flow_ms;
            buckets.lfa += lfa_ms;
            buckets.head_key += head_ms;
            buckets.key_frames += 1;
        }

        // Accumulated cues for this GOP, advanced one record per frame.
        let mb = gop.macroblock();
        let mut acc_m: Option<MotionField> = None;
        let mut acc_r_lifted: Option<FeatureMap> = None;
        for x in 1..gop.gop_length() {
            let rec = &gop.p_records()[x - 1];
            let decoded = if cfg.flags.use_tiny_term {
                Some(decode_frame(gop, x)?)
            } else {
                None
            };

            let t0 = Instant::now();
            let residual = if x == 1 {
                acc_m = Some(rec.motion_field(mb));
                acc_r_lifted = Some(lift_residual(rec.residual()));
                rec.residual().clone()
            } else {
                let (m, r) = accumulate_step(
                    acc_m.as_ref().expect("seeded at x=1"),
                    acc_r_lifted.as_ref().expect("seeded at x=1"),
                    rec,
                    mb,
                )?;
                let residual = lower_residual(&r)?;
                acc_m = Some(m);
                acc_r_lifted = Some(r);
                residual
            };
            let (m_feat, r_feat) =
                motion_cues_at_feature_scale(acc_m.as_ref().unwrap(), &residual, stride)?;
            let mut sfa_ms = ms_since(t0);

            let mut tiny_ms = 0.0;
            let tiny_feat = if let Some(frame) = &decoded {
                let t0 = Instant::now();
                let f = extract_tiny(frame, w)?;
                tiny_ms = ms_since(t0);
                Some(f)
            } else {
                None
            };

            let t0 = Instant::now();
            let flags = &cfg.flags;
            let zero = || FeatureMap::zeros(fused.channels(), fused.height(), fused.width());
            let resid_term = if flags.use_residual_term {
                residual_project(&r_feat, w)?
            } else {
                zero()
            };
            let tiny_term = tiny_feat.unwrap_or_else(zero);
            let feature = if flags.use_motion_vectors {
                short_term_aggregate(&fused, &m_feat, &resid_term, &tiny_term)?
            } else {
                resid_term.add(&tiny_term)?
            };
            sfa_ms += ms_since(t0);

            let t0 = Instant::now();
            detections.push(detect(&feature, w, cfg.score_thresh, cfg.nms_iou)?);
            let head_ms = ms_since(t0);

            if measure {
                buckets.sfa += sfa_ms;
                buckets.tiny += tiny_ms;
                buckets.head_nonkey += head_ms;
                buckets.nonkey_frames += 1;
            }
        }

        prev_key_frame = Some(key.clone());
        f_prime_key = Some(fused);
    }

    Ok((detections, buckets.report(l)))
}

/// Per-frame baseline: decode every frame and run the key branch on it.
/// No propagation, no aggregation; every frame counts as key kind.
fn run_frame_baseline(
    clip: &CompressedClip,
    w: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<(Vec<Vec<DetectionBox>>, TimingReport)> {
    let l = clip.params.gop_length;
    let mut detections = Vec::with_capacity(clip.frame_count());
    let mut buckets = Buckets::default();
    let warmup_gops = if clip.gops.len() > 1 { 1 } else { 0 };
    for (g, gop) in clip.gops.iter().enumerate() {
        let measure = g >= warmup_gops;
        for x in 0..gop.gop_length() {
            let frame = decode_frame(gop, x)?;
            let t0 = Instant::now();
            let feature = extract_large(&frame, w)?;
            let large_ms = ms_since(t0);
            let t0 = Instant::now();
            detections.push(detect(&feature, w, cfg.score_thresh, cfg.nms_iou)?);
            let head_ms = ms_since(t0);
            if measure {
                buckets.large += large_ms;
                buckets.head_key += head_ms;
                buckets.key_frames += 1;
            }
        }
    }
    Ok((detections, buckets.report(l)))
}
