//! Feature aggregation across frames.
//!
//! Key frames fold the previous aggregated key feature into the current one
//! through flow warping and a learned two-way attention (long-term path).
//! Non-key frames are served by propagating the aggregated key feature along
//! accumulated motion and adding the projected residual and the tiny-network
//! feature (short-term path, plain sum).

use crate::compressed_stream::Frame;
use crate::error::{Error, Result};
use crate::networks::{attention_scores, estimate_flow, extract_large, ModelWeights};
use crate::tensor_ops::{
    bilinear_warp, softmax_pair, FeatureMap, MotionField, MotionResolution, WeightMap,
};

/// Recursion state of the long-term path: the latest key index and its
/// aggregated feature. Value-semantic; advancing returns a fresh state.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationState {
    t: usize,
    f_prime_key: FeatureMap,
    gop_length: usize,
}

impl AggregationState {
    /// State for the first key frame of a stream: no predecessor exists,
    /// so the aggregated feature is the extractor output itself.
    pub fn first(key_frame: &Frame, w: &ModelWeights, gop_length: usize) -> Result<Self> {
        Ok(Self {
            t: 0,
            f_prime_key: extract_large(key_frame, w)?,
            gop_length,
        })
    }

    pub fn from_feature(t: usize, f_prime_key: FeatureMap, gop_length: usize) -> Self {
        Self {
            t,
            f_prime_key,
            gop_length,
        }
    }

    pub fn key_index(&self) -> usize {
        self.t
    }

    pub fn feature(&self) -> &FeatureMap {
        &self.f_prime_key
    }

    pub fn gop_length(&self) -> usize {
        self.gop_length
    }
}

/// Multiply every channel of `feature` by the 1-channel `weight` map.
pub fn mul_broadcast(feature: &FeatureMap, weight: &WeightMap) -> Result<FeatureMap> {
    if weight.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            got: weight.channels(),
        });
    }
    if (feature.height(), feature.width()) != (weight.height(), weight.width()) {
        return Err(Error::ShapeMismatch(format!(
            "broadcast: feature {:?} vs weight {:?}",
            feature.shape(),
            weight.shape()
        )));
    }
    let mut out = feature.clone();
    let wplane = weight.channel(0);
    for c in 0..out.channels() {
        for (v, &s) in out.channel_mut(c).iter_mut().zip(wplane) {
            *v *= s;
        }
    }
    Ok(out)
}

/// Adjoint of [`mul_broadcast`]: gradients w.r.t. the feature and the
/// 1-channel weight (channel-summed).
pub fn mul_broadcast_grads(
    feature: &FeatureMap,
    weight: &WeightMap,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, WeightMap)> {
    if !upstream.same_shape(feature) {
        return Err(Error::ShapeMismatch("broadcast grad upstream shape".into()));
    }
    let grad_feature = mul_broadcast(upstream, weight)?;
    let mut grad_weight = FeatureMap::zeros(1, weight.height(), weight.width());
    for c in 0..feature.channels() {
        let f = feature.channel(c);
        let u = upstream.channel(c);
        for (g, (a, b)) in grad_weight.channel_mut(0).iter_mut().zip(f.iter().zip(u)) {
            *g += a * b;
        }
    }
    Ok((grad_feature, grad_weight))
}

/// Rescale a pixel-resolution flow field onto the feature grid: resample
/// to 1/stride resolution and divide magnitudes by the stride so
/// displacements are in feature cells.
pub fn flow_at_feature_scale(flow: &MotionField, stride: usize) -> Result<MotionField> {
    if flow.resolution() != MotionResolution::Pixels {
        return Err(Error::InvalidParameter(
            "expected a pixel-resolution flow field".into(),
        ));
    }
    if stride == 0 || flow.height() % stride != 0 || flow.width() % stride != 0 {
        return Err(Error::InvalidParameter(format!(
            "flow dims {}x{} not divisible by stride {stride}",
            flow.height(),
            flow.width()
        )));
    }
    Ok(flow
        .resized(
            flow.height() / stride,
            flow.width() / stride,
            MotionResolution::FeatureCells,
        )?
        .scaled(1.0 / stride as f64))
}

fn check_feature_pair(a: &FeatureMap, b: &FeatureMap, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_feature_flow(f: &FeatureMap, m: &MotionField, what: &str) -> Result<()> {
    if m.resolution() != MotionResolution::FeatureCells {
        return Err(Error::InvalidParameter(format!(
            "{what}: motion must be in feature cells"
        )));
    }
    if (f.height(), f.width()) != (m.height(), m.width()) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: feature {:?} vs motion {}x{}",
            f.shape(),
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

/// Long-term aggregation for a key frame: warp the previous aggregated key
/// feature along `o_t`, score both candidates with the attention net, and
/// fuse with position-wise softmax weights (which sum to 1, so the output
/// is a per-position convex combination).
pub fn long_term_aggregate(
    f_t: &FeatureMap,
    f_prime_prev: &FeatureMap,
    o_t: &MotionField,
    w: &ModelWeights,
) -> Result<(FeatureMap, WeightMap, WeightMap)> {
    check_feature_pair(f_t, f_prime_prev, "long_term_aggregate")?;
    check_feature_flow(f_t, o_t, "long_term_aggregate")?;
    let warped = bilinear_warp(f_prime_prev, o_t)?;
    let score_cur = attention_scores(f_t, w)?;
    let score_prev = attention_scores(&warped, w)?;
    let (a_t, a_prev) = softmax_pair(&score_cur, &score_prev)?;
    let fused = mul_broadcast(f_t, &a_t)?.add(&mul_broadcast(&warped, &a_prev)?)?;
    Ok((fused, a_t, a_prev))
}

/// Short-term aggregation for a non-key frame: propagate the aggregated
/// key feature along accumulated motion and add the projected residual and
/// tiny-extractor terms. Plain sum, no attention.
pub fn short_term_aggregate(
    f_prime_key: &FeatureMap,
    m: &MotionField,
    r_feat: &FeatureMap,
    tiny_feat: &FeatureMap,
) -> Result<FeatureMap> {
    check_feature_flow(f_prime_key, m, "short_term_aggregate")?;
    check_feature_pair(f_prime_key, r_feat, "short_term_aggregate residual")?;
    check_feature_pair(f_prime_key, tiny_feat, "short_term_aggregate tiny")?;
    bilinear_warp(f_prime_key, m)?.add(r_feat)?.add(tiny_feat)
}

/// Advance the long-term recursion by one key frame: estimate flow from
/// the previous key to the new one, rescale it to feature units, and fuse.
/// The input state is untouched; the returned state's index is t + L.
pub fn advance_key(
    state: &AggregationState,
    new_key_frame: &Frame,
    prev_key_frame: &Frame,
    w: &ModelWeights,
) -> Result<AggregationState> {
    let f_t = extract_large(new_key_frame, w)?;
    let flow = estimate_flow(prev_key_frame, new_key_frame)?;
    let o_t = flow_at_feature_scale(&flow, w.spec.stride)?;
    let (fused, _, _) = long_term_aggregate(&f_t, &state.f_prime_key, &o_t, w)?;
    Ok(AggregationState {
        t: state.t + state.gop_length,
        f_prime_key: fused,
        gop_length: state.gop_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{init_weights, NetworkSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_feature(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn random_frame(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(h, w, (0..3 * h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn zero_attention_fuses_to_plain_average() {
        let w = init_weights(&NetworkSpec::default(), 1).unwrap();
        let f_t = random_feature(2, 32, 4, 4);
        let f_prev = random_feature(3, 32, 4, 4);
        let o = MotionField::zeros(4, 4, MotionResolution::FeatureCells);
        let (fused, a_t, a_prev) = long_term_aggregate(&f_t, &f_prev, &o, &w).unwrap();
        assert!(a_t.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert!(a_prev.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        for ((f, a), b) in fused.data().iter().zip(f_t.data()).zip(f_prev.data()) {
            assert!((f - 0.5 * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_weights_sum_to_one_and_bound_output() {
        let mut w = init_weights(&NetworkSpec::default(), 4).unwrap();
        // Break the zero attention init so weights are non-trivial.
        if let Some(last) = w.attention.layers.last_mut() {
            for (i, v) in last.kernel.weights.iter_mut().enumerate() {
                *v = 0.3 * ((i % 5) as f64 - 2.0);
            }
        }
        let f_t = random_feature(5, 32, 4, 6);
        let f_prev = random_feature(6, 32, 4, 6);
        let mut o = MotionField::zeros(4, 6, MotionResolution::FeatureCells);
        o.set(1, 2, 0.5, -0.25);
        let (fused, a_t, a_prev) = long_term_aggregate(&f_t, &f_prev, &o, &w).unwrap();
        for (a, b) in a_t.data().iter().zip(a_prev.data()) {
            assert!((a + b - 1.0).abs() < 1e-9);
            assert!(*a > 0.0 && *a < 1.0);
        }
        let warped = bilinear_warp(&f_prev, &o).unwrap();
        for ((f, x), y) in fused.data().iter().zip(f_t.data()).zip(warped.data()) {
            let (lo, hi) = (x.min(*y), x.max(*y));
            assert!(*f >= lo - 1e-12 && *f <= hi + 1e-12);
        }
    }

    #[test]
    fn fusion_matches_position_wise_combination() {
        let mut w = init_weights(&NetworkSpec::default(), 7).unwrap();
        if let Some(last) = w.attention.layers.last_mut() {
            last.kernel.weights.iter_mut().for_each(|v| *v = 0.11);
        }
        let f_t = random_feature(8, 32, 3, 5);
        let f_prev = random_feature(9, 32, 3, 5);
        let o = MotionField::uniform(3, 5, 1.0, 0.0, MotionResolution::FeatureCells);
        let (fused, a_t, a_prev) = long_term_aggregate(&f_t, &f_prev, &o, &w).unwrap();
        let warped = bilinear_warp(&f_prev, &o).unwrap();
        for c in 0..32 {
            for y in 0..3 {
                for x in 0..5 {
                    let expect =
                        f_t.get(c, y, x) * a_t.get(0, y, x) + warped.get(c, y, x) * a_prev.get(0, y, x);
                    assert!((fused.get(c, y, x) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn attention_is_shift_invariant() {
        let a = random_feature(10, 1, 4, 4);
        let b = random_feature(11, 1, 4, 4);
        let (wa1, wb1) = softmax_pair(&a, &b).unwrap();
        let shift = |m: &FeatureMap| m.map(|v| v + 3.7);
        let (wa2, wb2) = softmax_pair(&shift(&a), &shift(&b)).unwrap();
        for (x, y) in wa1.data().iter().zip(wa2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in wb1.data().iter().zip(wb2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn short_term_identity_when_extras_are_zero() {
        let f = random_feature(12, 32, 4, 4);
        let zero = FeatureMap::zeros(32, 4, 4);
        let m = MotionField::zeros(4, 4, MotionResolution::FeatureCells);
        let out = short_term_aggregate(&f, &m, &zero, &zero).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn short_term_is_term_wise_sum() {
        let f = random_feature(13, 32, 4, 4);
        let r = random_feature(14, 32, 4, 4);
        let t = random_feature(15, 32, 4, 4);
        let m = MotionField::uniform(4, 4, 0.5, 0.25, MotionResolution::FeatureCells);
        let out = short_term_aggregate(&f, &m, &r, &t).unwrap();
        let warped = bilinear_warp(&f, &m).unwrap();
        for i in 0..out.data().len() {
            let expect = warped.data()[i] + r.data()[i] + t.data()[i];
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn short_term_rejects_pixel_resolution_motion() {
        let f = random_feature(16, 32, 4, 4);
        let zero = FeatureMap::zeros(32, 4, 4);
        let m = MotionField::zeros(4, 4, MotionResolution::Pixels);
        assert!(short_term_aggregate(&f, &m, &zero, &zero).is_err());
    }

    #[test]
    fn first_key_state_is_plain_extraction() {
        let w = init_weights(&NetworkSpec::default(), 20).unwrap();
        let frame = random_frame(21, 32, 32);
        let state = AggregationState::first(&frame, &w, 12).unwrap();
        assert_eq!(state.key_index(), 0);
        assert_eq!(state.feature(), &extract_large(&frame, &w).unwrap());
    }

    #[test]
    fn identical_keys_with_zero_attention_are_a_fixed_point() {
        let w = init_weights(&NetworkSpec::default(), 22).unwrap();
        let frame = random_frame(23, 32, 32);
        let s0 = AggregationState::first(&frame, &w, 12).unwrap();
        let before = s0.clone();
        let mut state = s0.clone();
        for _ in 0..3 {
            state = advance_key(&state, &frame, &frame, &w).unwrap();
            for (a, b) in state.feature().data().iter().zip(s0.feature().data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert_eq!(state.key_index(), 36);
        assert_eq!(s0, before);
    }

    #[test]
    fn flow_rescale_converts_pixels_to_cells() {
        let flow = MotionField::uniform(32, 32, 16.0, -8.0, MotionResolution::Pixels);
        let feat = flow_at_feature_scale(&flow, 16).unwrap();
        assert_eq!((feat.height(), feat.width()), (2, 2));
        assert_eq!(feat.resolution(), MotionResolution::FeatureCells);
        assert!(feat.dx().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(feat.dy().iter().all(|&v| (v + 0.5).abs() < 1e-12));
    }
}
