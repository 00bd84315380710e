//! Runtime profiling: re-encode fixed content at several GOP lengths and
//! measure the per-frame time decomposition at each. Longer GOPs amortize
//! the key-frame cost over more cheap frames, so the average should fall
//! as L grows.

use crate::compressed_stream::{encode_stream, CodecParams, Frame};
use crate::error::{Error, Result};
use crate::networks::ModelWeights;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::infer::{run_inference, TimingReport};

/// Timing sweep over GOP lengths, in sweep order.
#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub per_l: Vec<TimingReport>,
}

impl ProfileReport {
    /// Whether measured average frame time never increases along the
    /// sweep.
    pub fn avg_nonincreasing(&self) -> bool {
        self.per_l
            .windows(2)
            .all(|w| w[1].avg_frame_ms <= w[0].avg_frame_ms)
    }

    /// Largest relative gap between the measured average and the
    /// scheduling identity across the sweep.
    pub fn worst_identity_error(&self) -> f64 {
        self.per_l
            .iter()
            .map(|r| {
                let denom = r.avg_frame_ms.max(1e-12);
                ((r.avg_frame_ms - r.identity_ms) / denom).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn format_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>4} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
            "L", "t_key_ms", "t_nkey_ms", "avg_ms", "ident_ms", "fps"
        ));
        for r in &self.per_l {
            let fps = if r.avg_frame_ms > 0.0 {
                1000.0 / r.avg_frame_ms
            } else {
                0.0
            };
            out.push_str(&format!(
                "{:>4} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>8.1}\n",
                r.gop_length, r.t_key_ms, r.t_nonkey_ms, r.avg_frame_ms, r.identity_ms, fps
            ));
        }
        out
    }
}

/// Profile inference over `frames` for each GOP length in `l_sweep`.
/// Each length runs `repeats` times and keeps the fastest run, which
/// suppresses scheduler noise; the warm-up GOP inside each run is already
/// excluded by the scheduler. Frame count must cover at least two GOPs of
/// every length.
pub fn profile(
    frames: &[Frame],
    w: &ModelWeights,
    cfg: &PipelineConfig,
    l_sweep: &[usize],
    repeats: usize,
) -> Result<ProfileReport> {
    if l_sweep.is_empty() || repeats == 0 {
        return Err(Error::InvalidParameter(
            "profile needs a non-empty sweep and repeats >= 1".into(),
        ));
    }
    let mut per_l = Vec::with_capacity(l_sweep.len());
    for &l in l_sweep {
        if l < 2 {
            return Err(Error::InvalidParameter(format!("GOP length {l} < 2")));
        }
        if frames.len() < 2 * l {
            return Err(Error::InvalidParameter(format!(
                "{} frames cannot cover two GOPs of length {l}",
                frames.len()
            )));
        }
        let n = frames.len() - frames.len() % l;
        let params = CodecParams {
            gop_length: l,
            ..CodecParams::default()
        };
        let stream = encode_stream(&frames[..n], &params)?;
        let run_cfg = PipelineConfig {
            gop_length: l,
            ..cfg.clone()
        };
        let mut best: Option<TimingReport> = None;
        for _ in 0..repeats {
            let (_, timing) = run_inference(&stream, w, &run_cfg)?;
            if best
                .as_ref()
                .map_or(true, |b| timing.avg_frame_ms < b.avg_frame_ms)
            {
                best = Some(timing);
            }
        }
        per_l.push(best.expect("repeats >= 1"));
    }
    Ok(ProfileReport { per_l })
}
