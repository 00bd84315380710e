//! Ablation harness: train one model per term configuration, evaluate all
//! of them on the same validation clips, and emit a uniform table of
//! accuracy (overall and per speed stratum) plus runtime.

use crate::compressed_stream::{encode_stream, CodecParams};
use crate::detection::{evaluate_map, label_motion_speed, EvalReport};
use crate::error::{Error, Result};
use crate::pipeline::config::{AblationFlags, PipelineConfig};
use crate::pipeline::infer::{run_inference, TimingReport};
use crate::pipeline::synth::SyntheticClip;
use crate::pipeline::train::train;

/// One configuration under test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub flags: AblationFlags,
    pub frame_baseline: bool,
}

/// Result row: the variant, its validation evaluation, and merged timing.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub eval: EvalReport,
    pub timing: TimingReport,
}

/// The standard sweep: per-frame baseline, bare propagation, then each
/// short-term term added in turn, then the full model with long-term
/// fusion.
pub fn default_ablation_grid() -> Vec<AblationVariant> {
    let base = AblationFlags {
        use_motion_vectors: true,
        use_residual_term: false,
        use_tiny_term: false,
        use_lfa: false,
    };
    vec![
        AblationVariant {
            name: "frame_baseline",
            flags: AblationFlags::default(),
            frame_baseline: true,
        },
        AblationVariant {
            name: "propagation_only",
            flags: base,
            frame_baseline: false,
        },
        AblationVariant {
            name: "with_residual",
            flags: AblationFlags {
                use_residual_term: true,
                ..base
            },
            frame_baseline: false,
        },
        AblationVariant {
            name: "with_tiny",
            flags: AblationFlags {
                use_residual_term: true,
                use_tiny_term: true,
                ..base
            },
            frame_baseline: false,
        },
        AblationVariant {
            name: "full",
            flags: AblationFlags::default(),
            frame_baseline: false,
        },
    ]
}

/// Train and evaluate every variant. Each variant trains its own weights
/// from the same initialization seed, then runs inference over the
/// validation clips (truncated to whole GOPs).
pub fn run_ablation(
    train_clips: &[SyntheticClip],
    val_clips: &[SyntheticClip],
    cfg: &PipelineConfig,
    grid: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty ablation grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for variant in grid {
        let variant_cfg = PipelineConfig {
            flags: variant.flags,
            frame_baseline: variant.frame_baseline,
            ..cfg.clone()
        };
        let w = train(train_clips, &variant_cfg)?;
        let (eval, timing) = evaluate_variant(val_clips, &w, &variant_cfg)?;
        rows.push(AblationRow {
            variant: variant.clone(),
            eval,
            timing,
        });
    }
    Ok(rows)
}

fn evaluate_variant(
    val_clips: &[SyntheticClip],
    w: &crate::networks::ModelWeights,
    cfg: &PipelineConfig,
) -> Result<(EvalReport, TimingReport)> {
    let params = CodecParams {
        gop_length: cfg.gop_length,
        ..CodecParams::default()
    };
    let mut all_dets = Vec::new();
    let mut all_gts = Vec::new();
    let mut timings = Vec::new();
    for clip in val_clips {
        let n = clip.frames.len() - clip.frames.len() % cfg.gop_length;
        if n == 0 {
            return Err(Error::InvalidParameter(format!(
                "validation clip shorter than one GOP ({} frames)",
                clip.frames.len()
            )));
        }
        let stream = encode_stream(&clip.frames[..n], &params)?;
        let (dets, timing) = run_inference(&stream, w, cfg)?;
        let labeled = label_motion_speed(&clip.gts[..n], cfg.speed_window);
        all_dets.extend(dets);
        all_gts.extend(labeled);
        timings.push(timing);
    }
    Ok((
        evaluate_map(&all_dets, &all_gts, cfg.eval_iou)?,
        merge_timing(&timings, cfg.gop_length),
    ))
}

/// Recombine per-clip reports into one, weighting each mean by its frame
/// count.
fn merge_timing(reports: &[TimingReport], gop_length: usize) -> TimingReport {
    let mut key_frames = 0usize;
    let mut nonkey_frames = 0usize;
    let (mut large, mut flow, mut lfa, mut tiny, mut sfa, mut head) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut key_total, mut nonkey_total) = (0.0, 0.0);
    for r in reports {
        let kf = r.key_frames as f64;
        let nf = r.nonkey_frames as f64;
        key_frames += r.key_frames;
        nonkey_frames += r.nonkey_frames;
        large += r.large_ms * kf;
        flow += r.flow_ms * kf;
        lfa += r.lfa_ms * kf;
        tiny += r.tiny_ms * nf;
        sfa += r.sfa_ms * nf;
        head += r.head_ms * (kf + nf);
        key_total += r.t_key_ms * kf;
        nonkey_total += r.t_nonkey_ms * nf;
    }
    let kf = key_frames.max(1) as f64;
    let nf = nonkey_frames.max(1) as f64;
    let total = (key_frames + nonkey_frames).max(1) as f64;
    let t_key = key_total / kf;
    let t_nonkey = if nonkey_frames == 0 {
        0.0
    } else {
        nonkey_total / nf
    };
    TimingReport {
        gop_length,
        key_frames,
        nonkey_frames,
        large_ms: large / kf,
        flow_ms: flow / kf,
        lfa_ms: lfa / kf,
        tiny_ms: if nonkey_frames == 0 { 0.0 } else { tiny / nf },
        sfa_ms: if nonkey_frames == 0 { 0.0 } else { sfa / nf },
        head_ms: head / total,
        t_key_ms: t_key,
        t_nonkey_ms: t_nonkey,
        avg_frame_ms: (key_total + nonkey_total) / total,
        identity_ms: if nonkey_frames == 0 {
            t_key
        } else {
            (t_key + (gop_length as f64 - 1.0) * t_nonkey) / gop_length as f64
        },
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

/// Fixed-width text table: one row per variant with overall and
/// per-stratum mAP plus average frame time.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8}\n",
        "variant", "mAP", "slow", "medium", "fast", "ms/frame", "fps"
    ));
    for row in rows {
        let avg = row.timing.avg_frame_ms;
        let fps = if avg > 0.0 { 1000.0 / avg } else { 0.0 };
        out.push_str(&format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>10.3} {:>8.1}\n",
            row.variant.name,
            fmt_opt(row.eval.map),
            fmt_opt(row.eval.map_by_speed["slow"]),
            fmt_opt(row.eval.map_by_speed["medium"]),
            fmt_opt(row.eval.map_by_speed["fast"]),
            avg,
            fps,
        ));
    }
    out
}
