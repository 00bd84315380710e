//! Dense detection head, greedy NMS, and a VOC-style mAP evaluator with
//! motion-speed stratification.
//!
//! The head is single-stage: a 3x3 conv+ReLU trunk, one 1x1 per-class
//! sigmoid score per feature cell, and one 1x1 four-channel regression
//! predicting (left, top, right, bottom) distances in pixels from the cell
//! center (16c+8, 16r+8). One head serves key and non-key features alike.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::networks::{ModelWeights, FEATURE_STRIDE};
use crate::tensor_ops::FeatureMap;

/// One scored box on a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub class_id: usize,
    pub score: f64,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl DetectionBox {
    pub fn rect(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Motion-speed stratum of a ground-truth object, labeled by the mean
/// IoU of its box against its own track over a temporal window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionSpeed {
    Slow,
    Medium,
    Fast,
}

impl MotionSpeed {
    pub const ALL: [MotionSpeed; 3] = [MotionSpeed::Slow, MotionSpeed::Medium, MotionSpeed::Fast];

    pub fn name(&self) -> &'static str {
        match self {
            MotionSpeed::Slow => "slow",
            MotionSpeed::Medium => "medium",
            MotionSpeed::Fast => "fast",
        }
    }
}

/// Annotated object on one frame. `track_id` ties the same physical
/// object across frames so motion speed can be derived.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub frame_id: usize,
    pub class_id: usize,
    pub track_id: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub motion_speed: Option<MotionSpeed>,
}

impl GroundTruthBox {
    pub fn rect(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Average precision and counts for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEval {
    pub class_id: usize,
    /// None when the class has no ground truth anywhere.
    pub ap: Option<f64>,
    pub gt_count: usize,
    pub det_count: usize,
}

/// Full evaluation outcome: per-class APs, overall mAP, and per-stratum
/// mAPs. Means are unweighted over classes with ground truth; a missing
/// value means the corresponding ground-truth set was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassEval>,
    pub map: Option<f64>,
    pub map_by_speed: BTreeMap<&'static str, Option<f64>>,
    pub total_gt: usize,
    pub total_dets: usize,
    pub gt_by_speed: BTreeMap<&'static str, usize>,
}

/// Intersection-over-union of two rectangles.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
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

/// Run the head on a feature map and decode scored boxes.
/// Cells whose per-class score exceeds `score_thresh` become candidate
/// boxes, clipped to frame bounds; degenerate boxes are dropped; greedy
/// per-class NMS at `nms_iou` finishes the list.
pub fn detect(
    feature: &FeatureMap,
    w: &ModelWeights,
    score_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<DetectionBox>> {
    if feature.channels() != w.spec.c_feat {
        return Err(Error::ChannelMismatch {
            expected: w.spec.c_feat,
            got: feature.channels(),
        });
    }
    let trunk = w.head_trunk.forward(feature)?;
    let cls = w.head_cls.forward(&trunk)?;
    let boxes = w.head_box.forward(&trunk)?;
    let (hc, wc) = (feature.height(), feature.width());
    let (frame_h, frame_w) = ((hc * FEATURE_STRIDE) as f64, (wc * FEATURE_STRIDE) as f64);
    let mut out = Vec::new();
    for k in 0..w.spec.num_classes {
        for r in 0..hc {
            for c in 0..wc {
                let score = sigmoid(cls.get(k, r, c));
                if score <= score_thresh {
                    continue;
                }
                let cx = (c * FEATURE_STRIDE + FEATURE_STRIDE / 2) as f64;
                let cy = (r * FEATURE_STRIDE + FEATURE_STRIDE / 2) as f64;
                let x1 = (cx - boxes.get(0, r, c)).clamp(0.0, frame_w);
                let y1 = (cy - boxes.get(1, r, c)).clamp(0.0, frame_h);
                let x2 = (cx + boxes.get(2, r, c)).clamp(0.0, frame_w);
                let y2 = (cy + boxes.get(3, r, c)).clamp(0.0, frame_h);
                if x2 <= x1 || y2 <= y1 {
                    continue;
                }
                out.push(DetectionBox {
                    class_id: k,
                    score,
                    x1,
                    y1,
                    x2,
                    y2,
                });
            }
        }
    }
    Ok(nms(&out, nms_iou))
}

/// Greedy per-class non-maximum suppression. Boxes are visited in
/// descending score order (ties toward the smaller input index); a box is
/// kept only if its IoU with every kept same-class box stays below
/// `iou_thresh`. Output is sorted by descending score.
pub fn nms(boxes: &[DetectionBox], iou_thresh: f64) -> Vec<DetectionBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<DetectionBox> = Vec::new();
    for &i in &order {
        let b = &boxes[i];
        let clash = kept
            .iter()
            .any(|k| k.class_id == b.class_id && iou(k.rect(), b.rect()) >= iou_thresh);
        if !clash {
            kept.push(*b);
        }
    }
    kept
}

/// Label every ground-truth box with its motion-speed stratum: the mean
/// IoU of the box against the same track's boxes within `window` frames
/// on either side. Above 0.9 is slow, 0.7..=0.9 medium, below 0.7 fast;
/// tracks with no neighbor in the window count as slow.
pub fn label_motion_speed(
    gts: &[Vec<GroundTruthBox>],
    window: usize,
) -> Vec<Vec<GroundTruthBox>> {
    let mut by_track: BTreeMap<usize, Vec<(usize, [f64; 4])>> = BTreeMap::new();
    for frame in gts {
        for gt in frame {
            by_track
                .entry(gt.track_id)
                .or_default()
                .push((gt.frame_id, gt.rect()));
        }
    }
    let mut labeled = gts.to_vec();
    for frame in &mut labeled {
        for gt in frame {
            let track = &by_track[&gt.track_id];
            let mut acc = 0.0;
            let mut n = 0usize;
            for &(f, rect) in track {
                if f == gt.frame_id {
                    continue;
                }
                if f.abs_diff(gt.frame_id) <= window {
                    acc += iou(gt.rect(), rect);
                    n += 1;
                }
            }
            let speed = if n == 0 {
                MotionSpeed::Slow
            } else {
                let miou = acc / n as f64;
                if miou > 0.9 {
                    MotionSpeed::Slow
                } else if miou >= 0.7 {
                    MotionSpeed::Medium
                } else {
                    MotionSpeed::Fast
                }
            };
            gt.motion_speed = Some(speed);
        }
    }
    labeled
}

/// Internal per-detection match outcome from the global greedy matching.
enum MatchKind {
    /// Matched a GT box; carries the GT's stratum.
    True(MotionSpeed),
    FalsePositive,
}

/// Evaluate detections against ground truth: greedy per-class matching at
/// `iou_thresh`, all-point average precision via the precision envelope,
/// unweighted class-mean mAP, and per-stratum mAPs. Stratified scoring
/// keeps only that stratum's ground truth, drops detections matched to
/// other strata, and keeps unmatched detections as false positives.
pub fn evaluate_map(
    dets: &[Vec<DetectionBox>],
    gts: &[Vec<GroundTruthBox>],
    iou_thresh: f64,
) -> Result<EvalReport> {
    if dets.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "detection frames {} vs ground-truth frames {}",
            dets.len(),
            gts.len()
        )));
    }
    for frame in gts {
        for gt in frame {
            if gt.motion_speed.is_none() {
                return Err(Error::InvalidParameter(
                    "ground truth missing motion-speed label; run label_motion_speed".into(),
                ));
            }
        }
    }

    let mut classes: Vec<usize> = gts
        .iter()
        .flatten()
        .map(|g| g.class_id)
        .chain(dets.iter().flatten().map(|d| d.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::new();
    let mut stratum_aps: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    let mut gt_by_speed: BTreeMap<&'static str, usize> = BTreeMap::new();
    for s in MotionSpeed::ALL {
        stratum_aps.insert(s.name(), Vec::new());
        gt_by_speed.insert(s.name(), 0);
    }

    for &class in &classes {
        // Detections ordered by score; intrinsic fields break ties so the
        // result is invariant to input permutation.
        let mut class_dets: Vec<(usize, &DetectionBox)> = Vec::new();
        for (f, frame) in dets.iter().enumerate() {
            class_dets.extend(frame.iter().filter(|d| d.class_id == class).map(|d| (f, d)));
        }
        class_dets.sort_by(|(fa, a), (fb, b)| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(fa.cmp(fb))
                .then(a.x1.partial_cmp(&b.x1).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.y1.partial_cmp(&b.y1).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.x2.partial_cmp(&b.x2).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.y2.partial_cmp(&b.y2).unwrap_or(std::cmp::Ordering::Equal))
        });

        let mut gt_taken: Vec<Vec<bool>> = gts
            .iter()
            .map(|frame| vec![false; frame.len()])
            .collect();
        let class_gt_count: usize = gts
            .iter()
            .flatten()
            .filter(|g| g.class_id == class)
            .count();
        let mut speed_gt_count: BTreeMap<&'static str, usize> = BTreeMap::new();
        for s in MotionSpeed::ALL {
            speed_gt_count.insert(s.name(), 0);
        }
        for gt in gts.iter().flatten().filter(|g| g.class_id == class) {
            *speed_gt_count
                .get_mut(gt.motion_speed.unwrap().name())
                .unwrap() += 1;
        }

        let mut outcomes: Vec<MatchKind> = Vec::with_capacity(class_dets.len());
        for &(f, det) in &class_dets {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts[f].iter().enumerate() {
                if gt.class_id != class || gt_taken[f][gi] {
                    continue;
                }
                let v = iou(det.rect(), gt.rect());
                if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    gt_taken[f][gi] = true;
                    outcomes.push(MatchKind::True(gts[f][gi].motion_speed.unwrap()));
                }
                None => outcomes.push(MatchKind::FalsePositive),
            }
        }

        // Overall AP for this class.
        let ap = if class_gt_count == 0 {
            None
        } else {
            let tp_flags: Vec<bool> = outcomes
                .iter()
                .map(|o| matches!(o, MatchKind::True(_)))
                .collect();
            Some(average_precision(&tp_flags, class_gt_count))
        };
        per_class.push(ClassEval {
            class_id: class,
            ap,
            gt_count: class_gt_count,
            det_count: class_dets.len(),
        });

        // Stratified AP: drop detections matched to other strata.
        for s in MotionSpeed::ALL {
            let n_gt = speed_gt_count[s.name()];
            if n_gt == 0 {
                continue;
            }
            let tp_flags: Vec<bool> = outcomes
                .iter()
                .filter_map(|o| match o {
                    MatchKind::True(sp) if *sp == s => Some(true),
                    MatchKind::True(_) => None,
                    MatchKind::FalsePositive => Some(false),
                })
                .collect();
            stratum_aps
                .get_mut(s.name())
                .unwrap()
                .push(average_precision(&tp_flags, n_gt));
        }
    }

    for gt in gts.iter().flatten() {
        *gt_by_speed
            .get_mut(gt.motion_speed.unwrap().name())
            .unwrap() += 1;
    }

    let with_gt: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if with_gt.is_empty() {
        None
    } else {
        Some(with_gt.iter().sum::<f64>() / with_gt.len() as f64)
    };
    let map_by_speed = stratum_aps
        .iter()
        .map(|(&name, aps)| {
            let v = if aps.is_empty() {
                None
            } else {
                Some(aps.iter().sum::<f64>() / aps.len() as f64)
            };
            (name, v)
        })
        .collect();

    Ok(EvalReport {
        per_class,
        map,
        map_by_speed,
        total_gt: gts.iter().map(|f| f.len()).sum(),
        total_dets: dets.iter().map(|f| f.len()).sum(),
        gt_by_speed,
    })
}

/// All-point average precision: walk score-ordered outcomes, form the
/// precision envelope, and integrate it over recall.
fn average_precision(tp_flags: &[bool], gt_count: usize) -> f64 {
    debug_assert!(gt_count > 0);
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / gt_count as f64);
    }
    let mut ap = 0.0;
    let mut best_p = 0.0f64;
    for i in (0..tp_flags.len()).rev() {
        best_p = best_p.max(precisions[i]);
        let r_lo = if i == 0 { 0.0 } else { recalls[i - 1] };
        ap += (recalls[i] - r_lo) * best_p;
    }
    ap
}

/// Write per-frame detections as text lines:
/// `frame_id class_id score x1 y1 x2 y2` with 4 fractional digits.
pub fn write_detections<W: Write>(mut w: W, dets: &[Vec<DetectionBox>]) -> Result<()> {
    for (f, frame) in dets.iter().enumerate() {
        for d in frame {
            writeln!(
                w,
                "{f} {} {:.4} {:.4} {:.4} {:.4} {:.4}",
                d.class_id, d.score, d.x1, d.y1, d.x2, d.y2
            )?;
        }
    }
    Ok(())
}

/// Read detections written by [`write_detections`]. The result spans
/// frames 0..=max frame id present; frames without lines are empty.
pub fn read_detections<R: Read>(r: R) -> Result<Vec<Vec<DetectionBox>>> {
    let mut frames: Vec<Vec<DetectionBox>> = Vec::new();
    for (ln, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(Error::Format(format!(
                "detections line {}: expected 7 fields, got {}",
                ln + 1,
                parts.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("detections line {}: bad number {s}", ln + 1)))
        };
        let frame_id: usize = parts[0]
            .parse()
            .map_err(|_| Error::Format(format!("detections line {}: bad frame id", ln + 1)))?;
        let class_id: usize = parts[1]
            .parse()
            .map_err(|_| Error::Format(format!("detections line {}: bad class id", ln + 1)))?;
        if frames.len() <= frame_id {
            frames.resize_with(frame_id + 1, Vec::new);
        }
        frames[frame_id].push(DetectionBox {
            class_id,
            score: parse_f(parts[2])?,
            x1: parse_f(parts[3])?,
            y1: parse_f(parts[4])?,
            x2: parse_f(parts[5])?,
            y2: parse_f(parts[6])?,
        });
    }
    Ok(frames)
}

/// Write ground truth as text lines:
/// `frame_id class_id track_id x1 y1 x2 y2` with 4 fractional digits.
pub fn write_ground_truth<W: Write>(mut w: W, gts: &[Vec<GroundTruthBox>]) -> Result<()> {
    for frame in gts {
        for g in frame {
            writeln!(
                w,
                "{} {} {} {:.4} {:.4} {:.4} {:.4}",
                g.frame_id, g.class_id, g.track_id, g.x1, g.y1, g.x2, g.y2
            )?;
        }
    }
    Ok(())
}

/// Read ground truth written by [`write_ground_truth`]. Speed labels are
/// not stored; run [`label_motion_speed`] after loading.
pub fn read_ground_truth<R: Read>(r: R) -> Result<Vec<Vec<GroundTruthBox>>> {
    let mut frames: Vec<Vec<GroundTruthBox>> = Vec::new();
    for (ln, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(Error::Format(format!(
                "ground truth line {}: expected 7 fields, got {}",
                ln + 1,
                parts.len()
            )));
        }
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("ground truth line {}: bad id {s}", ln + 1)))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("ground truth line {}: bad number {s}", ln + 1)))
        };
        let frame_id = parse_u(parts[0])?;
        if frames.len() <= frame_id {
            frames.resize_with(frame_id + 1, Vec::new);
        }
        frames[frame_id].push(GroundTruthBox {
            frame_id,
            class_id: parse_u(parts[1])?,
            track_id: parse_u(parts[2])?,
            x1: parse_f(parts[3])?,
            y1: parse_f(parts[4])?,
            x2: parse_f(parts[5])?,
            y2: parse_f(parts[6])?,
            motion_speed: None,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{init_weights, NetworkSpec};

    fn gt(frame_id: usize, class_id: usize, rect: [f64; 4], speed: MotionSpeed) -> GroundTruthBox {
        GroundTruthBox {
            frame_id,
            class_id,
            track_id: 0,
            x1: rect[0],
            y1: rect[1],
            x2: rect[2],
            y2: rect[3],
            motion_speed: Some(speed),
        }
    }

    fn det(class_id: usize, score: f64, rect: [f64; 4]) -> DetectionBox {
        DetectionBox {
            class_id,
            score,
            x1: rect[0],
            y1: rect[1],
            x2: rect[2],
            y2: rect[3],
        }
    }

    #[test]
    fn iou_basic_cases() {
        let a = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(iou(a, a), 1.0);
        assert_eq!(iou(a, [2.0, 2.0, 3.0, 3.0]), 0.0);
        let half = [0.5, 0.0, 1.5, 1.0];
        assert!((iou(a, half) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_single_box_and_best_of_duplicates() {
        let one = vec![det(0, 0.7, [0.0, 0.0, 10.0, 10.0])];
        assert_eq!(nms(&one, 0.5), one);
        let dup = vec![
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0.8, [0.0, 0.0, 10.0, 10.0]),
        ];
        let kept = nms(&dup, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_is_per_class() {
        let boxes = vec![
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(1, 0.8, [0.0, 0.0, 10.0, 10.0]),
        ];
        assert_eq!(nms(&boxes, 0.5).len(), 2);
    }

    #[test]
    fn all_negative_logits_detect_nothing() {
        let spec = NetworkSpec::default();
        let mut w = init_weights(&spec, 3).unwrap();
        for layer in &mut w.head_cls.layers {
            layer.kernel.bias.fill(-10.0);
            layer.kernel.weights.fill(0.0);
        }
        let feature = FeatureMap::constant(32, 4, 4, 0.2);
        let dets = detect(&feature, &w, 0.05, 0.5).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn hot_cell_decodes_to_centered_box() {
        let spec = NetworkSpec::default();
        let mut w = ModelWeights::zeros(&spec).unwrap();
        // Trunk passes channel 0 straight through.
        w.head_trunk.layers[0].kernel.weights[4] = 1.0;
        // Class 0 reads trunk channel 0; box head emits constant (8,8,8,8).
        w.head_cls.layers[0].kernel.weights[0] = 1.0;
        w.head_box.layers[0].kernel.bias.fill(8.0);
        let mut feature = FeatureMap::zeros(32, 4, 4);
        feature.set(0, 2, 1, 12.0);
        let dets = detect(&feature, &w, 0.6, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, 0);
        assert!(d.score > 0.99);
        assert_eq!(
            [d.x1, d.y1, d.x2, d.y2],
            [16.0, 32.0, 32.0, 48.0],
            "16x16 box at cell (2,1)"
        );
    }

    #[test]
    fn perfect_detections_reach_full_map() {
        let gts = vec![vec![
            gt(0, 0, [10.0, 10.0, 40.0, 40.0], MotionSpeed::Slow),
            gt(0, 1, [50.0, 50.0, 90.0, 80.0], MotionSpeed::Fast),
        ]];
        let dets = vec![vec![
            det(0, 1.0, [10.0, 10.0, 40.0, 40.0]),
            det(1, 1.0, [50.0, 50.0, 90.0, 80.0]),
        ]];
        let report = evaluate_map(&dets, &gts, 0.5).unwrap();
        assert_eq!(report.map, Some(1.0));
        assert_eq!(report.map_by_speed["slow"], Some(1.0));
        assert_eq!(report.map_by_speed["fast"], Some(1.0));
        assert_eq!(report.map_by_speed["medium"], None);
    }

    #[test]
    fn no_detections_scores_zero() {
        let gts = vec![vec![gt(0, 0, [10.0, 10.0, 40.0, 40.0], MotionSpeed::Slow)]];
        let dets = vec![vec![]];
        let report = evaluate_map(&dets, &gts, 0.5).unwrap();
        assert_eq!(report.map, Some(0.0));
    }

    #[test]
    fn empty_ground_truth_reports_undefined_map() {
        let report = evaluate_map(&[vec![]], &[vec![]], 0.5).unwrap();
        assert_eq!(report.map, None);
    }

    #[test]
    fn false_positive_below_true_positive_keeps_full_ap() {
        let gts = vec![vec![gt(0, 0, [10.0, 10.0, 40.0, 40.0], MotionSpeed::Slow)]];
        let tp = det(0, 0.9, [10.0, 10.0, 40.0, 40.0]);
        let fp = det(0, 0.8, [200.0, 200.0, 240.0, 240.0]);
        let report = evaluate_map(&[vec![tp, fp]], &gts, 0.5).unwrap();
        assert_eq!(report.map, Some(1.0));
        let swapped = vec![vec![
            det(0, 0.8, [10.0, 10.0, 40.0, 40.0]),
            det(0, 0.9, [200.0, 200.0, 240.0, 240.0]),
        ]];
        let report = evaluate_map(&swapped, &gts, 0.5).unwrap();
        assert_eq!(report.map, Some(0.5));
    }

    #[test]
    fn unlabeled_ground_truth_is_rejected() {
        let mut g = gt(0, 0, [0.0, 0.0, 10.0, 10.0], MotionSpeed::Slow);
        g.motion_speed = None;
        assert!(evaluate_map(&[vec![]], &[vec![g]], 0.5).is_err());
    }

    #[test]
    fn speed_labels_follow_window_mean_iou() {
        // Static object: slow.
        let static_track: Vec<Vec<GroundTruthBox>> = (0..5)
            .map(|f| {
                vec![GroundTruthBox {
                    frame_id: f,
                    class_id: 0,
                    track_id: 1,
                    x1: 10.0,
                    y1: 10.0,
                    x2: 42.0,
                    y2: 42.0,
                    motion_speed: None,
                }]
            })
            .collect();
        let labeled = label_motion_speed(&static_track, 10);
        assert!(labeled
            .iter()
            .flatten()
            .all(|g| g.motion_speed == Some(MotionSpeed::Slow)));

        // Teleporting object with zero self-overlap: fast.
        let jumping: Vec<Vec<GroundTruthBox>> = (0..5)
            .map(|f| {
                let off = f as f64 * 100.0;
                vec![GroundTruthBox {
                    frame_id: f,
                    class_id: 0,
                    track_id: 2,
                    x1: off,
                    y1: 0.0,
                    x2: off + 20.0,
                    y2: 20.0,
                    motion_speed: None,
                }]
            })
            .collect();
        let labeled = label_motion_speed(&jumping, 10);
        assert!(labeled
            .iter()
            .flatten()
            .all(|g| g.motion_speed == Some(MotionSpeed::Fast)));
    }

    #[test]
    fn moving_box_stratum_matches_exhaustive_enumeration() {
        // 32x32 box moving 4 px/frame along x over 21 frames.
        let frames: Vec<Vec<GroundTruthBox>> = (0..21)
            .map(|f| {
                let off = f as f64 * 4.0;
                vec![GroundTruthBox {
                    frame_id: f,
                    class_id: 0,
                    track_id: 3,
                    x1: off,
                    y1: 0.0,
                    x2: off + 32.0,
                    y2: 32.0,
                    motion_speed: None,
                }]
            })
            .collect();
        let labeled = label_motion_speed(&frames, 10);
        // Independent enumeration for the middle frame (10).
        let mid = 10i64;
        let mut acc = 0.0;
        let mut n = 0;
        for f in 0..21i64 {
            if f == mid || (f - mid).abs() > 10 {
                continue;
            }
            let d = (f - mid).abs() as f64 * 4.0;
            let inter = (32.0 - d).max(0.0) * 32.0;
            let union = 2.0 * 32.0 * 32.0 - inter;
            acc += inter / union;
            n += 1;
        }
        let miou = acc / n as f64;
        let expect = if miou > 0.9 {
            MotionSpeed::Slow
        } else if miou >= 0.7 {
            MotionSpeed::Medium
        } else {
            MotionSpeed::Fast
        };
        assert!(miou < 0.7, "this configuration lands in the fast stratum");
        assert_eq!(labeled[10][0].motion_speed, Some(expect));
    }

    #[test]
    fn detection_text_round_trips() {
        let dets = vec![
            vec![det(0, 0.9123, [1.0, 2.0, 30.5, 44.25])],
            vec![],
            vec![det(2, 0.05, [0.0, 0.0, 16.0, 16.0])],
        ];
        let mut buf = Vec::new();
        write_detections(&mut buf, &dets).unwrap();
        let reread = read_detections(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(reread.len(), 3);
        assert_eq!(reread[0][0].class_id, 0);
        assert!((reread[0][0].score - 0.9123).abs() < 1e-9);
        assert_eq!(reread[2][0].x2, 16.0);
        let mut buf2 = Vec::new();
        write_detections(&mut buf2, &reread).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn ground_truth_text_round_trips() {
        let gts = vec![vec![GroundTruthBox {
            frame_id: 0,
            class_id: 1,
            track_id: 7,
            x1: 3.25,
            y1: 4.5,
            x2: 60.0,
            y2: 72.75,
            motion_speed: None,
        }]];
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &gts).unwrap();
        let reread = read_ground_truth(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(reread, gts);
    }
}
