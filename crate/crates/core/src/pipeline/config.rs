//! Runtime configuration: scheduling, ablation switches, thresholds, and
//! training hyperparameters. Everything round-trips through TOML so runs
//! are reproducible from a single file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Term switches for the two aggregation stages. A disabled term is
/// replaced by zeros; `use_lfa = false` short-circuits key-frame fusion to
/// the plain extracted feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_motion_vectors: bool,
    pub use_residual_term: bool,
    pub use_tiny_term: bool,
    pub use_lfa: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_motion_vectors: true,
            use_residual_term: true,
            use_tiny_term: true,
            use_lfa: true,
        }
    }
}

/// SGD-with-momentum schedule and loss shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Step at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    /// Weight on the box-regression term relative to classification.
    pub box_loss_weight: f64,
    /// Extra weight on positive cells in the classification loss.
    pub cls_pos_weight: f64,
    /// Transition point of the smooth-L1 box loss, in pixels.
    pub huber_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            steps: 2000,
            lr_decay_step: 1400,
            lr_decay_factor: 0.1,
            batch_size: 2,
            box_loss_weight: 0.02,
            cls_pos_weight: 12.0,
            huber_delta: 8.0,
            seed: 7,
        }
    }
}

/// Top-level configuration shared by inference, training, evaluation, and
/// profiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Frames per GOP: one key frame plus `gop_length - 1` non-key frames.
    pub gop_length: usize,
    pub flags: AblationFlags,
    /// Run the key branch on every frame (per-frame baseline); the
    /// scheduler and all non-key machinery are bypassed.
    pub frame_baseline: bool,
    pub num_classes: usize,
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub eval_iou: f64,
    /// Half-width in frames of the motion-speed labeling window.
    pub speed_window: usize,
    pub weight_seed: u64,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            gop_length: 12,
            flags: AblationFlags::default(),
            frame_baseline: false,
            num_classes: 3,
            score_thresh: 0.05,
            nms_iou: 0.5,
            eval_iou: 0.5,
            speed_window: 10,
            weight_seed: 11,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gop_length < 2 {
            return Err(Error::InvalidParameter(format!(
                "gop_length {} must be >= 2",
                self.gop_length
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidParameter("num_classes must be >= 1".into()));
        }
        for (name, v) in [
            ("score_thresh", self.score_thresh),
            ("nms_iou", self.nms_iou),
            ("eval_iou", self.eval_iou),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} {v} outside [0, 1]"
                )));
            }
        }
        let t = &self.train;
        if t.learning_rate < 0.0
            || !t.learning_rate.is_finite()
            || !(0.0..1.0).contains(&t.momentum)
            || t.batch_size == 0
            || t.box_loss_weight < 0.0
            || t.cls_pos_weight <= 0.0
            || t.huber_delta <= 0.0
            || t.lr_decay_factor <= 0.0
        {
            return Err(Error::InvalidParameter(
                "training hyperparameters out of range".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }
}
