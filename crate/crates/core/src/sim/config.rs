//! Full experiment configuration with defaults.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignConfig, AssignMethod, Combine, ScoreSource};
use crate::error::{config_err, Result};
use crate::geometry::CenterRegion;
use crate::loss::LossConfig;
use crate::schedule::ScheduleConfig;
use crate::sim::model::{ModelConfig, ModelKind};
use crate::sim::optim::OptimizerConfig;
use crate::sim::scene::SceneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignMode {
    #[default]
    O2f,
    /// One-to-one, top-1 greedy.
    O2o,
    /// One-to-one, optimal bipartite matching.
    O2oHungarian,
    /// One-to-many, top-k hard positives.
    O2m,
    /// One-to-many with k = 2.
    OneToTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignSection {
    pub mode: AssignMode,
    /// Ambiguous anchors per instance (o2f) or positives per instance (o2m).
    pub k: usize,
    pub alpha: f64,
    pub combine: Combine,
    pub radius_factor: f64,
    pub score_source: ScoreSource,
}

impl Default for AssignSection {
    fn default() -> Self {
        Self {
            mode: AssignMode::O2f,
            k: 7,
            alpha: 0.8,
            combine: Combine::Multiply,
            radius_factor: CenterRegion::DEFAULT_RADIUS_FACTOR,
            score_source: ScoreSource::Joint,
        }
    }
}

impl AssignSection {
    pub fn method(&self) -> AssignMethod {
        match self.mode {
            AssignMode::O2f => AssignMethod::O2f { k: self.k },
            AssignMode::O2o => AssignMethod::O2oTop1,
            AssignMode::O2oHungarian => AssignMethod::O2oHungarian,
            AssignMode::O2m => AssignMethod::O2mTopK { k: self.k },
            AssignMode::OneToTwo => AssignMethod::O2mTopK { k: 2 },
        }
    }

    pub fn config(&self) -> AssignConfig {
        AssignConfig {
            alpha: self.alpha,
            combine: self.combine,
            radius_factor: self.radius_factor,
            score_source: self.score_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub strides: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { strides: vec![8.0, 16.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub n_scenes: usize,
    pub batch_size: usize,
    /// Passes over the training scenes per epoch.
    pub passes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            batch_size: 2,
            passes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out scenes (mlp); the tabular model is scored on its training
    /// scenes.
    pub n_scenes: usize,
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub max_dets: usize,
    pub dup_threshold: f64,
    /// IoU at which a detection counts as a duplicate of a ground truth.
    pub dup_iou: f64,
    /// Also compute log-average miss rate every epoch.
    pub mmr: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            nms_threshold: 0.6,
            score_threshold: 0.05,
            max_dets: 100,
            dup_threshold: 0.3,
            dup_iou: 0.5,
            mmr: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Record wall-clock seconds per epoch. Off by default so repeated runs
    /// produce identical files.
    pub wall_time: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub assign: AssignSection,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub scene: SceneConfig,
    pub grid: GridSection,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Learning rate after applying the per-model default.
    pub fn learning_rate(&self) -> f64 {
        self.optimizer.lr.unwrap_or(match self.model.kind {
            ModelKind::Tabular => 1.0,
            ModelKind::Mlp => 0.02,
        })
    }

    /// Fills in defaults that depend on other fields.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.optimizer.lr = Some(self.learning_rate());
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.assign.config().validate()?;
        self.assign.method().validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.scene.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.grid.strides.is_empty() {
            return Err(config_err("grid needs at least one stride"));
        }
        if self.train.n_scenes == 0 {
            return Err(config_err("train.n_scenes must be at least 1"));
        }
        if self.train.batch_size == 0 || self.train.passes == 0 {
            return Err(config_err("train.batch_size and train.passes must be at least 1"));
        }
        let e = &self.eval;
        if self.model.kind == ModelKind::Mlp && e.n_scenes == 0 {
            return Err(config_err("eval.n_scenes must be at least 1"));
        }
        if !(0.0..=1.0).contains(&e.nms_threshold) {
            return Err(config_err("eval.nms_threshold must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&e.score_threshold) || !(0.0..=1.0).contains(&e.dup_threshold) {
            return Err(config_err("eval score thresholds must lie in [0, 1]"));
        }
        if !(e.dup_iou > 0.0 && e.dup_iou <= 1.0) {
            return Err(config_err("eval.dup_iou must lie in (0, 1]"));
        }
        if e.max_dets == 0 {
            return Err(config_err("eval.max_dets must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.assign.method(), AssignMethod::O2f { k: 7 });
        assert_eq!(c.assign.alpha, 0.8);
        assert_eq!(c.schedule.t_max, 0.6);
        assert_eq!(c.schedule.t_min, 0.2);
        assert_eq!(c.eval.nms_threshold, 0.6);
        assert_eq!(c.resolved().optimizer.lr, Some(1.0));
    }

    #[test]
    fn mode_mapping() {
        let mut a = AssignSection::default();
        a.mode = AssignMode::OneToTwo;
        assert_eq!(a.method(), AssignMethod::O2mTopK { k: 2 });
        a.mode = AssignMode::O2m;
        a.k = 9;
        assert_eq!(a.method(), AssignMethod::O2mTopK { k: 9 });
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        c.train.n_scenes = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.eval.nms_threshold = 1.5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.assign.mode = AssignMode::O2m;
        c.assign.k = 0;
        assert!(c.validate().is_err());
    }
}
