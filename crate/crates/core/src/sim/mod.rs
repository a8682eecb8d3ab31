//! Desk-scale training harness: synthetic scenes, a toy per-anchor model and
//! the loop that couples prediction, assignment, loss and gradient steps.

pub mod config;
pub mod exec;
pub mod model;
pub mod optim;
pub mod scene;
pub mod train;

pub use config::{AssignMode, AssignSection, EvalSection, ExperimentConfig, GridSection, OutputSection, TrainSection};
pub use exec::{Clock, Executor, NoClock, Sequential};
pub use model::{Model, ModelConfig, ModelKind};
pub use optim::{LrDecay, OptimizerConfig, Sgd};
pub use scene::{generate_scene, Regime, Scene, SceneConfig};
pub use train::{evaluate, train_run, EpochRecord, RunRecord, TrainError};
