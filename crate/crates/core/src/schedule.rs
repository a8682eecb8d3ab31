//! Soft-label schedule for ambiguous anchors.
//!
//! The epoch temperature `T^j` falls linearly from `t_max` at the first epoch
//! to `t_min` at the last; an ambiguous anchor's positive degree is its score
//! relative to the best candidate of the same instance, scaled by `T^j`.
//! A static two-phase mode is provided as a baseline.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleMode {
    /// Linear interpolation from `t_max` to `t_min`.
    O2fLinear,
    /// `t_max` before `switch_epoch`, `t_min` from then on.
    HybridEpochStatic { switch_epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_max: f64,
    pub t_min: f64,
    pub n_epochs: usize,
    pub mode: ScheduleMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_max: 0.6,
            t_min: 0.2,
            n_epochs: 50,
            mode: ScheduleMode::O2fLinear,
        }
    }
}

impl ScheduleConfig {
    pub fn linear(t_max: f64, t_min: f64, n_epochs: usize) -> Result<Self> {
        let cfg = Self {
            t_max,
            t_min,
            n_epochs,
            mode: ScheduleMode::O2fLinear,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static baseline switching at `floor(2N/3)`.
    pub fn hybrid(t_max: f64, t_min: f64, n_epochs: usize) -> Result<Self> {
        let cfg = Self {
            t_max,
            t_min,
            n_epochs,
            mode: ScheduleMode::HybridEpochStatic {
                switch_epoch: default_switch_epoch(n_epochs),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(config_err("t_max must lie in (0, 1]"));
        }
        if !(self.t_min >= 0.0 && self.t_min <= 1.0) {
            return Err(config_err("t_min must lie in [0, 1]"));
        }
        if self.t_min > self.t_max {
            return Err(config_err("t_min must not exceed t_max"));
        }
        if self.n_epochs == 0 {
            return Err(config_err("n_epochs must be at least 1"));
        }
        if let ScheduleMode::HybridEpochStatic { switch_epoch } = self.mode {
            if switch_epoch > self.n_epochs {
                return Err(config_err("switch_epoch must lie in [0, n_epochs]"));
            }
        }
        Ok(())
    }

    /// All epoch temperatures in order.
    pub fn temperatures(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_epochs).map(move |j| epoch_temperature(self, j).expect("index in range"))
    }
}

pub fn default_switch_epoch(n_epochs: usize) -> usize {
    2 * n_epochs / 3
}

/// Temperature `T^j` for 0-based epoch `epoch`.
pub fn epoch_temperature(cfg: &ScheduleConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.n_epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            n_epochs: cfg.n_epochs,
        });
    }
    Ok(match cfg.mode {
        ScheduleMode::O2fLinear => {
            if cfg.n_epochs == 1 {
                cfg.t_max
            } else if epoch == cfg.n_epochs - 1 {
                cfg.t_min
            } else {
                (cfg.t_min - cfg.t_max) / (cfg.n_epochs - 1) as f64 * epoch as f64 + cfg.t_max
            }
        }
        ScheduleMode::HybridEpochStatic { switch_epoch } => {
            if epoch < switch_epoch {
                cfg.t_max
            } else {
                cfg.t_min
            }
        }
    })
}

/// Positive degree `t = (p / p_max) * T`.
pub fn soft_positive_degree(p: f64, p_max: f64, temperature: f64) -> Result<f64> {
    if !(p_max > 0.0) {
        return Err(Error::ZeroMaxScore);
    }
    // guard the ratio against p marginally above p_max from rounding
    Ok((p / p_max).clamp(0.0, 1.0) * temperature)
}
