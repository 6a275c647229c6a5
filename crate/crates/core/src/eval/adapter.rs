//! Benchmark-side conversion of chunked normalized predictions into the
//! commands an environment consumes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Off,
    /// Weights `exp(−m·age)`; `m = ∞` keeps only the newest prediction.
    ExpWeighted(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sticky {
    Off,
    /// Flip only after this many consecutive opposite commands.
    Latch(u32),
}

fn default_horizon() -> usize {
    8
}

fn default_ensemble() -> Ensemble {
    Ensemble::ExpWeighted(0.1)
}

fn default_sticky() -> Sticky {
    Sticky::Latch(2)
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    /// Frames are resized to `(h, w)` before querying.
    #[serde(default)]
    pub resize_to: Option<(usize, usize)>,
    #[serde(default = "default_horizon")]
    pub open_loop_horizon: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble: Ensemble,
    #[serde(default = "default_sticky")]
    pub sticky_gripper: Sticky,
    /// `None` converts exactly when the controller takes absolute targets.
    #[serde(default)]
    pub delta_to_absolute: Option<bool>,
    /// With `false` predictions are executed in normalized units.
    #[serde(default = "yes")]
    pub unnormalize: bool,
    #[serde(default)]
    pub statistics_path: Option<PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            resize_to: None,
            open_loop_horizon: default_horizon(),
            ensemble: default_ensemble(),
            sticky_gripper: default_sticky(),
            delta_to_absolute: None,
            unnormalize: true,
            statistics_path: None,
        }
    }
}

impl AdapterConfig {
    /// Every optional stage disabled: no resize, no ensembling, no latch,
    /// no conversion.
    pub fn passthrough(open_loop_horizon: usize) -> Self {
        AdapterConfig {
            open_loop_horizon,
            ensemble: Ensemble::Off,
            sticky_gripper: Sticky::Off,
            delta_to_absolute: Some(false),
            ..AdapterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.open_loop_horizon == 0 {
            return Err(Error::Config("open_loop_horizon must be at least 1".into()));
        }
        if let Ensemble::ExpWeighted(m) = self.ensemble {
            if m.is_nan() || m <= 0.0 {
                return Err(Error::Config(format!("ensemble m must be positive, got {m}")));
            }
        }
        if self.sticky_gripper == Sticky::Latch(0) {
            return Err(Error::Config("sticky_gripper latch must be at least 1".into()));
        }
        if let Some((h, w)) = self.resize_to {
            if h == 0 || w == 0 {
                return Err(Error::Config("resize_to must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Age-weighted average of the rows predicted for the current step.
/// `covering` holds `(age, row)` pairs; age counts steps since the chunk
/// was predicted. Panics on an empty history.
pub fn ensemble_actions(covering: &[(usize, &[f64])], m: f64) -> Vec<f64> {
    assert!(!covering.is_empty(), "no prediction covers this step");
    let dims = covering[0].1.len();
    if m.is_infinite() {
        let newest = covering.iter().min_by_key(|(age, _)| *age).expect("non-empty");
        return newest.1.to_vec();
    }
    let mut num = vec![0.0; dims];
    let mut den = 0.0;
    for (age, row) in covering {
        let w = (-m * *age as f64).exp();
        den += w;
        for (n, v) in num.iter_mut().zip(row.iter()) {
            *n += w * v;
        }
    }
    num.into_iter().map(|v| v / den).collect()
}

/// Gripper command latch.
#[derive(Debug, Clone, Default)]
pub struct GripperLatch {
    m: u32,
    state: Option<f64>,
    run: u32,
}

impl GripperLatch {
    pub fn new(m: u32) -> Self {
        GripperLatch {
            m: m.max(1),
            state: None,
            run: 0,
        }
    }

    /// Thresholds `raw` at 0 and returns the latched `±1` command.
    pub fn apply(&mut self, raw: f64) -> f64 {
        let cmd = if raw > 0.0 { 1.0 } else { -1.0 };
        match self.state {
            None => {
                self.state = Some(cmd);
            }
            Some(s) if s == cmd => self.run = 0,
            Some(_) => {
                self.run += 1;
                if self.run >= self.m {
                    self.state = Some(cmd);
                    self.run = 0;
                }
            }
        }
        self.state.expect("set above")
    }
}

pub fn sticky_gripper(raw: &[f64], m: u32) -> Vec<f64> {
    let mut latch = GripperLatch::new(m);
    raw.iter().map(|&r| latch.apply(r)).collect()
}
