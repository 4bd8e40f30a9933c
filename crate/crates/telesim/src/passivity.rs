//! Windowed passivity observer and variable-damping passivity controller.
//!
//! The observer accumulates the last `k` energy increments
//! `F_feedback · ẋ · Δt` seen at the operator port. Whenever the windowed
//! energy goes negative the controller injects a dissipative force
//! `F_passive = ẋ · α` with `α = min(|E_win| / (ẋ² Δt), d_max)`, which
//! cancels the observed deficit exactly while unclamped.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Result, SimError};

/// Controller limits and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoPcConfig {
    /// Maximum variable damping (N·s/m).
    pub d_max: f64,
    /// Velocity guard (m/s) below which no force is commanded.
    pub v_epsilon: f64,
    /// Observer window length in samples.
    pub window: usize,
}

impl Default for PoPcConfig {
    fn default() -> Self {
        Self {
            d_max: 250.0,
            // Below this speed the controller releases the plant instead of
            // chasing the window energy of the static hold force; holds then
            // settle to machine rest and the hold-period effort vanishes.
            v_epsilon: 5e-3,
            window: 10,
        }
    }
}

impl PoPcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0) || !(self.v_epsilon > 0.0) || self.window == 0 {
            return Err(SimError::InvalidConfig(format!(
                "popc requires d_max > 0, v_epsilon > 0, window > 0 (got {}, {}, {})",
                self.d_max, self.v_epsilon, self.window
            )));
        }
        Ok(())
    }
}

/// Ring buffer of the most recent per-step energy increments (J).
#[derive(Debug, Clone)]
pub struct PassivityWindow {
    increments: VecDeque<f64>,
    capacity: usize,
}

impl PassivityWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            increments: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Push the increment for this step and return the windowed energy (J).
    /// Summation runs oldest-to-newest in a fixed order for determinism.
    pub fn observe(&mut self, f_feedback: f64, xdot: f64, dt: f64) -> f64 {
        if self.increments.len() == self.capacity {
            self.increments.pop_front();
        }
        self.increments.push_back(f_feedback * xdot * dt);
        self.increments.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.increments.iter().sum()
    }
}

/// Passivating control force (N) for the observed window energy.
pub fn control(e_win: f64, xdot: f64, dt: f64, cfg: &PoPcConfig) -> f64 {
    if e_win >= 0.0 || xdot.abs() < cfg.v_epsilon {
        return 0.0;
    }
    let alpha = (-e_win / (xdot * xdot * dt)).min(cfg.d_max);
    xdot * alpha
}
