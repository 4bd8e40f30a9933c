//! Combined operator-hand + master-manipulandum model: a 1-DOF
//! mass-spring-damper tracking the commanded trajectory.
//!
//! Sign convention, used everywhere downstream: `f_feedback` is the force
//! displayed against the hand, entering the dynamics as
//! `m·ẍ = F_c − F_feedback_total`. Positive feedback while the hand moves in
//! +x decelerates the hand.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::trajectory::DesiredState;

/// Hand + manipulandum parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanSsmParams {
    /// Combined mass (kg).
    pub mass: f64,
    /// Damping (N·s/m).
    pub damping: f64,
    /// Position tracking stiffness (N/m).
    pub stiffness: f64,
    /// Velocity tracking gain (N·s/m), active only while moving.
    pub velocity_gain: f64,
}

impl Default for HumanSsmParams {
    fn default() -> Self {
        Self {
            mass: 0.750,
            damping: 6.45,
            stiffness: 135.0,
            velocity_gain: 20.0,
        }
    }
}

impl HumanSsmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("damping", self.damping),
            ("stiffness", self.stiffness),
            ("velocity_gain", self.velocity_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!(
                    "plant parameter {name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Undamped natural frequency (rad/s).
    pub fn omega_n(&self) -> f64 {
        (self.stiffness / self.mass).sqrt()
    }

    /// Damping ratio of the hold-mode dynamics.
    pub fn zeta(&self) -> f64 {
        self.damping / (2.0 * (self.stiffness * self.mass).sqrt())
    }

    /// Damped oscillation frequency (Hz) of the free hold response.
    pub fn damped_frequency_hz(&self) -> f64 {
        let zeta = self.zeta();
        self.omega_n() * (1.0 - zeta * zeta).sqrt() / (2.0 * std::f64::consts::PI)
    }
}

/// Position and velocity of the hand/manipulandum mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Position (m).
    pub x: f64,
    /// Velocity (m/s).
    pub v: f64,
}

impl PlantState {
    pub fn at_rest(x: f64) -> Self {
        Self { x, v: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

/// Tracking force exerted by the modeled operator. The velocity term is only
/// active while the protocol commands movement.
pub fn tracking_force(state: PlantState, des: DesiredState, p: &HumanSsmParams) -> f64 {
    let base = -p.damping * state.v + p.stiffness * (des.x_des - state.x);
    if des.moving {
        base + p.velocity_gain * (des.v_des - state.v)
    } else {
        base
    }
}

/// One semi-implicit Euler step: velocity first, then position with the new
/// velocity. `f_feedback_total` includes the passivating force when active.
pub fn step(state: PlantState, f_c: f64, f_feedback_total: f64, dt: f64, p: &HumanSsmParams) -> PlantState {
    let v = state.v + dt * (f_c - f_feedback_total) / p.mass;
    let x = state.x + dt * v;
    PlantState { x, v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hold_at(x_des: f64) -> DesiredState {
        DesiredState {
            x_des,
            v_des: 0.0,
            moving: false,
        }
    }

    #[test]
    fn equilibrium_gives_zero_force() {
        let p = HumanSsmParams::default();
        let state = PlantState { x: 0.2, v: 0.0 };
        let des = hold_at(0.2);
        assert_eq!(tracking_force(state, des, &p), 0.0);
    }

    #[test]
    fn hold_offset_force() {
        // k * 0.01 = 135 * 0.01 = 1.35 N
        let p = HumanSsmParams::default();
        let state = PlantState { x: 0.0, v: 0.0 };
        let des = hold_at(0.01);
        assert_relative_eq!(tracking_force(state, des, &p), 1.35, epsilon = 1e-12);
    }

    #[test]
    fn velocity_tracking_term_only_while_moving() {
        // k_v * 0.1 = 20 * 0.1 = 2.0 N
        let p = HumanSsmParams::default();
        let state = PlantState { x: 0.0, v: 0.0 };
        let moving = DesiredState {
            x_des: 0.0,
            v_des: 0.1,
            moving: true,
        };
        assert_relative_eq!(tracking_force(state, moving, &p), 2.0, epsilon = 1e-12);
        let holding = DesiredState {
            moving: false,
            ..moving
        };
        assert_eq!(tracking_force(state, holding, &p), 0.0);
    }

    #[test]
    fn balanced_forces_leave_velocity_unchanged() {
        let p = HumanSsmParams::default();
        let state = PlantState { x: 0.1, v: 0.3 };
        let next = step(state, 2.5, 2.5, 0.002, &p);
        assert_eq!(next.v, state.v);
        assert_relative_eq!(next.x, state.x + 0.002 * state.v, epsilon = 1e-15);
    }

    fn simulate_free_hold(x0: f64, dt: f64, n: usize) -> Vec<PlantState> {
        let p = HumanSsmParams::default();
        let des = hold_at(0.0);
        let mut state = PlantState::at_rest(x0);
        let mut out = Vec::with_capacity(n + 1);
        out.push(state);
        for _ in 0..n {
            let f_c = tracking_force(state, des, &p);
            state = step(state, f_c, 0.0, dt, &p);
            out.push(state);
        }
        out
    }

    #[test]
    fn damped_oscillation_frequency_matches_analytic() {
        // omega_n = sqrt(180), zeta ~= 0.32 -> f_d ~= 2.02 Hz
        let p = HumanSsmParams::default();
        let f_analytic = p.damped_frequency_hz();
        assert_relative_eq!(f_analytic, 2.02, epsilon = 0.01);

        let dt = 1.0 / 500.0;
        let states = simulate_free_hold(0.01, dt, 3000);
        // measure period between first two downward zero crossings
        let mut crossings = Vec::new();
        for (i, pair) in states.windows(2).enumerate() {
            if pair[0].x > 0.0 && pair[1].x <= 0.0 {
                // linear interpolation of the crossing time
                let frac = pair[0].x / (pair[0].x - pair[1].x);
                crossings.push((i as f64 + frac) * dt);
            }
        }
        assert!(crossings.len() >= 2, "expected at least two crossings");
        let period = crossings[1] - crossings[0];
        let f_sim = 1.0 / period;
        assert!(
            (f_sim - f_analytic).abs() / f_analytic < 0.02,
            "simulated {f_sim} Hz vs analytic {f_analytic} Hz"
        );
    }

    #[test]
    fn constant_feedback_shifts_hold_position() {
        // Static balance: k (x_des - x) = F_feedback -> x = x_des - F/k
        let p = HumanSsmParams::default();
        let des = hold_at(0.05);
        let mut state = PlantState::at_rest(0.05);
        let dt = 1.0 / 500.0;
        for _ in 0..5000 {
            let f_c = tracking_force(state, des, &p);
            state = step(state, f_c, 1.0, dt, &p);
        }
        assert_relative_eq!(state.x, 0.05 - 1.0 / 135.0, epsilon = 1e-9);
    }

    #[test]
    fn hold_energy_non_increasing_per_window() {
        // Total mechanical energy about the hold target decays over every
        // 100-step window (up to integrator error, which the semi-implicit
        // scheme keeps below the physical dissipation here).
        let p = HumanSsmParams::default();
        let states = simulate_free_hold(0.01, 1.0 / 500.0, 2000);
        let energy = |s: &PlantState| 0.5 * p.mass * s.v * s.v + 0.5 * p.stiffness * s.x * s.x;
        for pair in states.windows(101).step_by(100) {
            let e0 = energy(&pair[0]);
            let e1 = energy(&pair[100]);
            assert!(
                e1 <= e0 + 1e-12,
                "energy rose from {e0} to {e1} over a 100-step window"
            );
        }
    }

    #[test]
    fn doubling_rate_converges() {
        // Final hold position changes by < 1e-6 m when the step is halved.
        let p = HumanSsmParams::default();
        let des = hold_at(0.02);
        let run = |rate: f64| {
            let mut state = PlantState::at_rest(0.0);
            let dt = 1.0 / rate;
            for _ in 0..(4.0 * rate) as usize {
                let f_c = tracking_force(state, des, &p);
                state = step(state, f_c, 0.5, dt, &p);
            }
            state.x
        };
        let x500 = run(500.0);
        let x1000 = run(1000.0);
        assert!(
            (x500 - x1000).abs() < 1e-6,
            "x500 = {x500}, x1000 = {x1000}"
        );
    }

    #[test]
    fn params_validate_rejects_nonpositive() {
        let mut p = HumanSsmParams::default();
        p.mass = 0.0;
        assert!(p.validate().is_err());
    }
}
