//! Scaled follower robot and the parametric tissue it manipulates.
//!
//! The tissue is a cubic-stiffening Kelvin-Voigt element: a spring with
//! linear and cubic terms in parallel with a damper. Displacement `d` is
//! measured from the zero-force point established when the grasp is zeroed;
//! `d > 0` is tension, `d < 0` compression.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::trajectory::{Axis, TrajectoryProtocol};

/// Parametric tissue model for one manipulation axis. Parameter sets for
/// different axes are independent; the tag records which axis this set
/// describes (`None` for an axis-agnostic set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueParams {
    /// Linear stiffness (N/m).
    pub k1: f64,
    /// Cubic stiffening (N/m^3).
    pub k3: f64,
    /// Damping (N·s/m).
    pub b_env: f64,
    /// Stiffness ratio applied in tension relative to compression.
    pub tension_asymmetry: f64,
    /// Axis this parameter set describes.
    pub axis: Option<Axis>,
    /// Identifier of the sampled material (1-based).
    pub material_id: u32,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            k1: 220.0,
            k3: 2.5e5,
            b_env: 12.0,
            tension_asymmetry: 1.15,
            axis: None,
            material_id: 1,
        }
    }
}

impl TissueParams {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 0.0 || self.b_env < 0.0 || self.k3 < 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "tissue stiffness and damping must be non-negative: k1={}, k3={}, b_env={}",
                self.k1, self.k3, self.b_env
            )));
        }
        if !(self.tension_asymmetry > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "tension_asymmetry must be positive, got {}",
                self.tension_asymmetry
            )));
        }
        Ok(())
    }

    /// Stiffness-scaled copy representing a pretensioned operating point.
    /// The mapping is k1 -> k1 * factor^pretension_newtons; factor 1 is the
    /// identity regardless of pretension.
    pub fn with_pretension(&self, pretension_newtons: f64, factor: f64) -> Self {
        let mut out = self.clone();
        out.k1 *= factor.powf(pretension_newtons);
        out
    }

    /// Local stiffness dF/dd of the static curve at displacement `d` (m).
    pub fn local_stiffness(&self, d: f64) -> f64 {
        let s = if d > 0.0 { self.tension_asymmetry } else { 1.0 };
        s * (self.k1 + 3.0 * self.k3 * d * d)
    }
}

/// Interaction force (N) at displacement `d` (m) and rate `v` (m/s).
pub fn tissue_force(tissue: &TissueParams, d: f64, v: f64) -> f64 {
    let s = if d > 0.0 { tissue.tension_asymmetry } else { 1.0 };
    s * (tissue.k1 * d + tissue.k3 * d * d * d) + tissue.b_env * v
}

/// Follower state. Position is in task space on the manipulated axis;
/// the zero-force point of the tissue is the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmState {
    /// Position (m).
    pub position: f64,
    /// Velocity (m/s), tracked for the tissue damping term.
    pub velocity: f64,
    /// Offset (m) mapping the scaled master command onto the zero-force point.
    pub grasp_offset: f64,
    /// First-order follower time constant (s); 0 means ideal tracking.
    pub lag_tau: f64,
}

impl PsmState {
    pub fn new(grasp_offset: f64, lag_tau: f64) -> Self {
        Self {
            position: grasp_offset,
            velocity: 0.0,
            grasp_offset,
            lag_tau,
        }
    }
}

/// Advance the follower toward `scale * master_x + grasp_offset` over `dt`.
/// With `lag_tau = 0` the follower lands on the target exactly; otherwise it
/// relaxes with the exact first-order discretization.
pub fn psm_follow(psm: PsmState, master_x: f64, scale: f64, dt: f64) -> PsmState {
    let target = scale * master_x + psm.grasp_offset;
    let position = if psm.lag_tau == 0.0 {
        target
    } else {
        target + (psm.position - target) * (-dt / psm.lag_tau).exp()
    };
    PsmState {
        position,
        velocity: (position - psm.position) / dt,
        ..psm
    }
}

/// Choose the grasp offset so the tissue force at the protocol start is
/// exactly zero, and apply the pretension stiffness mapping when the
/// protocol carries a pretension tag.
///
/// Returns the initialized follower state and the effective tissue
/// parameters for the run.
pub fn initialize_grasp(
    protocol: &TrajectoryProtocol,
    tissue: &TissueParams,
    scale: f64,
    lag_tau: f64,
    pretension_factor: f64,
) -> (PsmState, TissueParams) {
    // Tissue displacement is psm position itself (origin = zero-force point),
    // so zeroing means starting the follower at the origin.
    let grasp_offset = -scale * protocol.start_position();
    let effective = if protocol.pretension != 0.0 {
        tissue.with_pretension(protocol.pretension, pretension_factor)
    } else {
        tissue.clone()
    };
    (PsmState::new(grasp_offset, lag_tau), effective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{build_closed_loop, build_open_loop, Axis, ProtocolKind};
    use approx::assert_relative_eq;

    #[test]
    fn zero_displacement_zero_force() {
        let t = TissueParams::default();
        assert_eq!(tissue_force(&t, 0.0, 0.0), 0.0);
    }

    #[test]
    fn plug_in_arithmetic() {
        // k1=100, k3=2e6, d=0.01 -> 1 + 2 = 3 N
        let t = TissueParams {
            k1: 100.0,
            k3: 2e6,
            b_env: 0.0,
            tension_asymmetry: 1.0,
            material_id: 1,
        };
        assert_relative_eq!(tissue_force(&t, 0.01, 0.0), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn static_curve_is_odd_and_monotone_when_symmetric() {
        let t = TissueParams {
            tension_asymmetry: 1.0,
            ..TissueParams::default()
        };
        let mut prev = f64::NEG_INFINITY;
        for k in -100..=100 {
            let d = k as f64 * 1e-4;
            let f = tissue_force(&t, d, 0.0);
            let f_neg = tissue_force(&t, -d, 0.0);
            assert_relative_eq!(f, -f_neg, epsilon = 1e-12);
            assert!(f > prev, "static curve must be strictly increasing");
            prev = f;
        }
    }

    #[test]
    fn hysteresis_loop_area_positive_with_damping() {
        // Triangle sweep 0 -> 10 mm -> 0: integral of F dd over the loop
        // equals the energy dissipated by b_env, positive for any speed.
        let t = TissueParams::default();
        let n = 2000;
        let peak = 0.01;
        let speed = 0.02; // m/s
        let dt = peak / speed / n as f64;
        let mut area = 0.0;
        let mut d_prev = 0.0;
        let mut f_prev = tissue_force(&t, 0.0, speed);
        for k in 1..=2 * n {
            let d = if k <= n {
                peak * k as f64 / n as f64
            } else {
                peak * (2 * n - k) as f64 / n as f64
            };
            let v = if k <= n { speed } else { -speed };
            let f = tissue_force(&t, d, v);
            area += 0.5 * (f + f_prev) * (d - d_prev);
            d_prev = d;
            f_prev = f;
        }
        assert!(area > 0.0, "loop area {area}");
        let _ = dt;
    }

    #[test]
    fn quasi_static_sweep_collapses_branches() {
        let t = TissueParams::default();
        // loading and unloading force at the same displacement differ by
        // 2*b_env*|v|, vanishing as the sweep slows
        let d = 0.005;
        for &v in &[1e-2, 1e-4, 1e-6] {
            let gap = tissue_force(&t, d, v) - tissue_force(&t, d, -v);
            assert_relative_eq!(gap, 2.0 * t.b_env * v, epsilon = 1e-12);
        }
    }

    #[test]
    fn follower_scales_master_displacement() {
        let psm = PsmState::new(0.0, 0.0);
        let next = psm_follow(psm, 0.075, 0.2, 0.002);
        assert_relative_eq!(next.position, 0.015, epsilon = 1e-15);
    }

    #[test]
    fn ideal_follower_tracks_exactly() {
        let mut psm = PsmState::new(0.0, 0.0);
        for k in 0..100 {
            let x = (k as f64 * 0.01).sin() * 0.05;
            psm = psm_follow(psm, x, 0.2, 0.002);
            assert_eq!(psm.position, 0.2 * x);
        }
    }

    #[test]
    fn lagged_follower_first_order_step() {
        // one time constant after a step: 63.2% of the target
        let tau = 0.02;
        let dt = 0.001;
        let mut psm = PsmState::new(0.0, tau);
        for _ in 0..20 {
            psm = psm_follow(psm, 0.1, 0.2, dt);
        }
        let target = 0.02;
        assert_relative_eq!(
            psm.position,
            target * (1.0 - (-1.0_f64).exp()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn grasp_zeroing_starts_at_zero_force() {
        let tissue = TissueParams::default();
        for p in [
            build_open_loop(ProtocolKind::Retraction),
            build_closed_loop(Axis::Z),
        ] {
            let (psm, eff) = initialize_grasp(&p, &tissue, 0.2, 0.0, 1.4);
            let f0 = tissue_force(&eff, psm.position, 0.0);
            assert!(f0.abs() < 1e-12, "start force {f0}");
        }
    }

    #[test]
    fn pretension_factor_identity() {
        let tissue = TissueParams::default();
        let p = build_closed_loop(Axis::X); // carries 1 N pretension
        let (_, eff) = initialize_grasp(&p, &tissue, 0.2, 0.0, 1.0);
        assert_eq!(eff, tissue);
    }

    #[test]
    fn pretension_raises_linear_stiffness() {
        let tissue = TissueParams::default();
        let p = build_closed_loop(Axis::Y);
        let factor = 1.4;
        let (_, eff) = initialize_grasp(&p, &tissue, 0.2, 0.0, factor);
        assert_relative_eq!(eff.k1, tissue.k1 * factor, epsilon = 1e-12);
        // z axis has no pretension tag
        let (_, eff_z) = initialize_grasp(&build_closed_loop(Axis::Z), &tissue, 0.2, 0.0, factor);
        assert_eq!(eff_z, tissue);
    }
}
