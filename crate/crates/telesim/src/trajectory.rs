//! Minimum-jerk segments and the movement protocols used by the experiments.
//!
//! A protocol is an ordered, time-contiguous list of minimum-jerk segments.
//! Holds are segments whose endpoints coincide. All positions are in meters
//! on the side the protocol drives: the follower itself for the open-loop
//! protocols, the operator model for the closed-loop ones.

use serde::{Deserialize, Serialize};

/// Fifth-order minimum-jerk segment: zero velocity and acceleration at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinJerkSegment {
    /// Start position (m).
    pub x0: f64,
    /// End position (m).
    pub xf: f64,
    /// Duration (s), strictly positive.
    pub duration: f64,
    /// Absolute start time (s).
    pub t_start: f64,
}

impl MinJerkSegment {
    pub fn new(x0: f64, xf: f64, duration: f64, t_start: f64) -> Self {
        assert!(duration > 0.0, "segment duration must be positive");
        assert!(
            x0.is_finite() && xf.is_finite(),
            "segment endpoints must be finite"
        );
        Self {
            x0,
            xf,
            duration,
            t_start,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    /// True if this segment holds position rather than moving.
    pub fn is_hold(&self) -> bool {
        self.x0 == self.xf
    }

    /// Position and velocity at time `t`. Outside the segment the nearest
    /// endpoint value is returned (velocity zero), so evaluation is total.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let tau = ((t - self.t_start) / self.duration).clamp(0.0, 1.0);
        let d = self.xf - self.x0;
        let pos = self.x0 + d * (tau * tau * tau) * (10.0 + tau * (-15.0 + 6.0 * tau));
        let vel = d / self.duration * (tau * tau) * (30.0 + tau * (-60.0 + 30.0 * tau));
        (pos, vel)
    }
}

/// What the protocol represents; carried through run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Palpation,
    Retraction,
    ClosedLoop { axis: Axis },
    /// Quick strokes with short holds, used to collect baseline training data.
    BriefManipulation { axis: Axis },
    DemoReplay,
}

impl ProtocolKind {
    pub fn label(&self) -> String {
        match self {
            ProtocolKind::Palpation => "palpation".into(),
            ProtocolKind::Retraction => "retraction".into(),
            ProtocolKind::ClosedLoop { axis } => format!("closed_loop_{}", axis.label()),
            ProtocolKind::BriefManipulation { axis } => format!("brief_{}", axis.label()),
            ProtocolKind::DemoReplay => "demo_replay".into(),
        }
    }
}

/// Cartesian axis of a closed-loop manipulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(&self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}` (expected x, y, or z)")),
        }
    }
}

/// Ordered minimum-jerk segments and holds defining one experiment movement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryProtocol {
    pub segments: Vec<MinJerkSegment>,
    pub kind: ProtocolKind,
    /// Orthogonal pretension (N) applied before the manipulation. Consumed by
    /// the environment as a stiffness-scaling operating-point shift; a 1-DOF
    /// model cannot apply the force itself.
    pub pretension: f64,
}

/// Sampled command for the driven side at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredState {
    /// Commanded position (m).
    pub x_des: f64,
    /// Commanded velocity (m/s).
    pub v_des: f64,
    /// False during holds and after the protocol ends.
    pub moving: bool,
}

impl TrajectoryProtocol {
    /// Builds a protocol from contiguous (target, duration) legs starting at
    /// `start` position and time 0. A leg with `target == current` is a hold.
    pub fn from_legs(start: f64, legs: &[(f64, f64)], kind: ProtocolKind, pretension: f64) -> Self {
        let mut segments = Vec::with_capacity(legs.len());
        let mut x = start;
        let mut t = 0.0;
        for &(target, duration) in legs {
            segments.push(MinJerkSegment::new(x, target, duration, t));
            x = target;
            t += duration;
        }
        Self {
            segments,
            kind,
            pretension,
        }
    }

    /// Total duration (s).
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end())
    }

    /// Position commanded at t = 0.
    pub fn start_position(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.x0)
    }

    /// Peak commanded speed over the protocol (analytic: 1.875·|Δx|/T per segment).
    pub fn peak_speed(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| 1.875 * (s.xf - s.x0).abs() / s.duration)
            .fold(0.0, f64::max)
    }

    /// Time intervals of the commanded holds (segments with x0 == xf).
    pub fn commanded_holds(&self) -> Vec<(f64, f64)> {
        self.segments
            .iter()
            .filter(|s| s.is_hold())
            .map(|s| (s.t_start, s.t_end()))
            .collect()
    }

    /// Piecewise evaluation of the active segment. Past the end the final
    /// position is held with `moving = false`.
    pub fn sample(&self, t: f64) -> DesiredState {
        assert!(t >= 0.0, "protocol time must be non-negative");
        let last = match self.segments.last() {
            Some(s) => s,
            None => {
                return DesiredState {
                    x_des: 0.0,
                    v_des: 0.0,
                    moving: false,
                }
            }
        };
        if t >= last.t_end() {
            return DesiredState {
                x_des: last.xf,
                v_des: 0.0,
                moving: false,
            };
        }
        // Segments are contiguous and sorted; find the one containing t.
        let idx = self
            .segments
            .partition_point(|s| s.t_end() <= t)
            .min(self.segments.len() - 1);
        let seg = &self.segments[idx];
        let (x_des, v_des) = seg.eval(t);
        DesiredState {
            x_des,
            v_des,
            moving: !seg.is_hold(),
        }
    }

    /// Export as CSV rows (t, x_des, v_des, moving) sampled at `rate` Hz.
    pub fn export_csv<W: std::io::Write>(&self, w: W, rate: f64) -> crate::error::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "x_des", "xdot_des", "moving"])?;
        let n = (self.duration() * rate).round() as u64;
        for k in 0..=n {
            let t = k as f64 / rate;
            let s = self.sample(t);
            wtr.write_record(&[
                t.to_string(),
                s.x_des.to_string(),
                s.v_des.to_string(),
                (s.moving as u8).to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| crate::error::SimError::io("<csv>", e))?;
        Ok(())
    }
}

/// Open-loop follower protocol: three load/hold/unload/settle cycles.
///
/// Palpation compresses by 10 mm (negative displacement); retraction pulls
/// by 15 mm. Each cycle is 1 s load, 1 s hold, 1 s unload, 2 s settle.
pub fn build_open_loop(kind: ProtocolKind) -> TrajectoryProtocol {
    let peak = match kind {
        ProtocolKind::Palpation => -0.010,
        ProtocolKind::Retraction => 0.015,
        other => panic!("build_open_loop expects palpation or retraction, got {other:?}"),
    };
    let mut legs = Vec::new();
    for _ in 0..3 {
        legs.push((peak, 1.0)); // load
        legs.push((peak, 1.0)); // hold at peak
        legs.push((0.0, 1.0)); // unload
        legs.push((0.0, 2.0)); // settle
    }
    TrajectoryProtocol::from_legs(0.0, &legs, kind, 0.0)
}

/// Closed-loop operator-side protocol: +75 mm in 1 s, then -150/+150/-150 mm
/// in 2 s each, returning with +75 mm in 1 s, with 2 s holds between moves.
/// The x and y variants carry a 1 N pretension tag; z spans compression and
/// tension with no pretension.
pub fn build_closed_loop(axis: Axis) -> TrajectoryProtocol {
    let legs = [
        (0.075, 1.0),
        (0.075, 2.0),
        (-0.075, 2.0),
        (-0.075, 2.0),
        (0.075, 2.0),
        (0.075, 2.0),
        (-0.075, 2.0),
        (-0.075, 2.0),
        (0.0, 1.0),
    ];
    let pretension = match axis {
        Axis::X | Axis::Y => 1.0,
        Axis::Z => 0.0,
    };
    TrajectoryProtocol::from_legs(0.0, &legs, ProtocolKind::ClosedLoop { axis }, pretension)
}

/// Quick ±75 mm strokes with short holds, operator side: the brief-movement
/// counterpart of the closed-loop protocol, covering the same displacement
/// range with far less static holding. Two cycles, 9.6 s.
pub fn build_brief_manipulation(axis: Axis) -> TrajectoryProtocol {
    let mut legs = Vec::new();
    for _ in 0..2 {
        legs.extend_from_slice(&[
            (0.075, 0.8),
            (0.075, 0.4),
            (0.0, 0.8),
            (0.0, 0.4),
            (-0.075, 0.8),
            (-0.075, 0.4),
            (0.0, 0.8),
            (0.0, 0.4),
        ]);
    }
    let pretension = match axis {
        Axis::X | Axis::Y => 1.0,
        Axis::Z => 0.0,
    };
    TrajectoryProtocol::from_legs(
        0.0,
        &legs,
        ProtocolKind::BriefManipulation { axis },
        pretension,
    )
}

/// Scripted 35 s mix of slow and fast palpations and retractions with holds,
/// operator side. The exact timing of the original demonstration is not
/// recorded anywhere, so this is a documented fixed approximation.
pub fn build_demo_replay() -> TrajectoryProtocol {
    let legs = [
        // slow palpation with hold
        (-0.050, 2.0),
        (-0.050, 2.0),
        (0.0, 2.0),
        (0.0, 1.0),
        // slow retraction with hold
        (0.060, 2.0),
        (0.060, 2.0),
        (0.0, 2.0),
        (0.0, 1.0),
        // fast palpations
        (-0.040, 0.5),
        (0.0, 0.5),
        (-0.040, 0.5),
        (0.0, 0.5),
        (-0.040, 0.5),
        (0.0, 0.5),
        (0.0, 1.0),
        // fast retractions
        (0.050, 0.5),
        (0.0, 0.5),
        (0.050, 0.5),
        (0.0, 0.5),
        (0.0, 1.0),
        // slow deep palpation with long hold
        (-0.070, 2.5),
        (-0.070, 3.0),
        (0.0, 2.5),
        (0.0, 1.0),
        // closing retraction
        (0.050, 1.5),
        (0.050, 1.5),
        (0.0, 2.0),
    ];
    let p = TrajectoryProtocol::from_legs(0.0, &legs, ProtocolKind::DemoReplay, 0.0);
    debug_assert!((p.duration() - 35.0).abs() < 1e-9);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn midpoint_position_is_halfway() {
        let seg = MinJerkSegment::new(0.0, 1.0, 2.0, 0.0);
        let (pos, _) = seg.eval(1.0);
        assert_relative_eq!(pos, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn midpoint_velocity_matches_closed_form() {
        // vel(tau = 0.5) = 1.875 * (xf - x0) / T
        let seg = MinJerkSegment::new(0.0, 1.0, 2.0, 0.0);
        let (_, vel) = seg.eval(1.0);
        assert_relative_eq!(vel, 1.875 * 1.0 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_velocities_are_zero() {
        let seg = MinJerkSegment::new(-0.3, 0.7, 1.5, 2.0);
        let (p0, v0) = seg.eval(2.0);
        let (p1, v1) = seg.eval(3.5);
        assert_relative_eq!(p0, -0.3, epsilon = 1e-12);
        assert_relative_eq!(p1, 0.7, epsilon = 1e-12);
        assert_eq!(v0, 0.0);
        assert_eq!(v1, 0.0);
    }

    #[test]
    fn out_of_range_clamps_to_endpoints() {
        let seg = MinJerkSegment::new(1.0, 2.0, 1.0, 5.0);
        assert_eq!(seg.eval(0.0), (1.0, 0.0));
        assert_eq!(seg.eval(100.0), (2.0, 0.0));
    }

    #[test]
    fn palpation_peak_and_cycle_timing() {
        let p = build_open_loop(ProtocolKind::Palpation);
        let min = (0..=1500)
            .map(|k| p.sample(k as f64 * 0.01).x_des)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min, -0.010, epsilon = 1e-12);
        // 1 + 1 + 1 + 2 s per cycle, three cycles
        assert_relative_eq!(p.duration(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn retraction_peak() {
        let p = build_open_loop(ProtocolKind::Retraction);
        let max = (0..=1500)
            .map(|k| p.sample(k as f64 * 0.01).x_des)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(max, 0.015, epsilon = 1e-12);
    }

    #[test]
    fn closed_loop_returns_to_start_and_times_add_up() {
        for axis in Axis::ALL {
            let p = build_closed_loop(axis);
            let displacement: f64 = p
                .segments
                .iter()
                .filter(|s| !s.is_hold())
                .map(|s| s.xf - s.x0)
                .sum();
            assert_relative_eq!(displacement, 0.0, epsilon = 1e-12);
            // 8 s moving + 4 holds of 2 s
            assert_relative_eq!(p.duration(), 16.0, epsilon = 1e-12);
            let moving_time: f64 = p
                .segments
                .iter()
                .filter(|s| !s.is_hold())
                .map(|s| s.duration)
                .sum();
            assert_relative_eq!(moving_time, 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_loop_pretension_tags() {
        assert_eq!(build_closed_loop(Axis::X).pretension, 1.0);
        assert_eq!(build_closed_loop(Axis::Y).pretension, 1.0);
        assert_eq!(build_closed_loop(Axis::Z).pretension, 0.0);
    }

    #[test]
    fn first_segment_midpoint_of_closed_loop() {
        let p = build_closed_loop(Axis::Z);
        let s = p.sample(0.5);
        assert_relative_eq!(s.x_des, 0.0375, epsilon = 1e-12);
        assert!(s.moving);
    }

    #[test]
    fn hold_sample_has_zero_velocity() {
        let p = build_closed_loop(Axis::Z);
        // first hold spans [1 s, 3 s]
        let s = p.sample(2.0);
        assert_eq!(s.v_des, 0.0);
        assert!(!s.moving);
        assert_relative_eq!(s.x_des, 0.075, epsilon = 1e-12);
    }

    #[test]
    fn past_end_holds_final_position() {
        let p = build_closed_loop(Axis::Z);
        let s = p.sample(1000.0);
        assert_eq!(s.x_des, 0.0);
        assert!(!s.moving);
    }

    #[test]
    fn position_continuity_at_boundaries() {
        let p = build_closed_loop(Axis::X);
        for pair in p.segments.windows(2) {
            assert_eq!(pair[0].xf, pair[1].x0);
            let (end_pos, end_vel) = pair[0].eval(pair[0].t_end());
            let (start_pos, start_vel) = pair[1].eval(pair[1].t_start);
            assert_eq!(end_pos, start_pos);
            assert_eq!(end_vel, 0.0);
            assert_eq!(start_vel, 0.0);
        }
    }

    #[test]
    fn velocity_integral_matches_displacement() {
        // Trapezoidal integral of sampled velocity at 500 Hz vs closed form.
        for p in [
            build_open_loop(ProtocolKind::Palpation),
            build_closed_loop(Axis::Z),
            build_demo_replay(),
        ] {
            let rate = 500.0;
            let n = (p.duration() * rate).round() as u64;
            let mut integral = 0.0;
            let mut prev_v = p.sample(0.0).v_des;
            for k in 1..=n {
                let v = p.sample(k as f64 / rate).v_des;
                integral += 0.5 * (prev_v + v) / rate;
                prev_v = v;
            }
            let net = p.sample(p.duration()).x_des - p.start_position();
            assert!(
                (integral - net).abs() < 1e-6,
                "integral {integral} vs net {net} for {:?}",
                p.kind
            );
        }
    }

    #[test]
    fn demo_replay_is_35_seconds() {
        assert_relative_eq!(build_demo_replay().duration(), 35.0, epsilon = 1e-12);
    }

    #[test]
    fn peak_speed_of_closed_loop() {
        // Fastest leg: 150 mm in 2 s -> 1.875 * 0.15 / 2
        let p = build_closed_loop(Axis::Z);
        assert_relative_eq!(p.peak_speed(), 1.875 * 0.15 / 2.0, epsilon = 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // the quintic is monotone between its endpoints, so every sample
            // stays inside [min(x0, xf), max(x0, xf)]
            #[test]
            fn position_stays_between_endpoints(
                x0 in -1.0..1.0f64,
                xf in -1.0..1.0f64,
                duration in 0.05..5.0f64,
                tau in 0.0..1.0f64,
            ) {
                let seg = MinJerkSegment::new(x0, xf, duration, 0.0);
                let (pos, _) = seg.eval(tau * duration);
                prop_assert!(pos >= x0.min(xf) - 1e-12 && pos <= x0.max(xf) + 1e-12);
            }

            // reversing a segment mirrors the profile about the midpoint
            #[test]
            fn reversal_symmetry(
                x0 in -1.0..1.0f64,
                xf in -1.0..1.0f64,
                duration in 0.05..5.0f64,
                tau in 0.0..1.0f64,
            ) {
                let fwd = MinJerkSegment::new(x0, xf, duration, 0.0);
                let rev = MinJerkSegment::new(xf, x0, duration, 0.0);
                let (p_fwd, _) = fwd.eval(tau * duration);
                let (p_rev, _) = rev.eval((1.0 - tau) * duration);
                prop_assert!((p_fwd - p_rev).abs() < 1e-9);
            }

            // sampling any protocol built from random legs never leaves the
            // leg envelope and never reports movement during holds
            #[test]
            fn protocol_samples_respect_holds(
                targets in proptest::collection::vec(-0.2..0.2f64, 1..6),
                t in 0.0..20.0f64,
            ) {
                let legs: Vec<(f64, f64)> = targets
                    .iter()
                    .flat_map(|&x| [(x, 0.5), (x, 0.5)])
                    .collect();
                let p = TrajectoryProtocol::from_legs(
                    0.0,
                    &legs,
                    ProtocolKind::DemoReplay,
                    0.0,
                );
                let s = p.sample(t);
                prop_assert!(s.x_des.is_finite() && s.v_des.is_finite());
                if !s.moving {
                    prop_assert_eq!(s.v_des, 0.0);
                }
            }
        }
    }
}
