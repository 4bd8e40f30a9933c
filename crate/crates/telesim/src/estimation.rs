//! Pluggable force estimators with per-method update rates.
//!
//! Four families are available: the ground-truth sensor path, a surrogate
//! for a physics-based dynamic model (heavy low-pass plus bias and torque
//! noise), behavioral surrogates parameterized to reproduce the documented
//! failure modes of the learned estimators (saturation, latency, bias,
//! velocity-coupled overestimation, unloading hysteresis), and a trainable
//! network. Estimates are held by zero-order hold between the estimator's
//! own ticks.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::filter::LowPass2;
use crate::neural::Mlp;

/// Estimator family and parameters.
#[derive(Debug, Clone)]
pub enum EstimatorKind {
    /// Force-sensor path: the true interaction force plus optional noise.
    GroundTruth {
        /// Gaussian noise standard deviation (N); 0 reproduces the sensor exactly.
        noise_sd: f64,
    },
    /// Physics-based dynamic model surrogate: the true force smoothed by a
    /// heavy causal low-pass (the lag produces the unloading overestimate),
    /// plus a constant bias and per-tick torque noise.
    DynamicSurrogate {
        cutoff_hz: f64,
        bias: f64,
        torque_noise_sd: f64,
    },
    /// Parametric stand-in for a learned estimator.
    Behavioral {
        gain: f64,
        bias: f64,
        /// Input-output latency (s), realized on the fine clock.
        latency: f64,
        /// Output clamp (N); infinity disables saturation.
        saturation_force: f64,
        /// Overestimation proportional to follower velocity (N·s/m).
        velocity_overshoot_gain: f64,
        /// Added along sign(d) while unloading (d·v < 0) (N).
        hysteresis_offset: f64,
    },
    /// Trained network over the fixed feature set; `latency` models inference
    /// delay in whole frames of the estimator rate.
    Neural { model: Arc<Mlp>, latency: f64 },
}

/// A named estimation method with its update rate.
#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub id: String,
    pub rate_hz: u32,
    pub kind: EstimatorKind,
}

impl EstimatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rate_hz == 0 {
            return Err(SimError::InvalidConfig(format!(
                "estimator `{}` has zero rate",
                self.id
            )));
        }
        match &self.kind {
            EstimatorKind::Behavioral { gain, .. } => {
                if !(*gain > 0.0) {
                    return Err(SimError::InvalidConfig(format!(
                        "estimator `{}`: gain must be positive, got {gain}",
                        self.id
                    )));
                }
            }
            EstimatorKind::DynamicSurrogate { cutoff_hz, .. } => {
                if !(*cutoff_hz > 0.0 && *cutoff_hz < self.rate_hz as f64 / 2.0) {
                    return Err(SimError::InvalidCutoff {
                        cutoff: *cutoff_hz,
                        sample_rate: self.rate_hz as f64,
                        nyquist: self.rate_hz as f64 / 2.0,
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Signals visible to an estimator on its tick. Ground truth is consumed
/// only by the sensor path and the surrogates that are defined as transforms
/// of it; the network sees state quantities alone.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInputs {
    /// Follower position (m).
    pub psm_position: f64,
    /// Follower velocity (m/s) as integrated by the simulation.
    pub psm_velocity: f64,
    /// True interaction force now (N).
    pub f_ground_truth: f64,
    /// Operator tracking force (N), zero-order held from the plant tick.
    pub f_c: f64,
    /// Operator position (m).
    pub master_x: f64,
    /// Operator velocity (m/s).
    pub master_v: f64,
    /// Feedback displayed during the preceding interval (N); zero when no
    /// feedback is rendered.
    pub prev_feedback: f64,
}

// Ring buffer of the true force on the fine clock, for latency lookbacks.
#[derive(Debug, Clone)]
struct DelayLine {
    buf: Vec<f64>,
    head: usize,
    filled: usize,
}

impl DelayLine {
    fn new(capacity: usize) -> Self {
        Self {
            buf: vec![0.0; capacity.max(1)],
            head: 0,
            filled: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.buf[self.head] = v;
        self.head = (self.head + 1) % self.buf.len();
        self.filled = (self.filled + 1).min(self.buf.len());
    }

    /// Value `delay` pushes ago; clamped to the oldest available sample.
    fn read_back(&self, delay: usize) -> f64 {
        if self.filled == 0 {
            return 0.0;
        }
        let d = delay.min(self.filled - 1);
        let idx = (self.head + self.buf.len() - 1 - d) % self.buf.len();
        self.buf[idx]
    }
}

/// Stateful estimator instance owned by one run.
pub struct Estimator {
    spec: EstimatorSpec,
    rng: ChaCha12Rng,
    lowpass: Option<LowPass2>,
    truth_delay: DelayLine,
    truth_delay_ticks: usize,
    output_queue: std::collections::VecDeque<f64>,
    output_delay_frames: usize,
    prev_psm_position: Option<f64>,
}

impl Estimator {
    /// Build a runtime instance. `master_rate_hz` is the fine clock the truth
    /// delay line is recorded on; `seed` fixes the noise stream.
    pub fn new(spec: &EstimatorSpec, master_rate_hz: u32, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (lowpass, truth_delay_ticks, output_delay_frames) = match &spec.kind {
            EstimatorKind::DynamicSurrogate { cutoff_hz, .. } => (
                Some(LowPass2::new(*cutoff_hz, spec.rate_hz as f64)?),
                0usize,
                0usize,
            ),
            EstimatorKind::Behavioral { latency, .. } => (
                None,
                (latency * master_rate_hz as f64).round() as usize,
                0,
            ),
            EstimatorKind::Neural { latency, .. } => (
                None,
                0,
                (latency * spec.rate_hz as f64).round() as usize,
            ),
            EstimatorKind::GroundTruth { .. } => (None, 0, 0),
        };
        Ok(Self {
            spec: spec.clone(),
            rng: ChaCha12Rng::seed_from_u64(seed),
            lowpass,
            truth_delay: DelayLine::new(truth_delay_ticks + 1),
            truth_delay_ticks,
            output_queue: std::collections::VecDeque::new(),
            output_delay_frames,
            prev_psm_position: None,
        })
    }

    pub fn spec(&self) -> &EstimatorSpec {
        &self.spec
    }

    /// Record the true force for this fine-clock tick. Must be called once
    /// per master tick, before `update` on ticks where the estimator fires.
    pub fn record_truth(&mut self, f_true: f64) {
        if self.truth_delay_ticks > 0 {
            self.truth_delay.push(f_true);
        }
    }

    fn gauss(&mut self, sd: f64) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, sd).expect("sd validated non-negative");
        normal.sample(&mut self.rng)
    }

    /// Produce the estimate for this tick (N). Call exactly on the
    /// estimator's own ticks; the caller holds the value in between.
    pub fn update(&mut self, inputs: &EstimatorInputs) -> Result<f64> {
        let est = match &self.spec.kind {
            EstimatorKind::GroundTruth { noise_sd } => {
                let sd = *noise_sd;
                let noise = self.gauss(sd);
                if sd == 0.0 {
                    inputs.f_ground_truth
                } else {
                    inputs.f_ground_truth + noise
                }
            }
            EstimatorKind::DynamicSurrogate {
                bias,
                torque_noise_sd,
                ..
            } => {
                let (bias, sd) = (*bias, *torque_noise_sd);
                let filtered = self
                    .lowpass
                    .as_mut()
                    .expect("dynamic surrogate always has a filter")
                    .step(inputs.f_ground_truth);
                filtered + bias + self.gauss(sd)
            }
            EstimatorKind::Behavioral {
                gain,
                bias,
                saturation_force,
                velocity_overshoot_gain,
                hysteresis_offset,
                ..
            } => {
                let delayed = if self.truth_delay_ticks > 0 {
                    self.truth_delay.read_back(self.truth_delay_ticks)
                } else {
                    inputs.f_ground_truth
                };
                let raw = gain * delayed + bias + velocity_overshoot_gain * inputs.psm_velocity;
                let mut est = raw.clamp(-saturation_force, *saturation_force);
                let d = inputs.psm_position;
                if d * inputs.psm_velocity < 0.0 {
                    est += hysteresis_offset * d.signum();
                }
                est
            }
            EstimatorKind::Neural { model, .. } => {
                // the velocity feature is the finite difference at the
                // estimator's own rate, reproducible from logged positions
                let vel = match self.prev_psm_position {
                    Some(p) => (inputs.psm_position - p) * self.spec.rate_hz as f64,
                    None => 0.0,
                };
                self.prev_psm_position = Some(inputs.psm_position);
                let features = [
                    inputs.psm_position,
                    vel,
                    inputs.f_c,
                    inputs.prev_feedback,
                ];
                let out = model.forward(&features)?;
                if self.output_delay_frames > 0 {
                    self.output_queue.push_back(out);
                    if self.output_queue.len() > self.output_delay_frames {
                        self.output_queue.pop_front().expect("non-empty")
                    } else {
                        *self.output_queue.front().expect("just pushed")
                    }
                } else {
                    out
                }
            }
        };
        if !est.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "estimator `{}` produced non-finite output",
                self.spec.id
            )));
        }
        Ok(est)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inputs_with_truth(f: f64) -> EstimatorInputs {
        EstimatorInputs {
            psm_position: 0.0,
            psm_velocity: 0.0,
            f_ground_truth: f,
            f_c: 0.0,
            master_x: 0.0,
            master_v: 0.0,
            prev_feedback: 0.0,
        }
    }

    fn spec(kind: EstimatorKind, rate: u32) -> EstimatorSpec {
        EstimatorSpec {
            id: "test".into(),
            rate_hz: rate,
            kind,
        }
    }

    #[test]
    fn ground_truth_without_noise_is_exact() {
        let s = spec(EstimatorKind::GroundTruth { noise_sd: 0.0 }, 1000);
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        for f in [0.0, -2.5, 3.75, 1e-9] {
            assert_eq!(e.update(&inputs_with_truth(f)).unwrap(), f);
        }
    }

    #[test]
    fn ground_truth_noise_is_seeded() {
        let s = spec(EstimatorKind::GroundTruth { noise_sd: 0.1 }, 1000);
        let run = |seed| {
            let mut e = Estimator::new(&s, 6000, seed).unwrap();
            (0..5)
                .map(|_| e.update(&inputs_with_truth(1.0)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn behavioral_saturation_clamps() {
        // saturation 2 N, truth 5 N, gain 1 -> 2 N
        let s = spec(
            EstimatorKind::Behavioral {
                gain: 1.0,
                bias: 0.0,
                latency: 0.0,
                saturation_force: 2.0,
                velocity_overshoot_gain: 0.0,
                hysteresis_offset: 0.0,
            },
            60,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        assert_eq!(e.update(&inputs_with_truth(5.0)).unwrap(), 2.0);
        assert_eq!(e.update(&inputs_with_truth(-5.0)).unwrap(), -2.0);
    }

    #[test]
    fn behavioral_latency_delays_truth() {
        let s = spec(
            EstimatorKind::Behavioral {
                gain: 1.0,
                bias: 0.0,
                latency: 0.001, // 6 master ticks at 6 kHz
                saturation_force: f64::INFINITY,
                velocity_overshoot_gain: 0.0,
                hysteresis_offset: 0.0,
            },
            1000,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        // ramp on the fine clock: f(t) = tick
        for tick in 0..=12 {
            e.record_truth(tick as f64);
        }
        let got = e.update(&inputs_with_truth(12.0)).unwrap();
        assert_eq!(got, 6.0);
    }

    #[test]
    fn behavioral_identity_matches_ground_truth_bitwise() {
        let ident = spec(
            EstimatorKind::Behavioral {
                gain: 1.0,
                bias: 0.0,
                latency: 0.0,
                saturation_force: f64::INFINITY,
                velocity_overshoot_gain: 0.0,
                hysteresis_offset: 0.0,
            },
            1000,
        );
        let gt = spec(EstimatorKind::GroundTruth { noise_sd: 0.0 }, 1000);
        let mut a = Estimator::new(&ident, 6000, 1).unwrap();
        let mut b = Estimator::new(&gt, 6000, 1).unwrap();
        for k in 0..100 {
            let mut input = inputs_with_truth((k as f64 * 0.37).sin() * 2.0);
            input.psm_velocity = (k as f64 * 0.11).cos();
            input.psm_position = (k as f64 * 0.07).sin() * 0.01;
            let fa = a.update(&input).unwrap();
            let fb = b.update(&input).unwrap();
            assert_eq!(fa.to_bits(), fb.to_bits());
        }
    }

    #[test]
    fn hysteresis_offset_applies_only_while_unloading() {
        let s = spec(
            EstimatorKind::Behavioral {
                gain: 1.0,
                bias: 0.0,
                latency: 0.0,
                saturation_force: f64::INFINITY,
                velocity_overshoot_gain: 0.0,
                hysteresis_offset: 0.5,
            },
            60,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        // compression (d < 0), still loading (v < 0): no offset
        let mut input = inputs_with_truth(-1.0);
        input.psm_position = -0.01;
        input.psm_velocity = -0.1;
        assert_eq!(e.update(&input).unwrap(), -1.0);
        // compression, unloading (v > 0): magnitude grows along sign(d)
        input.psm_velocity = 0.1;
        assert_eq!(e.update(&input).unwrap(), -1.5);
        // tension, unloading (v < 0)
        input.psm_position = 0.01;
        input.f_ground_truth = 1.0;
        input.psm_velocity = -0.1;
        assert_eq!(e.update(&input).unwrap(), 1.5);
    }

    #[test]
    fn dynamic_surrogate_lags_loading_and_overestimates_unloading() {
        let s = spec(
            EstimatorKind::DynamicSurrogate {
                cutoff_hz: 1.0,
                bias: 0.0,
                torque_noise_sd: 0.0,
            },
            400,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        // triangular force sweep 0 -> 2 N -> 0 over 4 s at 400 Hz
        let rate = 400.0;
        let n = (4.0 * rate) as usize;
        let mut rising_est_at_1 = None;
        let mut falling_est_at_1 = None;
        for k in 0..n {
            let t = k as f64 / rate;
            let truth = if t < 2.0 { t } else { 4.0 - t };
            let est = e.update(&inputs_with_truth(truth)).unwrap();
            if rising_est_at_1.is_none() && t >= 1.0 {
                rising_est_at_1 = Some(est);
            }
            if falling_est_at_1.is_none() && t >= 3.0 {
                falling_est_at_1 = Some(est);
            }
        }
        let rising = rising_est_at_1.unwrap();
        let falling = falling_est_at_1.unwrap();
        // same true force (1 N) on both branches: lag underestimates while
        // loading and overestimates while unloading
        assert!(rising < 1.0, "loading estimate {rising}");
        assert!(falling > 1.0, "unloading estimate {falling}");
    }

    #[test]
    fn dynamic_surrogate_branches_enclose_positive_area() {
        // Triangle displacement sweep against a pure spring (no damping in
        // the truth): the filter lag alone separates the branches, so the
        // estimate-displacement loop encloses positive area at any speed.
        let s = spec(
            EstimatorKind::DynamicSurrogate {
                cutoff_hz: 1.0,
                bias: 0.0,
                torque_noise_sd: 0.0,
            },
            400,
        );
        for period_s in [2.0, 8.0] {
            let mut e = Estimator::new(&s, 6000, 1).unwrap();
            let rate = 400.0;
            let n = (period_s * rate) as usize;
            let peak = 0.01;
            let k_spring = 100.0;
            let mut area = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            let mut rising_mid = 0.0;
            let mut falling_mid = 0.0;
            // first cycle flushes the filter start-up; area accumulates over
            // the second, quasi-steady cycle
            for cycle_sample in 0..=4 * n {
                let k = cycle_sample % (2 * n);
                let d = if k < n {
                    peak * k as f64 / n as f64
                } else {
                    peak * (2 * n - k) as f64 / n as f64
                };
                let est = e.update(&inputs_with_truth(k_spring * d)).unwrap();
                if cycle_sample >= 2 * n {
                    if let Some((d0, est0)) = prev {
                        area += 0.5 * (est + est0) * (d - d0);
                    }
                    prev = Some((d, est));
                    if k == n / 2 {
                        rising_mid = est;
                    }
                    if k == n + n / 2 {
                        falling_mid = est;
                    }
                }
            }
            // the branches enclose area at any speed; unloading sits above
            // loading, which makes this loading-first circulation clockwise
            // (negative signed sum)
            assert!(
                area.abs() > 1e-6,
                "branches collapsed: |area| {} at period {period_s} s",
                area.abs()
            );
            assert!(
                falling_mid > rising_mid,
                "unloading {falling_mid} not above loading {rising_mid}"
            );
        }
    }

    #[test]
    fn dynamic_surrogate_bias_shifts_settled_output() {
        let s = spec(
            EstimatorKind::DynamicSurrogate {
                cutoff_hz: 1.0,
                bias: 0.25,
                torque_noise_sd: 0.0,
            },
            400,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        let mut last = 0.0;
        for _ in 0..4000 {
            last = e.update(&inputs_with_truth(1.0)).unwrap();
        }
        assert_relative_eq!(last, 1.25, epsilon = 1e-6);
    }

    #[test]
    fn neural_estimator_runs_and_delays_output() {
        let model = Arc::new(Mlp::new(4, &[8], 3));
        let s = spec(
            EstimatorKind::Neural {
                model: model.clone(),
                latency: 2.0 / 60.0, // two frames at 60 Hz
            },
            60,
        );
        let mut e = Estimator::new(&s, 6000, 1).unwrap();
        let mut outs = Vec::new();
        for k in 0..5 {
            let mut input = inputs_with_truth(0.0);
            input.psm_position = k as f64 * 0.001;
            outs.push(e.update(&input).unwrap());
        }
        // first two outputs repeat the initial inference while the queue fills
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
        // afterwards the output at k reflects the inference from k-2
        assert_ne!(outs[2], outs[3]);
    }

    #[test]
    fn rejects_zero_gain() {
        let s = spec(
            EstimatorKind::Behavioral {
                gain: 0.0,
                bias: 0.0,
                latency: 0.0,
                saturation_force: f64::INFINITY,
                velocity_overshoot_gain: 0.0,
                hysteresis_offset: 0.0,
            },
            60,
        );
        assert!(Estimator::new(&s, 6000, 1).is_err());
    }
}
