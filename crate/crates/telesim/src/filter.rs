//! Causal second-order Butterworth low-pass, discretized with the bilinear
//! transform (prewarped so the -3 dB point lands exactly on the cutoff).
//!
//! Used in two places: the 1 Hz smoothing of the dynamic-model estimate and
//! the 100 Hz conditioning of the passivation effort before RMS analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Second-order Butterworth low-pass with Direct Form II transposed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowPass2 {
    cutoff_hz: f64,
    sample_rate_hz: f64,
    // coefficients (a0 normalized to 1)
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    // state
    s1: f64,
    s2: f64,
}

impl LowPass2 {
    pub fn new(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) || !sample_rate_hz.is_finite() {
            return Err(SimError::InvalidCutoff {
                cutoff: cutoff_hz,
                sample_rate: sample_rate_hz,
                nyquist,
            });
        }
        // Bilinear transform of s^2 + sqrt(2) s + 1 with prewarping
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        Ok(Self {
            cutoff_hz,
            sample_rate_hz,
            b0: k * k * norm,
            b1: 2.0 * k * k * norm,
            b2: k * k * norm,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - sqrt2 * k + k * k) * norm,
            s1: 0.0,
            s2: 0.0,
        })
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Advance one sample.
    pub fn step(&mut self, u: f64) -> f64 {
        let y = self.b0 * u + self.s1;
        self.s1 = self.b1 * u - self.a1 * y + self.s2;
        self.s2 = self.b2 * u - self.a2 * y;
        y
    }

    /// Clear the internal state (output returns to rest).
    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// Filter a whole series, starting from rest.
    pub fn filter_series(cutoff_hz: f64, sample_rate_hz: f64, input: &[f64]) -> Result<Vec<f64>> {
        let mut f = Self::new(cutoff_hz, sample_rate_hz)?;
        Ok(input.iter().map(|&u| f.step(u)).collect())
    }
}

/// Analytic step response of the continuous-time second-order Butterworth
/// (zeta = 1/sqrt(2)). Test oracle for the discrete implementation.
pub fn butterworth2_step_response(cutoff_hz: f64, t: f64) -> f64 {
    let w0 = 2.0 * std::f64::consts::PI * cutoff_hz;
    let u = w0 * t / std::f64::consts::SQRT_2;
    1.0 - (-u).exp() * (u.cos() + u.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_cutoff() {
        assert!(LowPass2::new(0.0, 400.0).is_err());
        assert!(LowPass2::new(250.0, 400.0).is_err());
        assert!(LowPass2::new(-1.0, 400.0).is_err());
        assert!(LowPass2::new(1.0, 400.0).is_ok());
    }

    #[test]
    fn dc_gain_is_unity() {
        let mut f = LowPass2::new(1.0, 400.0).unwrap();
        let mut y = 0.0;
        for _ in 0..4000 {
            y = f.step(3.7);
        }
        assert!((y - 3.7).abs() < 1e-9, "settled at {y}");
    }

    #[test]
    fn step_response_matches_analytic_oracle() {
        // Discrete output vs densely evaluated continuous-time response.
        let cutoff = 1.0;
        let rate = 400.0;
        let mut f = LowPass2::new(cutoff, rate).unwrap();
        let mut max_err = 0.0_f64;
        for k in 0..(3.0 * rate) as usize {
            let y = f.step(1.0);
            // the bilinear step at index k approximates the response at (k + 1/2) dt
            let t = (k as f64 + 0.5) / rate;
            let oracle = butterworth2_step_response(cutoff, t);
            max_err = max_err.max((y - oracle).abs());
        }
        assert!(max_err < 2e-3, "max error vs oracle: {max_err}");
    }

    #[test]
    fn time_to_90_percent_matches_oracle() {
        let cutoff = 1.0;
        let rate = 400.0;
        // oracle crossing found on a dense grid
        let mut t90_oracle = 0.0;
        for k in 0..400_000 {
            let t = k as f64 * 1e-5;
            if butterworth2_step_response(cutoff, t) >= 0.9 {
                t90_oracle = t;
                break;
            }
        }
        let mut f = LowPass2::new(cutoff, rate).unwrap();
        let mut t90_disc = 0.0;
        for k in 0..(4.0 * rate) as usize {
            if f.step(1.0) >= 0.9 {
                t90_disc = (k as f64 + 0.5) / rate;
                break;
            }
        }
        assert!(t90_oracle > 0.0 && t90_disc > 0.0);
        assert!(
            (t90_disc - t90_oracle).abs() < 2.0 / rate,
            "discrete t90 {t90_disc} vs oracle {t90_oracle}"
        );
    }

    #[test]
    fn minus_3db_at_cutoff() {
        // 1 Hz sine through a 1 Hz cutoff: amplitude ratio 1/sqrt(2) +- 2%
        let cutoff = 1.0;
        let rate = 400.0;
        let mut f = LowPass2::new(cutoff, rate).unwrap();
        let w = 2.0 * std::f64::consts::PI * cutoff;
        let mut peak = 0.0_f64;
        for k in 0..(20.0 * rate) as usize {
            let t = k as f64 / rate;
            let y = f.step((w * t).sin());
            if t > 10.0 {
                peak = peak.max(y.abs());
            }
        }
        let target = 1.0 / std::f64::consts::SQRT_2;
        assert!(
            (peak - target).abs() / target < 0.02,
            "passband peak {peak} vs {target}"
        );
    }

    #[test]
    fn attenuates_well_above_cutoff() {
        let mut f = LowPass2::new(1.0, 400.0).unwrap();
        let w = 2.0 * std::f64::consts::PI * 50.0;
        let mut peak = 0.0_f64;
        for k in 0..8000 {
            let t = k as f64 / 400.0;
            let y = f.step((w * t).sin());
            if k > 4000 {
                peak = peak.max(y.abs());
            }
        }
        // second-order rolloff: ~(1/50)^2
        assert!(peak < 0.002, "50 Hz leakage {peak}");
    }
}
