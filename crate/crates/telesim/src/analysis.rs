//! Post-hoc metrics over run logs: feedback RMSE, hold-window detection from
//! velocity profiles, RMS passivating effort, detrended hold spectra, and
//! force-displacement stiffness curves.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::AnalysisConfig;
use crate::error::{Result, SimError};
use crate::filter::LowPass2;
use crate::runlog::RunLog;

/// Non-overlapping, increasing time intervals (s) where the operator model
/// was holding a position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HoldWindows {
    pub windows: Vec<(f64, f64)>,
}

impl HoldWindows {
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        self.windows.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.windows.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// Indices of `series` (sampled at `rate`) inside the hold union.
    fn indices(&self, len: usize, rate: f64) -> Vec<usize> {
        (0..len)
            .filter(|&i| self.contains(i as f64 / rate))
            .collect()
    }
}

/// Root mean squared error between a feedback series and the ground truth,
/// both already on the common log timeline.
pub fn rmse(feedback: &[f64], ground_truth: &[f64]) -> Result<f64> {
    if feedback.is_empty() || feedback.len() != ground_truth.len() {
        return Err(SimError::EmptyInput(
            "rmse needs two non-empty series of equal length",
        ));
    }
    let acc: f64 = feedback
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((acc / feedback.len() as f64).sqrt())
}

/// Detect hold windows from a velocity profile sampled at `rate` Hz.
///
/// Movement onset: |v| rises above `theta_on`. Movement offset: |v| stays
/// below `theta_off` for at least `min_hold` seconds (the offset time is the
/// start of that quiet stretch). Holds are the intervals between an offset
/// and the next onset, shrunk by `settle_margin` on both ends; a trailing
/// quiet period without a following onset is not counted. If no movement is
/// detected at all, the whole span is one hold.
pub fn detect_holds(
    velocity: &[f64],
    rate: f64,
    theta_on: f64,
    theta_off: f64,
    min_hold: f64,
    settle_margin: f64,
) -> HoldWindows {
    let n = velocity.len();
    if n == 0 {
        return HoldWindows::default();
    }
    let min_quiet = (min_hold * rate).round() as usize;

    // state machine over |v|
    let mut moving = velocity[0].abs() > theta_on;
    let mut onsets = Vec::new();
    let mut offsets = Vec::new();
    if moving {
        onsets.push(0usize);
    }
    let mut quiet_start: Option<usize> = None;
    for (i, &v) in velocity.iter().enumerate() {
        let mag = v.abs();
        if moving {
            if mag < theta_off {
                match quiet_start {
                    None => quiet_start = Some(i),
                    Some(q0) => {
                        if i - q0 >= min_quiet {
                            offsets.push(q0);
                            moving = false;
                            quiet_start = None;
                        }
                    }
                }
            } else {
                quiet_start = None;
            }
        } else if mag > theta_on {
            onsets.push(i);
            moving = true;
        }
    }
    // a quiet stretch still pending at the end counts as an offset
    if moving {
        if let Some(q0) = quiet_start {
            if n - q0 >= min_quiet {
                offsets.push(q0);
            }
        }
    }

    if onsets.is_empty() {
        // no movement at all: the run is one long hold
        return HoldWindows {
            windows: vec![(0.0, n as f64 / rate)],
        };
    }

    let mut windows = Vec::new();
    for &off in &offsets {
        // pair each offset with the next onset after it
        if let Some(&next_on) = onsets.iter().find(|&&on| on > off) {
            let a = off as f64 / rate + settle_margin;
            let b = next_on as f64 / rate - settle_margin;
            if b > a {
                windows.push((a, b));
            }
        }
    }
    HoldWindows { windows }
}

/// Hold windows for a log using the configured thresholds, scaled to the
/// protocol's peak commanded speed.
pub fn detect_holds_for_log(
    log: &RunLog,
    peak_commanded_speed: f64,
    cfg: &AnalysisConfig,
) -> HoldWindows {
    let velocity = log.column("xdot").expect("xdot is a log column");
    detect_holds(
        &velocity,
        log.meta.log_rate_hz as f64,
        cfg.theta_on_frac * peak_commanded_speed,
        cfg.theta_off_frac * peak_commanded_speed,
        cfg.min_hold_s,
        cfg.settle_margin_s,
    )
}

/// RMS of the passivating effort over the hold union, after causal
/// second-order low-pass conditioning at `cutoff_hz`.
pub fn rms_effort(
    f_passive: &[f64],
    rate: f64,
    holds: &HoldWindows,
    cutoff_hz: f64,
) -> Result<f64> {
    if holds.is_empty() {
        return Err(SimError::EmptyInput("rms_effort needs hold windows"));
    }
    let filtered = LowPass2::filter_series(cutoff_hz, rate, f_passive)?;
    let idx = holds.indices(filtered.len(), rate);
    if idx.is_empty() {
        return Err(SimError::EmptyInput("hold windows cover no samples"));
    }
    let acc: f64 = idx.iter().map(|&i| filtered[i] * filtered[i]).sum();
    Ok((acc / idx.len() as f64).sqrt())
}

/// Mean squared residual of a force series over the hold union after
/// per-hold linear detrending. Time-domain equivalent of the integrated
/// detrended spectrum; used to compare oscillation severity between runs.
pub fn hold_oscillation_power(force: &[f64], rate: f64, holds: &HoldWindows) -> Result<f64> {
    if holds.is_empty() {
        return Err(SimError::EmptyInput("oscillation power needs hold windows"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for &(a, b) in &holds.windows {
        let i0 = (a * rate).ceil() as usize;
        let i1 = ((b * rate).floor() as usize).min(force.len());
        if i1 <= i0 + 1 {
            continue;
        }
        let seg = detrend(&force[i0..i1]);
        acc += seg.iter().map(|x| x * x).sum::<f64>();
        count += seg.len();
    }
    if count == 0 {
        return Err(SimError::EmptyInput("hold windows cover no samples"));
    }
    Ok(acc / count as f64)
}

/// Subtract the least-squares line from a segment.
fn detrend(seg: &[f64]) -> Vec<f64> {
    let n = seg.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = seg.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in seg.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    seg.iter()
        .enumerate()
        .map(|(i, &y)| y - mean_y - slope * (i as f64 - mean_x))
        .collect()
}

/// Amplitude spectrum on a fixed frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Frequency of the largest magnitude within [f_lo, f_hi].
    pub fn dominant_peak_in(&self, f_lo: f64, f_hi: f64) -> Option<(f64, f64)> {
        self.frequencies_hz
            .iter()
            .zip(&self.magnitudes)
            .filter(|(&f, _)| f >= f_lo && f <= f_hi)
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite magnitudes"))
            .map(|(&f, &m)| (f, m))
    }
}

/// Per-hold linear detrend, DFT amplitude, interpolation onto the common
/// grid, averaged across holds. Amplitudes are normalized so a unit sine
/// occupying a whole hold reports approximately 1.
pub fn detrend_spectrum(
    force: &[f64],
    rate: f64,
    holds: &HoldWindows,
    cfg: &AnalysisConfig,
) -> Result<Spectrum> {
    let grid: Vec<f64> = {
        let n = (cfg.spectrum_f_max_hz / cfg.spectrum_df_hz).round() as usize;
        (0..=n).map(|i| i as f64 * cfg.spectrum_df_hz).collect()
    };
    let mut averaged = vec![0.0; grid.len()];
    let mut used = 0usize;
    let mut planner = FftPlanner::new();
    for &(a, b) in &holds.windows {
        let i0 = (a * rate).ceil() as usize;
        let i1 = ((b * rate).floor() as usize).min(force.len());
        if i1 < i0 + 2 {
            continue;
        }
        let seg = detrend(&force[i0..i1]);
        let n = seg.len();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> =
            seg.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft.process(&mut buf);
        let df = rate / n as f64;
        let half = n / 2;
        let native: Vec<(f64, f64)> = (0..=half)
            .map(|k| (k as f64 * df, 2.0 * buf[k].norm() / n as f64))
            .collect();
        for (gi, &gf) in grid.iter().enumerate() {
            averaged[gi] += interp_linear(&native, gf);
        }
        used += 1;
    }
    if used == 0 {
        return Err(SimError::EmptyInput(
            "detrend_spectrum needs at least one hold of two or more samples",
        ));
    }
    for m in &mut averaged {
        *m /= used as f64;
    }
    Ok(Spectrum {
        frequencies_hz: grid,
        magnitudes: averaged,
    })
}

fn interp_linear(points: &[(f64, f64)], x: f64) -> f64 {
    match points.iter().position(|&(px, _)| px >= x) {
        Some(0) => points[0].1,
        Some(i) => {
            let (x0, y0) = points[i - 1];
            let (x1, y1) = points[i];
            if x1 == x0 {
                y0
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
        None => points.last().map_or(0.0, |&(_, y)| y),
    }
}

/// Average several spectra that share a grid.
pub fn average_spectra(spectra: &[Spectrum]) -> Result<Spectrum> {
    let first = spectra
        .first()
        .ok_or(SimError::EmptyInput("average_spectra got nothing"))?;
    let mut magnitudes = vec![0.0; first.magnitudes.len()];
    for s in spectra {
        if s.frequencies_hz != first.frequencies_hz {
            return Err(SimError::InvalidConfig(
                "spectra grids differ; cannot average".into(),
            ));
        }
        for (acc, &m) in magnitudes.iter_mut().zip(&s.magnitudes) {
            *acc += m;
        }
    }
    for m in &mut magnitudes {
        *m /= spectra.len() as f64;
    }
    Ok(Spectrum {
        frequencies_hz: first.frequencies_hz.clone(),
        magnitudes,
    })
}

/// Binned force-displacement curve with loading/unloading branches.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessCurve {
    /// Bin centers (m).
    pub displacement_m: Vec<f64>,
    pub loading_mean: Vec<f64>,
    pub loading_sd: Vec<f64>,
    pub unloading_mean: Vec<f64>,
    pub unloading_sd: Vec<f64>,
}

#[derive(Default, Clone)]
struct BinAcc {
    values: Vec<f64>,
}

impl BinAcc {
    fn stats(&self) -> (f64, f64) {
        if self.values.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// Bin the estimated force against follower displacement over one or more
/// open-loop logs, separating loading (|d| increasing) from unloading by the
/// sign of d·v.
pub fn stiffness_curve(logs: &[&RunLog], bin_m: f64) -> Result<StiffnessCurve> {
    if logs.is_empty() {
        return Err(SimError::EmptyInput("stiffness_curve needs logs"));
    }
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for log in logs {
        for r in &log.records {
            d_min = d_min.min(r.psm_position);
            d_max = d_max.max(r.psm_position);
        }
    }
    if !(d_max > d_min) {
        return Err(SimError::EmptyInput("logs hold no displacement range"));
    }
    let n_bins = (((d_max - d_min) / bin_m).ceil() as usize).max(1);
    let mut loading = vec![BinAcc::default(); n_bins];
    let mut unloading = vec![BinAcc::default(); n_bins];

    for log in logs {
        let rate = log.meta.log_rate_hz as f64;
        for pair in log.records.windows(2) {
            let d = pair[1].psm_position;
            let v = (pair[1].psm_position - pair[0].psm_position) * rate;
            if v == 0.0 {
                continue; // holds do not contribute to either branch
            }
            let bin = (((d - d_min) / bin_m) as usize).min(n_bins - 1);
            let branch = if d * v > 0.0 {
                &mut loading
            } else {
                &mut unloading
            };
            branch[bin].values.push(pair[1].f_feedback);
        }
    }

    let displacement_m = (0..n_bins)
        .map(|i| d_min + (i as f64 + 0.5) * bin_m)
        .collect();
    let (mut lm, mut ls, mut um, mut us) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n_bins {
        let (m, s) = loading[i].stats();
        lm.push(m);
        ls.push(s);
        let (m, s) = unloading[i].stats();
        um.push(m);
        us.push(s);
    }
    Ok(StiffnessCurve {
        displacement_m,
        loading_mean: lm,
        loading_sd: ls,
        unloading_mean: um,
        unloading_sd: us,
    })
}
