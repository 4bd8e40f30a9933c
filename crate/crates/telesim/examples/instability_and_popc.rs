//! Feedback-induced instability and its passivation: the destabilizing
//! preset sustains hold oscillations with the controller off; turning it on
//! collapses them.
//!
//! ```bash
//! cargo run --example instability_and_popc
//! ```

use telesim::analysis::{detrend_spectrum, hold_oscillation_power};
use telesim::config::ExperimentConfig;
use telesim::experiments::reference_holds;
use telesim::plot::{write_line_chart, ChartSpec, Series};
use telesim::sim::{run, ControlMode, RunParams};
use telesim::trajectory::{build_closed_loop, Axis};

fn main() {
    let cfg = ExperimentConfig::default();
    let axis = Axis::X;
    let protocol = build_closed_loop(axis);
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let holds = &reference_holds(&cfg, &[axis], &materials).unwrap()
        [&(axis.label().to_string(), 1)];
    let spec = cfg.preset("unstable").unwrap().to_spec("unstable").unwrap();

    let mut series = Vec::new();
    let mut traces = Vec::new();
    for popc in [false, true] {
        let log = run(&RunParams {
            config: &cfg,
            protocol: &protocol,
            tissue: &materials[0],
            estimator: Some(&spec),
            mode: ControlMode::ClosedLoop {
                render_feedback: true,
            },
            popc_enabled: popc,
            estimator_seed: 42,
            material_id: 1,
            repetition: 1,
        })
        .unwrap();
        let rate = log.meta.log_rate_hz as f64;
        let fb = log.column("f_feedback").unwrap();
        let v = log.column("xdot").unwrap();
        let osc = hold_oscillation_power(&fb, rate, holds).unwrap();
        let idx: Vec<usize> = (0..v.len())
            .filter(|&i| holds.contains(i as f64 / rate))
            .collect();
        let hold_rms_v = (idx.iter().map(|&i| v[i] * v[i]).sum::<f64>() / idx.len() as f64).sqrt();
        let spectrum = detrend_spectrum(&fb, rate, holds, &cfg.analysis).unwrap();
        let (peak_f, peak_m) = spectrum.dominant_peak_in(1.0, 8.0).unwrap();
        println!(
            "passivity {}: hold oscillation power {osc:9.3e} N^2, hold RMS velocity {hold_rms_v:9.3e} m/s, spectrum peak {peak_m:.3} N at {peak_f:.2} Hz",
            if popc { "on " } else { "off" }
        );
        traces.push((popc, log));
        series.push((popc, spectrum));
    }

    let out = std::path::Path::new("target/example-out");
    write_line_chart(
        &out.join("instability_spectra.svg"),
        &ChartSpec {
            title: "Detrended hold spectra, destabilizing preset",
            x_label: "frequency (Hz)",
            y_label: "magnitude (N)",
        },
        &series
            .iter()
            .map(|(popc, s)| Series {
                label: if *popc { "passivity on" } else { "passivity off" },
                points: s
                    .frequencies_hz
                    .iter()
                    .zip(&s.magnitudes)
                    .map(|(&f, &m)| (f, m))
                    .collect(),
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();

    write_line_chart(
        &out.join("instability_traces.svg"),
        &ChartSpec {
            title: "Displayed force, destabilizing preset",
            x_label: "time (s)",
            y_label: "force (N)",
        },
        &traces
            .iter()
            .map(|(popc, log)| Series {
                label: if *popc { "passivity on" } else { "passivity off" },
                points: log.records.iter().map(|r| (r.t, r.f_feedback)).collect(),
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();
    println!("wrote {}/instability_{{spectra,traces}}.svg", out.display());
}
