//! Every estimator preset on the same closed-loop manipulation: feedback
//! RMSE and hold-period behavior side by side.
//!
//! ```bash
//! cargo run --example estimator_comparison
//! ```

use telesim::analysis::{hold_oscillation_power, rmse};
use telesim::config::ExperimentConfig;
use telesim::experiments::reference_holds;
use telesim::sim::{run, ControlMode, RunParams};
use telesim::trajectory::{build_closed_loop, Axis};

fn main() {
    let cfg = ExperimentConfig::default();
    let axis = Axis::Z;
    let protocol = build_closed_loop(axis);
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let holds = &reference_holds(&cfg, &[axis], &materials).unwrap()
        [&(axis.label().to_string(), 1)];
    println!(
        "hold windows from the ground-truth reference run: {:?}",
        holds
            .windows
            .iter()
            .map(|(a, b)| format!("{a:.2}..{b:.2}"))
            .collect::<Vec<_>>()
    );

    println!(
        "{:>9} {:>6} {:>12} {:>16}",
        "estimator", "rate", "rmse (N)", "hold osc (N^2)"
    );
    for name in cfg.estimators.keys() {
        let spec = cfg.preset(name).unwrap().to_spec(name).unwrap();
        let log = run(&RunParams {
            config: &cfg,
            protocol: &protocol,
            tissue: &materials[0],
            estimator: Some(&spec),
            mode: ControlMode::ClosedLoop {
                render_feedback: true,
            },
            popc_enabled: false,
            estimator_seed: 42,
            material_id: 1,
            repetition: 1,
        })
        .unwrap();
        let fb = log.column("f_feedback").unwrap();
        let gt = log.column("f_ground_truth").unwrap();
        let err = rmse(&fb, &gt).unwrap();
        let osc = hold_oscillation_power(&fb, log.meta.log_rate_hz as f64, holds).unwrap();
        println!("{name:>9} {:>6} {err:12.4} {osc:16.3e}", spec.rate_hz);
    }
}
