//! Open-loop stiffness estimation: the follower palpates and retracts on its
//! own while each estimator watches, and the force-displacement curves show
//! each method's signature distortion.
//!
//! ```bash
//! cargo run --example open_loop_stiffness
//! ```

use telesim::analysis::stiffness_curve;
use telesim::config::ExperimentConfig;
use telesim::sim::{run, ControlMode, RunParams};
use telesim::trajectory::{build_open_loop, ProtocolKind};

fn main() {
    let cfg = ExperimentConfig::default();
    let protocol = build_open_loop(ProtocolKind::Retraction);
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);

    println!("retraction sweep, one material, branch means at mid-displacement:");
    println!(
        "{:>9} {:>14} {:>14} {:>12}",
        "estimator", "loading (N)", "unloading (N)", "gap"
    );
    for name in ["fs", "d", "v", "s", "vs"] {
        let spec = cfg.preset(name).unwrap().to_spec(name).unwrap();
        let log = run(&RunParams {
            config: &cfg,
            protocol: &protocol,
            tissue: &materials[0],
            estimator: Some(&spec),
            mode: ControlMode::OpenLoop,
            popc_enabled: false,
            estimator_seed: 42,
            material_id: 1,
            repetition: 1,
        })
        .unwrap();
        let curve = stiffness_curve(&[&log], cfg.analysis.stiffness_bin_m).unwrap();
        // mid-displacement bin (7.5 mm of the 15 mm peak)
        let mid = curve
            .displacement_m
            .iter()
            .position(|&d| d >= 0.0075)
            .unwrap();
        let loading = curve.loading_mean[mid];
        let unloading = curve.unloading_mean[mid];
        println!(
            "{name:>9} {loading:14.3} {unloading:14.3} {:12.3}",
            unloading - loading
        );
    }
    println!("(the dynamic-model surrogate's low-pass lag lifts its unloading branch)");
}
