//! Replay the scripted 35 s mixed-manipulation demonstration with a trained
//! network rendering feedback at 60 Hz.
//!
//! Trains a quick model first if no checkpoint exists yet (run the
//! `refit_workflow` example for the full pipeline).
//!
//! ```bash
//! cargo run --release --example demo_replay
//! ```

use telesim::config::{derive_seed, ExperimentConfig};
use telesim::experiments::run_demo_replay;
use telesim::neural::{generate_dataset, train, Condition, Mlp, FEATURE_COUNT};
use telesim::sim::{run, ControlMode, RunParams};
use telesim::trajectory::{build_closed_loop, Axis};

fn main() {
    let cfg = ExperimentConfig::default();
    let out = std::path::Path::new("target/example-out");
    let refit_ckpt = out.join("refit/checkpoints/ef.model.toml");
    let checkpoint = if refit_ckpt.exists() {
        println!("using refit checkpoint {}", refit_ckpt.display());
        refit_ckpt
    } else {
        println!("no refit checkpoint found; training a quick model on ground-truth-feedback runs");
        let materials = cfg.tissue.sample_materials(cfg.sim.seed);
        let protocol = build_closed_loop(Axis::Z);
        let fs = cfg.preset("fs").unwrap().to_spec("fs").unwrap();
        let logs: Vec<_> = materials
            .iter()
            .map(|tissue| {
                run(&RunParams {
                    config: &cfg,
                    protocol: &protocol,
                    tissue,
                    estimator: Some(&fs),
                    mode: ControlMode::ClosedLoop {
                        render_feedback: true,
                    },
                    popc_enabled: false,
                    estimator_seed: derive_seed(cfg.sim.seed, "demo-train"),
                    material_id: tissue.material_id,
                    repetition: 1,
                })
                .unwrap()
            })
            .collect();
        let dataset = generate_dataset(&logs, Condition::Fs, cfg.neural.rate_hz, 5).unwrap();
        let (model, _) = train(
            Mlp::new(FEATURE_COUNT, &cfg.neural.hidden, 1),
            &dataset,
            &cfg.neural.train_config(2),
        )
        .unwrap();
        let path = out.join("demo_quick.model.toml");
        std::fs::create_dir_all(out).unwrap();
        model.save(&path).unwrap();
        path
    };

    let log = run_demo_replay(&cfg, &checkpoint, &out.join("demo_replay")).unwrap();
    let fb = log.column("f_feedback").unwrap();
    let gt = log.column("f_ground_truth").unwrap();
    println!(
        "replayed {:.1} s at estimator rate {} Hz; feedback rmse {:.4} N",
        log.records.last().map_or(0.0, |r| r.t),
        log.meta.estimator_rate_hz,
        telesim::analysis::rmse(&fb, &gt).unwrap()
    );
    println!("trace written under {}", out.join("demo_replay").display());
}
