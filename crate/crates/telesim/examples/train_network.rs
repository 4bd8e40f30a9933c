//! Train the force-estimation network on simulated no-feedback runs and
//! inspect the loss trace and held-out accuracy.
//!
//! ```bash
//! cargo run --example train_network
//! ```

use telesim::config::{derive_seed, ExperimentConfig};
use telesim::neural::{generate_dataset, train, Condition, Mlp, FEATURE_COUNT};
use telesim::sim::{run, ControlMode, RunParams};
use telesim::trajectory::{build_brief_manipulation, Axis};

fn main() {
    let cfg = ExperimentConfig::default();
    let protocol = build_brief_manipulation(Axis::Z);
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);

    let logs: Vec<_> = materials
        .iter()
        .map(|tissue| {
            run(&RunParams {
                config: &cfg,
                protocol: &protocol,
                tissue,
                estimator: None,
                mode: ControlMode::ClosedLoop {
                    render_feedback: false,
                },
                popc_enabled: false,
                estimator_seed: derive_seed(cfg.sim.seed, &format!("m{}", tissue.material_id)),
                material_id: tissue.material_id,
                repetition: 1,
            })
            .unwrap()
        })
        .collect();

    let dataset = generate_dataset(&logs, Condition::Nf, cfg.neural.rate_hz, 99).unwrap();
    println!(
        "dataset: {} training rows, {} validation rows (ratio {:.2})",
        dataset.train.len(),
        dataset.validation.len(),
        dataset.train.len() as f64 / dataset.validation.len() as f64
    );

    let model = Mlp::new(FEATURE_COUNT, &cfg.neural.hidden, 1);
    let train_cfg = cfg.neural.train_config(2);
    let (model, report) = train(model, &dataset, &train_cfg).unwrap();
    for (epoch, (tr, va)) in report.epochs.iter().enumerate() {
        if epoch % 10 == 0 || epoch + 1 == report.epochs.len() {
            println!("epoch {epoch:3}: train loss {tr:.5}, validation mse {va:.5}");
        }
    }
    println!(
        "validation rmse: {:.4} N",
        model.rmse(&dataset.validation).unwrap()
    );

    let out = std::path::Path::new("target/example-out");
    std::fs::create_dir_all(out).unwrap();
    let path = out.join("trained.model.toml");
    model.save(&path).unwrap();
    println!("wrote {}", path.display());
}
