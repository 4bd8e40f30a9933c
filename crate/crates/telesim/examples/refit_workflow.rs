//! The full refitting workflow: train the base network on brief no-feedback
//! data, collect new data under three feedback conditions, refit, and
//! compare transparency and hold stability in closed loop.
//!
//! ```bash
//! cargo run --release --example refit_workflow
//! ```

use telesim::config::ExperimentConfig;
use telesim::experiments::run_refit_study;
use telesim::trajectory::Axis;

fn main() {
    let cfg = ExperimentConfig::default();
    let out = std::path::Path::new("target/example-out/refit");
    let report = run_refit_study(&cfg, Axis::Z, out, 1).unwrap();

    println!(
        "base network validation rmse on its own split: {:.4} N",
        report.base_validation_rmse
    );
    println!("validation rmse on feedback-condition data:");
    for (model, rmse) in &report.rmse_on_ef_validation {
        println!("  {model:>4}: {rmse:.4} N");
    }

    println!("closed-loop comparison (passivity off, mean over materials):");
    println!("{:>6} {:>12} {:>18}", "model", "rmse (N)", "hold osc (N^2)");
    for model in ["base", "nf", "fs", "ef"] {
        let cells: Vec<_> = report
            .comparison
            .iter()
            .filter(|m| m.estimator == model && !m.popc && !m.diverged)
            .collect();
        let rmse = cells.iter().map(|m| m.rmse).sum::<f64>() / cells.len() as f64;
        let osc = cells.iter().map(|m| m.oscillation_power).sum::<f64>() / cells.len() as f64;
        println!("{model:>6} {rmse:12.4} {osc:18.3e}");
    }
    println!("checkpoints:");
    for (name, path) in &report.checkpoints {
        println!("  {name:>4}: {}", path.display());
    }
}
