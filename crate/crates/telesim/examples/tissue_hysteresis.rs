//! Static tissue curve, rate-dependent hysteresis, and the pretension
//! stiffness mapping.
//!
//! ```bash
//! cargo run --example tissue_hysteresis
//! ```

use telesim::environment::{tissue_force, TissueParams};
use telesim::plot::{write_line_chart, ChartSpec, Series};

fn sweep(tissue: &TissueParams, peak: f64, speed: f64) -> Vec<(f64, f64)> {
    let n = 400;
    let mut points = Vec::with_capacity(2 * n);
    for k in 0..=2 * n {
        let (d, v) = if k <= n {
            (peak * k as f64 / n as f64, speed)
        } else {
            (peak * (2 * n - k) as f64 / n as f64, -speed)
        };
        points.push((d * 1000.0, tissue_force(tissue, d, v)));
    }
    points
}

fn main() {
    let tissue = TissueParams::default();
    println!(
        "tissue: k1 = {} N/m, k3 = {:.1e} N/m^3, b_env = {} N·s/m, tension asymmetry {}",
        tissue.k1, tissue.k3, tissue.b_env, tissue.tension_asymmetry
    );
    for d_mm in [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0] {
        let d = d_mm / 1000.0;
        println!(
            "  static force at {d_mm:6.1} mm: {:7.3} N (local stiffness {:6.1} N/m)",
            tissue_force(&tissue, d, 0.0),
            tissue.local_stiffness(d)
        );
    }

    let pretensioned = tissue.with_pretension(1.0, 1.35);
    println!(
        "with 1 N pretension at factor 1.35: k1 {} -> {:.1} N/m",
        tissue.k1, pretensioned.k1
    );

    let slow = sweep(&tissue, 0.015, 0.003);
    let fast = sweep(&tissue, 0.015, 0.030);
    let out = std::path::Path::new("target/example-out/tissue_hysteresis.svg");
    write_line_chart(
        out,
        &ChartSpec {
            title: "Tension sweep at two speeds (hysteresis from damping)",
            x_label: "displacement (mm)",
            y_label: "force (N)",
        },
        &[
            Series {
                label: "slow sweep",
                points: slow,
            },
            Series {
                label: "10x faster sweep",
                points: fast,
            },
        ],
    )
    .unwrap();
    println!("wrote {}", out.display());
}
