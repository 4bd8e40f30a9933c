//! Build the movement protocols, sample them, and export one as CSV.
//!
//! ```bash
//! cargo run --example min_jerk
//! ```

use telesim::trajectory::{build_closed_loop, build_open_loop, Axis, ProtocolKind};

fn main() {
    let palpation = build_open_loop(ProtocolKind::Palpation);
    let retraction = build_open_loop(ProtocolKind::Retraction);
    let closed = build_closed_loop(Axis::Z);

    println!("palpation:  {:5.1} s, peak speed {:.3} m/s", palpation.duration(), palpation.peak_speed());
    println!("retraction: {:5.1} s, peak speed {:.3} m/s", retraction.duration(), retraction.peak_speed());
    println!("closed z:   {:5.1} s, peak speed {:.3} m/s", closed.duration(), closed.peak_speed());

    // minimum-jerk shape at a glance: midpoint crosses half the stroke with
    // peak velocity 1.875 * stroke / duration
    let seg = &closed.segments[0];
    let (pos, vel) = seg.eval(seg.t_start + seg.duration / 2.0);
    println!(
        "first stroke midpoint: position {:.4} m (half of {} m), velocity {:.4} m/s",
        pos, seg.xf, vel
    );

    for (t, label) in [(2.0, "first hold"), (4.0, "second stroke"), (100.0, "after the end")] {
        let s = closed.sample(t);
        println!(
            "t = {t:5.1} s ({label:13}): x_des = {:7.4} m, v_des = {:7.4} m/s, moving = {}",
            s.x_des, s.v_des, s.moving
        );
    }

    let out = std::path::Path::new("target/example-out");
    std::fs::create_dir_all(out).unwrap();
    let path = out.join("closed_loop_z_protocol.csv");
    let file = std::fs::File::create(&path).unwrap();
    closed.export_csv(std::io::BufWriter::new(file), 500.0).unwrap();
    println!("wrote {}", path.display());
}
