//! Free response of the operator model: damped oscillation about a hold
//! target, compared with the analytic frequency.
//!
//! ```bash
//! cargo run --example plant_response
//! ```

use telesim::plant::{step, tracking_force, HumanSsmParams, PlantState};
use telesim::trajectory::DesiredState;

fn main() {
    let params = HumanSsmParams::default();
    println!(
        "m = {} kg, b = {} N·s/m, k = {} N/m, k_v = {} N·s/m",
        params.mass, params.damping, params.stiffness, params.velocity_gain
    );
    println!(
        "omega_n = {:.3} rad/s, zeta = {:.3}, analytic damped frequency = {:.4} Hz",
        params.omega_n(),
        params.zeta(),
        params.damped_frequency_hz()
    );

    // release from a 10 mm offset against a hold at the origin
    let hold = DesiredState {
        x_des: 0.0,
        v_des: 0.0,
        moving: false,
    };
    let dt = 1.0 / 500.0;
    let mut state = PlantState::at_rest(0.01);
    let mut crossings = Vec::new();
    let mut prev = state;
    for k in 0..3000 {
        let f_c = tracking_force(state, hold, &params);
        state = step(state, f_c, 0.0, dt, &params);
        if prev.x > 0.0 && state.x <= 0.0 {
            let frac = prev.x / (prev.x - state.x);
            crossings.push((k as f64 + frac) * dt);
        }
        prev = state;
    }
    let period = crossings[1] - crossings[0];
    println!(
        "simulated frequency at 500 Hz stepping: {:.4} Hz ({:+.2}% vs analytic)",
        1.0 / period,
        100.0 * (1.0 / period - params.damped_frequency_hz()) / params.damped_frequency_hz()
    );

    // static balance against constant feedback
    let mut state = PlantState::at_rest(0.0);
    for _ in 0..5000 {
        let f_c = tracking_force(state, hold, &params);
        state = step(state, f_c, 1.0, dt, &params);
    }
    println!(
        "steady offset against 1 N of feedback: {:.4} mm (expected {:.4} mm)",
        state.x * 1000.0,
        -1000.0 / params.stiffness
    );
}
