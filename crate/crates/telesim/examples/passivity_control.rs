//! Windowed passivity observer and controller on a synthetic port signal:
//! passive while loading, active while energy returns to the operator.
//!
//! ```bash
//! cargo run --example passivity_control
//! ```

use telesim::passivity::{control, PassivityWindow, PoPcConfig};

fn main() {
    let cfg = PoPcConfig::default();
    println!(
        "window {} samples, damping clamp {} N·s/m, velocity guard {} m/s",
        cfg.window, cfg.d_max, cfg.v_epsilon
    );

    // a 1 Hz displacement cycle against a constant 2 N display: the port
    // absorbs energy on the outward stroke and returns it on the way back
    let dt = 1e-3;
    let mut window = PassivityWindow::new(cfg.window);
    let mut injected = 0.0;
    let mut returned = 0.0;
    println!(
        "{:>6} {:>9} {:>12} {:>12} {:>12}",
        "t (s)", "xdot", "E_win (J)", "F_passive", "F_p*xdot"
    );
    for k in 0..1000 {
        let t = k as f64 * dt;
        let xdot = 0.05 * (2.0 * std::f64::consts::PI * t).cos();
        let f_feedback = 2.0;
        let e_win = window.observe(f_feedback, xdot, dt);
        let f_passive = control(e_win, xdot, dt, &cfg);
        injected += f_passive * xdot * dt;
        if e_win < 0.0 {
            returned += -e_win;
        }
        if k % 125 == 0 {
            println!(
                "{t:6.3} {xdot:9.4} {e_win:12.3e} {f_passive:12.4} {:12.3e}",
                f_passive * xdot * dt
            );
        }
    }
    println!("total dissipation injected by the controller: {injected:.4} J");
    println!("(controller force always opposes motion: every F_p*xdot >= 0)");
    let _ = returned;

    // the two clamp regimes from a single observation
    for (e_win, xdot) in [(-0.001, 0.1), (-0.001, 0.01)] {
        let f = control(e_win, xdot, dt, &cfg);
        let alpha = f / xdot;
        println!(
            "E_win = {e_win} J at xdot = {xdot} m/s -> alpha = {alpha:6.1} N·s/m, F_passive = {f:.3} N{}",
            if alpha >= cfg.d_max { "  (clamped)" } else { "" }
        );
    }
}
