//! Step response of the causal second-order low-pass against its
//! continuous-time form, and the -3 dB point.
//!
//! ```bash
//! cargo run --example butterworth_filter
//! ```

use telesim::filter::{butterworth2_step_response, LowPass2};

fn main() {
    let cutoff = 1.0;
    let rate = 400.0;
    let mut filter = LowPass2::new(cutoff, rate).unwrap();

    println!("unit step through a {cutoff} Hz second-order low-pass at {rate} Hz:");
    println!("{:>8} {:>12} {:>12}", "t (s)", "discrete", "analytic");
    let mut t90 = None;
    for k in 0..(3.0 * rate) as usize {
        let y = filter.step(1.0);
        let t = (k as f64 + 0.5) / rate;
        if t90.is_none() && y >= 0.9 {
            t90 = Some(t);
        }
        if k % 120 == 0 {
            println!(
                "{t:8.3} {y:12.6} {:12.6}",
                butterworth2_step_response(cutoff, t)
            );
        }
    }
    println!("time to 90% of the final value: {:.3} s", t90.unwrap());

    // amplitude at the cutoff frequency
    let mut filter = LowPass2::new(cutoff, rate).unwrap();
    let w = 2.0 * std::f64::consts::PI * cutoff;
    let mut peak = 0.0f64;
    for k in 0..(20.0 * rate) as usize {
        let t = k as f64 / rate;
        let y = filter.step((w * t).sin());
        if t > 10.0 {
            peak = peak.max(y.abs());
        }
    }
    println!(
        "amplitude ratio at the cutoff: {peak:.4} (1/sqrt(2) = {:.4})",
        1.0 / std::f64::consts::SQRT_2
    );
}
