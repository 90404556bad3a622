//! O(n^2) discrete Fourier transform, the reference for the FFT front end.

use std::f64::consts::PI;

/// Power spectrum (squared magnitude) of `frame`, bins `0..=n/2`.
///
/// Direct evaluation of the DFT sum; quadratic and only suitable for short
/// test frames.
pub fn reference_power_spectrum(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let mut power = Vec::with_capacity(n / 2 + 1);
    for k in 0..=(n / 2) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &x) in frame.iter().enumerate() {
            let phase = -2.0 * PI * (k as f64) * (i as f64) / n as f64;
            re += x * phase.cos();
            im += x * phase.sin();
        }
        power.push(re * re + im * im);
    }
    power
}
