//! Scene synthesis: class templates, shaped background noise, and the
//! real-domain covariate shift.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::EventAnnotation;

/// Background noise RMS every event SNR is measured against.
pub const BACKGROUND_RMS: f64 = 0.05;

/// Covariate shift applied to real-domain clips after mixing.
///
/// The shift changes recording conditions (spectral tilt of the background,
/// level, bandwidth) while leaving event identity and timing untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainShift {
    /// Background spectrum slope; negative tilts energy toward low frequencies.
    pub background_tilt_db_per_octave: f64,
    /// Broadband gain offset applied to the mixed clip.
    pub gain_db: f64,
    /// One-pole low-pass cutoff in Hz; 0 disables the filter.
    pub lowpass_hz: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self { background_tilt_db_per_octave: -3.0, gain_db: -6.0, lowpass_hz: 3500.0 }
    }
}

impl DomainShift {
    pub fn validate(&self) -> Result<()> {
        if self.lowpass_hz < 0.0 {
            return Err(Error::Config(
                "corpus.domain_shift.lowpass_hz: must be zero or positive".into(),
            ));
        }
        Ok(())
    }
}

/// One event to render into a scene.
#[derive(Debug, Clone)]
pub struct SceneEvent {
    pub class_id: usize,
    pub onset_s: f64,
    pub offset_s: f64,
    /// Event RMS relative to the background RMS, in dB.
    pub snr_db: f64,
}

/// Full description of one clip before rendering.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub background_tilt_db_per_octave: f64,
    pub background_rms: f64,
    pub events: Vec<SceneEvent>,
    pub shift: Option<DomainShift>,
}

/// Render a scene to a mono waveform in [-1, 1].
///
/// The same (spec, rng state) pair yields bit-identical output. Returns the
/// waveform together with the final event annotations.
pub fn synthesize_scene(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<EventAnnotation>)> {
    if !(spec.duration_s > 0.0) {
        return Err(Error::Audio("scene duration must be positive".into()));
    }
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    if n == 0 {
        return Err(Error::Audio("scene renders to zero samples".into()));
    }
    for ev in &spec.events {
        if ev.onset_s < 0.0 || ev.offset_s <= ev.onset_s || ev.offset_s > spec.duration_s + 1e-9 {
            return Err(Error::Audio(format!(
                "event ({}, {:.3}, {:.3}) does not fit a {:.3}s clip",
                ev.class_id, ev.onset_s, ev.offset_s, spec.duration_s
            )));
        }
    }

    let mut mix = background_noise(n, sr, spec.background_tilt_db_per_octave, spec.background_rms, rng);

    let mut annotations = Vec::with_capacity(spec.events.len());
    for ev in &spec.events {
        let start = (ev.onset_s * sr).round() as usize;
        let stop = ((ev.offset_s * sr).round() as usize).min(n);
        if stop <= start {
            continue;
        }
        let mut rendered = render_event(ev.class_id, stop - start, sr, rng);
        apply_fade(&mut rendered, sr);
        let rms = root_mean_square(&rendered);
        if rms > 0.0 {
            let target = spec.background_rms * 10f64.powf(ev.snr_db / 20.0);
            let scale = target / rms;
            for (dst, s) in mix[start..stop].iter_mut().zip(&rendered) {
                *dst += s * scale;
            }
        }
        annotations.push(EventAnnotation::new(ev.class_id, ev.onset_s, ev.offset_s));
    }

    if let Some(shift) = &spec.shift {
        if shift.lowpass_hz > 0.0 {
            one_pole_lowpass(&mut mix, shift.lowpass_hz, sr);
        }
        let gain = 10f64.powf(shift.gain_db / 20.0);
        for s in &mut mix {
            *s *= gain;
        }
    }

    let peak = mix.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        for s in &mut mix {
            *s *= scale;
        }
    }

    Ok((mix, annotations))
}

/// Template base frequency for a class. The first five families span the
/// usable band under the real-domain low-pass; later ids reuse a family at a
/// detuned frequency.
pub fn template_frequency(class_id: usize) -> f64 {
    const BASE: [f64; 5] = [330.0, 620.0, 1100.0, 1900.0, 2800.0];
    let family = class_id % BASE.len();
    let round = (class_id / BASE.len()) as f64;
    BASE[family] * (1.0 + 0.17 * round)
}

/// Render one event template at unit-order amplitude (scaled later by SNR).
///
/// Families by `class_id % 5`: harmonic tone, rising chirp, tremolo tone,
/// narrowband noise, click train. Phases and noise are drawn from `rng`.
fn render_event(class_id: usize, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = template_frequency(class_id).min(0.42 * sr);
    let dur = n as f64 / sr;
    let mut out = vec![0.0; n];
    match class_id % 5 {
        0 => {
            // Harmonic tone with three partials.
            let phases: [f64; 3] = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let mut acc = 0.0;
                for (h, ph) in phases.iter().enumerate() {
                    let freq = f0 * (h as f64 + 1.0);
                    if freq < 0.5 * sr {
                        acc += 0.6f64.powi(h as i32)
                            * (std::f64::consts::TAU * (freq * t + ph)).sin();
                    }
                }
                *o = acc;
            }
        }
        1 => {
            // Linear chirp from f0 to 1.5 f0 over the event.
            let ph = rng.gen::<f64>();
            let rate = 0.5 * f0 / dur;
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let phase = std::f64::consts::TAU * (f0 * t + 0.5 * rate * t * t + ph);
                *o = phase.sin();
            }
        }
        2 => {
            // Tone with 5 Hz tremolo.
            let ph0 = rng.gen::<f64>();
            let ph1 = rng.gen::<f64>();
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let carrier = (std::f64::consts::TAU * (f0 * t + ph0)).sin();
                let trem = 0.55 + 0.45 * (std::f64::consts::TAU * (5.0 * t + ph1)).sin();
                *o = carrier * trem;
            }
        }
        3 => {
            // Narrowband noise: white noise through a two-pole resonator.
            let theta = std::f64::consts::TAU * f0 / sr;
            let r: f64 = 0.985;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            for o in out.iter_mut() {
                let x = rng.gen::<f64>() * 2.0 - 1.0;
                let y = x + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                *o = y;
            }
        }
        _ => {
            // Click train: damped sinusoid bursts at 24 Hz.
            let period = sr / 24.0;
            let offset = rng.gen::<f64>() * period;
            let decay = 0.004 * sr;
            let mut click_start = offset;
            while (click_start as usize) < n {
                let start = click_start as usize;
                let span = (start + (6.0 * decay) as usize).min(n);
                for i in start..span {
                    let k = (i - start) as f64;
                    out[i] += (-k / decay).exp()
                        * (std::f64::consts::TAU * f0 * k / sr).sin();
                }
                click_start += period;
            }
        }
    }
    out
}

/// 10 ms raised-cosine fade at both ends, clamped to half the event.
fn apply_fade(samples: &mut [f64], sr: f64) {
    let ramp = ((0.010 * sr) as usize).min(samples.len() / 2);
    if ramp == 0 {
        return;
    }
    let n = samples.len();
    for i in 0..ramp {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
        samples[i] *= w;
        samples[n - 1 - i] *= w;
    }
}

fn root_mean_square(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Spectrally shaped Gaussian-ish noise at a target RMS.
///
/// Built in the frequency domain: each positive-frequency bin gets magnitude
/// `(f / 1 kHz) ^ (tilt_db / (20 log10 2))` and a random phase, then an
/// inverse FFT produces the time signal. `tilt_db = 0` yields white noise.
fn background_noise(
    n: usize,
    sr: f64,
    tilt_db_per_octave: f64,
    target_rms: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let exponent = tilt_db_per_octave / (20.0 * std::f64::consts::LOG10_2);
    let half = n / 2;
    for k in 1..=half {
        let freq = k as f64 * sr / n as f64;
        let mag = (freq / 1000.0).powf(exponent);
        let phase = std::f64::consts::TAU * rng.gen::<f64>();
        let bin = Complex::from_polar(mag, phase);
        spectrum[k] = bin;
        if k != n - k {
            spectrum[n - k] = bin.conj();
        } else {
            // Nyquist bin of an even-length transform must stay real.
            spectrum[k] = Complex::new(mag, 0.0);
        }
    }

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);

    let mut noise: Vec<f64> = spectrum.into_iter().map(|c| c.re).collect();
    let rms = root_mean_square(&noise);
    if rms > 0.0 {
        let scale = target_rms / rms;
        for s in &mut noise {
            *s *= scale;
        }
    }
    noise
}

/// In-place low-pass: two cascaded one-pole stages
/// `y[i] = y[i-1] + a (x[i] - y[i-1])`. A single pole rolls off too slowly
/// (-4 dB one octave above cutoff) to read as a bandwidth change; the cascade
/// doubles the slope.
fn one_pole_lowpass(samples: &mut [f64], cutoff_hz: f64, sr: f64) {
    let a = 1.0 - (-std::f64::consts::TAU * cutoff_hz / sr).exp();
    for _ in 0..2 {
        let mut y = 0.0;
        for s in samples.iter_mut() {
            y += a * (*s - y);
            *s = y;
        }
    }
}
