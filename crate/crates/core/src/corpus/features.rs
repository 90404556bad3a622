//! Log-mel spectrogram front end.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Front-end parameters. The FFT size is the next power of two at or above
/// the window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    /// Analysis window length in seconds.
    pub win_s: f64,
    /// Hop between frame starts in seconds; sets the model frame rate.
    pub hop_s: f64,
    /// Additive floor inside the log.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, n_mels: 64, win_s: 0.025, hop_s: 0.050, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate < 2000 {
            return Err(Error::Config("features.sample_rate: must be at least 2000 Hz".into()));
        }
        if self.n_mels < 4 {
            return Err(Error::Config("features.n_mels: must be at least 4".into()));
        }
        if !(self.win_s > 0.0) || !(self.hop_s > 0.0) {
            return Err(Error::Config("features.win_s / hop_s: must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("features.log_floor: must be positive".into()));
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        1.0 / self.hop_s
    }

    pub fn win_samples(&self) -> usize {
        ((self.win_s * self.sample_rate as f64).round() as usize).max(1)
    }

    pub fn hop_samples(&self) -> usize {
        ((self.hop_s * self.sample_rate as f64).round() as usize).max(1)
    }

    pub fn n_fft(&self) -> usize {
        self.win_samples().next_power_of_two()
    }

    /// Number of frames for a clip of `n_samples`: one frame per started hop.
    pub fn t_len(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop_samples())
    }
}

/// T x n_mels log-mel matrix plus the frame rate it was computed at.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<F: Real> {
    pub values: Array2<F>,
    pub frame_rate: f64,
}

/// Triangular mel filterbank, `n_mels` rows by `n_fft / 2 + 1` bins.
///
/// Filters are spaced uniformly on the 2595 log10(1 + f / 700) mel scale
/// between 0 Hz and Nyquist, each peaking at 1.
pub fn mel_filterbank(sample_rate: f64, n_fft: usize, n_mels: usize) -> Array2<f64> {
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);

    let n_bins = n_fft / 2 + 1;
    let mel_max = hz_to_mel(sample_rate / 2.0);
    let centers_hz: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64)).collect();

    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (centers_hz[m], centers_hz[m + 1], centers_hz[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate / n_fft as f64;
            let w = if f <= mid {
                (f - lo) / (mid - lo).max(1e-12)
            } else {
                (hi - f) / (hi - mid).max(1e-12)
            };
            fb[[m, k]] = w.clamp(0.0, 1.0);
        }
    }
    fb
}

/// Compute the log-mel spectrogram of a mono clip.
///
/// Frame `t` starts at sample `t * hop`; the tail is zero-padded, so a clip of
/// `n` samples yields exactly `ceil(n / hop)` frames.
pub fn extract_logmel<F: Real>(samples: &[F], cfg: &FeatureConfig) -> Result<FeatureMatrix<F>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Audio("cannot extract features from an empty clip".into()));
    }

    let win = cfg.win_samples();
    let hop = cfg.hop_samples();
    let n_fft = cfg.n_fft();
    let n_bins = n_fft / 2 + 1;
    let t_len = cfg.t_len(samples.len());

    let window: Vec<F> = (0..win)
        .map(|i| {
            real::<F>(0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / win as f64).cos())
        })
        .collect();
    let fb = mel_filterbank(cfg.sample_rate as f64, n_fft, cfg.n_mels).mapv(real::<F>);

    let mut planner = FftPlanner::<F>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(F::zero(), F::zero()); n_fft];
    let mut scratch = vec![Complex::new(F::zero(), F::zero()); fft.get_inplace_scratch_len()];
    let mut power = vec![F::zero(); n_bins];
    let floor = real::<F>(cfg.log_floor);

    let mut out = Array2::zeros((t_len, cfg.n_mels));
    for t in 0..t_len {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = if i < win { samples.get(start + i).copied().unwrap_or(F::zero()) } else { F::zero() };
            *b = Complex::new(s * window.get(i).copied().unwrap_or(F::zero()), F::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let mut acc = F::zero();
            for k in 0..n_bins {
                acc = acc + fb[[m, k]] * power[k];
            }
            out[[t, m]] = (acc + floor).ln();
        }
    }

    Ok(FeatureMatrix { values: out, frame_rate: cfg.frame_rate() })
}
