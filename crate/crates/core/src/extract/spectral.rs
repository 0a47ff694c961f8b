use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureMatrix, WaveBuffer};
use crate::error::{Error, Result};

/// Offset added before taking the log of mel energies.
pub const LOG_EPSILON: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Window {
    #[default]
    Hann,
}

/// Magnitude spectrogram, `frames x bins` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub magnitudes: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[f64] {
        &self.magnitudes[f * self.bins..(f + 1) * self.bins]
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        FeatureMatrix {
            rows: self.frames,
            cols: self.bins,
            data: self.magnitudes.clone(),
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// `1 + (len - n_fft) / hop`, or `None` when the signal is shorter than one
/// window.
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> Option<usize> {
    if hop == 0 || len < n_fft {
        None
    } else {
        Some(1 + (len - n_fft) / hop)
    }
}

fn check_frame_params(n_fft: usize, hop: usize) -> Result<()> {
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(Error::Validation(format!("n_fft {n_fft} must be a power of two >= 2")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::Validation(format!("hop {hop} must be in [1, n_fft={n_fft}]")));
    }
    Ok(())
}

/// Framed, windowed one-sided magnitude spectrum. Frames start at sample 0
/// (no centering); bins = n_fft/2 + 1.
pub fn stft(wave: &WaveBuffer, n_fft: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    check_frame_params(n_fft, hop)?;
    let frames = frame_count(wave.samples.len(), n_fft, hop).ok_or_else(|| {
        Error::Validation(format!(
            "signal of {} samples is shorter than one window ({n_fft})",
            wave.samples.len()
        ))
    })?;
    let win = match window {
        Window::Hann => hann_window(n_fft),
    };
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut magnitudes = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &wave.samples[f * hop..f * hop + n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        magnitudes.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        frames,
        bins,
        n_fft,
        hop,
        sample_rate: wave.sample_rate,
        magnitudes,
    })
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centres evenly spaced on the mel scale between
/// 0 Hz and Nyquist; `n_mels x (n_fft/2 + 1)`, unnormalized.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> FeatureMatrix {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut data = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            data[m * bins + k] = w;
        }
    }
    FeatureMatrix {
        rows: n_mels,
        cols: bins,
        data,
    }
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> FeatureMatrix {
    let mut data = Vec::with_capacity(n_out * n_in);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            let angle = std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64;
            data.push(scale * angle.cos());
        }
    }
    FeatureMatrix {
        rows: n_out,
        cols: n_in,
        data,
    }
}

/// Power spectrum -> mel filterbank -> `ln(x + 1e-10)` -> DCT-II, keeping
/// the first `n_mfcc` coefficients. Returns `frames x n_mfcc`.
pub fn mfcc(wave: &WaveBuffer, n_fft: usize, hop: usize, n_mels: usize, n_mfcc: usize) -> Result<FeatureMatrix> {
    check_frame_params(n_fft, hop)?;
    let bins = n_fft / 2 + 1;
    if n_mfcc == 0 || n_mfcc > n_mels || n_mels > bins {
        return Err(Error::Validation(format!(
            "need 1 <= n_mfcc ({n_mfcc}) <= n_mels ({n_mels}) <= n_fft/2+1 ({bins})"
        )));
    }
    let spec = stft(wave, n_fft, hop, Window::Hann)?;
    let fb = mel_filterbank(wave.sample_rate, n_fft, n_mels);
    let dct = dct_matrix(n_mfcc, n_mels);
    let mut out = Vec::with_capacity(spec.frames * n_mfcc);
    let mut logmel = vec![0.0; n_mels];
    for f in 0..spec.frames {
        let mags = spec.frame(f);
        for (m, slot) in logmel.iter_mut().enumerate() {
            let energy: f64 = fb.row(m).iter().zip(mags).map(|(w, x)| w * x * x).sum();
            *slot = (energy + LOG_EPSILON).ln();
        }
        for k in 0..n_mfcc {
            out.push(dct.row(k).iter().zip(&logmel).map(|(c, x)| c * x).sum());
        }
    }
    FeatureMatrix::new(spec.frames, n_mfcc, out)
}
