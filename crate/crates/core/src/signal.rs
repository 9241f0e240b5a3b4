//! Excitation-signal generation and the received-signal analysis pipeline:
//! 0.5 s windows, FFT amplitude spectrum, band sampling into the
//! 140-dimension feature vector, and Savitzky-Golay smoothing for plots.
//!
//! The excitation loops every `loop_period`, so a window of exactly one
//! loop makes every 50 Hz band target an exact FFT bin; features are read
//! with a rectangular window (no taper) for that reason.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::Waveform;

/// Band layout of the spectral feature vector: 3000..9950 Hz in 50 Hz
/// steps, 140 values. (3 kHz to 10 kHz half-open: the closed interval
/// would hold 141 values, not the stated 140.)
pub const FEATURE_DIM: usize = 140;
pub const FEATURE_BAND_START_HZ: f64 = 3000.0;
pub const FEATURE_BAND_STEP_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid excitation spec: {0}")]
    InvalidSpec(String),
    #[error("recording too short: {got:.3} s, need at least {need:.3} s")]
    RecordingTooShort { got: f64, need: f64 },
    #[error(
        "window of {got} samples at {rate} Hz does not place the feature band on exact FFT bins \
         (need one loop period, e.g. 22050 samples at 44100 Hz)"
    )]
    WindowNotLoopAligned { got: usize, rate: f64 },
    #[error("invalid smoothing parameters: {0}")]
    BadSmoothing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationKind {
    Impulse,
    LinearSweep,
    ExponentialSweep,
}

/// Excitation description: impulse, linear sweep, or exponential sweep,
/// looped every `loop_period` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    /// Sweep start frequency, Hz.
    pub f0: f64,
    /// Sweep end frequency, Hz.
    pub f1: f64,
    /// Active duration within each loop, s.
    pub duration: f64,
    /// Loop period, s.
    pub loop_period: f64,
    /// Sample rate, Hz.
    pub sample_rate: f64,
}

impl ExcitationSpec {
    pub fn impulse() -> Self {
        Self {
            kind: ExcitationKind::Impulse,
            f0: 20.0,
            f1: 10_000.0,
            duration: 0.01,
            loop_period: 0.5,
            sample_rate: crate::waveform::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn linear_sweep() -> Self {
        Self {
            kind: ExcitationKind::LinearSweep,
            duration: 0.5,
            ..Self::impulse()
        }
    }

    pub fn exponential_sweep() -> Self {
        Self {
            kind: ExcitationKind::ExponentialSweep,
            duration: 0.5,
            ..Self::impulse()
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let err = |msg: String| Err(SignalError::InvalidSpec(msg));
        if !(self.sample_rate > 0.0) {
            return err("sample rate must be positive".into());
        }
        if !(0.0 < self.f0 && self.f0 < self.f1 && self.f1 < self.sample_rate / 2.0) {
            return err(format!(
                "need 0 < f0 < f1 < rate/2 (got f0={}, f1={}, rate={})",
                self.f0, self.f1, self.sample_rate
            ));
        }
        if !(0.0 < self.duration && self.duration <= self.loop_period) {
            return err(format!(
                "need 0 < duration <= loop_period (got {} and {})",
                self.duration, self.loop_period
            ));
        }
        Ok(())
    }
}

/// One loop cell of the excitation, repeated to fill `total` seconds.
/// Peak amplitude is 1 for the impulse and within 1e-12 of 1 for sweeps.
pub fn generate_excitation(spec: &ExcitationSpec, total: f64) -> Result<Waveform, SignalError> {
    spec.validate()?;
    if total < spec.loop_period {
        return Err(SignalError::InvalidSpec(format!(
            "total duration {total} s is shorter than one loop period {}",
            spec.loop_period
        )));
    }
    let sr = spec.sample_rate;
    let cell_len = (spec.loop_period * sr).round() as usize;
    let t_sweep = spec.duration;
    let mut cell = Vec::with_capacity(cell_len);
    for i in 0..cell_len {
        let t = i as f64 / sr;
        let v = if t >= spec.duration {
            0.0
        } else {
            match spec.kind {
                ExcitationKind::Impulse => 1.0,
                ExcitationKind::LinearSweep => {
                    let phase = spec.f0 * t + (spec.f1 - spec.f0) * t * t / (2.0 * t_sweep);
                    (std::f64::consts::TAU * phase).sin()
                }
                ExcitationKind::ExponentialSweep => {
                    let ratio = spec.f1 / spec.f0;
                    let phase =
                        spec.f0 * t_sweep / ratio.ln() * (ratio.powf(t / t_sweep) - 1.0);
                    (std::f64::consts::TAU * phase).sin()
                }
            }
        };
        cell.push(v);
    }
    let n_total = (total * sr).round() as usize;
    let samples = (0..n_total).map(|i| cell[i % cell_len]).collect();
    Ok(Waveform::new(samples, sr))
}

/// Non-overlapping `window`-second windows from the first `take_first`
/// seconds of the recording (defaults: 0.5 s windows, first 1 s → 2
/// windows).
pub fn segment_windows(
    w: &Waveform,
    window: f64,
    take_first: f64,
) -> Result<Vec<Waveform>, SignalError> {
    let need = (take_first * w.sample_rate).round() as usize;
    if w.len() < need {
        return Err(SignalError::RecordingTooShort {
            got: w.duration(),
            need: take_first,
        });
    }
    let win_len = (window * w.sample_rate).round() as usize;
    if win_len == 0 {
        return Err(SignalError::InvalidSpec("window must be positive".into()));
    }
    let count = need / win_len;
    Ok((0..count)
        .map(|k| Waveform::new(w.samples[k * win_len..(k + 1) * win_len].to_vec(), w.sample_rate))
        .collect())
}

/// 140 spectral amplitudes over 3000..9950 Hz at 50 Hz steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Which 0.5 s window of the recording produced this vector.
    pub source_window: usize,
}

impl FeatureVector {
    /// Band frequencies, Hz: 3000 + 50·i.
    pub fn band_frequencies() -> impl Iterator<Item = f64> {
        (0..FEATURE_DIM).map(|i| FEATURE_BAND_START_HZ + FEATURE_BAND_STEP_HZ * i as f64)
    }
}

/// Unnormalized FFT amplitude spectrum |X[k]| for k = 0..N/2 (inclusive).
/// With this convention Σ_k |X[k]|² over all N bins equals N·Σ_n x[n]².
pub fn amplitude_spectrum(window: &Waveform) -> Vec<f64> {
    let n = window.len();
    let mut buf: Vec<Complex<f64>> = window
        .samples
        .iter()
        .map(|&s| Complex::new(s, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Sample the amplitude spectrum of one loop-aligned window at the feature
/// band frequencies. The window length must place every band target on an
/// exact FFT bin (rectangular window, no taper).
pub fn extract_features(
    window: &Waveform,
    source_window: usize,
) -> Result<FeatureVector, SignalError> {
    let n = window.len();
    let sr = window.sample_rate;
    if n == 0 {
        return Err(SignalError::WindowNotLoopAligned { got: 0, rate: sr });
    }
    // every band frequency must be an integral bin index below Nyquist
    let mut bins = Vec::with_capacity(FEATURE_DIM);
    for i in 0..FEATURE_DIM {
        let f = FEATURE_BAND_START_HZ + FEATURE_BAND_STEP_HZ * i as f64;
        let bin = f * n as f64 / sr;
        if (bin - bin.round()).abs() > 1e-9 || bin.round() as usize >= n / 2 + 1 {
            return Err(SignalError::WindowNotLoopAligned { got: n, rate: sr });
        }
        bins.push(bin.round() as usize);
    }
    let spectrum = amplitude_spectrum(window);
    let values = bins.into_iter().map(|b| spectrum[b]).collect();
    Ok(FeatureVector {
        values,
        source_window,
    })
}

/// Savitzky-Golay smoothing: least-squares local polynomial fit of order
/// `polyorder` over `window_len` points, evaluated at the center. Edges
/// fit the polynomial on the truncated window, so output length equals
/// input length.
pub fn smooth_spectrum(
    values: &[f64],
    window_len: usize,
    polyorder: usize,
) -> Result<Vec<f64>, SignalError> {
    if window_len % 2 == 0 {
        return Err(SignalError::BadSmoothing(format!(
            "window length must be odd (got {window_len})"
        )));
    }
    if polyorder >= window_len {
        return Err(SignalError::BadSmoothing(format!(
            "polynomial order {polyorder} must be below window length {window_len}"
        )));
    }
    let n = values.len();
    let hw = window_len / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(hw);
        let hi = (i + hw + 1).min(n);
        let m = hi - lo;
        let order = polyorder.min(m - 1);
        // Vandermonde in x centered on the evaluation point
        let mut ata = nalgebra::DMatrix::zeros(order + 1, order + 1);
        let mut atb = nalgebra::DVector::zeros(order + 1);
        for j in lo..hi {
            let x = j as f64 - i as f64;
            let mut pow = vec![1.0; order + 1];
            for p in 1..=order {
                pow[p] = pow[p - 1] * x;
            }
            for a in 0..=order {
                atb[a] += pow[a] * values[j];
                for b in 0..=order {
                    ata[(a, b)] += pow[a] * pow[b];
                }
            }
        }
        let coef = ata
            .lu()
            .solve(&atb)
            .ok_or_else(|| SignalError::BadSmoothing("singular local fit".into()))?;
        out.push(coef[0]); // polynomial value at x = 0
        let _ = m;
    }
    Ok(out)
}
