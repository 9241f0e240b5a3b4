//! Sampled mono waveform shared by the synthesis and signal modules.

/// A mono sampled signal. Samples are dimensionless once normalized for
/// export; inside the pipeline they carry whatever physical unit produced
/// them (meters for displacement output, newtons for force traces).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

/// Default sensor sampling rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 44_100.0;

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        assert!(sample_rate > 0.0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    /// All-zero waveform of `duration` seconds.
    pub fn silence(duration: f64, sample_rate: f64) -> Self {
        let n = (duration * sample_rate).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |a, &s| a.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum_sq: f64 = self.samples.iter().map(|s| s * s).sum();
        (sum_sq / self.samples.len() as f64).sqrt()
    }

    /// Index of the sample with the largest magnitude (first on ties).
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, &s) in self.samples.iter().enumerate() {
            if s.abs() > best_abs {
                best_abs = s.abs();
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}
