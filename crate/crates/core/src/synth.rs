//! Second-pass modal synthesis: drive the modal oscillators with the
//! collision-impulse train under the contact-updated damping and emit the
//! displacement of the vertex nearest the microphone, projected on the
//! microphone contact normal.
//!
//! Each underdamped mode is an independent ODE discretized with the
//! impulse-invariant map, so an impulse train is reproduced exactly at the
//! sample instants. A coupled integrator over the full (non-diagonal) modal
//! damping matrix exists for validating the diagonal approximation.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use thiserror::Error;

use crate::mesh::TetMesh;
use crate::modal::ModalModel;
pub use crate::waveform::Waveform;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("mode {mode} has negative damping {value}")]
    NegativeDamping { mode: usize, value: f64 },
    #[error("damping vector has {got} entries but the model has {expected} modes")]
    DampingLength { got: usize, expected: usize },
    #[error("force signal sample rate {force} Hz does not match output rate {output} Hz")]
    SampleRateMismatch { force: f64, output: f64 },
    #[error("sample rates differ: {a} Hz vs {b} Hz")]
    WaveformRateMismatch { a: f64, b: f64 },
    #[error("non-finite output sample at index {sample}; first bad mode {mode} (λ = {lambda:.3e})")]
    NonFiniteSample {
        sample: usize,
        mode: usize,
        lambda: f64,
    },
    #[error("coupled integration requires all mode frequencies below {limit:.0} Hz at this rate")]
    CoupledBandwidth { limit: f64 },
    #[error("invalid synthesis input: {0}")]
    BadInput(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported WAV encoding: {msg}")]
    UnsupportedWav { path: PathBuf, msg: String },
    #[error("{path}: malformed WAV: {msg}")]
    MalformedWav { path: PathBuf, msg: String },
}

/// What the synthesized sample measures at the microphone vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputQuantity {
    /// Vertex displacement projected on the microphone normal (meters).
    #[default]
    Displacement,
    /// Backward-difference velocity of that projection (m/s).
    Velocity,
    /// Second-difference acceleration (m/s²).
    Acceleration,
}

/// Per-mode impulse-invariant recurrence coefficients
/// q[n] = a1·q[n−1] + a2·q[n−2] + b·g[n−1].
#[derive(Debug, Clone)]
pub struct ModeCoefficients {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b: Vec<f64>,
    /// Damped angular frequencies ω_d of the retained modes, rad/s.
    pub omega_d: Vec<f64>,
    /// Indices into the model's mode list for each retained mode.
    pub retained: Vec<usize>,
    /// Overdamped modes dropped (they do not oscillate).
    pub dropped_overdamped: usize,
    pub sample_rate: f64,
}

/// Turn eigenvalues plus per-mode damping into recurrence coefficients.
///
/// For an underdamped mode (σ = c/2, σ² < λ, ω_d = √(λ − σ²), h = 1/rate):
/// a1 = 2e^{−σh}cos(ω_d h), a2 = −e^{−2σh}, b = h·e^{−σh}·sin(ω_d h)/ω_d.
/// Overdamped modes are dropped and counted, not an error.
pub fn prepare_modes(
    model: &ModalModel,
    c_m_diag: &[f64],
    sample_rate: f64,
) -> Result<ModeCoefficients, SynthError> {
    if c_m_diag.len() != model.mode_count() {
        return Err(SynthError::DampingLength {
            got: c_m_diag.len(),
            expected: model.mode_count(),
        });
    }
    if !(sample_rate > 0.0) {
        return Err(SynthError::BadInput("sample rate must be positive".into()));
    }
    let h = 1.0 / sample_rate;
    let mut coeffs = ModeCoefficients {
        a1: Vec::new(),
        a2: Vec::new(),
        b: Vec::new(),
        omega_d: Vec::new(),
        retained: Vec::new(),
        dropped_overdamped: 0,
        sample_rate,
    };
    for (i, (&lambda, &c)) in model.eigenvalues.iter().zip(c_m_diag).enumerate() {
        if c < 0.0 {
            return Err(SynthError::NegativeDamping { mode: i, value: c });
        }
        let sigma = c / 2.0;
        if sigma * sigma >= lambda {
            coeffs.dropped_overdamped += 1;
            continue;
        }
        let omega_d = (lambda - sigma * sigma).sqrt();
        let decay = (-sigma * h).exp();
        coeffs.a1.push(2.0 * decay * (omega_d * h).cos());
        coeffs.a2.push(-decay * decay);
        coeffs.b.push(h * decay * (omega_d * h).sin() / omega_d);
        coeffs.omega_d.push(omega_d);
        coeffs.retained.push(i);
    }
    if coeffs.dropped_overdamped > 0 {
        log::info!(
            "prepare_modes: dropped {} overdamped of {} modes",
            coeffs.dropped_overdamped,
            model.mode_count()
        );
    }
    Ok(coeffs)
}

/// A sampled force signal applied at one mesh vertex along a fixed
/// direction.
#[derive(Debug, Clone)]
pub struct ForceDrive<'a> {
    pub force: &'a Waveform,
    pub vertex: usize,
    pub direction: Vector3<f64>,
}

/// A one-sample force spike (an impulsive contact event mapped onto the
/// sample grid).
#[derive(Debug, Clone, Copy)]
pub struct ImpulseInjection {
    pub sample: usize,
    pub vertex: usize,
    pub direction: Vector3<f64>,
    /// Force magnitude held for one sample, N.
    pub force: f64,
}

/// Core synthesis: advance every retained mode under the projected modal
/// force g = U_aᵀ·f and read out the microphone projection n_mᵀ·(U_m·q).
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    model: &ModalModel,
    c_m_diag: &[f64],
    drives: &[ForceDrive<'_>],
    impulses: &[ImpulseInjection],
    mic_vertex: usize,
    mic_direction: Vector3<f64>,
    duration: f64,
    sample_rate: f64,
    quantity: OutputQuantity,
) -> Result<Waveform, SynthError> {
    for d in drives {
        if d.force.sample_rate != sample_rate {
            return Err(SynthError::SampleRateMismatch {
                force: d.force.sample_rate,
                output: sample_rate,
            });
        }
        if d.vertex >= model.vertex_count() {
            return Err(SynthError::BadInput(format!(
                "drive vertex {} out of range (n = {})",
                d.vertex,
                model.vertex_count()
            )));
        }
    }
    if mic_vertex >= model.vertex_count() {
        return Err(SynthError::BadInput(format!(
            "microphone vertex {mic_vertex} out of range"
        )));
    }
    let coeffs = prepare_modes(model, c_m_diag, sample_rate)?;
    let r = coeffs.retained.len();
    let n_samples = (duration * sample_rate).round() as usize;

    // per-retained-mode input/output gains
    let gains_out_full = model.direction_gains(mic_vertex, &mic_direction);
    let gains_out: Vec<f64> = coeffs.retained.iter().map(|&i| gains_out_full[i]).collect();
    let drive_gains: Vec<Vec<f64>> = drives
        .iter()
        .map(|d| {
            let full = model.direction_gains(d.vertex, &d.direction);
            coeffs.retained.iter().map(|&i| full[i]).collect()
        })
        .collect();
    let impulse_gains: Vec<Vec<f64>> = impulses
        .iter()
        .map(|imp| {
            let full = model.direction_gains(imp.vertex, &imp.direction);
            coeffs
                .retained
                .iter()
                .map(|&i| imp.force * full[i])
                .collect()
        })
        .collect();

    let mut q = vec![0.0; r];
    let mut q_prev = vec![0.0; r];
    let mut g_prev = vec![0.0; r];
    let mut g = vec![0.0; r];
    let mut out = Vec::with_capacity(n_samples);

    for n in 0..n_samples {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (d, gains) in drives.iter().zip(&drive_gains) {
            if let Some(&f) = d.force.samples.get(n) {
                if f != 0.0 {
                    for (gi, &gain) in g.iter_mut().zip(gains) {
                        *gi += f * gain;
                    }
                }
            }
        }
        for (imp, gains) in impulses.iter().zip(&impulse_gains) {
            if imp.sample == n {
                for (gi, &gain) in g.iter_mut().zip(gains) {
                    *gi += gain;
                }
            }
        }

        let mut sample = 0.0;
        for i in 0..r {
            let q_new = coeffs.a1[i] * q[i] + coeffs.a2[i] * q_prev[i] + coeffs.b[i] * g_prev[i];
            q_prev[i] = q[i];
            q[i] = q_new;
            g_prev[i] = g[i];
            sample += gains_out[i] * q[i];
        }
        if !sample.is_finite() {
            let mode = (0..r).find(|&i| !q[i].is_finite()).unwrap_or(0);
            return Err(SynthError::NonFiniteSample {
                sample: n,
                mode: coeffs.retained.get(mode).copied().unwrap_or(0),
                lambda: model
                    .eigenvalues
                    .get(coeffs.retained.get(mode).copied().unwrap_or(0))
                    .copied()
                    .unwrap_or(f64::NAN),
            });
        }
        out.push(sample);
    }

    let displacement = Waveform::new(out, sample_rate);
    Ok(match quantity {
        OutputQuantity::Displacement => displacement,
        OutputQuantity::Velocity => differentiate(&displacement),
        OutputQuantity::Acceleration => differentiate(&differentiate(&displacement)),
    })
}

/// Backward-difference derivative, first sample zero.
fn differentiate(w: &Waveform) -> Waveform {
    let mut out = Vec::with_capacity(w.len());
    let mut prev = 0.0;
    for (i, &s) in w.samples.iter().enumerate() {
        out.push(if i == 0 { 0.0 } else { (s - prev) * w.sample_rate });
        prev = s;
    }
    Waveform::new(out, w.sample_rate)
}

/// Spec-level convenience: resolve contact points to nearest vertices and
/// synthesize with a single force drive.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_at_points(
    model: &ModalModel,
    mesh: &TetMesh,
    c_m_diag: &[f64],
    force: &Waveform,
    actuator_point: &Point3<f64>,
    actuator_normal: Vector3<f64>,
    mic_point: &Point3<f64>,
    mic_normal: Vector3<f64>,
    duration: f64,
    quantity: OutputQuantity,
) -> Result<Waveform, SynthError> {
    let drive = ForceDrive {
        force,
        vertex: mesh.nearest_vertex(actuator_point),
        direction: actuator_normal,
    };
    synthesize(
        model,
        c_m_diag,
        &[drive],
        &[],
        mesh.nearest_vertex(mic_point),
        mic_normal,
        duration,
        force.sample_rate,
        quantity,
    )
}

/// Validation path: integrate the coupled r×r system
/// q̈ + C_m q̇ + Λ q = g with the full (non-diagonal) damping matrix, using
/// the unconditionally stable average-acceleration (trapezoidal) scheme so
/// band-edge modes stay bounded at audio rates.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_coupled(
    model: &ModalModel,
    c_m: &DMatrix<f64>,
    drives: &[ForceDrive<'_>],
    mic_vertex: usize,
    mic_direction: Vector3<f64>,
    duration: f64,
    sample_rate: f64,
) -> Result<Waveform, SynthError> {
    let r = model.mode_count();
    if c_m.nrows() != r || c_m.ncols() != r {
        return Err(SynthError::DampingLength {
            got: c_m.nrows(),
            expected: r,
        });
    }
    let h = 1.0 / sample_rate;
    let lambda = DVector::from_vec(model.eigenvalues.clone());

    // A = I + (h/2)C + (h²/4)Λ, factored once
    let mut a = c_m * (h / 2.0);
    for i in 0..r {
        a[(i, i)] += 1.0 + h * h / 4.0 * lambda[i];
    }
    let lu = a.lu();

    let gains_out = DVector::from_vec(model.direction_gains(mic_vertex, &mic_direction));
    let drive_gains: Vec<DVector<f64>> = drives
        .iter()
        .map(|d| DVector::from_vec(model.direction_gains(d.vertex, &d.direction)))
        .collect();

    let n_samples = (duration * sample_rate).round() as usize;
    let mut q = DVector::zeros(r);
    let mut v = DVector::zeros(r);
    let mut acc = DVector::zeros(r);
    let mut out = Vec::with_capacity(n_samples);

    for n in 0..n_samples {
        let mut g = DVector::zeros(r);
        for (d, gains) in drives.iter().zip(&drive_gains) {
            if let Some(&f) = d.force.samples.get(n) {
                if f != 0.0 {
                    g.axpy(f, gains, 1.0);
                }
            }
        }
        let q_star = &q + &v * h + &acc * (h * h / 4.0);
        let v_star = &v + &acc * (h / 2.0);
        let mut rhs = g - c_m * &v_star;
        for i in 0..r {
            rhs[i] -= lambda[i] * q_star[i];
        }
        acc = lu
            .solve(&rhs)
            .ok_or_else(|| SynthError::BadInput("singular coupled system".into()))?;
        q = q_star + &acc * (h * h / 4.0);
        v = v_star + &acc * (h / 2.0);
        let sample = gains_out.dot(&q);
        if !sample.is_finite() {
            return Err(SynthError::NonFiniteSample {
                sample: n,
                mode: 0,
                lambda: f64::NAN,
            });
        }
        out.push(sample);
    }
    Ok(Waveform::new(out, sample_rate))
}

/// Align the leak's peak to the simulated peak (circular shift within one
/// loop period) and superimpose: out = sim + gain·leak, at sim's length.
/// The leak is indexed circularly, so shorter recordings tile.
pub fn superimpose_leak(
    sim: &Waveform,
    leak: &Waveform,
    gain: f64,
    loop_period: f64,
) -> Result<Waveform, SynthError> {
    if sim.sample_rate != leak.sample_rate {
        return Err(SynthError::WaveformRateMismatch {
            a: sim.sample_rate,
            b: leak.sample_rate,
        });
    }
    if leak.is_empty() || gain == 0.0 {
        return Ok(sim.clone());
    }
    let loop_len = ((loop_period * sim.sample_rate).round() as usize).max(1);
    let p_sim = sim.peak_index();
    let p_leak = leak.peak_index();
    let shift = (p_sim + loop_len - p_leak % loop_len) % loop_len;
    let ll = leak.len();
    let samples = sim
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let src = (i + ll - shift % ll) % ll;
            s + gain * leak.samples[src]
        })
        .collect();
    Ok(Waveform::new(samples, sim.sample_rate))
}

/// Scale so the peak hits `target` (0.5 for export). Returns the scaled
/// waveform and the factor applied; silent input comes back unscaled with
/// factor 1.
pub fn normalize_peak(w: &Waveform, target: f64) -> (Waveform, f64) {
    let peak = w.peak();
    if peak == 0.0 || !peak.is_finite() {
        return (w.clone(), 1.0);
    }
    let scale = target / peak;
    let samples = w.samples.iter().map(|s| s * scale).collect();
    (Waveform::new(samples, w.sample_rate), scale)
}

// ---------------------------------------------------------------------------
// WAV I/O: 32-bit float PCM mono, little-endian
// ---------------------------------------------------------------------------

/// Write `w` as a mono 32-bit IEEE-float WAV.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<(), SynthError> {
    let io_err = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let n = w.len() as u32;
    let data_size = n * 4;
    let sample_rate = w.sample_rate.round() as u32;
    let mut buf: Vec<u8> = Vec::with_capacity(58 + data_size as usize);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(50 + data_size).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    // fmt chunk: IEEE float, mono, 32 bits
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&18u32.to_le_bytes());
    buf.extend_from_slice(&3u16.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 4).to_le_bytes());
    buf.extend_from_slice(&4u16.to_le_bytes());
    buf.extend_from_slice(&32u16.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes()); // cbSize
    // fact chunk (required for non-PCM formats)
    buf.extend_from_slice(b"fact");
    buf.extend_from_slice(&4u32.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        buf.extend_from_slice(&(s as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

/// Read a mono WAV. 32-bit float is exact; 16- and 24-bit integer PCM are
/// converted to float in [−1, 1) and flagged in the log.
pub fn read_wav(path: &Path) -> Result<Waveform, SynthError> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let malformed = |msg: &str| SynthError::MalformedWav {
        path: path.to_path_buf(),
        msg: msg.into(),
    };
    if data.len() < 12 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut payload: Option<&[u8]> = None;
    while pos + 8 <= data.len() {
        let id = &data[pos..pos + 4];
        let size = u32::from_le_bytes(data[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(data.len());
        let body = &data[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("short fmt chunk"));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => payload = Some(body),
            _ => {}
        }
        pos = pos + 8 + size + (size & 1); // chunks are word-aligned
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let payload = payload.ok_or_else(|| malformed("no data chunk"))?;
    let unsupported = |msg: String| SynthError::UnsupportedWav {
        path: path.to_path_buf(),
        msg,
    };
    if channels != 1 {
        return Err(unsupported(format!("{channels} channels (mono only)")));
    }
    let samples: Vec<f64> = match (format, bits) {
        (3, 32) => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        (1, 16) => {
            log::info!("read_wav: converting 16-bit PCM {} to float", path.display());
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32_768.0)
                .collect()
        }
        (1, 24) => {
            log::info!("read_wav: converting 24-bit PCM {} to float", path.display());
            payload
                .chunks_exact(3)
                .map(|c| {
                    let raw = (c[0] as i32) | ((c[1] as i32) << 8) | ((c[2] as i32) << 16);
                    let signed = (raw << 8) >> 8; // sign-extend 24 bits
                    signed as f64 / 8_388_608.0
                })
                .collect()
        }
        (f, b) => return Err(unsupported(format!("format {f} at {b} bits"))),
    };
    Ok(Waveform::new(samples, rate as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::MaterialParams;
    use approx::assert_relative_eq;

    const TWO_PI: f64 = std::f64::consts::TAU;

    /// One vertex, one mode, unit gains along x.
    fn single_mode_model(lambda: f64) -> ModalModel {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        ModalModel::from_raw(
            vec![lambda],
            u,
            MaterialParams::aluminium(),
            [0u8; 32],
            20.0,
            20_000.0,
        )
        .unwrap()
    }

    fn unit_impulse(sr: f64, len: usize) -> Waveform {
        let mut samples = vec![0.0; len];
        samples[0] = 1.0;
        Waveform::new(samples, sr)
    }

    #[test]
    fn undamped_coefficients_match_closed_form() {
        let sr = 44_100.0;
        let lambda = (TWO_PI * 1000.0).powi(2);
        let model = single_mode_model(lambda);
        let coeffs = prepare_modes(&model, &[0.0], sr).unwrap();
        let h = 1.0 / sr;
        assert_relative_eq!(coeffs.a2[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(coeffs.a1[0], 2.0 * (TWO_PI * 1000.0 * h).cos(), epsilon = 1e-15);
        assert_eq!(coeffs.dropped_overdamped, 0);
    }

    #[test]
    fn overdamped_mode_is_dropped_and_counted() {
        let lambda = (TWO_PI * 100.0).powi(2);
        let model = single_mode_model(lambda);
        let c = 2.0 * lambda.sqrt() * 1.5; // σ = 1.5·ω₀
        let coeffs = prepare_modes(&model, &[c], 44_100.0).unwrap();
        assert_eq!(coeffs.dropped_overdamped, 1);
        assert!(coeffs.retained.is_empty());

        assert!(matches!(
            prepare_modes(&model, &[-1.0], 44_100.0),
            Err(SynthError::NegativeDamping { mode: 0, .. })
        ));
    }

    #[test]
    fn impulse_response_matches_damped_sinusoid() {
        let sr = 44_100.0;
        let h = 1.0 / sr;
        let f0 = 1000.0;
        let lambda = (TWO_PI * f0).powi(2);
        let sigma = 30.0;
        let model = single_mode_model(lambda);
        let force = unit_impulse(sr, 22_050);
        let out = synthesize(
            &model,
            &[2.0 * sigma],
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            0,
            Vector3::x(),
            0.5,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();

        let omega_d = (lambda - sigma * sigma).sqrt();
        let mut err_sq = 0.0;
        let mut ref_sq = 0.0;
        for (n, &y) in out.samples.iter().enumerate() {
            let t = n as f64 * h;
            let expected = h * (-sigma * t).exp() * (omega_d * t).sin() / omega_d;
            err_sq += (y - expected) * (y - expected);
            ref_sq += expected * expected;
        }
        assert!((err_sq / ref_sq).sqrt() < 1e-6, "relative RMS too large");
    }

    #[test]
    fn zero_force_gives_zero_output() {
        let model = single_mode_model((TWO_PI * 500.0).powi(2));
        let force = Waveform::silence(0.1, 44_100.0);
        let out = synthesize(
            &model,
            &[10.0],
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            0,
            Vector3::x(),
            0.1,
            44_100.0,
            OutputQuantity::Displacement,
        )
        .unwrap();
        assert_eq!(out.peak(), 0.0);
    }

    #[test]
    fn synthesis_is_linear_in_the_force() {
        let sr = 44_100.0;
        let model = single_mode_model((TWO_PI * 700.0).powi(2));
        let mk = |seed: u64| {
            let samples: Vec<f64> = (0..4410)
                .map(|i| ((i as f64 * 0.013 + seed as f64) * 1.7).sin())
                .collect();
            Waveform::new(samples, sr)
        };
        let f1 = mk(1);
        let f2 = mk(2);
        let sum = Waveform::new(
            f1.samples.iter().zip(&f2.samples).map(|(a, b)| a + b).collect(),
            sr,
        );
        let run = |f: &Waveform| {
            synthesize(
                &model,
                &[25.0],
                &[ForceDrive {
                    force: f,
                    vertex: 0,
                    direction: Vector3::x(),
                }],
                &[],
                0,
                Vector3::x(),
                0.1,
                sr,
                OutputQuantity::Displacement,
            )
            .unwrap()
        };
        let y1 = run(&f1);
        let y2 = run(&f2);
        let y12 = run(&sum);
        let mut err_sq = 0.0;
        let mut ref_sq = 0.0;
        for i in 0..y12.len() {
            let s = y1.samples[i] + y2.samples[i];
            err_sq += (y12.samples[i] - s) * (y12.samples[i] - s);
            ref_sq += s * s;
        }
        assert!((err_sq / ref_sq).sqrt() < 1e-9);
    }

    #[test]
    fn mode_shape_gains_scale_the_response() {
        let sr = 44_100.0;
        let lambda = (TWO_PI * 900.0).powi(2);
        // two-vertex model, one mode: gain 2 at the actuator vertex (x),
        // gain 0.25 at the microphone vertex (y)
        let u = DMatrix::from_column_slice(6, 1, &[2.0, 0.0, 0.0, 0.0, 0.25, 0.0]);
        let model = ModalModel::from_raw(
            vec![lambda],
            u,
            MaterialParams::aluminium(),
            [0u8; 32],
            20.0,
            20_000.0,
        )
        .unwrap();
        let reference = single_mode_model(lambda);
        let force = unit_impulse(sr, 4410);

        let scaled = synthesize(
            &model,
            &[12.0],
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            1,
            Vector3::y(),
            0.1,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();
        let base = synthesize(
            &reference,
            &[12.0],
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            0,
            Vector3::x(),
            0.1,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();
        for (s, b) in scaled.samples.iter().zip(&base.samples) {
            assert_relative_eq!(*s, 0.5 * b, epsilon = 1e-18, max_relative = 1e-12);
        }
    }

    #[test]
    fn energy_decays_after_excitation_stops() {
        let sr = 44_100.0;
        let model = single_mode_model((TWO_PI * 2000.0).powi(2));
        let force = unit_impulse(sr, 441);
        let out = synthesize(
            &model,
            &[80.0],
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            0,
            Vector3::x(),
            1.0,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();
        let block = (0.1 * sr) as usize;
        let rms = |s: &[f64]| (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt();
        let mut prev = f64::INFINITY;
        for chunk in out.samples[441..].chunks_exact(block) {
            let r = rms(chunk);
            assert!(r <= prev * (1.0 + 1e-12));
            prev = r;
        }
    }

    #[test]
    fn stronger_damping_decays_faster_per_mode() {
        let sr = 44_100.0;
        let model = single_mode_model((TWO_PI * 1500.0).powi(2));
        let force = unit_impulse(sr, 10);
        let tail_rms = |c: f64| {
            let out = synthesize(
                &model,
                &[c],
                &[ForceDrive {
                    force: &force,
                    vertex: 0,
                    direction: Vector3::x(),
                }],
                &[],
                0,
                Vector3::x(),
                0.5,
                sr,
                OutputQuantity::Displacement,
            )
            .unwrap();
            let tail = &out.samples[out.len() / 2..];
            (tail.iter().map(|x| x * x).sum::<f64>() / tail.len() as f64).sqrt()
        };
        assert!(tail_rms(200.0) < tail_rms(20.0));
    }

    #[test]
    fn coupled_integrator_matches_diagonal_path_on_diagonal_damping() {
        let sr = 44_100.0;
        // two modes well below the band edge
        let lambdas = [(TWO_PI * 300.0).powi(2), (TWO_PI * 800.0).powi(2)];
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let model = ModalModel::from_raw(
            lambdas.to_vec(),
            u,
            MaterialParams::aluminium(),
            [0u8; 32],
            20.0,
            20_000.0,
        )
        .unwrap();
        let c_diag = [40.0, 60.0];
        let mut c_full = DMatrix::zeros(2, 2);
        c_full[(0, 0)] = c_diag[0];
        c_full[(1, 1)] = c_diag[1];

        let force = unit_impulse(sr, 4410);
        let drive = ForceDrive {
            force: &force,
            vertex: 0,
            direction: Vector3::new(1.0, 1.0, 0.0).normalize(),
        };
        let mic = Vector3::new(1.0, 1.0, 0.0).normalize();
        let exact = synthesize(
            &model,
            &c_diag,
            std::slice::from_ref(&drive),
            &[],
            0,
            mic,
            0.1,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();
        let coupled =
            synthesize_coupled(&model, &c_full, &[drive], 0, mic, 0.1, sr).unwrap();
        let mut err_sq = 0.0;
        let mut ref_sq = 0.0;
        for (a, b) in exact.samples.iter().zip(&coupled.samples) {
            err_sq += (a - b) * (a - b);
            ref_sq += a * a;
        }
        // trapezoidal integration carries phase error; this bounds gross
        // disagreement, not round-off
        assert!((err_sq / ref_sq).sqrt() < 0.05);
    }

    #[test]
    fn leak_alignment_and_gain() {
        let sr = 44_100.0;
        let loop_period = 0.5;
        let mut sim_samples = vec![0.0; 22_050];
        sim_samples[500] = 1.0;
        sim_samples[600] = 0.4;
        let sim = Waveform::new(sim_samples, sr);

        // gain 0 → identity
        let out = superimpose_leak(&sim, &sim, 0.0, loop_period).unwrap();
        assert_eq!(out.samples, sim.samples);

        // identical, aligned → doubled
        let out = superimpose_leak(&sim, &sim, 1.0, loop_period).unwrap();
        for (o, s) in out.samples.iter().zip(&sim.samples) {
            assert_relative_eq!(*o, 2.0 * s, epsilon = 1e-15);
        }

        // delayed leak realigns: cross-correlation peak at lag 0
        let delay = 100;
        let mut leak_samples = vec![0.0; 22_050];
        leak_samples[500 + delay] = 1.0;
        leak_samples[600 + delay] = 0.4;
        let leak = Waveform::new(leak_samples, sr);
        let out = superimpose_leak(&sim, &leak, 1.0, loop_period).unwrap();
        let xcorr = |lag: i64| -> f64 {
            let mut acc = 0.0;
            for (i, &s) in sim.samples.iter().enumerate() {
                let j = i as i64 + lag;
                if j >= 0 && (j as usize) < out.len() {
                    acc += s * out.samples[j as usize];
                }
            }
            acc
        };
        let at_zero = xcorr(0);
        for lag in [-200i64, -(delay as i64), delay as i64, 200] {
            assert!(at_zero > xcorr(lag));
        }

        let bad = Waveform::new(vec![0.0; 10], 48_000.0);
        assert!(matches!(
            superimpose_leak(&sim, &bad, 1.0, loop_period),
            Err(SynthError::WaveformRateMismatch { .. })
        ));
    }

    #[test]
    fn normalize_peak_scales_and_reports() {
        let w = Waveform::new(vec![0.1, -0.4, 0.2], 44_100.0);
        let (out, scale) = normalize_peak(&w, 0.5);
        assert_relative_eq!(out.peak(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(scale, 1.25, epsilon = 1e-15);
        let silent = Waveform::new(vec![0.0; 4], 44_100.0);
        let (out, scale) = normalize_peak(&silent, 0.5);
        assert_eq!(scale, 1.0);
        assert_eq!(out.samples, silent.samples);
    }

    #[test]
    fn wav_round_trip_is_bitwise_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..441)
            .map(|i| (i as f32 as f64 * 0.001).sin() as f32 as f64)
            .collect();
        let w = Waveform::new(samples, 44_100.0);
        write_wav(&w, &path).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 44_100.0);
        assert_eq!(r.len(), w.len());
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, *b as f32 as f64); // exactly representable
        }
    }

    #[test]
    fn wav_24_bit_pcm_reads_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm24.wav");
        // hand-build a 3-sample 24-bit PCM mono file
        let samples_i32: [i32; 3] = [0, 4_194_304, -8_388_608]; // 0, 0.5, -1.0
        let mut data: Vec<u8> = Vec::new();
        for s in samples_i32 {
            let b = s.to_le_bytes();
            data.extend_from_slice(&b[0..3]);
        }
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"RIFF");
        buf.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        buf.extend_from_slice(b"WAVE");
        buf.extend_from_slice(b"fmt ");
        buf.extend_from_slice(&16u32.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&44_100u32.to_le_bytes());
        buf.extend_from_slice(&(44_100u32 * 3).to_le_bytes());
        buf.extend_from_slice(&3u16.to_le_bytes());
        buf.extend_from_slice(&24u16.to_le_bytes());
        buf.extend_from_slice(b"data");
        buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
        buf.extend_from_slice(&data);
        std::fs::write(&path, &buf).unwrap();

        let w = read_wav(&path).unwrap();
        let lsb = 1.0 / 8_388_608.0;
        for (got, want) in w.samples.iter().zip([0.0, 0.5, -1.0]) {
            assert!((got - want).abs() <= lsb);
        }
    }

    #[test]
    fn unsupported_wav_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"RIFF");
        buf.extend_from_slice(&36u32.to_le_bytes());
        buf.extend_from_slice(b"WAVE");
        buf.extend_from_slice(b"fmt ");
        buf.extend_from_slice(&16u32.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&2u16.to_le_bytes()); // stereo
        buf.extend_from_slice(&44_100u32.to_le_bytes());
        buf.extend_from_slice(&(44_100u32 * 4).to_le_bytes());
        buf.extend_from_slice(&4u16.to_le_bytes());
        buf.extend_from_slice(&16u16.to_le_bytes());
        buf.extend_from_slice(b"data");
        buf.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(SynthError::UnsupportedWav { .. })
        ));
    }

    #[test]
    fn synthesis_throughput_budget() {
        // 1 s at 44.1 kHz with 100 modes must stay far inside 10 s
        let sr = 44_100.0;
        let r = 100;
        let lambdas: Vec<f64> = (0..r)
            .map(|i| (TWO_PI * (500.0 + 150.0 * i as f64)).powi(2))
            .collect();
        let mut u = DMatrix::zeros(3, r);
        for c in 0..r {
            u[(0, c)] = 1.0;
        }
        let model = ModalModel::from_raw(
            lambdas,
            u,
            MaterialParams::aluminium(),
            [0u8; 32],
            20.0,
            40_000.0,
        )
        .unwrap();
        let c: Vec<f64> = vec![50.0; r];
        let force = unit_impulse(sr, 44_100);
        let t = std::time::Instant::now();
        let out = synthesize(
            &model,
            &c,
            &[ForceDrive {
                force: &force,
                vertex: 0,
                direction: Vector3::x(),
            }],
            &[],
            0,
            Vector3::x(),
            1.0,
            sr,
            OutputQuantity::Displacement,
        )
        .unwrap();
        assert_eq!(out.len(), 44_100);
        assert!(t.elapsed().as_secs_f64() < 10.0);
    }
}
