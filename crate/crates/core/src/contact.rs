//! Contact-event streams, viscous contact damping in modal space, and the
//! two-DOF mass-spring-damper excitation model that converts the actuator
//! waveform into collision impulses at the fingertip.
//!
//! Contact streams are the first-pass product of a robot simulation; this
//! crate consumes them from JSON-lines files instead of computing
//! rigid-body physics itself.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::MaterialParams;
use crate::mesh::TetMesh;
use crate::modal::ModalModel;
use crate::waveform::Waveform;

/// Normals further than this from unit length are rejected; closer ones are
/// renormalized.
pub const NORMAL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed contact event: {msg}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: normal has length {norm:.6}, more than {tolerance} from unit")]
    BadNormal {
        path: PathBuf,
        line: usize,
        norm: f64,
        tolerance: f64,
    },
    #[error("{path}:{line}: negative contact force {force}")]
    NegativeForce {
        path: PathBuf,
        line: usize,
        force: f64,
    },
    #[error("{path}: unsupported contact stream version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("invalid contact dynamics config: {0}")]
    InvalidConfig(String),
    #[error(
        "two-DOF integration unstable at step {step} (|state| = {magnitude:.3e} m): \
         reduce contact stiffness or raise the sample rate"
    )]
    Unstable { step: usize, magnitude: f64 },
    #[error("friction coefficient must be in [0, 1] (got {0})")]
    BadFriction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    GripLeft,
    GripRight,
    Environment,
    OtherObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persistence {
    /// Feeds the viscous contact damping while it lasts.
    Sustained,
    /// Injects its force impulse directly into the modal force at its
    /// timestamp.
    Impulsive,
}

/// One timestamped contact point in the object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub time: f64,
    pub point: Point3<f64>,
    /// Unit contact normal.
    pub normal: Vector3<f64>,
    /// Contact force magnitude c_p, N (>= 0).
    pub force: f64,
    pub source: ContactSource,
    pub persistence: Persistence,
}

/// Wire format of one JSON-lines event.
#[derive(Debug, Serialize, Deserialize)]
struct RawEvent {
    t: f64,
    point: [f64; 3],
    normal: [f64; 3],
    force: f64,
    source: ContactSource,
    persistence: Persistence,
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamHeader {
    schema: String,
    version: u32,
}

const STREAM_SCHEMA: &str = "contact-stream";
const STREAM_VERSION: u32 = 1;

/// Read a JSON-lines contact stream: an optional header line
/// `{"schema":"contact-stream","version":1}` followed by one event per
/// line. Events are validated and returned sorted by time (stable).
pub fn load_contact_stream(path: &Path) -> Result<Vec<ContactEvent>, ContactError> {
    let file = std::fs::File::open(path).map_err(|source| ContactError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut events = Vec::new();
    let mut seen_content = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ContactError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if let Ok(header) = serde_json::from_str::<StreamHeader>(trimmed) {
                if header.schema == STREAM_SCHEMA {
                    if header.version != STREAM_VERSION {
                        return Err(ContactError::VersionMismatch {
                            path: path.to_path_buf(),
                            found: header.version,
                            expected: STREAM_VERSION,
                        });
                    }
                    continue;
                }
            }
        }
        let raw: RawEvent =
            serde_json::from_str(trimmed).map_err(|e| ContactError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        events.push(validate_event(raw, path, i + 1)?);
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(events)
}

fn validate_event(raw: RawEvent, path: &Path, line: usize) -> Result<ContactEvent, ContactError> {
    let all = raw
        .point
        .iter()
        .chain(raw.normal.iter())
        .chain([&raw.t, &raw.force]);
    for v in all {
        if !v.is_finite() {
            return Err(ContactError::MalformedLine {
                path: path.to_path_buf(),
                line,
                msg: "non-finite value".into(),
            });
        }
    }
    if raw.force < 0.0 {
        return Err(ContactError::NegativeForce {
            path: path.to_path_buf(),
            line,
            force: raw.force,
        });
    }
    let normal = Vector3::new(raw.normal[0], raw.normal[1], raw.normal[2]);
    let norm = normal.norm();
    if (norm - 1.0).abs() > NORMAL_TOLERANCE {
        return Err(ContactError::BadNormal {
            path: path.to_path_buf(),
            line,
            norm,
            tolerance: NORMAL_TOLERANCE,
        });
    }
    Ok(ContactEvent {
        time: raw.t,
        point: Point3::new(raw.point[0], raw.point[1], raw.point[2]),
        normal: normal / norm,
        force: raw.force,
        source: raw.source,
        persistence: raw.persistence,
    })
}

/// Write a contact stream with header, one event per line.
pub fn save_contact_stream(events: &[ContactEvent], path: &Path) -> Result<(), ContactError> {
    let io_err = |source| ContactError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    let header = StreamHeader {
        schema: STREAM_SCHEMA.into(),
        version: STREAM_VERSION,
    };
    writeln!(f, "{}", serde_json::to_string(&header).unwrap()).map_err(io_err)?;
    for e in events {
        let raw = RawEvent {
            t: e.time,
            point: [e.point.x, e.point.y, e.point.z],
            normal: [e.normal.x, e.normal.y, e.normal.z],
            force: e.force,
            source: e.source,
            persistence: e.persistence,
        };
        writeln!(f, "{}", serde_json::to_string(&raw).unwrap()).map_err(io_err)?;
    }
    Ok(())
}

/// Viscous contact damping in modal space:
/// G = Σ_p c_p · U_pᵀ (μI + (1−μ)·n_p n_pᵀ) U_p,
/// where U_p is the 3×r block of U at the mesh vertex nearest p.
///
/// G is symmetric PSD for μ ∈ [0,1] and c_p ≥ 0.
pub fn contact_damping(
    model: &ModalModel,
    mesh: &TetMesh,
    events: &[ContactEvent],
    mu: f64,
) -> Result<DMatrix<f64>, ContactError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(ContactError::BadFriction(mu));
    }
    let r = model.mode_count();
    let mut g = DMatrix::zeros(r, r);
    for event in events {
        let vertex = mesh.nearest_vertex(&event.point);
        let block = model.vertex_block(vertex); // 3×r
        let n = event.normal;
        let mut a = nalgebra::Matrix3::identity() * mu;
        a += (n * n.transpose()) * (1.0 - mu);
        let ab = a * block;
        g += event.force * (block.transpose() * ab);
    }
    g = (&g + g.transpose()) * 0.5;
    Ok(g)
}

/// Total modal damping C_m = diag(α + β·λ_i) + γ·G. The Rayleigh part is
/// exactly diagonal because UᵀMU = I and UᵀKU = Λ.
pub fn total_modal_damping(
    model: &ModalModel,
    mat: &MaterialParams,
    g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let r = model.mode_count();
    let mut cm = g * mat.gamma;
    for i in 0..r {
        cm[(i, i)] += mat.alpha + mat.beta * model.eigenvalues[i];
    }
    cm
}

/// Diagonal of C_m: the per-mode damping used by the default synthesis
/// recurrence.
pub fn modal_damping_diagonal(
    model: &ModalModel,
    mat: &MaterialParams,
    g: &DMatrix<f64>,
) -> Vec<f64> {
    (0..model.mode_count())
        .map(|i| mat.alpha + mat.beta * model.eigenvalues[i] + mat.gamma * g[(i, i)])
        .collect()
}

/// Parameters of the fingertip/object/environment contact-dynamics model.
///
/// The reduced two-DOF integration along the grip direction couples the
/// left fingertip (m_lf, where the actuator sits) to the object (m_o)
/// through the unilateral k_of/b_of contact, and grounds the object through
/// k_oe/b_oe while an environment contact is active. The remaining fields
/// (m_rf, k_fe, b_fe) complete the declared interface set of the contact
/// diagram and travel with scenario configs.
///
/// Defaults other than f_grip are artifact-level engineering values, not
/// tabulated ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactDynamicsConfig {
    /// Object mass, kg (pipelines usually fill this with ρ·V).
    pub m_o: f64,
    /// Left/right fingertip masses, kg.
    pub m_lf: f64,
    pub m_rf: f64,
    /// Object-finger contact stiffness/damping.
    pub k_of: f64,
    pub b_of: f64,
    /// Finger-environment contact stiffness/damping.
    pub k_fe: f64,
    pub b_fe: f64,
    /// Object-environment contact stiffness/damping.
    pub k_oe: f64,
    pub b_oe: f64,
    /// Grasping force, N.
    pub f_grip: f64,
    /// External force on the fingertip projected on the grip direction, N.
    pub f_ext: f64,
    /// Actuator force per unit excitation amplitude, N.
    pub vib_gain: f64,
    /// Whether an object-environment contact is active (grounds the object).
    pub grounded: bool,
}

impl Default for ContactDynamicsConfig {
    fn default() -> Self {
        Self {
            m_o: 0.2,
            m_lf: 0.02,
            m_rf: 0.02,
            k_of: 1e6,
            b_of: 50.0,
            k_fe: 1e5,
            b_fe: 10.0,
            k_oe: 1e6,
            b_oe: 50.0,
            f_grip: 40.0,
            f_ext: 0.0,
            vib_gain: 5.0,
            grounded: true,
        }
    }
}

impl ContactDynamicsConfig {
    pub fn validate(&self) -> Result<(), ContactError> {
        let err = |msg: String| Err(ContactError::InvalidConfig(msg));
        if !(self.m_o > 0.0 && self.m_lf > 0.0 && self.m_rf > 0.0) {
            return err("masses must be positive".into());
        }
        if !(self.k_of > 0.0 && self.k_fe > 0.0 && self.k_oe > 0.0) {
            return err("contact stiffnesses must be positive".into());
        }
        if self.b_of < 0.0 || self.b_fe < 0.0 || self.b_oe < 0.0 {
            return err("contact dampings must be non-negative".into());
        }
        if self.f_grip < 0.0 {
            return err(format!("grasping force must be >= 0 (got {})", self.f_grip));
        }
        Ok(())
    }
}

/// Integrate the two-DOF fingertip/object system driven by
/// f_grip + f_ext + vib_gain·excitation(t) and return the collision-impulse
/// train f_c(t) at the actuator contact, N, sampled at the excitation rate.
///
/// Semi-implicit (symplectic Euler) stepping; the contact is unilateral:
/// f_c = max(0, k_of·overlap + b_of·overlap_rate) while overlapping, else 0.
pub fn excitation_impulses(
    cfg: &ContactDynamicsConfig,
    excitation: &Waveform,
) -> Result<Waveform, ContactError> {
    cfg.validate()?;
    let dt = 1.0 / excitation.sample_rate;
    let n = excitation.len();
    let mut out = Vec::with_capacity(n);

    let mut x_f = 0.0_f64; // fingertip position along the grip direction
    let mut v_f = 0.0_f64;
    let mut x_o = 0.0_f64;
    let mut v_o = 0.0_f64;

    let drive_scale = cfg.f_grip.abs() + cfg.f_ext.abs() + cfg.vib_gain.abs();
    let bound = 1.0 + 1e3 * drive_scale / cfg.k_of;

    for (step, &e) in excitation.samples.iter().enumerate() {
        let overlap = x_f - x_o;
        let overlap_rate = v_f - v_o;
        let f_c = if overlap > 0.0 {
            (cfg.k_of * overlap + cfg.b_of * overlap_rate).max(0.0)
        } else {
            0.0
        };
        out.push(f_c);

        let drive = cfg.f_grip + cfg.f_ext + cfg.vib_gain * e;
        let a_f = (drive - f_c) / cfg.m_lf;
        let ground = if cfg.grounded {
            cfg.k_oe * x_o + cfg.b_oe * v_o
        } else {
            0.0
        };
        let a_o = (f_c - ground) / cfg.m_o;

        v_f += a_f * dt;
        v_o += a_o * dt;
        x_f += v_f * dt;
        x_o += v_o * dt;

        let magnitude = x_f.abs().max(x_o.abs());
        if !magnitude.is_finite() || magnitude > 1e6 * bound {
            return Err(ContactError::Unstable { step, magnitude });
        }
    }
    Ok(Waveform::new(out, excitation.sample_rate))
}
