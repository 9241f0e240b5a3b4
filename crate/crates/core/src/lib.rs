//! Physics-based simulation toolkit for active acoustic sensing in robot
//! manipulation.
//!
//! An actuator on one gripper finger injects a waveform into a grasped
//! object; a contact microphone on the other finger records the vibration
//! after it travels through the object. This crate synthesizes that received
//! signal from first principles and evaluates recognition/regression tasks
//! on the resulting spectra:
//!
//! - [`mesh`] — tetrahedral meshes: file ingestion (.node/.ele, Gmsh ASCII)
//!   and parametric bar/tube primitives.
//! - [`fem`] — stiffness and mass matrix assembly for linear elastic
//!   tetrahedra with isotropic homogeneous material.
//! - [`modal`] — generalized eigensolution of (K, M), band truncation, and
//!   persistent modal models.
//! - [`contact`] — contact-event streams, viscous contact damping in modal
//!   space, and the two-DOF fingertip/object excitation model.
//! - [`synth`] — per-mode impulse-invariant synthesis of the microphone
//!   signal, leak superposition, and WAV I/O.
//! - [`signal`] — excitation generation (impulse / linear sweep /
//!   exponential sweep), windowing, FFT band features, Savitzky-Golay
//!   smoothing.
//! - [`ml`] — KNN classification/regression with a group-aware stratified
//!   cross-validation harness.

pub mod contact;
pub mod fem;
pub mod mesh;
pub mod ml;
pub mod modal;
pub mod signal;
pub mod synth;
pub mod waveform;

pub use contact::{ContactDynamicsConfig, ContactEvent, ContactSource, Persistence};
pub use fem::{MaterialParams, SystemMatrices};
pub use mesh::TetMesh;
pub use ml::Dataset;
pub use modal::{ModalModel, ModalOptions};
pub use signal::{ExcitationSpec, FeatureVector};
pub use synth::Waveform;
