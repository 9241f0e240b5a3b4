//! Generalized eigensolution of the stiffness/mass pair, band truncation,
//! and the persistent modal model used by synthesis.
//!
//! The mode matrix U is mass-orthonormal (UᵀMU = I, UᵀKU = Λ). Two solver
//! paths exist: a dense Cholesky reduction for small systems and a
//! shift-invert Lanczos iteration targeting the frequency band for larger
//! ones. Both finish with a Rayleigh-Ritz refinement of the retained
//! subspace against the exact K and M, so the orthonormality and
//! diagonalization invariants hold to near machine precision regardless of
//! path.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{inf_norm, spmv, to_dense, MaterialParams, SystemMatrices};
use crate::mesh::TetMesh;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Relative residual below which a Ritz pair counts as converged.
const CONVERGENCE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModalError {
    #[error("mass matrix is singular or not positive definite")]
    NearSingularMass,
    #[error("eigensolver failed to converge: {0}")]
    NonConvergence(String),
    #[error("no modes inside the frequency band [{f_floor} Hz, {f_ceil} Hz]")]
    EmptyBand { f_floor: f64, f_ceil: f64 },
    #[error("invalid modal options: {0}")]
    InvalidOptions(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a modal model file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported modal file version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: file truncated ({needed} bytes needed, {available} available)")]
    Truncated {
        path: PathBuf,
        needed: usize,
        available: usize,
    },
    #[error("modal model was computed for a different mesh (hash mismatch)")]
    MeshHashMismatch,
    #[error("corrupt modal model: {0}")]
    Corrupt(String),
}

/// Which eigensolver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    /// Dense below `dense_threshold` DOF, shift-invert above.
    #[default]
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Debug, Clone, Copy)]
pub struct ModalOptions {
    /// Lowest retained natural frequency, Hz. The default of 20 Hz discards
    /// the six rigid-body modes and matches the lowest excitation frequency.
    pub f_floor: f64,
    /// Highest retained natural frequency, Hz (actuator response limit).
    pub f_ceil: f64,
    /// Mode budget: keep at most this many lowest in-band modes.
    pub r_max: usize,
    pub solver: SolverChoice,
    /// DOF count at and below which `Auto` picks the dense path.
    pub dense_threshold: usize,
}

impl Default for ModalOptions {
    fn default() -> Self {
        Self {
            f_floor: 20.0,
            f_ceil: 20_000.0,
            r_max: 256,
            solver: SolverChoice::Auto,
            dense_threshold: 1500,
        }
    }
}

impl ModalOptions {
    fn validate(&self) -> Result<(), ModalError> {
        if !(self.f_floor >= 0.0) || !(self.f_ceil > self.f_floor) {
            return Err(ModalError::InvalidOptions(format!(
                "need 0 <= f_floor < f_ceil (got {} and {})",
                self.f_floor, self.f_ceil
            )));
        }
        if self.r_max == 0 {
            return Err(ModalError::InvalidOptions("r_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// Precomputed modal description of one object: eigenvalues Λ (rad²/s²),
/// the mass-orthonormal 3n×r mode matrix U, and the material it was built
/// with. Immutable once computed; this is the first-pass product that
/// synthesis consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalModel {
    /// Generalized eigenvalues, ascending, all positive.
    pub eigenvalues: Vec<f64>,
    /// 3n×r mass-orthonormal mode matrix.
    pub mode_matrix: DMatrix<f64>,
    /// Natural frequencies √λ/2π, Hz.
    pub natural_freqs: Vec<f64>,
    pub material: MaterialParams,
    /// Content hash of the source mesh.
    pub mesh_hash: [u8; 32],
    pub f_floor: f64,
    pub f_ceil: f64,
}

impl ModalModel {
    /// Assemble a model from raw parts (also used to build synthetic
    /// single-mode models in tests).
    pub fn from_raw(
        eigenvalues: Vec<f64>,
        mode_matrix: DMatrix<f64>,
        material: MaterialParams,
        mesh_hash: [u8; 32],
        f_floor: f64,
        f_ceil: f64,
    ) -> Result<Self, ModalError> {
        if mode_matrix.ncols() != eigenvalues.len() {
            return Err(ModalError::Corrupt(format!(
                "mode matrix has {} columns but {} eigenvalues",
                mode_matrix.ncols(),
                eigenvalues.len()
            )));
        }
        if mode_matrix.nrows() % 3 != 0 {
            return Err(ModalError::Corrupt(
                "mode matrix rows not divisible by 3".into(),
            ));
        }
        if eigenvalues.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(ModalError::Corrupt(
                "eigenvalues must be finite and positive".into(),
            ));
        }
        let natural_freqs = eigenvalues.iter().map(|l| l.sqrt() / TWO_PI).collect();
        Ok(Self {
            eigenvalues,
            mode_matrix,
            natural_freqs,
            material,
            mesh_hash,
            f_floor,
            f_ceil,
        })
    }

    /// Retained mode count r.
    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dof(&self) -> usize {
        self.mode_matrix.nrows()
    }

    pub fn vertex_count(&self) -> usize {
        self.mode_matrix.nrows() / 3
    }

    /// The 3×r sub-block of U at `vertex`.
    pub fn vertex_block(&self, vertex: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.mode_matrix
            .view((3 * vertex, 0), (3, self.mode_count()))
    }

    /// Per-mode scalar gains at a vertex along a direction:
    /// gain_i = dᵀ·U_v[:, i].
    pub fn direction_gains(&self, vertex: usize, direction: &nalgebra::Vector3<f64>) -> Vec<f64> {
        let block = self.vertex_block(vertex);
        (0..self.mode_count())
            .map(|i| {
                direction.x * block[(0, i)]
                    + direction.y * block[(1, i)]
                    + direction.z * block[(2, i)]
            })
            .collect()
    }
}

/// Which path produced the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    Dense,
    ShiftInvert,
}

/// Numeric by-products of a modal analysis, for logging and verification.
#[derive(Debug, Clone)]
pub struct ModalDiagnostics {
    /// Spectrum before band filtering: the full spectrum on the dense path,
    /// all converged Ritz values on the iterative path. Ascending.
    pub raw_eigenvalues: Vec<f64>,
    /// Count of raw eigenvalues with |λ| < 1e-4·λ₇ (the rigid-body modes of
    /// a free mesh).
    pub rigid_modes: usize,
    /// Modes discarded below the floor (including rigid ones) / above the
    /// ceiling / by the r_max budget.
    pub dropped_low: usize,
    pub dropped_high: usize,
    pub truncated: usize,
    /// Diagonal regularization added to M on the iterative path (0 = none).
    pub regularization: f64,
    pub solver: SolverPath,
    /// Krylov dimension used (0 on the dense path).
    pub krylov_dim: usize,
}

#[derive(Debug)]
pub struct ModalSolution {
    pub model: ModalModel,
    pub diagnostics: ModalDiagnostics,
}

/// Solve the generalized eigenproblem of (K, M), keep modes whose natural
/// frequency lies in [f_floor, f_ceil] (at most r_max of them), and package
/// the mass-normalized modal model.
pub fn modal_analysis(
    sys: &SystemMatrices,
    mat: &MaterialParams,
    opts: &ModalOptions,
) -> Result<ModalSolution, ModalError> {
    opts.validate()?;
    let ndof = sys.dof();
    let use_dense = match opts.solver {
        SolverChoice::Dense => true,
        SolverChoice::ShiftInvert => false,
        SolverChoice::Auto => ndof <= opts.dense_threshold,
    };

    let lambda_ceil = (TWO_PI * opts.f_ceil).powi(2);

    let (raw, candidates, regularization, krylov_dim) = if use_dense {
        let (vals, vecs) = dense_generalized(sys)?;
        let pairs: Vec<(f64, DVector<f64>)> = vals
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, vecs.column(i).into_owned()))
            .collect();
        (vals, pairs, 0.0, 0)
    } else {
        shift_invert_lanczos(sys, opts, lambda_ceil)?
    };

    // Band filter. Only strictly positive eigenvalues can carry a natural
    // frequency, so rigid modes are always dropped here.
    let mut dropped_low = 0usize;
    let mut dropped_high = 0usize;
    let mut kept: Vec<&(f64, DVector<f64>)> = Vec::new();
    for pair in &candidates {
        let l = pair.0;
        let f = if l > 0.0 { l.sqrt() / TWO_PI } else { 0.0 };
        if l <= 0.0 || f < opts.f_floor {
            dropped_low += 1;
        } else if f > opts.f_ceil {
            dropped_high += 1;
        } else {
            kept.push(pair);
        }
    }
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    let truncated = kept.len().saturating_sub(opts.r_max);
    kept.truncate(opts.r_max);
    if kept.is_empty() {
        return Err(ModalError::EmptyBand {
            f_floor: opts.f_floor,
            f_ceil: opts.f_ceil,
        });
    }

    let mut x = DMatrix::zeros(ndof, kept.len());
    for (c, (_, v)) in kept.iter().enumerate() {
        x.set_column(c, v);
    }
    let (mut eigenvalues, mut u) = rayleigh_ritz_refine(x, &sys.k, &sys.m)?;

    // Refinement can nudge boundary eigenvalues; re-apply the band strictly.
    let in_band: Vec<usize> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| {
            l > 0.0 && {
                let f = l.sqrt() / TWO_PI;
                f >= opts.f_floor && f <= opts.f_ceil
            }
        })
        .map(|(i, _)| i)
        .collect();
    if in_band.is_empty() {
        return Err(ModalError::EmptyBand {
            f_floor: opts.f_floor,
            f_ceil: opts.f_ceil,
        });
    }
    if in_band.len() != eigenvalues.len() {
        let mut u2 = DMatrix::zeros(ndof, in_band.len());
        for (c, &i) in in_band.iter().enumerate() {
            u2.set_column(c, &u.column(i));
        }
        eigenvalues = in_band.iter().map(|&i| eigenvalues[i]).collect();
        u = u2;
    }

    apply_sign_convention(&mut u);

    let rigid_modes = if raw.len() >= 7 {
        let lambda7 = raw[6];
        raw.iter().filter(|l| l.abs() < 1e-4 * lambda7).count()
    } else {
        0
    };

    let model = ModalModel::from_raw(
        eigenvalues,
        u,
        *mat,
        sys.mesh_hash,
        opts.f_floor,
        opts.f_ceil,
    )?;
    log::info!(
        "modal analysis: {} modes in [{} Hz, {} Hz] ({} below, {} above, {} truncated), {:?} path",
        model.mode_count(),
        opts.f_floor,
        opts.f_ceil,
        dropped_low,
        dropped_high,
        truncated,
        if use_dense {
            SolverPath::Dense
        } else {
            SolverPath::ShiftInvert
        },
    );
    Ok(ModalSolution {
        model,
        diagnostics: ModalDiagnostics {
            raw_eigenvalues: raw,
            rigid_modes,
            dropped_low,
            dropped_high,
            truncated,
            regularization,
            solver: if use_dense {
                SolverPath::Dense
            } else {
                SolverPath::ShiftInvert
            },
            krylov_dim,
        },
    })
}

/// Dense path: Cholesky-reduce (K, M) to a standard symmetric problem.
/// Returns the full spectrum (ascending) and matching M-orthonormal vectors.
fn dense_generalized(sys: &SystemMatrices) -> Result<(Vec<f64>, DMatrix<f64>), ModalError> {
    let kd = to_dense(&sys.k);
    let md = to_dense(&sys.m);
    let chol = md.cholesky().ok_or(ModalError::NearSingularMass)?;
    let l = chol.l();
    // A = L⁻¹ K L⁻ᵀ, symmetrized against round-off.
    let b = l
        .solve_lower_triangular(&kd)
        .ok_or(ModalError::NearSingularMass)?;
    let a = l
        .solve_lower_triangular(&b.transpose())
        .ok_or(ModalError::NearSingularMass)?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();

    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut y = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        y.set_column(c, &eig.eigenvectors.column(i));
    }
    let lt = l.transpose();
    let x = lt
        .solve_upper_triangular(&y)
        .ok_or(ModalError::NearSingularMass)?;
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((vals, x))
}

/// Shift-invert Lanczos in the M-inner product with full
/// reorthogonalization. The shift sits below zero so the factored matrix
/// K − σM is positive definite; eigenvalues converge from the bottom of the
/// spectrum upward, which is exactly the band order we retain.
///
/// Returns (converged raw spectrum, converged pairs, regularization, m).
#[allow(clippy::type_complexity)]
fn shift_invert_lanczos(
    sys: &SystemMatrices,
    opts: &ModalOptions,
    lambda_ceil: f64,
) -> Result<(Vec<f64>, Vec<(f64, DVector<f64>)>, f64, usize), ModalError> {
    let ndof = sys.dof();
    let m_trace: f64 = sys
        .m
        .triplet_iter()
        .filter_map(|(i, j, v)| (i == j).then_some(*v))
        .sum();
    let eps = 1e-12 * m_trace / ndof as f64;
    log::info!("shift-invert: regularizing M with {eps:.3e}·I");

    let sigma = -(TWO_PI * opts.f_floor.max(20.0)).powi(2);
    let mut shifted = to_dense(&sys.k);
    for (i, j, v) in sys.m.triplet_iter() {
        shifted[(i, j)] -= sigma * v;
    }
    for i in 0..ndof {
        shifted[(i, i)] -= sigma * eps;
    }
    let chol = shifted
        .cholesky()
        .ok_or_else(|| ModalError::NonConvergence("shifted matrix K − σM not SPD".into()))?;

    let m_mul = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = spmv(&sys.m, v);
        out.axpy(eps, v, 1.0);
        out
    };

    let k_norm = inf_norm(&sys.k);
    let m_norm = inf_norm(&sys.m);
    let r_want = opts.r_max.min(ndof);
    let m_cap = ndof.min((4 * r_want + 96).max(160));
    let mut checkpoints: Vec<usize> = Vec::new();
    let mut c = ndof.min((2 * r_want + 48).max(96)).min(m_cap);
    loop {
        checkpoints.push(c);
        if c == m_cap {
            break;
        }
        c = (c * 2).min(m_cap);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xAC005EED ^ ndof as u64);
    let draw =
        |rng: &mut ChaCha8Rng| DVector::from_fn(ndof, |_, _| rng.gen::<f64>() - 0.5);

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m_cap);
    let mut m_basis: Vec<DVector<f64>> = Vec::with_capacity(m_cap); // M'·vᵢ cache
    let mut alphas: Vec<f64> = Vec::with_capacity(m_cap);
    let mut betas: Vec<f64> = Vec::with_capacity(m_cap);

    let mut v = draw(&mut rng);
    let mv = m_mul(&v);
    let norm = v.dot(&mv).sqrt();
    if !(norm > 0.0) {
        return Err(ModalError::NonConvergence("degenerate start vector".into()));
    }
    v /= norm;

    let mut result: Option<Vec<(f64, DVector<f64>)>> = None;
    'grow: for (ci, &target) in checkpoints.iter().enumerate() {
        while basis.len() < target {
            let j = basis.len();
            let mvj = m_mul(&v);
            basis.push(v.clone());
            m_basis.push(mvj.clone());

            let mut w = chol.solve(&mvj);
            let alpha = w.dot(&mvj);
            alphas.push(alpha);
            w.axpy(-alpha, &basis[j], 1.0);
            if j > 0 && betas[j - 1] > 0.0 {
                let beta_prev = betas[j - 1];
                w.axpy(-beta_prev, &basis[j - 1], 1.0);
            }
            // two passes of full M-orthogonalization for numerical hygiene
            for _ in 0..2 {
                for (vi, mvi) in basis.iter().zip(&m_basis) {
                    let c = w.dot(mvi);
                    w.axpy(-c, vi, 1.0);
                }
            }

            let mw = m_mul(&w);
            let beta = w.dot(&mw).sqrt();
            if beta > 1e-13 {
                betas.push(beta);
                v = w / beta;
            } else {
                // invariant subspace found: deflate, restart fresh
                betas.push(0.0);
                let mut fresh = draw(&mut rng);
                for _ in 0..2 {
                    for (vi, mvi) in basis.iter().zip(&m_basis) {
                        let c = fresh.dot(mvi);
                        fresh.axpy(-c, vi, 1.0);
                    }
                }
                let mf = m_mul(&fresh);
                let fnorm = fresh.dot(&mf).sqrt();
                if fnorm < 1e-13 {
                    break; // basis spans the whole space
                }
                v = fresh / fnorm;
            }
        }

        let m_dim = basis.len();
        let mut t = DMatrix::zeros(m_dim, m_dim);
        for i in 0..m_dim {
            t[(i, i)] = alphas[i];
            if i + 1 < m_dim {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let teig = t.symmetric_eigen();
        let mut order: Vec<usize> = (0..m_dim).collect();
        // largest θ first = eigenvalues nearest the shift = lowest λ
        order.sort_by(|&a, &b| teig.eigenvalues[b].total_cmp(&teig.eigenvalues[a]));

        let mut converged: Vec<(f64, DVector<f64>)> = Vec::new();
        let mut all_below_converged = true;
        let mut saw_beyond_ceiling = false;
        for &i in &order {
            let theta = teig.eigenvalues[i];
            if theta <= 0.0 {
                break; // junk tail of the transformed spectrum
            }
            let lambda = sigma + 1.0 / theta;
            let s = teig.eigenvectors.column(i);
            let mut x = DVector::zeros(ndof);
            for (k, vk) in basis.iter().enumerate() {
                x.axpy(s[k], vk, 1.0);
            }
            let xn = x.norm();
            if xn == 0.0 {
                continue;
            }
            let resid = (spmv(&sys.k, &x) - spmv(&sys.m, &x) * lambda).norm();
            let ok = resid <= CONVERGENCE_TOL * (k_norm + lambda.abs() * m_norm) * xn;
            if ok {
                converged.push((lambda, x));
            } else if lambda <= lambda_ceil {
                all_below_converged = false;
            }
            if lambda > lambda_ceil {
                saw_beyond_ceiling = ok;
                break; // candidates come in ascending λ; one beyond suffices
            }
            if converged.len() >= r_want + 8 {
                break;
            }
        }

        let in_band = converged
            .iter()
            .filter(|(l, _)| *l > 0.0 && *l <= lambda_ceil)
            .count();
        let complete = (all_below_converged && saw_beyond_ceiling)
            || in_band >= r_want
            || m_dim >= ndof;
        if complete || ci == checkpoints.len() - 1 {
            if !complete {
                return Err(ModalError::NonConvergence(format!(
                    "Krylov dimension {m_dim} exhausted with only {in_band} converged in-band modes"
                )));
            }
            converged.sort_by(|a, b| a.0.total_cmp(&b.0));
            result = Some(converged);
            break 'grow;
        }
    }

    let converged =
        result.ok_or_else(|| ModalError::NonConvergence("no checkpoints run".into()))?;
    let raw: Vec<f64> = converged.iter().map(|(l, _)| *l).collect();
    let krylov = basis.len();
    Ok((raw, converged, eps, krylov))
}

/// Rayleigh-Ritz refinement of a trial subspace against the exact K and M:
/// M-orthonormalize, then re-diagonalize K, so UᵀMU = I and UᵀKU = Λ hold
/// to machine precision in the retained subspace.
fn rayleigh_ritz_refine(
    x: DMatrix<f64>,
    k: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), ModalError> {
    let mx = spmm_dense(m, &x);
    let b = x.transpose() * &mx;
    let b = (&b + b.transpose()) * 0.5;
    let chol = b.cholesky().ok_or_else(|| {
        ModalError::NonConvergence("retained modes are numerically dependent".into())
    })?;
    // X' = X·L⁻ᵀ  ⇒  X'ᵀ M X' = I
    let xt = chol
        .l()
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| ModalError::NonConvergence("singular Gram factor".into()))?;
    let x = xt.transpose();

    let kx = spmm_dense(k, &x);
    let s = x.transpose() * &kx;
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let r = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut q = DMatrix::zeros(r, r);
    for (c, &i) in order.iter().enumerate() {
        q.set_column(c, &eig.eigenvectors.column(i));
    }
    let u = x * q;
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((vals, u))
}

/// Y = A·X for sparse A and dense X.
fn spmm_dense(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for (i, row) in a.row_iter().enumerate() {
        for (&col, &val) in row.col_indices().iter().zip(row.values()) {
            for c in 0..x.ncols() {
                y[(i, c)] += val * x[(col, c)];
            }
        }
    }
    y
}

/// Fix each column's sign so its largest-magnitude entry is positive
/// (first such entry on ties), making U deterministic across runs.
pub fn apply_sign_convention(u: &mut DMatrix<f64>) {
    for c in 0..u.ncols() {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        for r in 0..u.nrows() {
            let a = u[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if u[(best, c)] < 0.0 {
            for r in 0..u.nrows() {
                u[(r, c)] = -u[(r, c)];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence: binary .modal files
// ---------------------------------------------------------------------------

const MODAL_MAGIC: &[u8; 8] = b"ACSMODL\0";
const MODAL_VERSION: u32 = 1;

/// Serialize a modal model. Layout (all little-endian):
/// magic(8) version(u32) n(u64) r(u64) mesh_hash(32) material(7×f64)
/// band(2×f64) Λ(r×f64) U(3n·r×f64, column-major).
pub fn save_modal_model(model: &ModalModel, path: &Path) -> Result<(), ModalError> {
    let io_err = |source| ModalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf: Vec<u8> = Vec::with_capacity(128 + 8 * model.dof() * model.mode_count());
    buf.extend_from_slice(MODAL_MAGIC);
    buf.extend_from_slice(&MODAL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.vertex_count() as u64).to_le_bytes());
    buf.extend_from_slice(&(model.mode_count() as u64).to_le_bytes());
    buf.extend_from_slice(&model.mesh_hash);
    let mat = &model.material;
    for v in [
        mat.density,
        mat.youngs_modulus,
        mat.poissons_ratio,
        mat.alpha,
        mat.beta,
        mat.gamma,
        mat.friction,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&model.f_floor.to_le_bytes());
    buf.extend_from_slice(&model.f_ceil.to_le_bytes());
    for l in &model.eigenvalues {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for c in 0..model.mode_count() {
        for r in 0..model.dof() {
            buf.extend_from_slice(&model.mode_matrix[(r, c)].to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModalError> {
        if self.pos + n > self.data.len() {
            return Err(ModalError::Truncated {
                path: self.path.to_path_buf(),
                needed: self.pos + n,
                available: self.data.len(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, ModalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ModalError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ModalError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a modal model; no partial model is ever returned.
pub fn load_modal_model(path: &Path) -> Result<ModalModel, ModalError> {
    let data = {
        let mut f = std::fs::File::open(path).map_err(|source| ModalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut v = Vec::new();
        f.read_to_end(&mut v).map_err(|source| ModalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        v
    };
    let mut cur = Cursor {
        data: &data,
        pos: 0,
        path,
    };
    if cur.take(8)? != MODAL_MAGIC {
        return Err(ModalError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = cur.u32()?;
    if version != MODAL_VERSION {
        return Err(ModalError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: MODAL_VERSION,
        });
    }
    let n = cur.u64()? as usize;
    let r = cur.u64()? as usize;
    let mesh_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let material = MaterialParams {
        density: cur.f64()?,
        youngs_modulus: cur.f64()?,
        poissons_ratio: cur.f64()?,
        alpha: cur.f64()?,
        beta: cur.f64()?,
        gamma: cur.f64()?,
        friction: cur.f64()?,
    };
    let f_floor = cur.f64()?;
    let f_ceil = cur.f64()?;
    if n == 0 || r == 0 || r > 3 * n {
        return Err(ModalError::Corrupt(format!(
            "implausible sizes n={n}, r={r}"
        )));
    }
    let mut eigenvalues = Vec::with_capacity(r);
    for _ in 0..r {
        eigenvalues.push(cur.f64()?);
    }
    let mut u = DMatrix::zeros(3 * n, r);
    for c in 0..r {
        for row in 0..3 * n {
            u[(row, c)] = cur.f64()?;
        }
    }
    ModalModel::from_raw(eigenvalues, u, material, mesh_hash, f_floor, f_ceil)
}

/// Load and verify the model was computed for `mesh`.
pub fn load_modal_model_checked(path: &Path, mesh: &TetMesh) -> Result<ModalModel, ModalError> {
    let model = load_modal_model(path)?;
    if model.mesh_hash != mesh.content_hash() {
        return Err(ModalError::MeshHashMismatch);
    }
    Ok(model)
}
