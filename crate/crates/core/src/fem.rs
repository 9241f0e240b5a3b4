//! Global stiffness and mass assembly for linear elastic (constant-strain)
//! tetrahedra with isotropic homogeneous material.
//!
//! No boundary conditions are imposed: the object is free-floating, so K is
//! positive semi-definite with a six-dimensional rigid-body nullspace and
//! constraints enter the dynamics only through damping.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Point3, SMatrix};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

use crate::mesh::{TetMesh, DEGENERATE_VOLUME_M3};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("element {element} is degenerate: |volume| = {volume:.3e} m³")]
    DegenerateElement { element: usize, volume: f64 },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Isotropic material with Rayleigh and contact damping coefficients.
///
/// `alpha` (1/s) and `beta` (s) are the mass/stiffness damping coefficients
/// of C = αM + βK; `gamma` scales the viscous contact damping. `friction`
/// is the contact friction coefficient μ used by the contact damping model;
/// it is a per-scenario value, not a tabulated one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    /// Density ρ, kg/m³.
    pub density: f64,
    /// Young's modulus E, Pa.
    pub youngs_modulus: f64,
    /// Poisson's ratio ν.
    pub poissons_ratio: f64,
    /// Mass damping coefficient α, 1/s.
    pub alpha: f64,
    /// Stiffness damping coefficient β, s.
    pub beta: f64,
    /// Contact damping scale γ.
    pub gamma: f64,
    /// Contact friction coefficient μ in [0, 1].
    pub friction: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), FemError> {
        let e = |msg: String| Err(FemError::InvalidMaterial(msg));
        if !(self.density > 0.0) {
            return e(format!("density must be > 0 (got {})", self.density));
        }
        if !(self.youngs_modulus > 0.0) {
            return e(format!(
                "Young's modulus must be > 0 (got {})",
                self.youngs_modulus
            ));
        }
        if !(self.poissons_ratio > -1.0 && self.poissons_ratio < 0.5) {
            return e(format!(
                "Poisson's ratio must be in (-1, 0.5) (got {})",
                self.poissons_ratio
            ));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return e("damping coefficients must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.friction) {
            return e(format!("friction must be in [0, 1] (got {})", self.friction));
        }
        Ok(())
    }

    pub fn abs_plastic() -> Self {
        Self {
            density: 1100.0,
            youngs_modulus: 2.6e9,
            poissons_ratio: 0.36,
            alpha: 4.0,
            beta: 3e-7,
            gamma: 4e-2,
            friction: 0.3,
        }
    }

    pub fn aluminium() -> Self {
        Self {
            density: 2700.0,
            youngs_modulus: 6.9e10,
            poissons_ratio: 0.33,
            alpha: 0.0,
            beta: 5e-7,
            gamma: 2e-1,
            friction: 0.3,
        }
    }

    pub fn steel() -> Self {
        Self {
            density: 7850.0,
            youngs_modulus: 2e11,
            poissons_ratio: 0.29,
            alpha: 5.0,
            beta: 3e-8,
            gamma: 3e-1,
            friction: 0.3,
        }
    }

    pub fn wood() -> Self {
        Self {
            density: 750.0,
            youngs_modulus: 1.1e10,
            poissons_ratio: 0.25,
            alpha: 60.0,
            beta: 4e-6,
            gamma: 5e-2,
            friction: 0.3,
        }
    }

    /// Look up a named preset (case-insensitive).
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "abs" | "abs_plastic" | "abs-plastic" => Some(Self::abs_plastic()),
            "aluminium" | "aluminum" => Some(Self::aluminium()),
            "steel" => Some(Self::steel()),
            "wood" => Some(Self::wood()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["abs", "aluminium", "steel", "wood"]
    }
}

/// Assembled global matrices of the free-floating object.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    /// Stiffness, N/m, symmetric PSD, 3n×3n.
    pub k: CsrMatrix<f64>,
    /// Mass, kg, symmetric PD, 3n×3n.
    pub m: CsrMatrix<f64>,
    /// Vertex count n.
    pub vertex_count: usize,
    /// Content hash of the source mesh.
    pub mesh_hash: [u8; 32],
}

impl SystemMatrices {
    pub fn dof(&self) -> usize {
        3 * self.vertex_count
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions {
    /// Row-sum lumped mass instead of the consistent mass matrix.
    pub lumped_mass: bool,
}

/// 6×6 isotropic elasticity matrix in Voigt order
/// (εxx, εyy, εzz, γxy, γyz, γzx).
pub fn elasticity_matrix(youngs_modulus: f64, poissons_ratio: f64) -> SMatrix<f64, 6, 6> {
    let e = youngs_modulus;
    let nu = poissons_ratio;
    let factor = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mut d = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = factor * if i == j { 1.0 - nu } else { nu };
        }
    }
    let shear = factor * (1.0 - 2.0 * nu) / 2.0;
    for i in 3..6 {
        d[(i, i)] = shear;
    }
    d
}

/// Constant shape-function gradients of a linear tet, one row per node,
/// plus the signed volume.
fn tet_gradients(p: &[Point3<f64>; 4]) -> (SMatrix<f64, 4, 3>, f64) {
    let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let det = j.determinant();
    let volume = det / 6.0;
    let j_inv_t = j
        .try_inverse()
        .map(|inv| inv.transpose())
        .unwrap_or_else(Matrix3::zeros);
    let mut g = SMatrix::<f64, 4, 3>::zeros();
    for node in 1..4 {
        for d in 0..3 {
            g[(node, d)] = j_inv_t[(d, node - 1)];
        }
    }
    for d in 0..3 {
        g[(0, d)] = -(g[(1, d)] + g[(2, d)] + g[(3, d)]);
    }
    (g, volume)
}

/// 12×12 element stiffness K_e = V·BᵀDB of a linear tetrahedron.
pub fn element_stiffness(p: &[Point3<f64>; 4], mat: &MaterialParams) -> SMatrix<f64, 12, 12> {
    let (g, volume) = tet_gradients(p);
    let d = elasticity_matrix(mat.youngs_modulus, mat.poissons_ratio);
    let mut b = SMatrix::<f64, 6, 12>::zeros();
    for node in 0..4 {
        let (bx, by, bz) = (g[(node, 0)], g[(node, 1)], g[(node, 2)]);
        let c = 3 * node;
        b[(0, c)] = bx;
        b[(1, c + 1)] = by;
        b[(2, c + 2)] = bz;
        b[(3, c)] = by;
        b[(3, c + 1)] = bx;
        b[(4, c + 1)] = bz;
        b[(4, c + 2)] = by;
        b[(5, c)] = bz;
        b[(5, c + 2)] = bx;
    }
    let ke = b.transpose() * d * b * volume.abs();
    (ke + ke.transpose()) * 0.5
}

/// 12×12 consistent element mass ρV/20·(2 on node diagonal, 1 off).
pub fn element_mass_consistent(volume: f64, density: f64) -> SMatrix<f64, 12, 12> {
    let c = density * volume.abs() / 20.0;
    let mut me = SMatrix::<f64, 12, 12>::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let v = if a == b { 2.0 * c } else { c };
            for d in 0..3 {
                me[(3 * a + d, 3 * b + d)] = v;
            }
        }
    }
    me
}

/// Assemble global K and M for `mesh` with `mat` under default options.
pub fn assemble(mesh: &TetMesh, mat: &MaterialParams) -> Result<SystemMatrices, FemError> {
    assemble_with(mesh, mat, AssemblyOptions::default())
}

pub fn assemble_with(
    mesh: &TetMesh,
    mat: &MaterialParams,
    opts: AssemblyOptions,
) -> Result<SystemMatrices, FemError> {
    mat.validate()?;
    let n = mesh.vertex_count();
    let ndof = 3 * n;
    let mut k_coo = CooMatrix::new(ndof, ndof);
    let mut m_coo = CooMatrix::new(ndof, ndof);

    for (ti, tet) in mesh.tets().iter().enumerate() {
        let p = [
            mesh.vertices()[tet[0]],
            mesh.vertices()[tet[1]],
            mesh.vertices()[tet[2]],
            mesh.vertices()[tet[3]],
        ];
        let volume = crate::mesh::tet_signed_volume(&p[0], &p[1], &p[2], &p[3]);
        if volume.abs() < DEGENERATE_VOLUME_M3 {
            return Err(FemError::DegenerateElement {
                element: ti,
                volume: volume.abs(),
            });
        }
        let ke = element_stiffness(&p, mat);
        let dof: Vec<usize> = tet
            .iter()
            .flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2])
            .collect();
        for i in 0..12 {
            for j in 0..12 {
                let v = ke[(i, j)];
                if v != 0.0 {
                    k_coo.push(dof[i], dof[j], v);
                }
            }
        }
        if opts.lumped_mass {
            let lump = mat.density * volume.abs() / 4.0;
            for &d in &dof {
                m_coo.push(d, d, lump);
            }
        } else {
            let me = element_mass_consistent(volume, mat.density);
            for i in 0..12 {
                for j in 0..12 {
                    let v = me[(i, j)];
                    if v != 0.0 {
                        m_coo.push(dof[i], dof[j], v);
                    }
                }
            }
        }
    }

    Ok(SystemMatrices {
        k: CsrMatrix::from(&k_coo),
        m: CsrMatrix::from(&m_coo),
        vertex_count: n,
        mesh_hash: mesh.content_hash(),
    })
}

/// Rayleigh damping C = αM + βK as a sparse matrix.
pub fn rayleigh_damping(sys: &SystemMatrices, mat: &MaterialParams) -> CsrMatrix<f64> {
    let ndof = sys.dof();
    let mut coo = CooMatrix::new(ndof, ndof);
    if mat.alpha != 0.0 {
        for (i, j, v) in sys.m.triplet_iter() {
            coo.push(i, j, mat.alpha * v);
        }
    }
    if mat.beta != 0.0 {
        for (i, j, v) in sys.k.triplet_iter() {
            coo.push(i, j, mat.beta * v);
        }
    }
    CsrMatrix::from(&coo)
}

/// y = A·x for CSR A.
pub fn spmv(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut sum = 0.0;
        for (&col, &val) in row.col_indices().iter().zip(row.values()) {
            sum += val * x[col];
        }
        y[i] = sum;
    }
    y
}

/// Dense copy of a sparse matrix.
pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += v;
    }
    d
}

/// Infinity norm (max absolute row sum).
pub fn inf_norm(a: &CsrMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest relative symmetry deviation |a_ij − a_ji| / max|a|.
pub fn symmetry_deviation(a: &CsrMatrix<f64>) -> f64 {
    let d = to_dense(a);
    let scale = d.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..d.nrows() {
        for j in (i + 1)..d.ncols() {
            worst = worst.max((d[(i, j)] - d[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Dump a sparse matrix in Matrix Market coordinate format (1-based,
/// general symmetry) for external verification.
pub fn write_matrix_market(a: &CsrMatrix<f64>, path: &Path) -> Result<(), FemError> {
    let io_err = |source| FemError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    writeln!(f, "%%MatrixMarket matrix coordinate real general").map_err(io_err)?;
    writeln!(f, "{} {} {}", a.nrows(), a.ncols(), a.nnz()).map_err(io_err)?;
    for (i, j, v) in a.triplet_iter() {
        writeln!(f, "{} {} {}", i + 1, j + 1, v).map_err(io_err)?;
    }
    Ok(())
}
