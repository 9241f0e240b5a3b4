//! Tetrahedral mesh representation, .node/.ele and Gmsh ASCII ingestion,
//! and parametric bar/tube primitives for the experiment objects.
//!
//! Coordinates are meters internally. Files may declare a unit scale in a
//! `# scale <s>` header comment; loaders multiply coordinates by it.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Elements with |signed volume| below this (m³) are rejected as degenerate.
pub const DEGENERATE_VOLUME_M3: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("tet {tet} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        tet: usize,
        index: usize,
        count: usize,
    },
    #[error("tet {tet} repeats a vertex index: {indices:?}")]
    RepeatedIndex { tet: usize, indices: [usize; 4] },
    #[error("tet {tet} is degenerate: |volume| = {volume:.3e} m³ < {min:.0e} m³")]
    DegenerateTet { tet: usize, volume: f64, min: f64 },
    #[error("mesh is not a single connected component ({components} components)")]
    Disconnected { components: usize },
    #[error("mesh has no tetrahedra")]
    Empty,
    #[error("invalid primitive parameters: {0}")]
    InvalidParameter(String),
}

/// Mesh file formats understood by [`load_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// TetGen-style `.node`/`.ele` ASCII pair (native format).
    NodeEle,
    /// Gmsh ASCII v2.2 `.msh`.
    MshAscii,
}

impl fmt::Display for MeshFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshFormat::NodeEle => write!(f, "node-ele"),
            MeshFormat::MshAscii => write!(f, "msh-ascii"),
        }
    }
}

/// An immutable tetrahedral mesh in meters.
///
/// Invariants established at construction:
/// - every tet index is in range and the four indices are distinct,
/// - every tet has strictly positive signed volume (orientation is
///   canonicalized by swapping two indices where needed),
/// - the mesh is a single connected component and every vertex is used.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    vertices: Vec<Point3<f64>>,
    tets: Vec<[usize; 4]>,
}

/// Signed volume of the tetrahedron (a, b, c, d).
pub fn tet_signed_volume(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, d: &Point3<f64>) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

impl TetMesh {
    /// Validate, canonically orient, and wrap raw vertex/tet data.
    pub fn new(vertices: Vec<Point3<f64>>, mut tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        if tets.is_empty() {
            return Err(MeshError::Empty);
        }
        let n = vertices.len();
        for (ti, tet) in tets.iter_mut().enumerate() {
            for &idx in tet.iter() {
                if idx >= n {
                    return Err(MeshError::IndexOutOfRange {
                        tet: ti,
                        index: idx,
                        count: n,
                    });
                }
            }
            for i in 0..4 {
                for j in (i + 1)..4 {
                    if tet[i] == tet[j] {
                        return Err(MeshError::RepeatedIndex {
                            tet: ti,
                            indices: *tet,
                        });
                    }
                }
            }
            let vol = tet_signed_volume(
                &vertices[tet[0]],
                &vertices[tet[1]],
                &vertices[tet[2]],
                &vertices[tet[3]],
            );
            if vol < 0.0 {
                tet.swap(2, 3);
            }
            if vol.abs() < DEGENERATE_VOLUME_M3 {
                return Err(MeshError::DegenerateTet {
                    tet: ti,
                    volume: vol.abs(),
                    min: DEGENERATE_VOLUME_M3,
                });
            }
        }

        // Union-find over vertices; unused vertices count as their own
        // component, so they are rejected here too (they would make the
        // mass matrix singular downstream).
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut used = vec![false; n];
        for tet in &tets {
            for &v in tet {
                used[v] = true;
            }
            for k in 1..4 {
                let a = find(&mut parent, tet[0]);
                let b = find(&mut parent, tet[k]);
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut roots: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() != 1 || used.iter().any(|&u| !u) {
            return Err(MeshError::Disconnected {
                components: roots.len(),
            });
        }

        Ok(Self { vertices, tets })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    /// Degrees of freedom of the FEM system built on this mesh (3 per vertex).
    pub fn dof(&self) -> usize {
        3 * self.vertices.len()
    }

    pub fn tet_volume(&self, ti: usize) -> f64 {
        let t = self.tets[ti];
        tet_signed_volume(
            &self.vertices[t[0]],
            &self.vertices[t[1]],
            &self.vertices[t[2]],
            &self.vertices[t[3]],
        )
    }

    /// Sum of all (positive) tet volumes, m³.
    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|i| self.tet_volume(i)).sum()
    }

    /// Axis-aligned bounding box (min, max corners).
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Index of the vertex nearest `point` in Euclidean distance.
    /// Ties break to the lowest index.
    pub fn nearest_vertex(&self, point: &Point3<f64>) -> usize {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let d2 = (v - point).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    /// SHA-256 over the exact vertex/tet data; identifies the mesh in
    /// persisted modal models and run metadata.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"TETMESH\0");
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for k in 0..3 {
                h.update(v[k].to_le_bytes());
            }
        }
        h.update((self.tets.len() as u64).to_le_bytes());
        for t in &self.tets {
            for &idx in t {
                h.update((idx as u64).to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Euler characteristic V − E + F of the boundary surface (faces that
    /// belong to exactly one tet). 2 for a sphere-like solid, 0 for a torus.
    pub fn surface_euler_characteristic(&self) -> i64 {
        use std::collections::HashMap;
        let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
        for t in &self.tets {
            for f in [
                [t[0], t[1], t[2]],
                [t[0], t[1], t[3]],
                [t[0], t[2], t[3]],
                [t[1], t[2], t[3]],
            ] {
                let mut f = f;
                f.sort_unstable();
                *face_count.entry(f).or_insert(0) += 1;
            }
        }
        let boundary: Vec<[usize; 3]> = face_count
            .into_iter()
            .filter_map(|(f, c)| (c == 1).then_some(f))
            .collect();
        let mut verts: Vec<usize> = boundary.iter().flatten().copied().collect();
        verts.sort_unstable();
        verts.dedup();
        let mut edges: Vec<[usize; 2]> = boundary
            .iter()
            .flat_map(|f| [[f[0], f[1]], [f[0], f[2]], [f[1], f[2]]])
            .collect();
        edges.sort_unstable();
        edges.dedup();
        verts.len() as i64 - edges.len() as i64 + boundary.len() as i64
    }
}

// The six-tet (Kuhn) subdivision of a hexahedral cell. Every simplex
// contains the main diagonal c000→c111, so face diagonals agree between
// neighboring cells and the subdivision is conforming, including across
// the circumferential seam of the tube.
const KUHN_TETS: [[usize; 4]; 6] = [
    // corner order: c000 c100 c010 c110 c001 c101 c011 c111
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Structured bar: `divisions` hexahedral cells per axis, 6 tets per cell,
/// centered on the origin with the length along +x.
///
/// Vertex count is Π(div+1), tet count 6·Πdiv.
pub fn generate_bar(
    length: f64,
    width: f64,
    height: f64,
    divisions: [usize; 3],
) -> Result<TetMesh, MeshError> {
    if length <= 0.0 || width <= 0.0 || height <= 0.0 {
        return Err(MeshError::InvalidParameter(format!(
            "bar dimensions must be positive (got {length} x {width} x {height})"
        )));
    }
    if divisions.iter().any(|&d| d == 0) {
        return Err(MeshError::InvalidParameter(format!(
            "bar divisions must all be >= 1 (got {divisions:?})"
        )));
    }
    let [nx, ny, nz] = divisions;
    let (dx, dy, dz) = (length / nx as f64, width / ny as f64, height / nz as f64);
    let idx = |i: usize, j: usize, k: usize| i * (ny + 1) * (nz + 1) + j * (nz + 1) + k;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                vertices.push(Point3::new(
                    i as f64 * dx - length / 2.0,
                    j as f64 * dy - width / 2.0,
                    k as f64 * dz - height / 2.0,
                ));
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let c = [
                    idx(i, j, k),
                    idx(i + 1, j, k),
                    idx(i, j + 1, k),
                    idx(i + 1, j + 1, k),
                    idx(i, j, k + 1),
                    idx(i + 1, j, k + 1),
                    idx(i, j + 1, k + 1),
                    idx(i + 1, j + 1, k + 1),
                ];
                for kt in KUHN_TETS {
                    tets.push([c[kt[0]], c[kt[1]], c[kt[2]], c[kt[3]]]);
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}

/// Structured annular tube along +x, centered on the origin.
///
/// `divisions` are [axial, radial, circumferential] cell counts; the
/// circumferential count must be at least 3. The cross-section is the
/// annulus between regular polygons inscribed in the inner and outer
/// circles, so the analytic solid volume is
/// `L · n/2 · sin(2π/n) · (R² − r²)`.
pub fn generate_tube(
    length: f64,
    outer_radius: f64,
    inner_radius: f64,
    divisions: [usize; 3],
) -> Result<TetMesh, MeshError> {
    if length <= 0.0 {
        return Err(MeshError::InvalidParameter(format!(
            "tube length must be positive (got {length})"
        )));
    }
    if !(0.0 < inner_radius && inner_radius < outer_radius) {
        return Err(MeshError::InvalidParameter(format!(
            "tube radii must satisfy 0 < inner < outer (got inner {inner_radius}, outer {outer_radius})"
        )));
    }
    let [na, nr, nc] = divisions;
    if na == 0 || nr == 0 {
        return Err(MeshError::InvalidParameter(format!(
            "tube axial/radial divisions must be >= 1 (got {divisions:?})"
        )));
    }
    if nc < 3 {
        return Err(MeshError::InvalidParameter(format!(
            "tube circumferential divisions must be >= 3 (got {nc})"
        )));
    }
    let da = length / na as f64;
    let dr = (outer_radius - inner_radius) / nr as f64;
    let dth = 2.0 * std::f64::consts::PI / nc as f64;
    let idx = |i: usize, j: usize, k: usize| i * (nr + 1) * nc + j * nc + (k % nc);

    let mut vertices = Vec::with_capacity((na + 1) * (nr + 1) * nc);
    for i in 0..=na {
        let x = i as f64 * da - length / 2.0;
        for j in 0..=nr {
            let r = inner_radius + j as f64 * dr;
            for k in 0..nc {
                let th = k as f64 * dth;
                vertices.push(Point3::new(x, r * th.cos(), r * th.sin()));
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * na * nr * nc);
    for i in 0..na {
        for j in 0..nr {
            for k in 0..nc {
                let c = [
                    idx(i, j, k),
                    idx(i + 1, j, k),
                    idx(i, j + 1, k),
                    idx(i + 1, j + 1, k),
                    idx(i, j, k + 1),
                    idx(i + 1, j, k + 1),
                    idx(i, j + 1, k + 1),
                    idx(i + 1, j + 1, k + 1),
                ];
                for kt in KUHN_TETS {
                    tets.push([c[kt[0]], c[kt[1]], c[kt[2]], c[kt[3]]]);
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}

/// Analytic volume of the polyhedral solid produced by [`generate_tube`].
pub fn tube_analytic_volume(length: f64, outer_radius: f64, inner_radius: f64, nc: usize) -> f64 {
    let n = nc as f64;
    length * n / 2.0 * (2.0 * std::f64::consts::PI / n).sin()
        * (outer_radius * outer_radius - inner_radius * inner_radius)
}

/// Load a mesh from `path` in the given `format`, applying `scale_override`
/// (if any) instead of the file's unit declaration.
pub fn load_mesh(
    path: &Path,
    format: MeshFormat,
    scale_override: Option<f64>,
) -> Result<TetMesh, MeshError> {
    match format {
        MeshFormat::NodeEle => load_node_ele(path, scale_override),
        MeshFormat::MshAscii => load_msh_ascii(path, scale_override),
    }
}

fn read_to_string(path: &Path) -> Result<String, MeshError> {
    fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Significant lines of a .node/.ele file: comments stripped, blanks
/// skipped; a `# scale <s>` comment is captured as the unit scale.
fn significant_lines(text: &str) -> (Vec<(usize, &str)>, Option<f64>) {
    let mut scale = None;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = match raw.find('#') {
            Some(pos) => {
                let comment = raw[pos + 1..].trim();
                if let Some(rest) = comment.strip_prefix("scale") {
                    if let Ok(s) = rest.trim().parse::<f64>() {
                        scale = Some(s);
                    }
                }
                &raw[..pos]
            }
            None => raw,
        };
        let body = body.trim();
        if !body.is_empty() {
            lines.push((i + 1, body));
        }
    }
    (lines, scale)
}

fn load_node_ele(path: &Path, scale_override: Option<f64>) -> Result<TetMesh, MeshError> {
    let node_path = if path.extension().is_some_and(|e| e == "ele") {
        path.with_extension("node")
    } else if path.extension().is_some_and(|e| e == "node") {
        path.to_path_buf()
    } else {
        path.with_extension("node")
    };
    let ele_path = node_path.with_extension("ele");

    let node_text = read_to_string(&node_path)?;
    let (node_lines, file_scale) = significant_lines(&node_text);
    let scale = scale_override.or(file_scale).unwrap_or(1.0);

    let mut it = node_lines.iter();
    let &(hline, header) = it
        .next()
        .ok_or_else(|| parse_err(&node_path, 1, "empty .node file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let n: usize = head
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(&node_path, hline, "expected node count in header"))?;
    if head.get(1).and_then(|s| s.parse::<usize>().ok()) != Some(3) {
        return Err(parse_err(&node_path, hline, "expected dimension 3"));
    }

    let mut indexed: Vec<(usize, Point3<f64>)> = Vec::with_capacity(n);
    for _ in 0..n {
        let &(lno, line) = it
            .next()
            .ok_or_else(|| parse_err(&node_path, hline, format!("expected {n} node lines")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(parse_err(&node_path, lno, "expected: index x y z"));
        }
        let idx: usize = f[0]
            .parse()
            .map_err(|_| parse_err(&node_path, lno, format!("bad node index '{}'", f[0])))?;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = f[k + 1].parse::<f64>().map_err(|_| {
                parse_err(&node_path, lno, format!("bad coordinate '{}'", f[k + 1]))
            })?;
        }
        indexed.push((idx, Point3::new(c[0] * scale, c[1] * scale, c[2] * scale)));
    }
    // Index base (0 or 1) inferred from the first node, per TetGen convention.
    let base = indexed.first().map_or(0, |&(i, _)| i);
    if base > 1 {
        return Err(parse_err(
            &node_path,
            hline,
            format!("first node index {base}; expected base 0 or 1"),
        ));
    }
    let mut vertices = vec![Point3::origin(); n];
    for (i, p) in indexed {
        let slot = i.checked_sub(base).filter(|&s| s < n).ok_or_else(|| {
            parse_err(&node_path, hline, format!("node index {i} out of range"))
        })?;
        vertices[slot] = p;
    }

    let ele_text = read_to_string(&ele_path)?;
    let (ele_lines, _) = significant_lines(&ele_text);
    let mut it = ele_lines.iter();
    let &(hline, header) = it
        .next()
        .ok_or_else(|| parse_err(&ele_path, 1, "empty .ele file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let m: usize = head
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(&ele_path, hline, "expected tet count in header"))?;
    if head.get(1).and_then(|s| s.parse::<usize>().ok()) != Some(4) {
        return Err(parse_err(&ele_path, hline, "expected 4 nodes per tet"));
    }

    let mut tets = Vec::with_capacity(m);
    for ti in 0..m {
        let &(lno, line) = it
            .next()
            .ok_or_else(|| parse_err(&ele_path, hline, format!("expected {m} tet lines")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 5 {
            return Err(parse_err(&ele_path, lno, "expected: index v0 v1 v2 v3"));
        }
        let mut t = [0usize; 4];
        for k in 0..4 {
            let raw: usize = f[k + 1]
                .parse()
                .map_err(|_| parse_err(&ele_path, lno, format!("bad vertex index '{}'", f[k + 1])))?;
            t[k] = raw.checked_sub(base).ok_or(MeshError::IndexOutOfRange {
                tet: ti,
                index: raw,
                count: n,
            })?;
        }
        tets.push(t);
    }
    TetMesh::new(vertices, tets)
}

fn load_msh_ascii(path: &Path, scale_override: Option<f64>) -> Result<TetMesh, MeshError> {
    let text = read_to_string(path)?;
    let scale = scale_override.unwrap_or(1.0);
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut node_ids: Vec<usize> = Vec::new();
    let mut tets_raw: Vec<[usize; 4]> = Vec::new();

    while i < lines.len() {
        match lines[i].trim() {
            "$MeshFormat" => {
                let ver = lines
                    .get(i + 1)
                    .ok_or_else(|| parse_err(path, i + 2, "truncated $MeshFormat"))?;
                let v: Vec<&str> = ver.split_whitespace().collect();
                if !v.first().is_some_and(|s| s.starts_with("2.")) {
                    return Err(parse_err(
                        path,
                        i + 2,
                        format!("unsupported msh version '{ver}' (need ASCII 2.x)"),
                    ));
                }
                if v.get(1) != Some(&"0") {
                    return Err(parse_err(path, i + 2, "binary msh is not supported"));
                }
                i += 2;
            }
            "$Nodes" => {
                let count: usize = lines
                    .get(i + 1)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| parse_err(path, i + 2, "expected node count"))?;
                for k in 0..count {
                    let lno = i + 2 + k;
                    let f: Vec<&str> = lines
                        .get(lno)
                        .ok_or_else(|| parse_err(path, lno + 1, "truncated $Nodes"))?
                        .split_whitespace()
                        .collect();
                    if f.len() < 4 {
                        return Err(parse_err(path, lno + 1, "expected: id x y z"));
                    }
                    let id: usize = f[0]
                        .parse()
                        .map_err(|_| parse_err(path, lno + 1, "bad node id"))?;
                    let mut c = [0.0; 3];
                    for d in 0..3 {
                        c[d] = f[d + 1]
                            .parse::<f64>()
                            .map_err(|_| parse_err(path, lno + 1, "bad coordinate"))?;
                    }
                    node_ids.push(id);
                    vertices.push(Point3::new(c[0] * scale, c[1] * scale, c[2] * scale));
                }
                i += 2 + count;
            }
            "$Elements" => {
                let count: usize = lines
                    .get(i + 1)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| parse_err(path, i + 2, "expected element count"))?;
                for k in 0..count {
                    let lno = i + 2 + k;
                    let f: Vec<&str> = lines
                        .get(lno)
                        .ok_or_else(|| parse_err(path, lno + 1, "truncated $Elements"))?
                        .split_whitespace()
                        .collect();
                    // id type ntags tag... nodes...
                    if f.len() < 3 {
                        return Err(parse_err(path, lno + 1, "short element line"));
                    }
                    let ety: usize = f[1]
                        .parse()
                        .map_err(|_| parse_err(path, lno + 1, "bad element type"))?;
                    if ety != 4 {
                        continue; // only 4-node tets contribute volume
                    }
                    let ntags: usize = f[2]
                        .parse()
                        .map_err(|_| parse_err(path, lno + 1, "bad tag count"))?;
                    let nodes = &f[3 + ntags..];
                    if nodes.len() != 4 {
                        return Err(parse_err(path, lno + 1, "tet element needs 4 nodes"));
                    }
                    let mut t = [0usize; 4];
                    for (d, s) in nodes.iter().enumerate() {
                        t[d] = s
                            .parse()
                            .map_err(|_| parse_err(path, lno + 1, "bad node reference"))?;
                    }
                    tets_raw.push(t);
                }
                i += 2 + count;
            }
            _ => i += 1,
        }
    }

    if tets_raw.is_empty() {
        return Err(MeshError::Empty);
    }
    // Remap Gmsh node ids (arbitrary, 1-based in practice) to dense indices,
    // dropping nodes that no tet references (surface-only nodes).
    let mut id_to_slot = std::collections::HashMap::new();
    for (slot, &id) in node_ids.iter().enumerate() {
        id_to_slot.insert(id, slot);
    }
    let mut keep: Vec<bool> = vec![false; vertices.len()];
    for (ti, t) in tets_raw.iter().enumerate() {
        for &id in t {
            let &slot = id_to_slot.get(&id).ok_or(MeshError::IndexOutOfRange {
                tet: ti,
                index: id,
                count: vertices.len(),
            })?;
            keep[slot] = true;
        }
    }
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut packed = Vec::new();
    for (slot, v) in vertices.iter().enumerate() {
        if keep[slot] {
            remap[slot] = packed.len();
            packed.push(*v);
        }
    }
    let dropped = vertices.len() - packed.len();
    if dropped > 0 {
        log::warn!("msh import: dropped {dropped} nodes not referenced by any tet");
    }
    let tets: Vec<[usize; 4]> = tets_raw
        .iter()
        .map(|t| {
            let mut out = [0usize; 4];
            for (d, &id) in t.iter().enumerate() {
                out[d] = remap[id_to_slot[&id]];
            }
            out
        })
        .collect();
    TetMesh::new(packed, tets)
}

/// Write the mesh as a `.node`/`.ele` pair at `base` (extensions replaced).
///
/// Serialization is deterministic: shortest round-trip float formatting and
/// a fixed `# scale 1` header, so save → load → save is byte-identical.
pub fn save_mesh(mesh: &TetMesh, base: &Path) -> Result<(), MeshError> {
    let node_path = base.with_extension("node");
    let ele_path = base.with_extension("ele");
    let io_err = |path: &Path, source: std::io::Error| MeshError::Io {
        path: path.to_path_buf(),
        source,
    };

    let mut node = String::new();
    node.push_str("# scale 1\n");
    node.push_str(&format!("{} 3 0 0\n", mesh.vertex_count()));
    for (i, v) in mesh.vertices().iter().enumerate() {
        node.push_str(&format!("{} {} {} {}\n", i, v.x, v.y, v.z));
    }
    let mut f = fs::File::create(&node_path).map_err(|e| io_err(&node_path, e))?;
    f.write_all(node.as_bytes()).map_err(|e| io_err(&node_path, e))?;

    let mut ele = String::new();
    ele.push_str(&format!("{} 4 0\n", mesh.tet_count()));
    for (i, t) in mesh.tets().iter().enumerate() {
        ele.push_str(&format!("{} {} {} {} {}\n", i, t[0], t[1], t[2], t[3]));
    }
    let mut f = fs::File::create(&ele_path).map_err(|e| io_err(&ele_path, e))?;
    f.write_all(ele.as_bytes()).map_err(|e| io_err(&ele_path, e))?;
    Ok(())
}

/// Unit contact normal or similar direction vector, validated.
pub fn unit_vector(v: Vector3<f64>) -> Option<Vector3<f64>> {
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}
