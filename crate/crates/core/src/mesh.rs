//! Conforming triangulations of a planar domain with Dirichlet/Neumann
//! boundary markers.
//!
//! ASCII format (`#` starts a comment line):
//!
//! ```text
//! nodes N  triangles T  bedges B
//! x y          (N lines)
//! i j k        (T lines, 0-based, counter-clockwise)
//! i j M        (B lines, M ∈ {D, N})
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("malformed mesh header: {0}")]
    Header(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unexpected end of mesh file (expected {0})")]
    Truncated(&'static str),
    #[error("index {index} out of range for {count} nodes")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("unknown boundary marker `{0}` (expected D or N)")]
    UnknownMarker(String),
    #[error("triangle {tri} has nonpositive area {area}")]
    NonPositiveArea { tri: usize, area: f64 },
    #[error("edge ({0}, {1}) is traversed twice in the same direction (duplicate or overlapping triangle)")]
    DuplicateEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) is not marked")]
    UnmarkedBoundaryEdge(usize, usize),
    #[error("marked edge ({0}, {1}) is not on the boundary")]
    NotABoundaryEdge(usize, usize),
    #[error("node {0} belongs to no triangle")]
    OrphanNode(usize),
    #[error("invalid mesh parameters: {0}")]
    Parameters(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Dirichlet,
    Neumann,
}

impl Marker {
    pub fn letter(self) -> char {
        match self {
            Marker::Dirichlet => 'D',
            Marker::Neumann => 'N',
        }
    }

    pub fn parse(s: &str) -> Result<Marker, MeshError> {
        match s {
            "D" | "d" => Ok(Marker::Dirichlet),
            "N" | "n" => Ok(Marker::Neumann),
            other => Err(MeshError::UnknownMarker(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub marker: Marker,
}

/// Marker per side of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideMarkers {
    pub left: Marker,
    pub right: Marker,
    pub bottom: Marker,
    pub top: Marker,
}

impl SideMarkers {
    pub fn all(marker: Marker) -> Self {
        SideMarkers {
            left: marker,
            right: marker,
            bottom: marker,
            top: marker,
        }
    }

    /// Dirichlet on the left side, Neumann elsewhere.
    pub fn left_dirichlet() -> Self {
        SideMarkers {
            left: Marker::Dirichlet,
            ..SideMarkers::all(Marker::Neumann)
        }
    }
}

/// Area and the constant gradients of the three P1 basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    dirichlet_nodes: Vec<usize>,
    is_dirichlet: Vec<bool>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    /// Builds and validates a mesh. Corner nodes shared by a Dirichlet and a
    /// Neumann edge are classified Dirichlet.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Mesh, MeshError> {
        let n = nodes.len();
        let check = |i: usize| {
            if i < n {
                Ok(())
            } else {
                Err(MeshError::IndexOutOfRange { index: i, count: n })
            }
        };
        for tri in &triangles {
            tri.iter().try_for_each(|&i| check(i))?;
        }
        for e in &boundary_edges {
            e.nodes.iter().try_for_each(|&i| check(i))?;
        }
        for (t, tri) in triangles.iter().enumerate() {
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(MeshError::NonPositiveArea { tri: t, area });
            }
        }

        // Each directed edge may appear once; an undirected edge seen in one
        // direction only lies on the boundary.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut used = vec![false; n];
        for tri in &triangles {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                used[i] = true;
                if directed.insert((i, j), 1).is_some() {
                    return Err(MeshError::DuplicateEdge(i, j));
                }
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(MeshError::OrphanNode(orphan));
        }
        let mut marked: HashMap<(usize, usize), Marker> = HashMap::new();
        for e in &boundary_edges {
            let [i, j] = e.nodes;
            let key = (i.min(j), i.max(j));
            let on_boundary = directed.contains_key(&(i, j)) ^ directed.contains_key(&(j, i));
            if !on_boundary || marked.insert(key, e.marker).is_some() {
                return Err(MeshError::NotABoundaryEdge(i, j));
            }
        }
        for &(i, j) in directed.keys() {
            if !directed.contains_key(&(j, i)) && !marked.contains_key(&(i.min(j), i.max(j))) {
                return Err(MeshError::UnmarkedBoundaryEdge(i, j));
            }
        }

        let mut is_dirichlet = vec![false; n];
        for e in boundary_edges.iter().filter(|e| e.marker == Marker::Dirichlet) {
            is_dirichlet[e.nodes[0]] = true;
            is_dirichlet[e.nodes[1]] = true;
        }
        let dirichlet_nodes = (0..n).filter(|&i| is_dirichlet[i]).collect();
        Ok(Mesh {
            nodes,
            triangles,
            boundary_edges,
            dirichlet_nodes,
            is_dirichlet,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Sorted indices of nodes lying on a Dirichlet edge.
    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet_nodes
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.is_dirichlet[node]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.is_dirichlet
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_geometry(&self, t: usize) -> TriangleGeometry {
        let [i, j, k] = self.triangles[t];
        let [x1, y1] = self.nodes[i];
        let [x2, y2] = self.nodes[j];
        let [x3, y3] = self.nodes[k];
        let area = signed_area(self.nodes[i], self.nodes[j], self.nodes[k]);
        let s = 1.0 / (2.0 * area);
        TriangleGeometry {
            area,
            grads: [
                [(y2 - y3) * s, (x3 - x2) * s],
                [(y3 - y1) * s, (x1 - x3) * s],
                [(y1 - y2) * s, (x2 - x1) * s],
            ],
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_geometry(t).area).sum()
    }

    /// Serialises to the ASCII mesh format.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {}  triangles {}  bedges {}",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary_edges.len()
        );
        for [x, y] in &self.nodes {
            let _ = writeln!(out, "{x:.17e} {y:.17e}");
        }
        for [i, j, k] in &self.triangles {
            let _ = writeln!(out, "{i} {j} {k}");
        }
        for e in &self.boundary_edges {
            let _ = writeln!(out, "{} {} {}", e.nodes[0], e.nodes[1], e.marker.letter());
        }
        out
    }
}

/// Structured mesh of `[0, lx] × [0, ly]` with every cell split along its
/// lower-left to upper-right diagonal.
pub fn generate_rect_mesh(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    markers: SideMarkers,
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 || !(lx > 0.0) || !(ly > 0.0) {
        return Err(MeshError::Parameters(format!(
            "need nx, ny ≥ 1 and lx, ly > 0 (got {nx}, {ny}, {lx}, {ly})"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    let mut edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        edges.push(BoundaryEdge {
            nodes: [id(i, 0), id(i + 1, 0)],
            marker: markers.bottom,
        });
    }
    for j in 0..ny {
        edges.push(BoundaryEdge {
            nodes: [id(nx, j), id(nx, j + 1)],
            marker: markers.right,
        });
    }
    for i in (0..nx).rev() {
        edges.push(BoundaryEdge {
            nodes: [id(i + 1, ny), id(i, ny)],
            marker: markers.top,
        });
    }
    for j in (0..ny).rev() {
        edges.push(BoundaryEdge {
            nodes: [id(0, j + 1), id(0, j)],
            marker: markers.left,
        });
    }
    Mesh::new(nodes, triangles, edges)
}

/// Parses the ASCII mesh format.
pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (_, header) = lines.next().ok_or(MeshError::Truncated("header"))?;
    let words: Vec<&str> = header.split_whitespace().collect();
    let count = |key: &str, pos: usize| -> Result<usize, MeshError> {
        match (words.get(pos), words.get(pos + 1)) {
            (Some(&k), Some(v)) if k == key => v
                .parse()
                .map_err(|_| MeshError::Header(format!("bad {key} count `{v}`"))),
            _ => Err(MeshError::Header(header.to_string())),
        }
    };
    if words.len() != 6 {
        return Err(MeshError::Header(header.to_string()));
    }
    let (n, t, b) = (count("nodes", 0)?, count("triangles", 2)?, count("bedges", 4)?);

    fn fields(
        line: usize,
        text: &str,
        expect: usize,
    ) -> Result<Vec<&str>, MeshError> {
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != expect {
            return Err(MeshError::Syntax {
                line,
                msg: format!("expected {expect} fields, found {}", f.len()),
            });
        }
        Ok(f)
    }
    fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, MeshError> {
        s.parse().map_err(|_| MeshError::Syntax {
            line,
            msg: format!("cannot parse `{s}`"),
        })
    }

    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or(MeshError::Truncated("node"))?;
        let f = fields(ln, l, 2)?;
        nodes.push([num(ln, f[0])?, num(ln, f[1])?]);
    }
    let mut triangles = Vec::with_capacity(t);
    for _ in 0..t {
        let (ln, l) = lines.next().ok_or(MeshError::Truncated("triangle"))?;
        let f = fields(ln, l, 3)?;
        triangles.push([num(ln, f[0])?, num(ln, f[1])?, num(ln, f[2])?]);
    }
    let mut edges = Vec::with_capacity(b);
    for _ in 0..b {
        let (ln, l) = lines.next().ok_or(MeshError::Truncated("boundary edge"))?;
        let f = fields(ln, l, 3)?;
        edges.push(BoundaryEdge {
            nodes: [num(ln, f[0])?, num(ln, f[1])?],
            marker: Marker::parse(f[2])?,
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(MeshError::Syntax {
            line: ln,
            msg: "trailing data after boundary edges".into(),
        });
    }
    Mesh::new(nodes, triangles, edges)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_mesh(&text)
}
