//! Structured triangulations of axis-aligned rectangles.
//!
//! Every grid cell is split along its `(i, j) - (i+1, j+1)` diagonal, so red
//! refinement of a rectangle mesh reproduces the same pattern at half the
//! cell size. Parent nodes keep their indices under [`Mesh::refine`]; new
//! midpoint nodes are appended after them.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.x1 - self.x0) + (self.y1 - self.y0))
    }

    fn is_degenerate(&self) -> bool {
        !(self.x0.is_finite() && self.x1.is_finite() && self.y0.is_finite() && self.y1.is_finite())
            || self.x1 <= self.x0
            || self.y1 <= self.y0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// A boundary edge and whether it lies on the observation surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub observed: bool,
}

/// Selects the observation part of the boundary.
///
/// Parsed from `"all"` or a comma-separated list of coordinate lines such as
/// `"y = -1"` or `"x = 1, y = -1"`. An edge is selected when both of its
/// endpoints lie on one of the listed lines.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    All,
    Lines(Vec<(Axis, f64)>),
}

impl BoundarySpec {
    pub fn line(axis: Axis, value: f64) -> Self {
        BoundarySpec::Lines(vec![(axis, value)])
    }

    fn selects(&self, a: Point, b: Point, tol: f64) -> bool {
        match self {
            BoundarySpec::All => true,
            BoundarySpec::Lines(lines) => lines.iter().any(|&(axis, v)| {
                let k = match axis {
                    Axis::X => 0,
                    Axis::Y => 1,
                };
                (a[k] - v).abs() <= tol && (b[k] - v).abs() <= tol
            }),
        }
    }
}

impl fmt::Display for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::All => f.write_str("all"),
            BoundarySpec::Lines(lines) => {
                for (i, (axis, v)) in lines.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    let name = match axis {
                        Axis::X => 'x',
                        Axis::Y => 'y',
                    };
                    write!(f, "{name} = {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for BoundarySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(BoundarySpec::All);
        }
        let bad = || Error::BadBoundarySpec(s.to_string());
        let mut lines = Vec::new();
        for part in s.split(',') {
            let (lhs, rhs) = part.split_once('=').ok_or_else(bad)?;
            let axis = match lhs.trim() {
                "x" | "X" => Axis::X,
                "y" | "Y" => Axis::Y,
                _ => return Err(bad()),
            };
            let value: f64 = rhs.trim().parse().map_err(|_| bad())?;
            lines.push((axis, value));
        }
        if lines.is_empty() {
            return Err(bad());
        }
        Ok(BoundarySpec::Lines(lines))
    }
}

/// Conforming triangulation with tagged boundary edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
}

impl Mesh {
    /// Structured mesh of `bounds` with `n` cells per side. No edge is
    /// tagged as observed.
    pub fn rectangle(bounds: Rect, n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidMesh("need at least one subdivision per side".into()));
        }
        if bounds.is_degenerate() {
            return Err(Error::InvalidMesh(format!("degenerate bounds {bounds:?}")));
        }
        let np = n + 1;
        let idx = |i: usize, j: usize| j * np + i;
        let dx = (bounds.x1 - bounds.x0) / n as f64;
        let dy = (bounds.y1 - bounds.y0) / n as f64;

        let mut nodes = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                // pin the far sides to the exact bounds
                let x = if i == n { bounds.x1 } else { bounds.x0 + i as f64 * dx };
                let y = if j == n { bounds.y1 } else { bounds.y0 + j as f64 * dy };
                nodes.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = idx(i, j);
                let b = idx(i + 1, j);
                let c = idx(i + 1, j + 1);
                let d = idx(i, j + 1);
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }

        // counterclockwise walk: bottom, right, top, left
        let mut boundary_edges = Vec::with_capacity(4 * n);
        let mut push = |a, b| boundary_edges.push(BoundaryEdge { nodes: [a, b], observed: false });
        for i in 0..n {
            push(idx(i, 0), idx(i + 1, 0));
        }
        for j in 0..n {
            push(idx(n, j), idx(n, j + 1));
        }
        for i in (0..n).rev() {
            push(idx(i + 1, n), idx(i, n));
        }
        for j in (0..n).rev() {
            push(idx(0, j + 1), idx(0, j));
        }

        let mut mesh = Mesh { nodes, triangles, boundary_edges, h: 0.0 };
        mesh.h = mesh.max_edge_length();
        Ok(mesh)
    }

    /// Red refinement: every triangle is split into four congruent children.
    pub fn refine(&self) -> Mesh {
        let mut nodes = self.nodes.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                nodes.len() - 1
            })
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }

        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for e in &self.boundary_edges {
            let [a, b] = e.nodes;
            let m = midpoint(a, b, &mut nodes);
            boundary_edges.push(BoundaryEdge { nodes: [a, m], observed: e.observed });
            boundary_edges.push(BoundaryEdge { nodes: [m, b], observed: e.observed });
        }

        Mesh { nodes, triangles, boundary_edges, h: 0.5 * self.h }
    }

    /// Returns a copy with the observation flag of every boundary edge set
    /// from `spec`.
    pub fn tag_boundary(&self, spec: &BoundarySpec) -> Result<Mesh> {
        let tol = 1e-12 * self.diameter().max(1.0);
        let mut mesh = self.clone();
        let mut any = false;
        for e in &mut mesh.boundary_edges {
            let [a, b] = e.nodes;
            e.observed = spec.selects(self.nodes[a], self.nodes[b], tol);
            any |= e.observed;
        }
        if !any {
            return Err(Error::EmptyBoundarySelection(spec.to_string()));
        }
        Ok(mesh)
    }

    /// Index of the node nearest to `p`; ties go to the lowest index.
    pub fn closest_node(&self, p: Point) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, q) in self.nodes.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn observed_edges(&self) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(|e| e.observed)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Mesh size: the longest edge.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area, positive for counterclockwise triangles.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_points(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    /// Total length of the observed boundary part.
    pub fn observed_length(&self) -> f64 {
        self.observed_edges().map(|e| self.edge_length(e.nodes[0], e.nodes[1])).sum()
    }

    /// Nodes touched by at least one observed edge, in increasing order.
    pub fn observed_nodes(&self) -> Vec<usize> {
        let mut flags = vec![false; self.nodes.len()];
        for e in self.observed_edges() {
            flags[e.nodes[0]] = true;
            flags[e.nodes[1]] = true;
        }
        (0..flags.len()).filter(|&i| flags[i]).collect()
    }

    pub fn bounding_box(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.nodes {
            r.x0 = r.x0.min(p[0]);
            r.x1 = r.x1.max(p[0]);
            r.y0 = r.y0.min(p[1]);
            r.y1 = r.y1.max(p[1]);
        }
        r
    }

    fn diameter(&self) -> f64 {
        let b = self.bounding_box();
        (b.x1 - b.x0).hypot(b.y1 - b.y0)
    }

    fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.triangles.iter().flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges().map(|(a, b)| self.edge_length(a, b)).fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges().map(|(a, b)| self.edge_length(a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Checks orientation, conformity and the boundary edge list.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut used = vec![false; n];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::InvalidMesh(format!("triangle {t} references node {v}")));
                }
                used[v] = true;
            }
            if self.signed_area(t) <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} has non-positive area")));
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("node {orphan} belongs to no triangle")));
        }

        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for (a, b) in self.edges() {
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        if let Some((e, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!("edge {e:?} shared by {c} triangles")));
        }
        let mut boundary: Vec<(usize, usize)> =
            count.iter().filter(|(_, &c)| c == 1).map(|(&e, _)| e).collect();
        boundary.sort_unstable();
        let mut listed: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|e| {
                let [a, b] = e.nodes;
                (a.min(b), a.max(b))
            })
            .collect();
        listed.sort_unstable();
        if boundary != listed {
            return Err(Error::InvalidMesh(
                "boundary edge list differs from the topological boundary".into(),
            ));
        }
        Ok(())
    }

    /// Plain-text export: section headers with counts, then `x y`,
    /// `i j k` and `i j tag` lines (tag 1 on the observed part).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for p in &self.nodes {
            writeln!(s, "{:.16e} {:.16e}", p[0], p[1]).unwrap();
        }
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "boundary {}", self.boundary_edges.len()).unwrap();
        for e in &self.boundary_edges {
            writeln!(s, "{} {} {}", e.nodes[0], e.nodes[1], u8::from(e.observed)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut last_line = 0;

        let mut header = |lines: &mut dyn Iterator<Item = (usize, &str)>, name: &str| {
            let (ln, l) = lines.next().ok_or(Error::MeshFormat {
                line: last_line + 1,
                msg: format!("missing `{name}` section"),
            })?;
            last_line = ln;
            let mut it = l.split_whitespace();
            match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
                (Some(w), Some(Ok(count)), None) if w == name => Ok((ln, count)),
                _ => Err(Error::MeshFormat { line: ln, msg: format!("expected `{name} <count>`") }),
            }
        };
        fn fields<T: FromStr, const K: usize>(
            lines: &mut dyn Iterator<Item = (usize, &str)>,
            after: usize,
        ) -> Result<[T; K]> {
            let (ln, l) = lines
                .next()
                .ok_or(Error::MeshFormat { line: after + 1, msg: "unexpected end of file".into() })?;
            let bad = || Error::MeshFormat { line: ln, msg: format!("expected {K} fields") };
            let parsed: Vec<T> =
                l.split_whitespace().map(|w| w.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            parsed.try_into().map_err(|_| bad())
        }

        let (ln, nn) = header(&mut lines, "nodes")?;
        let nodes = (0..nn).map(|_| fields::<f64, 2>(&mut lines, ln)).collect::<Result<Vec<_>>>()?;
        let (ln, nt) = header(&mut lines, "triangles")?;
        let triangles =
            (0..nt).map(|_| fields::<usize, 3>(&mut lines, ln)).collect::<Result<Vec<_>>>()?;
        let (ln, nb) = header(&mut lines, "boundary")?;
        let boundary_edges = (0..nb)
            .map(|_| {
                fields::<usize, 3>(&mut lines, ln)
                    .map(|[a, b, tag]| BoundaryEdge { nodes: [a, b], observed: tag != 0 })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut mesh = Mesh { nodes, triangles, boundary_edges, h: 0.0 };
        mesh.validate()?;
        mesh.h = mesh.max_edge_length();
        Ok(mesh)
    }
}
