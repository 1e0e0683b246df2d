//! Structured simplicial meshes on `(0, L)` and `(0, L)^2`.
//!
//! Square meshes split every cell along the diagonal from its lower-left to
//! its upper-right corner. Points are always stored as `[x, y]`; on the
//! interval `y` is zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Relative tolerance for deciding whether a node lies on a region boundary.
pub const NODE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    Boundary,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    side: f64,
    cells: usize,
    nodes: Vec<Point>,
    tags: Vec<NodeTag>,
    connectivity: Vec<usize>,
}

/// Geometry of one simplex. `grads[k]` is the (constant) gradient of the hat
/// function of `nodes[k]` restricted to the element.
#[derive(Clone, Copy, Debug)]
pub struct Element<'a> {
    pub nodes: &'a [usize],
    pub measure: f64,
    pub grads: [[f64; 2]; 3],
    pub barycenter: Point,
}

impl Mesh {
    pub fn build_interval(length: f64, n: usize) -> Result<Mesh> {
        check_length(length)?;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "interval mesh needs at least 2 cells, got {n}"
            )));
        }
        let h = length / n as f64;
        let nodes: Vec<Point> = (0..=n)
            .map(|i| if i == n { [length, 0.0] } else { [i as f64 * h, 0.0] })
            .collect();
        let tags = (0..=n)
            .map(|i| if i == 0 || i == n { NodeTag::Boundary } else { NodeTag::Interior })
            .collect();
        let connectivity = (0..n).flat_map(|i| [i, i + 1]).collect();
        Ok(Mesh { dim: 1, side: length, cells: n, nodes, tags, connectivity })
    }

    pub fn build_square(length: f64, n: usize) -> Result<Mesh> {
        check_length(length)?;
        if n < 1 {
            return Err(Error::InvalidArgument("square mesh needs at least 1 cell per side".into()));
        }
        let h = length / n as f64;
        let coord = |i: usize| if i == n { length } else { i as f64 * h };
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        let mut tags = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([coord(i), coord(j)]);
                let on_edge = i == 0 || j == 0 || i == n || j == n;
                tags.push(if on_edge { NodeTag::Boundary } else { NodeTag::Interior });
            }
        }
        let mut connectivity = Vec::with_capacity(6 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                connectivity.extend_from_slice(&[a, b, d, a, d, c]);
            }
        }
        Ok(Mesh { dim: 2, side: length, cells: n, nodes, tags, connectivity })
    }

    /// Interval or square mesh with `n_per_unit` cells per unit length.
    pub fn build(dim: usize, length: f64, n_per_unit: usize) -> Result<Mesh> {
        let n = ((length * n_per_unit as f64).round() as usize).max(2);
        match dim {
            1 => Mesh::build_interval(length, n),
            2 => Mesh::build_square(length, n),
            _ => Err(Error::InvalidArgument(format!("unsupported dimension {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side_length(&self) -> f64 {
        self.side
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        self.side / self.cells as f64
    }

    pub fn tolerance(&self) -> f64 {
        NODE_TOL * self.side
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.connectivity.len() / (self.dim + 1)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn tag(&self, i: usize) -> NodeTag {
        self.tags[i]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.tags[i] == NodeTag::Boundary).collect()
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.connectivity[e * k..(e + 1) * k]
    }

    pub fn element(&self, e: usize) -> Element<'_> {
        let nodes = self.element_nodes(e);
        if self.dim == 1 {
            let (x0, x1) = (self.nodes[nodes[0]][0], self.nodes[nodes[1]][0]);
            let h = x1 - x0;
            Element {
                nodes,
                measure: h,
                grads: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]],
                barycenter: [0.5 * (x0 + x1), 0.0],
            }
        } else {
            let [p0, p1, p2] = [self.nodes[nodes[0]], self.nodes[nodes[1]], self.nodes[nodes[2]]];
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let grads = [
                [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
            ];
            Element {
                nodes,
                measure: 0.5 * det.abs(),
                grads,
                barycenter: [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0],
            }
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = Element<'_>> + '_ {
        (0..self.num_elements()).map(move |e| self.element(e))
    }

    /// Nodes whose coordinates satisfy the region predicate (within tolerance).
    pub fn region_nodes(&self, region: &Region) -> Vec<usize> {
        let tol = self.tolerance();
        (0..self.num_nodes()).filter(|&i| region.contains(self.nodes[i], tol)).collect()
    }

    /// Elements whose barycenter lies in the region.
    pub fn region_elements(&self, region: &Region) -> Vec<usize> {
        let tol = self.tolerance();
        (0..self.num_elements())
            .filter(|&e| region.contains(self.element(e).barycenter, tol))
            .collect()
    }

    /// Nodes touched by at least one element of `region_elements`.
    pub fn region_support(&self, region: &Region) -> Vec<usize> {
        let mut mark = vec![false; self.num_nodes()];
        for e in self.region_elements(region) {
            for &i in self.element_nodes(e) {
                mark[i] = true;
            }
        }
        (0..self.num_nodes()).filter(|&i| mark[i]).collect()
    }

    pub fn region_measure(&self, region: &Region) -> f64 {
        self.region_elements(region).iter().map(|&e| self.element(e).measure).sum()
    }

    pub fn nearest_node(&self, p: Point) -> usize {
        let dist = |q: &Point| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        let mut best = 0;
        for (i, q) in self.nodes.iter().enumerate() {
            if dist(q) < dist(&self.nodes[best]) {
                best = i;
            }
        }
        best
    }

    pub fn center(&self) -> Point {
        let m = 0.5 * self.side;
        if self.dim == 1 { [m, 0.0] } else { [m, m] }
    }
}

fn check_length(length: f64) -> Result<()> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidArgument(format!("side length must be positive, got {length}")));
    }
    Ok(())
}

/// Closed axis-aligned box. Unused coordinates are unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Aabb {
        Aabb { lo, hi }
    }

    pub fn interval(lo: f64, hi: f64) -> Aabb {
        Aabb { lo: [lo, f64::NEG_INFINITY], hi: [hi, f64::INFINITY] }
    }

    /// Cube of half-width `r` around `c` in the first `dim` coordinates.
    pub fn cube(c: Point, r: f64, dim: usize) -> Aabb {
        if dim == 1 {
            Aabb::interval(c[0] - r, c[0] + r)
        } else {
            Aabb::new([c[0] - r, c[1] - r], [c[0] + r, c[1] + r])
        }
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        (0..2).all(|k| p[k] >= self.lo[k] - tol && p[k] <= self.hi[k] + tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Full,
    Empty,
    Boxes(Vec<Aabb>),
    Complement(Box<Region>),
}

impl Region {
    pub fn cube(c: Point, r: f64, dim: usize) -> Region {
        Region::Boxes(vec![Aabb::cube(c, r, dim)])
    }

    pub fn complement(self) -> Region {
        match self {
            Region::Complement(inner) => *inner,
            other => Region::Complement(Box::new(other)),
        }
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        match self {
            Region::Full => true,
            Region::Empty => false,
            Region::Boxes(boxes) => boxes.iter().any(|b| b.contains(p, tol)),
            Region::Complement(inner) => !inner.contains(p, tol),
        }
    }
}

/// Named control/observation regions used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionPreset {
    /// The whole domain.
    Full,
    /// The domain minus the corner box `[0, 2]^d`.
    BorderGap,
    /// The lower-left quarter `(0, L/2)^d`.
    Half,
}

impl RegionPreset {
    pub const ALL: [RegionPreset; 3] = [RegionPreset::Full, RegionPreset::BorderGap, RegionPreset::Half];

    pub fn region(self, length: f64, dim: usize) -> Region {
        match self {
            RegionPreset::Full => Region::Full,
            RegionPreset::BorderGap => Region::cube([1.0, 1.0], 1.0, dim).complement(),
            RegionPreset::Half => {
                let q = 0.25 * length;
                Region::cube([q, q], q, dim)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionPreset::Full => "full",
            RegionPreset::BorderGap => "border-gap",
            RegionPreset::Half => "half",
        }
    }
}

impl fmt::Display for RegionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegionPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RegionPreset::Full),
            "border-gap" => Ok(RegionPreset::BorderGap),
            "half" => Ok(RegionPreset::Half),
            _ => Err(Error::InvalidArgument(format!(
                "unknown region preset {s:?} (expected full, border-gap or half)"
            ))),
        }
    }
}
