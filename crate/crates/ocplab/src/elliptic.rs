//! Elliptic optimality systems.
//!
//! Unknowns are ordered `[y | u | p]` and the matrix is
//!
//! ```text
//! [ Q   0   A^T ]
//! [ 0   R   B^T ]
//! [ A   B   0   ]
//! ```
//!
//! with right-hand side `(C^T C y_d, 0, f)` for the optimal control problem
//! and `(eps_1, eps_2, eps_3)` for the difference system.

use std::ops::Range;
use std::sync::OnceLock;

use crate::assembly::{
    assemble_operator, assemble_region_mass, assemble_weighted_mass, BoundaryCondition, Coefficients,
    DofMap, OperatorSet,
};
use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Point, Region};
use crate::sparse::{dot, LuSolver, SparseMatrix, TripletBuilder, DEFAULT_TOL};

pub struct KktSystem {
    pub ops: OperatorSet,
    pub matrix: SparseMatrix,
    tol: f64,
    factor: OnceLock<LuSolver>,
}

/// A vector split along the three block rows/columns.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(n_y: usize, n_u: usize) -> BlockVector {
        BlockVector { y: vec![0.0; n_y], u: vec![0.0; n_u], p: vec![0.0; n_y] }
    }

    pub fn concat(&self) -> Vec<f64> {
        [self.y.as_slice(), &self.u, &self.p].concat()
    }

    pub fn add_scaled(&mut self, s: f64, other: &BlockVector) {
        for (a, b) in [(&mut self.y, &other.y), (&mut self.u, &other.u), (&mut self.p, &other.p)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
    }
}

#[derive(Clone, Debug)]
pub struct KktSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub relative_residual: f64,
}

impl KktSolution {
    pub fn blocks(&self) -> BlockVector {
        BlockVector { y: self.y.clone(), u: self.u.clone(), p: self.p.clone() }
    }
}

impl KktSystem {
    pub fn assemble(ops: OperatorSet) -> KktSystem {
        let (n_y, n_u) = (ops.n_state(), ops.n_control());
        let n = 2 * n_y + n_u;
        let cap = ops.q.nnz() + ops.r.nnz() + 2 * ops.a.nnz() + 2 * ops.b.nnz();
        let mut t = TripletBuilder::with_capacity(n, n, cap);
        let (u0, p0) = (n_y, n_y + n_u);
        t.add_block(0, 0, &ops.q, 1.0);
        t.add_block_transpose(0, p0, &ops.a, 1.0);
        t.add_block(u0, u0, &ops.r, 1.0);
        t.add_block_transpose(u0, p0, &ops.b, 1.0);
        t.add_block(p0, 0, &ops.a, 1.0);
        t.add_block(p0, u0, &ops.b, 1.0);
        KktSystem { ops, matrix: t.build(), tol: DEFAULT_TOL, factor: OnceLock::new() }
    }

    /// Assembles the operators with unit control weight and forms the system.
    pub fn new(
        mesh: &Mesh,
        coeff: &Coefficients,
        control: &Region,
        observation: &Region,
        bc: BoundaryCondition,
    ) -> Result<KktSystem> {
        Ok(KktSystem::assemble(OperatorSet::assemble(mesh, coeff, control, observation, bc, 1.0)?))
    }

    pub fn with_tolerance(mut self, tol: f64) -> KktSystem {
        self.tol = tol;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn n_state(&self) -> usize {
        self.ops.n_state()
    }

    pub fn n_control(&self) -> usize {
        self.ops.n_control()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ranges(&self) -> [Range<usize>; 3] {
        let (n_y, n_u) = (self.n_state(), self.n_control());
        [0..n_y, n_y..n_y + n_u, n_y + n_u..2 * n_y + n_u]
    }

    pub fn split(&self, x: &[f64]) -> BlockVector {
        let [ry, ru, rp] = self.ranges();
        BlockVector { y: x[ry].to_vec(), u: x[ru].to_vec(), p: x[rp].to_vec() }
    }

    pub fn factorization(&self) -> Result<&LuSolver> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = LuSolver::factorize(&self.matrix)?;
        Ok(self.factor.get_or_init(|| f))
    }

    pub fn solve_rhs(&self, rhs: &BlockVector) -> Result<KktSolution> {
        let b = rhs.concat();
        check_len(self.dim(), b.len())?;
        let report = self.factorization()?.solve(&b, self.tol)?;
        let x = self.split(&report.solution);
        Ok(KktSolution { y: x.y, u: x.u, p: x.p, relative_residual: report.relative_residual })
    }

    /// `||x||` in `V x U x V` with the `H^1` and `L^2(Ω_c)` Gram matrices.
    pub fn primal_norm(&self, x: &BlockVector) -> f64 {
        let s = &self.ops.state_norm;
        (s.norm(&x.y).powi(2) + self.ops.control_norm.norm(&x.u).powi(2) + s.norm(&x.p).powi(2)).sqrt()
    }

    /// `||f||` in `V* x U* x V*`.
    pub fn dual_norm(&self, f: &BlockVector) -> Result<f64> {
        let s = &self.ops.state_norm;
        let parts = [s.dual_norm(&f.y)?, self.ops.control_norm.dual_norm(&f.u)?, s.dual_norm(&f.p)?];
        Ok(parts.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Applies the block-diagonal Gram matrix.
    pub fn gram_apply(&self, x: &BlockVector) -> BlockVector {
        let g = self.ops.state_norm.gram();
        BlockVector { y: g.mul_vec(&x.y), u: self.ops.control_norm.gram().mul_vec(&x.u), p: g.mul_vec(&x.p) }
    }

    pub fn state_to_nodal(&self, y: &[f64]) -> Vec<f64> {
        self.ops.dofs.extend(y)
    }

    pub fn control_to_nodal(&self, u: &[f64]) -> Vec<f64> {
        self.ops.control_to_nodal(u)
    }

    /// `C^T C y_d` on the free nodes for a nodal target.
    pub fn observation_load(&self, y_d: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ops.mesh.num_nodes(), y_d.len())?;
        let obs = assemble_region_mass(&self.ops.mesh, &self.ops.observation_region);
        Ok(self.ops.dofs.restrict(&obs.mul_vec(y_d)))
    }
}

/// Solves the optimality system for nodal target `y_d` and nodal source `f`.
pub fn solve_ocp(kkt: &KktSystem, y_d: &[f64], f: &[f64]) -> Result<KktSolution> {
    let rhs = BlockVector {
        y: kkt.observation_load(y_d)?,
        u: vec![0.0; kkt.n_control()],
        p: kkt.ops.state_load(f)?,
    };
    kkt.solve_rhs(&rhs)
}

/// Solves `M δ = ε` for the difference between a perturbed and a reference
/// solution.
pub fn solve_difference(kkt: &KktSystem, eps: &BlockVector) -> Result<KktSolution> {
    check_len(kkt.n_state(), eps.y.len())?;
    check_len(kkt.n_control(), eps.u.len())?;
    check_len(kkt.n_state(), eps.p.len())?;
    kkt.solve_rhs(eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Indicator of the closed cube of the given half-width.
    Box { half_width: f64 },
    /// Nodal unit load at the node nearest to the center.
    Point,
}

/// Which optimality-system rows receive the perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub adjoint: bool,
    pub control: bool,
    pub state: bool,
}

impl Components {
    pub const STATE: Components = Components { adjoint: false, control: false, state: true };
    pub const ALL: Components = Components { adjoint: true, control: true, state: true };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub center: Point,
    pub shape: Shape,
    pub amplitude: f64,
    pub components: Components,
}

impl Perturbation {
    /// Amplitude-10 box of half-width 2 in the center of the domain, acting on
    /// the state equation.
    pub fn centered_box(mesh: &Mesh) -> Perturbation {
        Perturbation {
            center: mesh.center(),
            shape: Shape::Box { half_width: 2.0 },
            amplitude: 10.0,
            components: Components::STATE,
        }
    }

    /// Full nodal load vector `∫ ε φ_i` (before restriction).
    pub fn nodal_load(&self, mesh: &Mesh, within: &Region) -> Vec<f64> {
        let tol = mesh.tolerance();
        match self.shape {
            Shape::Box { half_width } => {
                let b = Region::cube(self.center, half_width, mesh.dim());
                let w = assemble_weighted_mass(mesh, |x| {
                    if b.contains(x, tol) && within.contains(x, tol) { self.amplitude } else { 0.0 }
                });
                w.mul_vec(&vec![1.0; mesh.num_nodes()])
            }
            Shape::Point => {
                let mut v = vec![0.0; mesh.num_nodes()];
                v[mesh.nearest_node(self.center)] = self.amplitude;
                v
            }
        }
    }

    pub fn rhs(&self, ops: &OperatorSet) -> BlockVector {
        let mut eps = BlockVector::zeros(ops.n_state(), ops.n_control());
        let load = ops.dofs.restrict(&self.nodal_load(&ops.mesh, &Region::Full));
        if self.components.adjoint {
            eps.y = load.clone();
        }
        if self.components.state {
            eps.p = load;
        }
        if self.components.control {
            let full = self.nodal_load(&ops.mesh, &ops.control_region);
            eps.u = ops.control_nodes.iter().map(|&i| full[i]).collect();
        }
        eps
    }
}

/// Source term for [`solve_uncontrolled`].
#[derive(Clone, Debug)]
pub enum Source {
    /// Nodal values, integrated against the mass matrix.
    Nodal(Vec<f64>),
    /// Already-integrated load vector over all nodes.
    Load(Vec<f64>),
    /// Point evaluation at the node nearest to the given point.
    Dirac(Point),
}

impl Source {
    fn load(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let n = mesh.num_nodes();
        match self {
            Source::Nodal(f) => {
                check_len(n, f.len())?;
                Ok(crate::assembly::assemble_mass(mesh).mul_vec(f))
            }
            Source::Load(l) => {
                check_len(n, l.len())?;
                Ok(l.clone())
            }
            Source::Dirac(x) => {
                let mut l = vec![0.0; n];
                l[mesh.nearest_node(*x)] = 1.0;
                Ok(l)
            }
        }
    }
}

/// Solves `A y = f` without control. For Dirichlet conditions the optional
/// `boundary` vector (indexed by node; only boundary entries are read) is
/// lifted into the solution. Returns nodal values.
pub fn solve_uncontrolled(
    mesh: &Mesh,
    coeff: &Coefficients,
    bc: BoundaryCondition,
    source: &Source,
    boundary: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<f64>> {
    let a = assemble_operator(mesh, coeff);
    let mut load = source.load(mesh)?;
    let dofs = DofMap::for_bc(mesh, bc);
    let mut lift = vec![0.0; mesh.num_nodes()];
    if let Some(g) = boundary {
        if bc != BoundaryCondition::Dirichlet {
            return Err(Error::InvalidArgument("boundary values need Dirichlet conditions".into()));
        }
        check_len(mesh.num_nodes(), g.len())?;
        for i in mesh.boundary_nodes() {
            lift[i] = g[i];
        }
        let al = a.mul_vec(&lift);
        load.iter_mut().zip(&al).for_each(|(l, v)| *l -= v);
    }
    let free = dofs.free_nodes();
    let y = crate::sparse::solve(&a.select(free, free), &dofs.restrict(&load), tol)?.solution;
    let mut full = dofs.extend(&y);
    full.iter_mut().zip(&lift).for_each(|(y, g)| *y += g);
    Ok(full)
}

/// The control-to-cost map `u ↦ J(S u, u)` with `S u = A^{-1}(f - B u)`.
pub struct ReducedProblem<'a> {
    kkt: &'a KktSystem,
    state_solver: LuSolver,
    adjoint_solver: LuSolver,
    target_load: Vec<f64>,
    target_energy: f64,
    source_load: Vec<f64>,
}

impl<'a> ReducedProblem<'a> {
    pub fn new(kkt: &'a KktSystem, y_d: &[f64], f: &[f64]) -> Result<ReducedProblem<'a>> {
        let obs = assemble_region_mass(&kkt.ops.mesh, &kkt.ops.observation_region);
        check_len(kkt.ops.mesh.num_nodes(), y_d.len())?;
        Ok(ReducedProblem {
            kkt,
            state_solver: LuSolver::factorize(&kkt.ops.a)?,
            adjoint_solver: LuSolver::factorize(&kkt.ops.a.transpose())?,
            target_load: kkt.ops.dofs.restrict(&obs.mul_vec(y_d)),
            target_energy: obs.quad(y_d),
            source_load: kkt.ops.state_load(f)?,
        })
    }

    pub fn state(&self, u: &[f64]) -> Result<Vec<f64>> {
        let bu = self.kkt.ops.b.mul_vec(u);
        let rhs: Vec<f64> = self.source_load.iter().zip(&bu).map(|(f, b)| f - b).collect();
        Ok(self.state_solver.solve(&rhs, self.kkt.tol)?.solution)
    }

    pub fn cost(&self, u: &[f64]) -> Result<f64> {
        let y = self.state(u)?;
        let ops = &self.kkt.ops;
        Ok(0.5 * ops.q.quad(&y) - dot(&y, &self.target_load) + 0.5 * self.target_energy + 0.5 * ops.r.quad(u))
    }

    /// Gradient `R u + B^T p` with `A^T p = -(Q y - C^T C y_d)`.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let y = self.state(u)?;
        let ops = &self.kkt.ops;
        let qy = ops.q.mul_vec(&y);
        let rhs: Vec<f64> = qy.iter().zip(&self.target_load).map(|(a, b)| b - a).collect();
        let p = self.adjoint_solver.solve(&rhs, self.kkt.tol)?.solution;
        let ru = ops.r.mul_vec(u);
        let btp = ops.b.tr_mul_vec(&p);
        Ok(ru.iter().zip(&btp).map(|(a, b)| a + b).collect())
    }
}
