//! All-at-once implicit Euler discretization of the parabolic optimality
//! system.
//!
//! With `D` the block lower-bidiagonal matrix with diagonal `Mass/τ + A` and
//! subdiagonal `-Mass/τ`, the unknowns `[y_1..y_nt | u_1..u_nt | p_1..p_nt]`
//! satisfy
//!
//! ```text
//! [ Q   0   D^T ] [y]   [ Q y_d + Mass p_{nt+1} / τ e_nt ]
//! [ 0   R   B^T ] [u] = [ 0                              ]
//! [ D   B   0   ] [p]   [ f + Mass y_0 / τ e_1           ]
//! ```
//!
//! which is the discrete Lagrangian system of the `τ`-weighted cost divided
//! by `τ`. The terminal value `p_{nt+1}` is zero for the control problem.

use std::sync::OnceLock;

use crate::assembly::{assemble_region_mass, BoundaryCondition, Coefficients, GramNorm, OperatorSet};
use crate::elliptic::Perturbation;
use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Region};
use crate::sparse::{dot, LuSolver, SparseMatrix, TripletBuilder, DEFAULT_TOL};

#[derive(Clone, Debug)]
pub struct ParabolicProblem {
    pub mesh: Mesh,
    pub coeff: Coefficients,
    pub horizon: f64,
    pub steps: usize,
    pub control: Region,
    pub observation: Region,
    pub bc: BoundaryCondition,
    pub control_weight: f64,
}

impl ParabolicProblem {
    pub fn new(mesh: Mesh, coeff: Coefficients, horizon: f64, steps: usize) -> ParabolicProblem {
        ParabolicProblem {
            mesh,
            coeff,
            horizon,
            steps,
            control: Region::Full,
            observation: Region::Full,
            bc: BoundaryCondition::Neumann,
            control_weight: 1.0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Per-step vectors for the three unknown groups (or the three row groups of
/// a right-hand side: adjoint rows in `y`, control rows in `u`, state rows
/// in `p`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeVector {
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl SpaceTimeVector {
    pub fn zeros(steps: usize, n_y: usize, n_u: usize) -> SpaceTimeVector {
        SpaceTimeVector { y: vec![vec![0.0; n_y]; steps], u: vec![vec![0.0; n_u]; steps], p: vec![vec![0.0; n_y]; steps] }
    }

    pub fn concat(&self) -> Vec<f64> {
        self.y.iter().chain(&self.u).chain(&self.p).flatten().copied().collect()
    }
}

#[derive(Clone, Debug)]
pub struct SpaceTimeSolution {
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub relative_residual: f64,
}

pub struct SpaceTimeKkt {
    pub ops: OperatorSet,
    pub matrix: SparseMatrix,
    pub tau: f64,
    pub steps: usize,
    tol: f64,
    factor: OnceLock<LuSolver>,
}

/// Nodal data: initial state, and per-step target and source fields.
#[derive(Clone, Debug)]
pub struct ParabolicData {
    pub y0: Vec<f64>,
    pub y_d: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

impl ParabolicData {
    pub fn zeros(num_nodes: usize, steps: usize) -> ParabolicData {
        ParabolicData { y0: vec![0.0; num_nodes], y_d: vec![vec![0.0; num_nodes]; steps], f: vec![vec![0.0; num_nodes]; steps] }
    }
}

/// The five right-hand-side components of the space-time difference system,
/// already in load form except for the initial and terminal values, which
/// are functions (free-node values).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimePerturbation {
    pub adjoint: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    pub control: Vec<Vec<f64>>,
    pub state: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl SpaceTimePerturbation {
    pub fn zeros(kkt: &SpaceTimeKkt) -> SpaceTimePerturbation {
        let (nt, n_y, n_u) = (kkt.steps, kkt.n_state(), kkt.n_control());
        SpaceTimePerturbation {
            adjoint: vec![vec![0.0; n_y]; nt],
            terminal: vec![0.0; n_y],
            control: vec![vec![0.0; n_u]; nt],
            state: vec![vec![0.0; n_y]; nt],
            initial: vec![0.0; n_y],
        }
    }

    /// Spatial perturbation switched on for the steps whose midpoint lies in
    /// `[t0, t1]`, entering the rows selected by `spatial.components`.
    pub fn windowed(kkt: &SpaceTimeKkt, spatial: &Perturbation, t0: f64, t1: f64) -> SpaceTimePerturbation {
        let mut eps = SpaceTimePerturbation::zeros(kkt);
        let block = spatial.rhs(&kkt.ops);
        for k in 0..kkt.steps {
            let mid = (k as f64 + 0.5) * kkt.tau;
            if mid >= t0 && mid <= t1 {
                eps.adjoint[k] = block.y.clone();
                eps.control[k] = block.u.clone();
                eps.state[k] = block.p.clone();
            }
        }
        eps
    }
}

impl SpaceTimeKkt {
    pub fn assemble(problem: &ParabolicProblem) -> Result<SpaceTimeKkt> {
        if problem.steps < 1 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        if !(problem.horizon > 0.0 && problem.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", problem.horizon)));
        }
        let ops = OperatorSet::assemble(
            &problem.mesh,
            &problem.coeff,
            &problem.control,
            &problem.observation,
            problem.bc,
            problem.control_weight,
        )?;
        let nt = problem.steps;
        let tau = problem.tau();
        let (n_y, n_u) = (ops.n_state(), ops.n_control());
        let n = nt * (2 * n_y + n_u);
        let diag = SparseMatrix::linear_combination(&[(1.0 / tau, &ops.mass), (1.0, &ops.a)]);
        let cap = nt * (ops.q.nnz() + ops.r.nnz() + 2 * diag.nnz() + 2 * ops.mass.nnz() + 2 * ops.b.nnz());
        let mut t = TripletBuilder::with_capacity(n, n, cap);
        let (u0, p0) = (nt * n_y, nt * (n_y + n_u));
        for k in 0..nt {
            let (yk, uk, pk) = (k * n_y, u0 + k * n_u, p0 + k * n_y);
            t.add_block(yk, yk, &ops.q, 1.0);
            t.add_block(uk, uk, &ops.r, 1.0);
            // state row k: D_kk y_k + D_k,k-1 y_{k-1} + B u_k
            t.add_block(pk, yk, &diag, 1.0);
            t.add_block(pk, uk, &ops.b, 1.0);
            // adjoint row k: D_kk^T p_k + D_{k+1,k}^T p_{k+1}
            t.add_block_transpose(yk, pk, &diag, 1.0);
            t.add_block_transpose(uk, pk, &ops.b, 1.0);
            if k > 0 {
                t.add_block(pk, yk - n_y, &ops.mass, -1.0 / tau);
                t.add_block_transpose(yk - n_y, pk, &ops.mass, -1.0 / tau);
            }
        }
        Ok(SpaceTimeKkt { ops, matrix: t.build(), tau, steps: nt, tol: DEFAULT_TOL, factor: OnceLock::new() })
    }

    pub fn with_tolerance(mut self, tol: f64) -> SpaceTimeKkt {
        self.tol = tol;
        self
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

    pub fn horizon(&self) -> f64 {
        self.tau * self.steps as f64
    }

    pub fn split(&self, x: &[f64]) -> SpaceTimeVector {
        let (nt, n_y, n_u) = (self.steps, self.n_state(), self.n_control());
        let (u0, p0) = (nt * n_y, nt * (n_y + n_u));
        SpaceTimeVector {
            y: (0..nt).map(|k| x[k * n_y..(k + 1) * n_y].to_vec()).collect(),
            u: (0..nt).map(|k| x[u0 + k * n_u..u0 + (k + 1) * n_u].to_vec()).collect(),
            p: (0..nt).map(|k| x[p0 + k * n_y..p0 + (k + 1) * n_y].to_vec()).collect(),
        }
    }

    pub fn factorization(&self) -> Result<&LuSolver> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = LuSolver::factorize(&self.matrix)?;
        Ok(self.factor.get_or_init(|| f))
    }

    pub fn solve_rhs(&self, rhs: &SpaceTimeVector) -> Result<SpaceTimeSolution> {
        let b = rhs.concat();
        check_len(self.dim(), b.len())?;
        let report = self.factorization()?.solve(&b, self.tol)?;
        let x = self.split(&report.solution);
        Ok(SpaceTimeSolution { y: x.y, u: x.u, p: x.p, relative_residual: report.relative_residual })
    }

    fn check_steps(&self, name: &str, v: &[Vec<f64>], len: usize) -> Result<()> {
        if v.len() != self.steps {
            return Err(Error::InvalidArgument(format!("{name}: expected {} time steps, got {}", self.steps, v.len())));
        }
        v.iter().try_for_each(|x| check_len(len, x.len()))
    }
}

pub fn solve_parabolic(kkt: &SpaceTimeKkt, data: &ParabolicData) -> Result<SpaceTimeSolution> {
    let mesh = &kkt.ops.mesh;
    let nn = mesh.num_nodes();
    kkt.check_steps("y_d", &data.y_d, nn)?;
    kkt.check_steps("f", &data.f, nn)?;
    check_len(nn, data.y0.len())?;
    let obs = assemble_region_mass(mesh, &kkt.ops.observation_region);
    let dofs = &kkt.ops.dofs;
    let mut rhs = SpaceTimeVector::zeros(kkt.steps, kkt.n_state(), kkt.n_control());
    for k in 0..kkt.steps {
        rhs.y[k] = dofs.restrict(&obs.mul_vec(&data.y_d[k]));
        rhs.p[k] = kkt.ops.state_load(&data.f[k])?;
    }
    let m0 = kkt.ops.mass.mul_vec(&dofs.restrict(&data.y0));
    rhs.p[0].iter_mut().zip(&m0).for_each(|(r, m)| *r += m / kkt.tau);
    kkt.solve_rhs(&rhs)
}

pub fn solve_difference_p(kkt: &SpaceTimeKkt, eps: &SpaceTimePerturbation) -> Result<SpaceTimeSolution> {
    let (n_y, n_u) = (kkt.n_state(), kkt.n_control());
    kkt.check_steps("adjoint", &eps.adjoint, n_y)?;
    kkt.check_steps("control", &eps.control, n_u)?;
    kkt.check_steps("state", &eps.state, n_y)?;
    check_len(n_y, eps.terminal.len())?;
    check_len(n_y, eps.initial.len())?;
    let mut rhs = SpaceTimeVector { y: eps.adjoint.clone(), u: eps.control.clone(), p: eps.state.clone() };
    let last = kkt.steps - 1;
    let mt = kkt.ops.mass.mul_vec(&eps.terminal);
    rhs.y[last].iter_mut().zip(&mt).for_each(|(r, m)| *r += m / kkt.tau);
    let m0 = kkt.ops.mass.mul_vec(&eps.initial);
    rhs.p[0].iter_mut().zip(&m0).for_each(|(r, m)| *r += m / kkt.tau);
    kkt.solve_rhs(&rhs)
}

/// `||v||_{L^2(0,T;X)}` with `X` given by a Gram matrix.
pub fn l2_time_norm(v: &[Vec<f64>], tau: f64, gram: &SparseMatrix) -> f64 {
    v.iter().map(|vk| tau * gram.quad(vk)).sum::<f64>().max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WNorm {
    /// `||v||_{L^2(0,T;V)}`
    pub space: f64,
    /// `||v'||_{L^2(0,T;V*)}` from backward differences
    pub time_derivative: f64,
}

impl WNorm {
    pub fn total(&self) -> f64 {
        self.space + self.time_derivative
    }
}

/// `W(0,T)` norm of a sequence of free-node vectors. The time derivative is
/// measured as the dual norm of the functional `Mass (v_k - v_{k-1}) / τ`.
pub fn w_norm(v: &[Vec<f64>], tau: f64, norm: &GramNorm, mass: &SparseMatrix) -> Result<WNorm> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument("W norm needs at least two time steps".into()));
    }
    let space = l2_time_norm(v, tau, norm.gram());
    let mut acc = 0.0;
    for k in 1..v.len() {
        let diff: Vec<f64> = v[k].iter().zip(&v[k - 1]).map(|(a, b)| (a - b) / tau).collect();
        acc += tau * norm.dual_norm(&mass.mul_vec(&diff))?.powi(2);
    }
    Ok(WNorm { space, time_derivative: acc.sqrt() })
}

/// `||δy||_W + ||δu||_{L^2(0,T;U)} + ||δp||_W`
pub fn solution_w_norm(kkt: &SpaceTimeKkt, sol: &SpaceTimeSolution) -> Result<f64> {
    let s = &kkt.ops.state_norm;
    let y = w_norm(&sol.y, kkt.tau, s, &kkt.ops.mass)?;
    let p = w_norm(&sol.p, kkt.tau, s, &kkt.ops.mass)?;
    let u = l2_time_norm(&sol.u, kkt.tau, kkt.ops.control_norm.gram());
    Ok(y.total() + u + p.total())
}

/// `| Σ (y_k - y_{k-1})^T M p_k - [y_nt^T M p_{nt+1} - y_0^T M p_1 - Σ y_k^T M (p_{k+1} - p_k)] |`
/// relative to the first sum: the discrete integration-by-parts identity.
pub fn integration_by_parts_defect(
    mass: &SparseMatrix,
    y0: &[f64],
    y: &[Vec<f64>],
    p: &[Vec<f64>],
    p_terminal: &[f64],
) -> f64 {
    let nt = y.len();
    let yk = |k: usize| if k == 0 { y0 } else { &y[k - 1][..] };
    let pk = |k: usize| if k == nt + 1 { p_terminal } else { &p[k - 1][..] };
    let mut lhs = 0.0;
    let mut sum = 0.0;
    for k in 1..=nt {
        let dy: Vec<f64> = yk(k).iter().zip(yk(k - 1)).map(|(a, b)| a - b).collect();
        lhs += mass.bilinear(&dy, pk(k));
        let dp: Vec<f64> = pk(k + 1).iter().zip(pk(k)).map(|(a, b)| a - b).collect();
        sum += mass.bilinear(yk(k), &dp);
    }
    let rhs = mass.bilinear(yk(nt), pk(nt + 1)) - mass.bilinear(yk(0), pk(1)) - sum;
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatBoundRow {
    pub horizon: f64,
    pub steps: usize,
    /// `||y||_{L^2(0,T;L^2)}`
    pub l2l2: f64,
    /// `sqrt(T L)`, the value for `y ≡ 1`
    pub l2l2_expected: f64,
    pub w_norm: f64,
    /// `||y0||_{L^2} + ||f||`
    pub data_norm: f64,
    pub ratio: f64,
    /// `4 e^T`
    pub bound: f64,
}

/// Uncontrolled Neumann heat equation on `(0, L)` with `y0 ≡ 1`, `f = 0`.
pub fn heat_bound_experiment(length: f64, cells: usize, horizons: &[f64], tau: f64) -> Result<Vec<HeatBoundRow>> {
    let mesh = Mesh::build_interval(length, cells)?;
    horizons
        .iter()
        .map(|&t| {
            let steps = ((t / tau).round() as usize).max(2);
            let mut problem = ParabolicProblem::new(mesh.clone(), Coefficients::reaction_diffusion(0.0), t, steps);
            problem.control = Region::Empty;
            problem.observation = Region::Empty;
            let kkt = SpaceTimeKkt::assemble(&problem)?;
            let mut data = ParabolicData::zeros(mesh.num_nodes(), steps);
            data.y0 = vec![1.0; mesh.num_nodes()];
            let sol = solve_parabolic(&kkt, &data)?;
            let l2l2 = l2_time_norm(&sol.y, kkt.tau, &kkt.ops.mass);
            let w = w_norm(&sol.y, kkt.tau, &kkt.ops.state_norm, &kkt.ops.mass)?.total();
            let data_norm = kkt.ops.mass.quad(&data.y0).sqrt();
            Ok(HeatBoundRow {
                horizon: t,
                steps,
                l2l2,
                l2l2_expected: (t * length).sqrt(),
                w_norm: w,
                data_norm,
                ratio: w / data_norm,
                bound: 4.0 * t.exp(),
            })
        })
        .collect()
}

/// `∫ v` for a free-node vector (Neumann: all nodes).
pub fn total_mass(mass: &SparseMatrix, v: &[f64]) -> f64 {
    dot(&mass.tr_mul_vec(&vec![1.0; mass.nrows()]), v)
}
