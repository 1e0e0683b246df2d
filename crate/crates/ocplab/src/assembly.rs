//! P1 assembly of `-div(a grad y) + b . grad y + c y`, mass matrices,
//! Dirichlet elimination and the `H^1` Gram matrix.
//!
//! Coefficients are sampled once per element at the barycenter.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Point, Region};
use crate::sparse::{dot, CholeskySolver, SparseMatrix, TripletBuilder};

pub type Matrix2 = [[f64; 2]; 2];

pub const IDENTITY: Matrix2 = [[1.0, 0.0], [0.0, 1.0]];

#[derive(Clone)]
pub enum Field<T> {
    Constant(T),
    Variable(Arc<dyn Fn(Point) -> T + Send + Sync>),
}

impl<T: Copy> Field<T> {
    pub fn eval(&self, p: Point) -> T {
        match self {
            Field::Constant(v) => *v,
            Field::Variable(f) => f(p),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Constant(v) => write!(f, "Constant({v:?})"),
            Field::Variable(_) => f.write_str("Variable(..)"),
        }
    }
}

/// Sup-norm bounds `||a||`, `||b||`, `||c||` (spectral / Euclidean / absolute).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientBounds {
    pub diffusion: f64,
    pub advection: f64,
    pub reaction: f64,
}

#[derive(Clone, Debug)]
pub struct Coefficients {
    pub diffusion: Field<Matrix2>,
    pub advection: Field<[f64; 2]>,
    pub reaction: Field<f64>,
    bounds: CoefficientBounds,
}

pub fn spectral_norm(a: &Matrix2) -> f64 {
    // largest singular value of a 2x2 matrix
    let s = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    (0.5 * (s + (s * s - 4.0 * det * det).max(0.0).sqrt())).sqrt()
}

fn min_sym_eigenvalue(a: &Matrix2) -> f64 {
    let off = 0.5 * (a[0][1] + a[1][0]);
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let rad = (0.25 * (a[0][0] - a[1][1]).powi(2) + off * off).sqrt();
    mean - rad
}

impl Coefficients {
    /// `a = I`, `b = 0`, constant `c`.
    pub fn reaction_diffusion(c: f64) -> Coefficients {
        Coefficients {
            diffusion: Field::Constant(IDENTITY),
            advection: Field::Constant([0.0, 0.0]),
            reaction: Field::Constant(c),
            bounds: CoefficientBounds { diffusion: 1.0, advection: 0.0, reaction: c.abs() },
        }
    }

    pub fn constant(a: Matrix2, b: [f64; 2], c: f64) -> Result<Coefficients> {
        if min_sym_eigenvalue(&a) <= 0.0 {
            return Err(Error::InvalidArgument("diffusion tensor must be positive definite".into()));
        }
        if !(a.iter().flatten().chain(&b).all(|v| v.is_finite()) && c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Coefficients {
            diffusion: Field::Constant(a),
            advection: Field::Constant(b),
            reaction: Field::Constant(c),
            bounds: CoefficientBounds {
                diffusion: spectral_norm(&a),
                advection: (b[0] * b[0] + b[1] * b[1]).sqrt(),
                reaction: c.abs(),
            },
        })
    }

    /// Replaces the reaction coefficient by a field with declared sup bound.
    pub fn with_reaction_field(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static, bound: f64) -> Self {
        self.reaction = Field::Variable(Arc::new(f));
        self.bounds.reaction = bound;
        self
    }

    pub fn with_advection_field(mut self, f: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static, bound: f64) -> Self {
        self.advection = Field::Variable(Arc::new(f));
        self.bounds.advection = bound;
        self
    }

    pub fn with_diffusion_field(mut self, f: impl Fn(Point) -> Matrix2 + Send + Sync + 'static, bound: f64) -> Self {
        self.diffusion = Field::Variable(Arc::new(f));
        self.bounds.diffusion = bound;
        self
    }

    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }
}

/// Human-readable label for the reaction-diffusion family `-Δy + c y`.
pub fn equation_name(c: f64) -> String {
    if c == 1.0 {
        "screened_poisson".into()
    } else if c == 0.0 {
        "poisson".into()
    } else if c == -1.0 {
        "helmholtz".into()
    } else {
        format!("c={c}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Local P1 mass entry `∫_K φ_i φ_j`.
pub fn local_mass(measure: f64, dim: usize, i: usize, j: usize) -> f64 {
    let denom = ((dim + 1) * (dim + 2)) as f64;
    if i == j { 2.0 * measure / denom } else { measure / denom }
}

pub fn assemble_operator(mesh: &Mesh, coeff: &Coefficients) -> SparseMatrix {
    let n = mesh.num_nodes();
    let k = mesh.dim() + 1;
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_elements() * k * k);
    for el in mesh.elements() {
        let x = el.barycenter;
        let a = coeff.diffusion.eval(x);
        let b = coeff.advection.eval(x);
        let c = coeff.reaction.eval(x);
        for i in 0..k {
            let gi = el.grads[i];
            for j in 0..k {
                let gj = el.grads[j];
                let agj = [a[0][0] * gj[0] + a[0][1] * gj[1], a[1][0] * gj[0] + a[1][1] * gj[1]];
                let diff = (agj[0] * gi[0] + agj[1] * gi[1]) * el.measure;
                let conv = (b[0] * gj[0] + b[1] * gj[1]) * el.measure / k as f64;
                let react = c * local_mass(el.measure, mesh.dim(), i, j);
                t.push(el.nodes[i], el.nodes[j], diff + conv + react);
            }
        }
    }
    t.build()
}

pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    assemble_operator(mesh, &Coefficients::reaction_diffusion(0.0))
}

/// Mass matrix with an element-wise weight sampled at barycenters.
pub fn assemble_weighted_mass(mesh: &Mesh, weight: impl Fn(Point) -> f64) -> SparseMatrix {
    let n = mesh.num_nodes();
    let k = mesh.dim() + 1;
    let mut t = TripletBuilder::with_capacity(n, n, mesh.num_elements() * k * k);
    for el in mesh.elements() {
        let w = weight(el.barycenter);
        if w == 0.0 {
            continue;
        }
        for i in 0..k {
            for j in 0..k {
                t.push(el.nodes[i], el.nodes[j], w * local_mass(el.measure, mesh.dim(), i, j));
            }
        }
    }
    t.build()
}

pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    assemble_weighted_mass(mesh, |_| 1.0)
}

/// Mass matrix restricted to elements whose barycenter lies in `region`.
pub fn assemble_region_mass(mesh: &Mesh, region: &Region) -> SparseMatrix {
    let tol = mesh.tolerance();
    assemble_weighted_mass(mesh, |x| if region.contains(x, tol) { 1.0 } else { 0.0 })
}

/// Correspondence between mesh nodes and unconstrained degrees of freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    free: Vec<usize>,
    index: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(num_nodes: usize, constrained: &[usize]) -> DofMap {
        let mut fixed = vec![false; num_nodes];
        for &i in constrained {
            fixed[i] = true;
        }
        let free: Vec<usize> = (0..num_nodes).filter(|&i| !fixed[i]).collect();
        let mut index = vec![None; num_nodes];
        for (k, &i) in free.iter().enumerate() {
            index[i] = Some(k);
        }
        DofMap { free, index }
    }

    pub fn for_bc(mesh: &Mesh, bc: BoundaryCondition) -> DofMap {
        match bc {
            BoundaryCondition::Dirichlet => DofMap::new(mesh.num_nodes(), &mesh.boundary_nodes()),
            BoundaryCondition::Neumann => DofMap::new(mesh.num_nodes(), &[]),
        }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    pub fn full_len(&self) -> usize {
        self.index.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.index[node]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.full_len(), "restrict: length mismatch");
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Scatters reduced values into a full nodal vector with zeros at
    /// constrained nodes.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        assert_eq!(reduced.len(), self.len(), "extend: length mismatch");
        let mut full = vec![0.0; self.full_len()];
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = reduced[k];
        }
        full
    }
}

/// Removes rows and columns of the constrained nodes.
pub fn apply_dirichlet(m: &SparseMatrix, constrained: &[usize]) -> (SparseMatrix, DofMap) {
    let dofs = DofMap::new(m.nrows(), constrained);
    (m.select(dofs.free_nodes(), dofs.free_nodes()), dofs)
}

/// `H^1` Gram matrix (stiffness with `a = I` plus mass) on the free nodes.
pub fn h1_gram(mesh: &Mesh, bc: BoundaryCondition) -> SparseMatrix {
    let dofs = DofMap::for_bc(mesh, bc);
    let g = assemble_operator(mesh, &Coefficients::reaction_diffusion(1.0));
    g.select(dofs.free_nodes(), dofs.free_nodes())
}

/// A factored Gram matrix providing primal and dual norms.
pub struct GramNorm {
    chol: CholeskySolver,
}

impl GramNorm {
    pub fn new(gram: &SparseMatrix) -> Result<GramNorm> {
        Ok(GramNorm { chol: CholeskySolver::factorize(gram)? })
    }

    pub fn gram(&self) -> &SparseMatrix {
        self.chol.matrix()
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.gram().quad(x).max(0.0).sqrt()
    }

    /// `G^{-1} f`
    pub fn riesz(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.chol.solve(f)
    }

    pub fn dual_norm(&self, f: &[f64]) -> Result<f64> {
        check_len(self.dim(), f.len())?;
        Ok(dot(f, &self.riesz(f)?).max(0.0).sqrt())
    }
}

/// `sqrt(f^T G^{-1} f)`
pub fn dual_norm(f: &[f64], gram: &SparseMatrix) -> Result<f64> {
    GramNorm::new(gram)?.dual_norm(f)
}

/// Everything needed to form the elliptic and parabolic optimality systems.
///
/// State and adjoint live on the free nodes of `dofs`. Controls live on the
/// nodes touched by elements whose barycenter is in the control region.
pub struct OperatorSet {
    pub mesh: Mesh,
    pub bc: BoundaryCondition,
    pub control_region: Region,
    pub observation_region: Region,
    pub dofs: DofMap,
    pub control_nodes: Vec<usize>,
    /// State operator on free nodes.
    pub a: SparseMatrix,
    /// Control-to-state coupling, `n_y x n_u`.
    pub b: SparseMatrix,
    /// Observation mass `C^T C`, `n_y x n_y`.
    pub q: SparseMatrix,
    /// Control mass times the control weight, `n_u x n_u`.
    pub r: SparseMatrix,
    /// Full mass matrix on the free nodes.
    pub mass: SparseMatrix,
    /// Full nodal mass matrix (including constrained nodes).
    pub nodal_mass: SparseMatrix,
    pub state_norm: GramNorm,
    pub control_norm: GramNorm,
}

impl OperatorSet {
    pub fn assemble(
        mesh: &Mesh,
        coeff: &Coefficients,
        control: &Region,
        observation: &Region,
        bc: BoundaryCondition,
        control_weight: f64,
    ) -> Result<OperatorSet> {
        if !(control_weight.is_finite() && control_weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "control weight must be positive, got {control_weight}"
            )));
        }
        let dofs = DofMap::for_bc(mesh, bc);
        let free = dofs.free_nodes();
        let control_nodes = mesh.region_support(control);
        let nodal_mass = assemble_mass(mesh);
        let control_mass = assemble_region_mass(mesh, control);
        let a = assemble_operator(mesh, coeff).select(free, free);
        let b = control_mass.select(free, &control_nodes);
        let mu = control_mass.select(&control_nodes, &control_nodes);
        let q = assemble_region_mass(mesh, observation).select(free, free);
        let mass = nodal_mass.select(free, free);
        let state_norm = GramNorm::new(&h1_gram(mesh, bc))?;
        let control_norm = GramNorm::new(&mu)?;
        Ok(OperatorSet {
            mesh: mesh.clone(),
            bc,
            control_region: control.clone(),
            observation_region: observation.clone(),
            dofs,
            control_nodes,
            a,
            b,
            q,
            r: mu.scaled(control_weight),
            mass,
            nodal_mass,
            state_norm,
            control_norm,
        })
    }

    pub fn n_state(&self) -> usize {
        self.dofs.len()
    }

    pub fn n_control(&self) -> usize {
        self.control_nodes.len()
    }

    /// Load vector `∫ f φ_i` on free nodes for a nodal field `f`.
    pub fn state_load(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        check_len(self.mesh.num_nodes(), nodal.len())?;
        Ok(self.dofs.restrict(&self.nodal_mass.mul_vec(nodal)))
    }

    /// Scatters control values into a full nodal vector.
    pub fn control_to_nodal(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.num_nodes()];
        for (k, &i) in self.control_nodes.iter().enumerate() {
            full[i] = u[k];
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::RegionPreset;
    use approx::assert_relative_eq;

    #[test]
    fn interval_stiffness_and_mass() {
        let m = Mesh::build_interval(1.0, 4).unwrap();
        let k = assemble_stiffness(&m);
        assert_relative_eq!(k.get(2, 2), 8.0, epsilon = 1e-12);
        assert_relative_eq!(k.get(2, 1), -4.0, epsilon = 1e-12);
        assert_relative_eq!(k.get(0, 0), 4.0, epsilon = 1e-12);
        let mass = assemble_mass(&m);
        assert_relative_eq!(mass.get(2, 2), 2.0 * 0.25 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(mass.get(2, 3), 0.25 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn square_stiffness_interior_row_is_five_point() {
        let m = Mesh::build_square(1.0, 2).unwrap();
        let k = assemble_stiffness(&m);
        let row: Vec<(usize, f64)> = k.row(4).filter(|(_, v)| v.abs() > 1e-14).collect();
        assert_eq!(row.len(), 5);
        assert_relative_eq!(k.get(4, 4), 4.0, epsilon = 1e-12);
        for j in [1, 3, 5, 7] {
            assert_relative_eq!(k.get(4, j), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_integrates_constants() {
        let m = Mesh::build_square(3.0, 4).unwrap();
        let mass = assemble_mass(&m);
        let ones = vec![1.0; m.num_nodes()];
        assert_relative_eq!(mass.quad(&ones), 9.0, epsilon = 1e-12);
        let half = assemble_region_mass(&m, &RegionPreset::Half.region(3.0, 2));
        // elements inside (0, 1.5)^2 exactly tile it
        assert_relative_eq!(half.quad(&ones), 2.25, epsilon = 1e-12);
    }

    #[test]
    fn stiffness_kills_constants() {
        let m = Mesh::build_square(2.0, 3).unwrap();
        let k = assemble_stiffness(&m);
        let ones = vec![1.0; m.num_nodes()];
        assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn advection_matrix_is_skew_on_interior() {
        let m = Mesh::build_interval(1.0, 5).unwrap();
        let c = Coefficients::constant(IDENTITY, [1.0, 0.0], 0.0).unwrap();
        let full = assemble_operator(&m, &c);
        let stiff = assemble_stiffness(&m);
        let conv = SparseMatrix::linear_combination(&[(1.0, &full), (-1.0, &stiff)]);
        // ∫ y' v = -∫ y v' for functions vanishing at the ends
        assert!(conv.select(&[1, 2, 3, 4], &[1, 2, 3, 4]).symmetric_part().max_abs() < 1e-14);
        assert_relative_eq!(conv.get(2, 3), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn dirichlet_elimination() {
        let m = Mesh::build_interval(1.0, 4).unwrap();
        let k = assemble_stiffness(&m);
        let (r, dofs) = apply_dirichlet(&k, &m.boundary_nodes());
        assert_eq!(r.nrows(), 3);
        assert_eq!(dofs.free_nodes(), &[1, 2, 3]);
        assert_eq!(dofs.extend(&[1.0, 2.0, 3.0]), vec![0.0, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(dofs.restrict(&[9.0, 1.0, 2.0, 3.0, 9.0]), vec![1.0, 2.0, 3.0]);
        let (_, all) = apply_dirichlet(&k, &[0, 1, 2, 3, 4]);
        assert!(all.is_empty());
    }

    #[test]
    fn gram_and_dual_norm() {
        let g = SparseMatrix::diagonal(&[4.0, 1.0]);
        assert_relative_eq!(dual_norm(&[2.0, 3.0], &g).unwrap(), (1.0f64 + 9.0).sqrt(), epsilon = 1e-14);
        let m = Mesh::build_interval(2.0, 10).unwrap();
        let g = h1_gram(&m, BoundaryCondition::Dirichlet);
        let gn = GramNorm::new(&g).unwrap();
        let f: Vec<f64> = (0..g.nrows()).map(|i| (i as f64).sin()).collect();
        // the dual norm of G x equals the primal norm of x
        let gx = g.mul_vec(&f);
        assert_relative_eq!(gn.dual_norm(&gx).unwrap(), gn.norm(&f), max_relative = 1e-10);
    }

    #[test]
    fn spectral_norm_matches_known_values() {
        assert_relative_eq!(spectral_norm(&IDENTITY), 1.0);
        assert_relative_eq!(spectral_norm(&[[3.0, 0.0], [0.0, -5.0]]), 5.0, epsilon = 1e-14);
        assert_relative_eq!(spectral_norm(&[[1.0, 1.0], [0.0, 1.0]]), (1.5 + 1.25f64.sqrt()).sqrt(), epsilon = 1e-14);
        assert!(Coefficients::constant([[1.0, 0.0], [0.0, -1.0]], [0.0; 2], 0.0).is_err());
    }

    #[test]
    fn operator_set_shapes() {
        let m = Mesh::build_square(4.0, 8).unwrap();
        let ops = OperatorSet::assemble(
            &m,
            &Coefficients::reaction_diffusion(1.0),
            &RegionPreset::Half.region(4.0, 2),
            &Region::Full,
            BoundaryCondition::Dirichlet,
            1.0,
        )
        .unwrap();
        assert_eq!(ops.n_state(), 49);
        assert_eq!(ops.n_control(), 25);
        assert_eq!((ops.b.nrows(), ops.b.ncols()), (49, 25));
        assert_eq!((ops.r.nrows(), ops.r.ncols()), (25, 25));
        assert!(OperatorSet::assemble(
            &m,
            &Coefficients::reaction_diffusion(1.0),
            &Region::Full,
            &Region::Full,
            BoundaryCondition::Dirichlet,
            0.0
        )
        .is_err());
    }
}
