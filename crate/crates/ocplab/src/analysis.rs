//! Operator-norm probing, decay-rate fitting, coercivity certificates and
//! the closed-form 1D Poisson solutions used as test oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::assembly::{assemble_operator, assemble_weighted_mass, h1_gram, local_mass, BoundaryCondition, Coefficients, DofMap};
use crate::elliptic::{BlockVector, KktSystem};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Region};
use crate::scaling::one_norm_distance;
use crate::sparse::{dot, rayleigh_min, SparseMatrix};

/// An inner product `<x, y> = x^T H y` given by `apply = H·` and `solve = H^{-1}·`.
pub struct InnerProduct<'a> {
    pub apply: &'a (dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    pub solve: &'a (dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
}

type LinearMap<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;

/// Power iteration for `||T||` between two inner-product spaces, iterating
/// `x <- G_X^{-1} T^T H_Y T x`. Returns the largest ratio `||Tx|| / ||x||`
/// seen, which is a lower bound on the norm.
pub fn power_operator_norm(
    dim: usize,
    forward: &LinearMap<'_>,
    adjoint: &LinearMap<'_>,
    domain: &InnerProduct<'_>,
    codomain: &InnerProduct<'_>,
    iterations: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x0: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    power_operator_norm_from(x0, forward, adjoint, domain, codomain, iterations)
}

pub fn power_operator_norm_from(
    mut x: Vec<f64>,
    forward: &LinearMap<'_>,
    adjoint: &LinearMap<'_>,
    domain: &InnerProduct<'_>,
    codomain: &InnerProduct<'_>,
    iterations: usize,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for _ in 0..iterations.max(1) {
        let gx = (domain.apply)(&x)?;
        let nx = dot(&x, &gx).max(0.0).sqrt();
        if nx == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let tx = forward(&x)?;
        let htx = (codomain.apply)(&tx)?;
        best = best.max(dot(&tx, &htx).max(0.0).sqrt());
        x = (domain.solve)(&adjoint(&htx)?)?;
    }
    Ok(best)
}

/// A square system with block-diagonal Gram matrices on the primal side.
/// Dual norms use the inverse Gram matrix.
pub trait MixedNormSystem: Sync {
    fn dim(&self) -> usize;
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>>;
    /// `G x`
    fn gram_apply(&self, x: &[f64]) -> Vec<f64>;
    /// `G^{-1} f`
    fn gram_solve(&self, f: &[f64]) -> Result<Vec<f64>>;

    fn primal_norm(&self, x: &[f64]) -> f64 {
        dot(x, &self.gram_apply(x)).max(0.0).sqrt()
    }

    fn dual_norm(&self, f: &[f64]) -> Result<f64> {
        Ok(dot(f, &self.gram_solve(f)?).max(0.0).sqrt())
    }
}

impl MixedNormSystem for KktSystem {
    fn dim(&self) -> usize {
        KktSystem::dim(self)
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factorization()?.solve(rhs, self.tolerance())?.solution)
    }

    fn gram_apply(&self, x: &[f64]) -> Vec<f64> {
        KktSystem::gram_apply(self, &self.split(x)).concat()
    }

    fn gram_solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let b = self.split(f);
        let s = &self.ops.state_norm;
        Ok(BlockVector { y: s.riesz(&b.y)?, u: self.ops.control_norm.riesz(&b.u)?, p: s.riesz(&b.p)? }.concat())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpNormMethod {
    RandomProbing,
    /// Random probing followed by power iteration from the best probe.
    PowerIteration { steps: usize },
}

#[derive(Clone, Debug)]
pub struct OpNormEstimate {
    pub value: f64,
    pub trials: usize,
    pub method: OpNormMethod,
    /// `||M^{-1} ε||_primal / ||ε||_dual` per random trial, in trial order.
    pub ratios: Vec<f64>,
}

impl OpNormEstimate {
    pub fn running_max(&self) -> Vec<f64> {
        self.ratios
            .iter()
            .scan(0.0f64, |m, &r| {
                *m = m.max(r);
                Some(*m)
            })
            .collect()
    }
}

fn trial_load(dim: usize, seed: u64, trial: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Lower bound for `||M^{-1}||` from `V* x U* x V*` to `V x U x V` by random
/// Gaussian loads. Trials run in parallel; every trial has its own random
/// stream so the result does not depend on scheduling.
pub fn estimate_inverse_norm<S: MixedNormSystem>(
    sys: &S,
    trials: usize,
    seed: u64,
    method: OpNormMethod,
) -> Result<OpNormEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let n = sys.dim();
    let ratios = (0..trials)
        .into_par_iter()
        .map(|t| {
            let eps = trial_load(n, seed, t);
            let d = sys.dual_norm(&eps)?;
            if d == 0.0 {
                return Ok(0.0);
            }
            Ok(sys.primal_norm(&sys.solve(&eps)?) / d)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut value = ratios.iter().cloned().fold(0.0, f64::max);
    if let OpNormMethod::PowerIteration { steps } = method {
        let best = (0..trials).max_by(|&a, &b| ratios[a].total_cmp(&ratios[b])).unwrap_or(0);
        // domain: dual space (inner product G^{-1}), codomain: primal (G)
        let forward = |x: &[f64]| sys.solve(x);
        let gram = |x: &[f64]| Ok(sys.gram_apply(x));
        let gram_inv = |x: &[f64]| sys.gram_solve(x);
        let domain = InnerProduct { apply: &gram_inv, solve: &gram };
        let codomain = InnerProduct { apply: &gram, solve: &gram_inv };
        let p = power_operator_norm_from(trial_load(n, seed, best), &forward, &forward, &domain, &codomain, steps)?;
        value = value.max(p);
    }
    Ok(OpNormEstimate { value, trials, method, ratios })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    State,
    Control,
    Adjoint,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::State => "state",
            Component::Control => "control",
            Component::Adjoint => "adjoint",
        }
    }
}

pub const DECAY_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub inner: f64,
    pub outer: f64,
    /// Windowed `H^1` norm of the field over elements whose barycenter lies
    /// in the band.
    pub norm: f64,
}

impl Band {
    pub fn mid(&self) -> f64 {
        0.5 * (self.inner + self.outer)
    }
}

#[derive(Clone, Debug)]
pub struct DecayFit {
    pub bands: Vec<Band>,
    pub mu_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub component: Component,
}

pub fn default_band_width(mesh: &Mesh) -> f64 {
    (4.0 * mesh.h()).max(mesh.side_length() / 40.0)
}

/// Fits `log ||δ||_{band} ≈ intercept - mu_hat · mid` over 1-norm annuli of
/// width `band_width` around `z`. The innermost band and bands with norm
/// below [`DECAY_FLOOR`] are excluded from the fit.
pub fn fit_decay(mesh: &Mesh, field: &[f64], z: Point, band_width: f64, component: Component) -> Result<DecayFit> {
    crate::error::check_len(mesh.num_nodes(), field.len())?;
    if !(band_width > mesh.h()) {
        return Err(Error::InvalidArgument(format!(
            "band width {band_width} must exceed the mesh size {}",
            mesh.h()
        )));
    }
    let mut sq: Vec<f64> = Vec::new();
    for el in mesh.elements() {
        let k = (one_norm_distance(mesh, z, el.barycenter) / band_width).floor() as usize;
        if sq.len() <= k {
            sq.resize(k + 1, 0.0);
        }
        let nv = el.nodes.len();
        let mut grad = [0.0; 2];
        for a in 0..nv {
            grad[0] += field[el.nodes[a]] * el.grads[a][0];
            grad[1] += field[el.nodes[a]] * el.grads[a][1];
        }
        let mut l2 = 0.0;
        for a in 0..nv {
            for b in 0..nv {
                l2 += field[el.nodes[a]] * field[el.nodes[b]] * local_mass(el.measure, mesh.dim(), a, b);
            }
        }
        sq[k] += (grad[0] * grad[0] + grad[1] * grad[1]) * el.measure + l2;
    }
    let bands: Vec<Band> = sq
        .iter()
        .enumerate()
        .map(|(k, s)| Band { inner: k as f64 * band_width, outer: (k + 1) as f64 * band_width, norm: s.max(0.0).sqrt() })
        .collect();
    let pts: Vec<(f64, f64)> =
        bands.iter().skip(1).filter(|b| b.norm > DECAY_FLOOR).map(|b| (b.mid(), b.norm.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} bands above the floor, need 3", pts.len())));
    }
    let (slope, intercept, r_squared) = least_squares(&pts);
    Ok(DecayFit { bands, mu_hat: -slope, intercept, r_squared, component })
}

/// Ordinary least squares line through `(x, y)` pairs: `(slope, intercept, r²)`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 1e-300 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilizabilityCertificate {
    pub delta: f64,
    pub r: f64,
    /// Smallest eigenvalue estimate of `sym(A + K)` against the `H^1` Gram.
    pub alpha: f64,
    /// Verified lower bound for the same eigenvalue.
    pub alpha_lower: f64,
    /// `min{1, δ, r}`
    pub predicted_alpha: f64,
    pub passed: bool,
}

/// Coercivity of `A + B K_B` with the multiplication feedback
/// `K_B = χ_{c < r} (-c + δ)` acting on `region`.
pub fn certify_stabilizability(
    mesh: &Mesh,
    coeff: &Coefficients,
    control: &Region,
    bc: BoundaryCondition,
    r: f64,
    delta: f64,
) -> Result<StabilizabilityCertificate> {
    certify(mesh, coeff, control, bc, r, delta)
}

/// Same test for `A + K_C C` with the feedback acting on the observation region.
pub fn certify_detectability(
    mesh: &Mesh,
    coeff: &Coefficients,
    observation: &Region,
    bc: BoundaryCondition,
    r: f64,
    delta: f64,
) -> Result<StabilizabilityCertificate> {
    certify(mesh, coeff, observation, bc, r, delta)
}

fn certify(
    mesh: &Mesh,
    coeff: &Coefficients,
    region: &Region,
    bc: BoundaryCondition,
    r: f64,
    delta: f64,
) -> Result<StabilizabilityCertificate> {
    if !(r > 0.0 && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("need r > 0 and delta > 0, got r={r}, delta={delta}")));
    }
    let tol = mesh.tolerance();
    let feedback = assemble_weighted_mass(mesh, |x| {
        let c = coeff.reaction.eval(x);
        if region.contains(x, tol) && c < r { delta - c } else { 0.0 }
    });
    let a = assemble_operator(mesh, coeff);
    let closed = SparseMatrix::linear_combination(&[(1.0, &a), (1.0, &feedback)]);
    let dofs = DofMap::for_bc(mesh, bc);
    let free = dofs.free_nodes();
    let sym = closed.select(free, free).symmetric_part();
    let est = rayleigh_min(&sym, &h1_gram(mesh, bc), 500)?;
    Ok(StabilizabilityCertificate {
        delta,
        r,
        alpha: est.value,
        alpha_lower: est.lower_bound,
        predicted_alpha: 1.0f64.min(delta).min(r),
        passed: est.value > 0.0,
    })
}

/// Closed-form 1D Poisson solutions on `(0, L)` with homogeneous Dirichlet
/// data. The kernel `g(ω, ξ)` is the response to a point source of strength
/// `L` at `ξ` (equivalently, `L` times the Green's function of `-y''`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenOracle {
    pub length: f64,
}

impl GreenOracle {
    pub fn new(length: f64) -> Result<GreenOracle> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidArgument(format!("length must be positive, got {length}")));
        }
        Ok(GreenOracle { length })
    }

    pub fn kernel(&self, omega: f64, xi: f64) -> f64 {
        let l = self.length;
        if omega < xi { (l - xi) * omega } else { (l - omega) * xi }
    }

    /// Strength of the point source whose solution is `kernel(·, ξ)`.
    pub fn source_strength(&self) -> f64 {
        self.length
    }

    pub fn dirac_mid(&self, omega: f64) -> f64 {
        self.kernel(omega, 0.5 * self.length)
    }

    /// `L^5 / 48`
    pub fn dirac_mid_norm_sq(&self) -> f64 {
        self.length.powi(5) / 48.0
    }

    /// Solution of `-y'' = 0`, `y(0) = 0`, `y(L) = b`.
    pub fn boundary(&self, b: f64, omega: f64) -> f64 {
        b * omega / self.length
    }

    /// `b^2 L / 3`
    pub fn boundary_norm_sq(&self, b: f64) -> f64 {
        b * b * self.length / 3.0
    }
}

/// `||v||_{L^2}` of a nodal P1 field.
pub fn l2_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    crate::assembly::assemble_mass(mesh).quad(v).max(0.0).sqrt()
}

/// `||v||_{H^1}` of a nodal P1 field.
pub fn h1_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    assemble_operator(mesh, &Coefficients::reaction_diffusion(1.0)).quad(v).max(0.0).sqrt()
}

/// Nodal values of the solution blocks for CSV output and fitting.
pub fn nodal_blocks(kkt: &KktSystem, x: &BlockVector) -> [Vec<f64>; 3] {
    [kkt.state_to_nodal(&x.y), kkt.control_to_nodal(&x.u), kkt.state_to_nodal(&x.p)]
}
