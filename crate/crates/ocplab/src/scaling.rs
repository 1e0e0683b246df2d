//! Exponential weights `ρ(x) = exp(μ ||z - x||_1)` and the first/second order
//! commutator operators that appear when the optimality system is written
//! for the weighted variables `ρ δ`.

use crate::analysis::{power_operator_norm, InnerProduct};
use crate::assembly::{local_mass, Coefficients, CoefficientBounds};
use crate::elliptic::{BlockVector, KktSolution, KktSystem};
use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Point};
use crate::sparse::{SparseMatrix, TripletBuilder};

#[derive(Clone, Debug)]
pub struct DecayWeight {
    pub center: Point,
    pub mu: f64,
    /// `ρ` at every mesh node.
    pub nodal: Vec<f64>,
    /// `sgn(z - x)` at every element barycenter (0 where a coordinate ties).
    pub signs: Vec<[f64; 2]>,
}

pub fn sign_field(mesh: &Mesh, z: Point) -> Vec<[f64; 2]> {
    let tol = mesh.tolerance();
    let sgn = |d: f64| if d.abs() <= tol { 0.0 } else { d.signum() };
    mesh.elements()
        .map(|e| {
            let s = [sgn(z[0] - e.barycenter[0]), sgn(z[1] - e.barycenter[1])];
            if mesh.dim() == 1 { [s[0], 0.0] } else { s }
        })
        .collect()
}

pub fn one_norm_distance(mesh: &Mesh, z: Point, x: Point) -> f64 {
    let d = (z[0] - x[0]).abs();
    if mesh.dim() == 1 { d } else { d + (z[1] - x[1]).abs() }
}

pub fn weight(mesh: &Mesh, z: Point, mu: f64) -> DecayWeight {
    let nodal = mesh.nodes().iter().map(|&x| (mu * one_norm_distance(mesh, z, x)).exp()).collect();
    DecayWeight { center: z, mu, nodal, signs: sign_field(mesh, z) }
}

impl DecayWeight {
    /// Multiplies a vector indexed by `nodes` entrywise by `ρ`.
    pub fn apply(&self, nodes: &[usize], v: &[f64]) -> Vec<f64> {
        nodes.iter().zip(v).map(|(&i, x)| self.nodal[i] * x).collect()
    }
}

/// Full nodal `F1`, `F2` with rigorous operator-norm bounds in the `H^1`
/// setting: `|s|_2 <= sqrt(d)` gives `||F1|| <= sqrt(d)(||a|| + ||b||)` and
/// `||F2|| <= d ||a||`.
#[derive(Clone, Debug)]
pub struct ScaledOperators {
    pub f1: SparseMatrix,
    pub f2: SparseMatrix,
    pub bound_f1: f64,
    pub bound_f2: f64,
}

pub fn assemble_f(mesh: &Mesh, coeff: &Coefficients, z: Point) -> ScaledOperators {
    let n = mesh.num_nodes();
    let dim = mesh.dim();
    let k = dim + 1;
    let signs = sign_field(mesh, z);
    let mut t1 = TripletBuilder::with_capacity(n, n, mesh.num_elements() * k * k);
    let mut t2 = TripletBuilder::with_capacity(n, n, mesh.num_elements() * k * k);
    for (e, el) in mesh.elements().enumerate() {
        let s = signs[e];
        let a = coeff.diffusion.eval(el.barycenter);
        let b = coeff.advection.eval(el.barycenter);
        let a_s = [a[0][0] * s[0] + a[0][1] * s[1], a[1][0] * s[0] + a[1][1] * s[1]];
        let s_a = [a[0][0] * s[0] + a[1][0] * s[1], a[0][1] * s[0] + a[1][1] * s[1]];
        let s_a_s = s[0] * a_s[0] + s[1] * a_s[1];
        let b_s = b[0] * s[0] + b[1] * s[1];
        let avg = el.measure / k as f64;
        for i in 0..k {
            let gi = el.grads[i];
            for j in 0..k {
                let gj = el.grads[j];
                let m = local_mass(el.measure, dim, i, j);
                let first = (a_s[0] * gi[0] + a_s[1] * gi[1]) * avg;
                let second = (s_a[0] * gj[0] + s_a[1] * gj[1]) * avg;
                t1.push(el.nodes[i], el.nodes[j], first - second + b_s * m);
                t2.push(el.nodes[i], el.nodes[j], s_a_s * m);
            }
        }
    }
    let CoefficientBounds { diffusion, advection, .. } = coeff.bounds();
    let d = dim as f64;
    ScaledOperators {
        f1: t1.build(),
        f2: t2.build(),
        bound_f1: d.sqrt() * (diffusion + advection),
        bound_f2: d * diffusion,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    /// `1/(2 ||M^{-1}||) - (μ max{||a||, ||b||} + μ^2 ||a||)`
    pub margin: f64,
}

pub fn mu_admissible(mu: f64, bounds: CoefficientBounds, minv_norm: f64) -> Result<Admissibility> {
    if !(minv_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("inverse norm must be positive, got {minv_norm}")));
    }
    let lhs = mu * bounds.diffusion.max(bounds.advection) + mu * mu * bounds.diffusion;
    let margin = 0.5 / minv_norm - lhs;
    Ok(Admissibility { admissible: margin > 0.0, margin })
}

/// Positive root of `μ m + μ^2 ||a|| = 1/(2 ||M^{-1}||)` with `m = max{||a||, ||b||}`.
pub fn max_admissible_mu(bounds: CoefficientBounds, minv_norm: f64) -> Result<f64> {
    if !(minv_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("inverse norm must be positive, got {minv_norm}")));
    }
    let rhs = 0.5 / minv_norm;
    let m = bounds.diffusion.max(bounds.advection);
    let a = bounds.diffusion;
    if a == 0.0 {
        return Ok(if m == 0.0 { f64::INFINITY } else { rhs / m });
    }
    // numerically stable form of (-m + sqrt(m^2 + 4 a rhs)) / (2a)
    Ok(2.0 * rhs / (m + (m * m + 4.0 * a * rhs).sqrt()))
}

/// Signs of the `μ^2 F2` term and of the `μ F1^T` term in the adjoint row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convention {
    pub f2_sign: f64,
    pub adjoint_f1_sign: f64,
}

impl Convention {
    /// State row `A + μF1 - μ²F2`, adjoint row `A^T - μF1^T - μ²F2`, as
    /// obtained by substituting `y = ρ^{-1} ỹ` and testing with `ρ v`.
    pub const DERIVED: Convention = Convention { f2_sign: -1.0, adjoint_f1_sign: -1.0 };
    /// `+μ²F2` in both rows and `+μF1^T` in the adjoint row.
    pub const DISPLAYED: Convention = Convention { f2_sign: 1.0, adjoint_f1_sign: 1.0 };
}

struct ReducedF {
    f1: SparseMatrix,
    f2: SparseMatrix,
}

fn reduce(kkt: &KktSystem, scaled: &ScaledOperators) -> ReducedF {
    let free = kkt.ops.dofs.free_nodes();
    ReducedF { f1: scaled.f1.select(free, free), f2: scaled.f2.select(free, free) }
}

/// Applies `μ 𝓕1 + μ² 𝓕2` (the perturbation of the block matrix) to `x`.
fn apply_commutator(f: &ReducedF, mu: f64, conv: Convention, x: &BlockVector, transpose: bool) -> BlockVector {
    // block (3,1) is μF1 + sF2, block (1,3) is tF1^T + sF2
    let s = conv.f2_sign * mu * mu;
    let t = conv.adjoint_f1_sign * mu;
    let mut out = BlockVector::zeros(x.y.len(), x.u.len());
    if !transpose {
        let f1y = f.f1.mul_vec(&x.y);
        let f2y = f.f2.mul_vec(&x.y);
        let f1tp = f.f1.tr_mul_vec(&x.p);
        let f2p = f.f2.mul_vec(&x.p);
        out.p = f1y.iter().zip(&f2y).map(|(a, b)| mu * a + s * b).collect();
        out.y = f1tp.iter().zip(&f2p).map(|(a, b)| t * a + s * b).collect();
    } else {
        let f1ty = f.f1.tr_mul_vec(&x.p);
        let f2p = f.f2.mul_vec(&x.p);
        let f1y = f.f1.mul_vec(&x.y);
        let f2y = f.f2.mul_vec(&x.y);
        out.y = f1ty.iter().zip(&f2p).map(|(a, b)| mu * a + s * b).collect();
        out.p = f1y.iter().zip(&f2y).map(|(a, b)| t * a + s * b).collect();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledIdentityReport {
    /// `||(M + μ𝓕1 + μ²𝓕2) ρδ - ρε|| / ||ρε||` in `V* x U* x V*`.
    pub relative_residual: f64,
    pub h: f64,
    /// `5 h (1 + μ)`
    pub tolerance: f64,
    pub passed: bool,
}

/// Residual of the weighted optimality system for the weighted difference
/// `ρ δ` and weighted right-hand side `ρ ε`.
pub fn verify_scaled_identity(
    kkt: &KktSystem,
    scaled: &ScaledOperators,
    weight: &DecayWeight,
    delta: &KktSolution,
    eps: &BlockVector,
    conv: Convention,
) -> Result<ScaledIdentityReport> {
    check_len(kkt.n_state(), delta.y.len())?;
    check_len(kkt.n_state(), eps.p.len())?;
    let free = kkt.ops.dofs.free_nodes();
    let ctrl = &kkt.ops.control_nodes;
    let wd = BlockVector {
        y: weight.apply(free, &delta.y),
        u: weight.apply(ctrl, &delta.u),
        p: weight.apply(free, &delta.p),
    };
    let we = BlockVector { y: weight.apply(free, &eps.y), u: weight.apply(ctrl, &eps.u), p: weight.apply(free, &eps.p) };
    let f = reduce(kkt, scaled);
    let mut r = kkt.split(&kkt.matrix.mul_vec(&wd.concat()));
    r.add_scaled(1.0, &apply_commutator(&f, weight.mu, conv, &wd, false));
    r.add_scaled(-1.0, &we);
    let num = kkt.dual_norm(&r)?;
    let den = kkt.dual_norm(&we)?;
    let relative_residual = if den > 0.0 { num / den } else { num };
    let h = kkt.ops.mesh.h();
    let tolerance = 5.0 * h * (1.0 + weight.mu);
    Ok(ScaledIdentityReport { relative_residual, h, tolerance, passed: relative_residual <= tolerance })
}

/// Gram-measured norms `||F1||_{V -> V*}` and `||F2||_{V -> V*}` on the free
/// nodes of `kkt`.
pub fn measured_f_norms(kkt: &KktSystem, scaled: &ScaledOperators, iterations: usize) -> Result<(f64, f64)> {
    let f = reduce(kkt, scaled);
    let g = &kkt.ops.state_norm;
    let primal = InnerProduct { apply: &|x| Ok(g.gram().mul_vec(x)), solve: &|x| g.riesz(x) };
    let dual = InnerProduct { apply: &|x| g.riesz(x), solve: &|x| Ok(g.gram().mul_vec(x)) };
    let n = kkt.n_state();
    let n1 = power_operator_norm(
        n,
        &|x| Ok(f.f1.mul_vec(x)),
        &|x| Ok(f.f1.tr_mul_vec(x)),
        &primal,
        &dual,
        iterations,
    )?;
    let n2 = power_operator_norm(
        n,
        &|x| Ok(f.f2.mul_vec(x)),
        &|x| Ok(f.f2.tr_mul_vec(x)),
        &primal,
        &dual,
        iterations,
    )?;
    Ok((n1, n2))
}

/// Gram-measured norm of `M^{-1}(μ𝓕1 + μ²𝓕2)` on `V x U x V`.
pub fn neumann_operator_norm(
    kkt: &KktSystem,
    scaled: &ScaledOperators,
    mu: f64,
    conv: Convention,
    iterations: usize,
) -> Result<f64> {
    let f = reduce(kkt, scaled);
    let solve_m = |b: &[f64]| -> Result<Vec<f64>> {
        Ok(kkt.factorization()?.solve(b, kkt.tolerance())?.solution)
    };
    let forward = |x: &[f64]| -> Result<Vec<f64>> {
        solve_m(&apply_commutator(&f, mu, conv, &kkt.split(x), false).concat())
    };
    let backward = |x: &[f64]| -> Result<Vec<f64>> {
        let mx = solve_m(x)?;
        Ok(apply_commutator(&f, mu, conv, &kkt.split(&mx), true).concat())
    };
    let gram = |x: &[f64]| -> Result<Vec<f64>> { Ok(kkt.gram_apply(&kkt.split(x)).concat()) };
    let riesz = |x: &[f64]| -> Result<Vec<f64>> {
        let b = kkt.split(x);
        let s = &kkt.ops.state_norm;
        Ok(BlockVector { y: s.riesz(&b.y)?, u: kkt.ops.control_norm.riesz(&b.u)?, p: s.riesz(&b.p)? }.concat())
    };
    let space = InnerProduct { apply: &gram, solve: &riesz };
    power_operator_norm(kkt.dim(), &forward, &backward, &space, &space, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, BoundaryCondition};
    use crate::mesh::Region;
    use approx::assert_relative_eq;

    #[test]
    fn weight_values() {
        let m = Mesh::build_interval(4.0, 4).unwrap();
        let w = weight(&m, [0.0, 0.0], 0.5);
        assert_relative_eq!(w.nodal[2], 1.0f64.exp(), epsilon = 1e-14);
        assert_eq!(w.nodal[0], 1.0);
        let w0 = weight(&m, [1.3, 0.0], 0.0);
        assert!(w0.nodal.iter().all(|&v| v == 1.0));
        let m2 = Mesh::build_square(4.0, 4).unwrap();
        let w = weight(&m2, [2.0, 2.0], 0.3);
        let min = w.nodal.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(w.nodal[m2.nearest_node([2.0, 2.0])], min);
        assert!(w.nodal.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn signs_are_unit_off_the_axes() {
        let m = Mesh::build_square(4.0, 5).unwrap();
        let s = sign_field(&m, [2.0, 2.0]);
        for (e, el) in m.elements().enumerate() {
            for k in 0..2 {
                if (el.barycenter[k] - 2.0).abs() > 1e-9 {
                    assert_eq!(s[e][k].abs(), 1.0);
                }
            }
        }
    }

    #[test]
    fn f_vanishes_without_coefficients() {
        let m = Mesh::build_square(2.0, 3).unwrap();
        let c = Coefficients::reaction_diffusion(1.0)
            .with_diffusion_field(|_| [[0.0; 2]; 2], 0.0);
        let f = assemble_f(&m, &c, [1.0, 1.0]);
        assert_eq!(f.f1.max_abs(), 0.0);
        assert_eq!(f.f2.max_abs(), 0.0);
    }

    #[test]
    fn f2_is_mass_in_one_dimension() {
        let m = Mesh::build_interval(3.0, 6).unwrap();
        let f = assemble_f(&m, &Coefficients::reaction_diffusion(0.0), [1.1, 0.0]);
        let mass = assemble_mass(&m);
        let diff = SparseMatrix::linear_combination(&[(1.0, &f.f2), (-1.0, &mass)]);
        assert!(diff.max_abs() < 1e-14);
        assert!(f.f2.max_asymmetry() <= 1e-12 * f.f2.max_abs());
    }

    #[test]
    fn admissibility_arithmetic() {
        let b = CoefficientBounds { diffusion: 1.0, advection: 1.0, reaction: 0.0 };
        let r = mu_admissible(0.2, b, 1.0).unwrap();
        assert!(r.admissible);
        assert_relative_eq!(r.margin, 0.5 - 0.24, epsilon = 1e-15);
        let r0 = mu_admissible(0.0, b, 4.0).unwrap();
        assert_eq!(r0.margin, 0.125);
        assert!(mu_admissible(0.1, b, 0.0).is_err());
    }

    #[test]
    fn max_mu_against_bisection() {
        // oracle: bisection on the strict inequality
        for &(a, bb, minv) in &[(1.0, 1.0, 1.0), (2.0, 0.5, 3.0), (0.3, 4.0, 0.7), (1.0, 0.0, 10.0)] {
            let bounds = CoefficientBounds { diffusion: a, advection: bb, reaction: 0.0 };
            let (mut lo, mut hi) = (0.0f64, 1e3f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mu_admissible(mid, bounds, minv).unwrap().admissible { lo = mid } else { hi = mid }
            }
            let mu = max_admissible_mu(bounds, minv).unwrap();
            assert!((mu - lo).abs() <= 1e-12, "{mu} vs {lo}");
        }
    }

    #[test]
    fn scaled_identity_trivial_cases() {
        let mesh = Mesh::build_interval(10.0, 40).unwrap();
        let coeff = Coefficients::reaction_diffusion(1.0);
        let kkt = KktSystem::new(&mesh, &coeff, &Region::Full, &Region::Full, BoundaryCondition::Dirichlet).unwrap();
        let z = mesh.center();
        let scaled = assemble_f(&mesh, &coeff, z);
        let pert = crate::elliptic::Perturbation::centered_box(&mesh);
        let eps = pert.rhs(&kkt.ops);
        let delta = crate::elliptic::solve_difference(&kkt, &eps).unwrap();
        let r = verify_scaled_identity(&kkt, &scaled, &weight(&mesh, z, 0.0), &delta, &eps, Convention::DERIVED).unwrap();
        assert!(r.relative_residual <= 1e-10);
        let zero = BlockVector::zeros(kkt.n_state(), kkt.n_control());
        let d0 = crate::elliptic::solve_difference(&kkt, &zero).unwrap();
        let r = verify_scaled_identity(&kkt, &scaled, &weight(&mesh, z, 0.3), &d0, &zero, Convention::DERIVED).unwrap();
        assert_eq!(r.relative_residual, 0.0);
    }

    #[test]
    fn anisotropic_bounds() {
        let c = Coefficients::constant([[2.0, 0.0], [0.0, 1.0]], [0.0, 1.0], 0.0).unwrap();
        let m = Mesh::build_square(1.0, 2).unwrap();
        let f = assemble_f(&m, &c, [0.5, 0.5]);
        assert_relative_eq!(f.bound_f1, 2f64.sqrt() * 3.0, epsilon = 1e-14);
        assert_relative_eq!(f.bound_f2, 4.0, epsilon = 1e-14);
    }
}
