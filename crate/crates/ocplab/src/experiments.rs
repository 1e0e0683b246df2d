//! Drivers for the numerical experiments: the configurations behind the
//! command-line runner and the acceptance checks.

use crate::analysis::{fit_decay, default_band_width, l2_norm, nodal_blocks, Component, DecayFit, GreenOracle};
use crate::assembly::{BoundaryCondition, Coefficients};
use crate::elliptic::{solve_difference, solve_uncontrolled, BlockVector, Components, KktSolution, KktSystem, Perturbation, Shape, Source};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Region, RegionPreset};
use crate::parabolic::{solve_difference_p, solution_w_norm, ParabolicProblem, SpaceTimeKkt, SpaceTimePerturbation, SpaceTimeSolution};
use crate::sparse::DEFAULT_TOL;

/// Reaction coefficients of the three model equations: screened Poisson,
/// Poisson and Helmholtz.
pub const REACTIONS: [f64; 3] = [1.0, 0.0, -1.0];

/// Stationary experiment on `(0, L)^d` with homogeneous Dirichlet conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticCase {
    pub dim: usize,
    pub length: f64,
    pub n_per_unit: usize,
    pub reaction: f64,
    pub preset: RegionPreset,
}

impl EllipticCase {
    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::build(self.dim, self.length, self.n_per_unit)
    }

    /// Optimality system with `Ω_c = Ω_o` given by the preset.
    pub fn kkt(&self) -> Result<KktSystem> {
        let mesh = self.mesh()?;
        let region = self.preset.region(self.length, self.dim);
        KktSystem::new(
            &mesh,
            &Coefficients::reaction_diffusion(self.reaction),
            &region,
            &region,
            BoundaryCondition::Dirichlet,
        )
    }
}

/// Response of the optimality system to the centered box perturbation.
pub struct DifferenceRun {
    pub kkt: KktSystem,
    pub perturbation: Perturbation,
    pub eps: BlockVector,
    pub delta: KktSolution,
}

impl DifferenceRun {
    pub fn new(case: &EllipticCase) -> Result<DifferenceRun> {
        let kkt = case.kkt()?;
        let perturbation = Perturbation::centered_box(&kkt.ops.mesh);
        let eps = perturbation.rhs(&kkt.ops);
        let delta = solve_difference(&kkt, &eps)?;
        Ok(DifferenceRun { kkt, perturbation, eps, delta })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.kkt.ops.mesh
    }

    /// Nodal `[δy, δu, δp]`.
    pub fn nodal(&self) -> [Vec<f64>; 3] {
        nodal_blocks(&self.kkt, &self.delta.blocks())
    }

    pub fn fit(&self, component: Component) -> Result<DecayFit> {
        let [y, u, p] = self.nodal();
        let field = match component {
            Component::State => y,
            Component::Control => u,
            Component::Adjoint => p,
        };
        let mesh = self.mesh();
        fit_decay(mesh, &field, self.perturbation.center, default_band_width(mesh), component)
    }

    /// `δy` along the segment from the center straight down to the boundary,
    /// as (distance from the center, value). In 1D the whole interval as
    /// (coordinate, value).
    pub fn slice(&self) -> Vec<(f64, f64)> {
        let [y, _, _] = self.nodal();
        slice(self.mesh(), &y)
    }
}

pub fn slice(mesh: &Mesh, nodal: &[f64]) -> Vec<(f64, f64)> {
    if mesh.dim() == 1 {
        return (0..mesh.num_nodes()).map(|i| (mesh.node(i)[0], nodal[i])).collect();
    }
    let c = mesh.center();
    let tol = mesh.tolerance();
    let mut out: Vec<(f64, f64)> = (0..mesh.num_nodes())
        .filter_map(|i| {
            let x = mesh.node(i);
            ((x[0] - c[0]).abs() <= tol && x[1] <= c[1] + tol).then(|| (c[1] - x[1], nodal[i]))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Uncontrolled,
    Controlled,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Uncontrolled => "uncontrolled",
            Mode::Controlled => "controlled",
        }
    }
}

/// 1D source perturbation in the middle of `(0, L)`: either a Dirac of
/// strength `L` (so that the response is the kernel `g(·, L/2)`) or the
/// amplitude-10 box of half-width 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotivationSource {
    Dirac,
    Box,
}

impl MotivationSource {
    pub fn name(self) -> &'static str {
        match self {
            MotivationSource::Dirac => "dirac",
            MotivationSource::Box => "box",
        }
    }
}

/// Nodal state response on `(0, L)` with Dirichlet conditions. In the
/// controlled case `Ω_c = Ω_o = Ω` and the response is `δy` of the difference
/// system. Singular uncontrolled Helmholtz meshes are retried with one more
/// cell.
pub fn motivation_response(
    length: f64,
    cells: usize,
    reaction: f64,
    mode: Mode,
    source: MotivationSource,
) -> Result<(Mesh, Vec<f64>)> {
    let coeff = Coefficients::reaction_diffusion(reaction);
    let mut n = cells;
    loop {
        let mesh = Mesh::build_interval(length, n)?;
        let center = mesh.center();
        let pert = match source {
            MotivationSource::Dirac => Perturbation {
                center,
                shape: Shape::Point,
                amplitude: GreenOracle::new(length)?.source_strength(),
                components: Components::STATE,
            },
            MotivationSource::Box => Perturbation::centered_box(&mesh),
        };
        let attempt = match mode {
            Mode::Uncontrolled => {
                let load = pert.nodal_load(&mesh, &Region::Full);
                solve_uncontrolled(&mesh, &coeff, BoundaryCondition::Dirichlet, &Source::Load(load), None, DEFAULT_TOL)
            }
            Mode::Controlled => {
                KktSystem::new(&mesh, &coeff, &Region::Full, &Region::Full, BoundaryCondition::Dirichlet).and_then(|kkt| {
                    let d = solve_difference(&kkt, &pert.rhs(&kkt.ops))?;
                    Ok(kkt.state_to_nodal(&d.y))
                })
            }
        };
        match attempt {
            Ok(y) => return Ok((mesh, y)),
            Err(e @ (Error::SingularMatrix | Error::NoConvergence { .. })) if mode == Mode::Uncontrolled && n < cells + 8 => {
                log::warn!("L={length}, c={reaction}: solve with {n} cells failed ({e}); retrying with {}", n + 1);
                n += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn motivation_norm(length: f64, cells: usize, reaction: f64, mode: Mode, source: MotivationSource) -> Result<f64> {
    let (mesh, y) = motivation_response(length, cells, reaction, mode, source)?;
    Ok(l2_norm(&mesh, &y))
}

/// Space-time perturbation on `(0, L)`: amplitude `amplitude` on the steps
/// whose midpoint lies in `[t0, t1]`, either on the box `|ω - L/2| ≤ half_width`
/// or (`half_width = None`) at the middle node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeSource {
    pub half_width: Option<f64>,
    pub amplitude: f64,
    pub t0: f64,
    pub t1: f64,
}

impl SpaceTimeSource {
    /// Box of half-width 1 and amplitude 10 on `t ∈ [0, 1]`.
    pub const UNIFORMITY: SpaceTimeSource = SpaceTimeSource { half_width: Some(1.0), amplitude: 10.0, t0: 0.0, t1: 1.0 };
    /// Point source of amplitude 10 at `L/2` on `t ∈ [0, 2]`.
    pub const POINT: SpaceTimeSource = SpaceTimeSource { half_width: None, amplitude: 10.0, t0: 0.0, t1: 2.0 };
}

/// 1D parabolic experiment with homogeneous Neumann conditions. Controlled
/// runs use distributed control and observation, uncontrolled runs empty
/// control and observation regions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParabolicCase {
    pub length: f64,
    pub n_per_unit: usize,
    pub reaction: f64,
    pub horizon: f64,
    pub tau: f64,
    pub mode: Mode,
    pub source: SpaceTimeSource,
}

pub struct ParabolicRun {
    pub kkt: SpaceTimeKkt,
    pub delta: SpaceTimeSolution,
}

impl ParabolicRun {
    pub fn new(case: &ParabolicCase) -> Result<ParabolicRun> {
        if !(case.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", case.tau)));
        }
        let mesh = Mesh::build(1, case.length, case.n_per_unit)?;
        let steps = ((case.horizon / case.tau).round() as usize).max(1);
        let mut problem = ParabolicProblem::new(mesh, Coefficients::reaction_diffusion(case.reaction), case.horizon, steps);
        if case.mode == Mode::Uncontrolled {
            problem.control = Region::Empty;
            problem.observation = Region::Empty;
        }
        let kkt = SpaceTimeKkt::assemble(&problem)?;
        let center: Point = kkt.ops.mesh.center();
        let spatial = Perturbation {
            center,
            shape: match case.source.half_width {
                Some(half_width) => Shape::Box { half_width },
                None => Shape::Point,
            },
            amplitude: case.source.amplitude,
            components: Components::STATE,
        };
        let eps = SpaceTimePerturbation::windowed(&kkt, &spatial, case.source.t0, case.source.t1);
        let delta = solve_difference_p(&kkt, &eps)?;
        Ok(ParabolicRun { kkt, delta })
    }

    pub fn w_norm(&self) -> Result<f64> {
        solution_w_norm(&self.kkt, &self.delta)
    }

    /// `||δy(t_k)||_{L^2}` for every step.
    pub fn state_l2_profile(&self) -> Vec<(f64, f64)> {
        self.delta
            .y
            .iter()
            .enumerate()
            .map(|(k, y)| ((k + 1) as f64 * self.kkt.tau, self.kkt.ops.mass.quad(y).max(0.0).sqrt()))
            .collect()
    }
}

/// `(max - min) / max` of a nonempty list of positive values.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 { (max - min) / max } else { 0.0 }
}
