use std::collections::BTreeMap;

use ocplab::analysis::{certify_stabilizability, estimate_inverse_norm, l2_norm, Component, GreenOracle, OpNormMethod};
use ocplab::assembly::{assemble_operator, equation_name, h1_gram, BoundaryCondition, Coefficients, DofMap};
use ocplab::elliptic::{solve_difference, solve_ocp, solve_uncontrolled, BlockVector, KktSystem, Perturbation, ReducedProblem, Source};
use ocplab::experiments::{
    motivation_response, spread, DifferenceRun, EllipticCase, Mode, MotivationSource, ParabolicCase, ParabolicRun,
    SpaceTimeSource,
};
use ocplab::mesh::{Mesh, Region, RegionPreset};
use ocplab::parabolic::heat_bound_experiment;
use ocplab::scaling::{assemble_f, verify_scaled_identity, weight, Convention};
use ocplab::sparse::{dot, norm2};
use serde::Serialize;

use crate::commands::CmdResult;
use crate::config::ExperimentConfig;
use crate::output::write_text;

#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub relation: &'static str,
    pub tolerance: f64,
    /// Failures of these checks are reported but do not fail the run.
    pub expected_failure: bool,
}

#[derive(Serialize)]
struct FitEntry {
    #[serde(rename = "L")]
    length: f64,
    mu_hat: f64,
    r_squared: f64,
}

#[derive(Serialize)]
pub struct Summary {
    pub passed: bool,
    pub config_sha256: String,
    pub checks: Vec<Check>,
    /// preset -> equation -> fits of the state difference
    mu_hat: BTreeMap<String, BTreeMap<String, Vec<FitEntry>>>,
}

fn le(name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), passed: value <= tolerance, value, relation: "<=", tolerance, expected_failure: false }
}

fn ge(name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check { name: name.into(), passed: value >= tolerance, value, relation: ">=", tolerance, expected_failure: false }
}

/// Pseudo-random but reproducible vector.
fn probe(n: usize, k: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b).max(f64::MIN_POSITIVE)
}

fn closed_form_checks(tol: f64, out: &mut Vec<Check>) -> CmdResult<()> {
    let (mut nodal, mut rel) = (0.0f64, 0.0f64);
    for length in [2.0, 8.0, 20.0] {
        let (mesh, y) = motivation_response(length, (8.0 * length) as usize, 0.0, Mode::Uncontrolled, MotivationSource::Dirac)?;
        let g = GreenOracle::new(length)?;
        for i in 0..mesh.num_nodes() {
            nodal = nodal.max((y[i] - g.dirac_mid(mesh.node(i)[0])).abs());
        }
        let exact = g.dirac_mid_norm_sq().sqrt();
        rel = rel.max((l2_norm(&mesh, &y) - exact).abs() / exact);
    }
    out.push(le("green_nodal_error", nodal, tol));
    out.push(le("green_norm_rel_error", rel, 0.01));

    let mut rel = 0.0f64;
    for length in [5.0, 10.0, 20.0] {
        let mesh = Mesh::build_interval(length, (8.0 * length) as usize)?;
        let mut g = vec![0.0; mesh.num_nodes()];
        *g.last_mut().expect("nonempty mesh") = 1.0;
        let zero = Source::Nodal(vec![0.0; mesh.num_nodes()]);
        let coeff = Coefficients::reaction_diffusion(0.0);
        let y = solve_uncontrolled(&mesh, &coeff, BoundaryCondition::Dirichlet, &zero, Some(&g), 1e-12)?;
        let exact = GreenOracle::new(length)?.boundary_norm_sq(1.0);
        rel = rel.max((l2_norm(&mesh, &y).powi(2) - exact).abs() / exact);
    }
    out.push(le("boundary_norm_rel_error", rel, 0.01));

    let mesh = Mesh::build_interval(10.0, 100)?;
    let bc = BoundaryCondition::Dirichlet;
    let dofs = DofMap::for_bc(&mesh, bc);
    let free = dofs.free_nodes();
    let a = assemble_operator(&mesh, &Coefficients::reaction_diffusion(1.0)).select(free, free);
    let g = h1_gram(&mesh, bc);
    let defect = (0..100)
        .map(|k| {
            let x = probe(free.len(), 0.37 + k as f64);
            a.quad(&x) - g.quad(&x)
        })
        .fold(f64::INFINITY, f64::min);
    out.push(ge("screened_coercivity_defect", defect, -tol));
    Ok(())
}

fn invariant_checks(tol: f64, out: &mut Vec<Check>) -> CmdResult<()> {
    let mut asym = 0.0f64;
    for preset in RegionPreset::ALL {
        for c in [1.0, 0.0, -1.0] {
            let kkt = EllipticCase { dim: 2, length: 6.0, n_per_unit: 2, reaction: c, preset }.kkt()?;
            asym = asym.max(kkt.matrix.max_asymmetry() / kkt.matrix.max_abs());
        }
    }
    out.push(le("kkt_asymmetry", asym, 1e-12));

    let kkt = EllipticCase { dim: 2, length: 6.0, n_per_unit: 2, reaction: -1.0, preset: RegionPreset::Half }.kkt()?;
    let (ny, nu) = (kkt.n_state(), kkt.n_control());
    let e1 = BlockVector { y: probe(ny, 0.3), u: probe(nu, 0.7), p: probe(ny, 1.1) };
    let e2 = BlockVector { y: probe(ny, 1.9), u: probe(nu, 2.3), p: probe(ny, 2.9) };
    let mut e12 = e1.clone();
    e12.add_scaled(-2.5, &e2);
    let x12 = solve_difference(&kkt, &e12)?;
    let mut comb = solve_difference(&kkt, &e1)?.blocks();
    comb.add_scaled(-2.5, &solve_difference(&kkt, &e2)?.blocks());
    out.push(le("superposition", rel_diff(&x12.blocks().concat(), &comb.concat()), tol));
    out.push(le("kkt_relative_residual", x12.relative_residual, tol));
    let zero = solve_difference(&kkt, &BlockVector::zeros(ny, nu))?.blocks().concat();
    out.push(le("zero_data_solution", zero.iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0));

    let mesh = Mesh::build_square(6.0, 12)?;
    let kkt = KktSystem::new(
        &mesh,
        &Coefficients::reaction_diffusion(0.0),
        &RegionPreset::Half.region(6.0, 2),
        &Region::Full,
        BoundaryCondition::Dirichlet,
    )?;
    let y_d: Vec<f64> = (0..mesh.num_nodes()).map(|i| (mesh.node(i)[0] * 0.7).sin()).collect();
    let f: Vec<f64> = (0..mesh.num_nodes()).map(|i| mesh.node(i)[1] / 6.0).collect();
    let opt = solve_ocp(&kkt, &y_d, &f)?;
    let red = ReducedProblem::new(&kkt, &y_d, &f)?;
    out.push(le("reduced_gradient_at_optimum", norm2(&red.gradient(&opt.u)?), 100.0 * tol));
    let (u, d) = (probe(kkt.n_control(), 0.9), probe(kkt.n_control(), 1.7));
    let h = 1e-4;
    let shift = |s: f64| -> Vec<f64> { u.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
    let fd = (red.cost(&shift(h))? - red.cost(&shift(-h))?) / (2.0 * h);
    let an = dot(&red.gradient(&u)?, &d);
    out.push(le("finite_difference_gradient_rel_error", (fd - an).abs() / an.abs().max(1e-12), 1e-6));
    Ok(())
}

fn scaling_checks(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> CmdResult<()> {
    let coeff = Coefficients::reaction_diffusion(1.0);
    let mut zero = 0.0f64;
    let mut res = Vec::new();
    for n in [50, 100, 200] {
        let mesh = Mesh::build_interval(10.0, n)?;
        let kkt = KktSystem::new(&mesh, &coeff, &Region::Full, &Region::Full, BoundaryCondition::Dirichlet)?;
        let z = mesh.center();
        let scaled = assemble_f(&mesh, &coeff, z);
        let eps = Perturbation::centered_box(&mesh).rhs(&kkt.ops);
        let delta = solve_difference(&kkt, &eps)?;
        let r0 = verify_scaled_identity(&kkt, &scaled, &weight(&mesh, z, 0.0), &delta, &eps, Convention::DERIVED)?;
        zero = zero.max(r0.relative_residual);
        res.push(verify_scaled_identity(&kkt, &scaled, &weight(&mesh, z, cfg.mu), &delta, &eps, Convention::DERIVED)?.relative_residual);
    }
    out.push(le("scaled_identity_mu0", zero, cfg.tol));
    let worst_ratio = res.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let mut c = le("scaled_identity_refinement_ratio", worst_ratio, 1.0);
    c.passed = worst_ratio < 1.0;
    out.push(c);

    let helm = Coefficients::reaction_diffusion(-1.0);
    let mesh = Mesh::build(2, 20.0, 2)?;
    let bc = BoundaryCondition::Dirichlet;
    let full = certify_stabilizability(&mesh, &helm, &Region::Full, bc, 1.0, 1.0)?;
    out.push(ge("certificate_full_alpha", full.alpha, 0.9 * full.predicted_alpha));
    let half = certify_stabilizability(&mesh, &helm, &RegionPreset::Half.region(20.0, 2), bc, 1.0, 1.0)?;
    out.push(le("certificate_half_alpha", half.alpha, 0.0));
    Ok(())
}

fn decay_checks(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> CmdResult<BTreeMap<String, BTreeMap<String, Vec<FitEntry>>>> {
    let mut table = BTreeMap::new();
    for &preset in &cfg.presets {
        let mut per_eq = BTreeMap::new();
        for &c in &cfg.c {
            let eq = equation_name(c);
            let mut fits = Vec::new();
            for &length in &cfg.lengths {
                let case = EllipticCase { dim: 2, length, n_per_unit: cfg.n_per_unit, reaction: c, preset };
                let fit = DifferenceRun::new(&case)?.fit(Component::State)?;
                let tag = format!("{}_{eq}_L{length}", preset.name());
                match preset {
                    RegionPreset::Full => {
                        out.push(ge(format!("decay_{tag}_r_squared"), fit.r_squared, 0.9));
                        let mut pos = ge(format!("decay_{tag}_mu_hat"), fit.mu_hat, 0.0);
                        pos.passed = fit.mu_hat > 0.0;
                        out.push(pos);
                    }
                    RegionPreset::Half if c == 1.0 => out.push(ge(format!("decay_{tag}_mu_hat"), fit.mu_hat, 0.1)),
                    RegionPreset::Half if c == 0.0 || c == -1.0 => {
                        let mut chk = le(format!("no_decay_{tag}_mu_hat"), fit.mu_hat, 0.05);
                        chk.passed = fit.mu_hat < 0.05 || fit.r_squared < 0.5;
                        // the Poisson rate shrinks like 1/L but is not below the threshold at desk scale
                        chk.expected_failure = c == 0.0;
                        out.push(chk);
                    }
                    _ => {}
                }
                fits.push(FitEntry { length, mu_hat: fit.mu_hat, r_squared: fit.r_squared });
            }
            if preset == RegionPreset::Full {
                let rates: Vec<f64> = fits.iter().filter(|f| f.length >= 20.0).map(|f| f.mu_hat).collect();
                if rates.len() >= 2 {
                    out.push(le(format!("decay_uniformity_{eq}"), spread(&rates), 0.2));
                }
            }
            per_eq.insert(eq, fits);
        }
        table.insert(preset.name().to_string(), per_eq);
    }
    Ok(table)
}

fn opnorm_checks(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> CmdResult<()> {
    if cfg.lengths.len() < 2 {
        return Ok(());
    }
    for preset in [RegionPreset::Full, RegionPreset::BorderGap] {
        for &c in &cfg.c {
            let est = cfg
                .lengths
                .iter()
                .map(|&length| {
                    let kkt = EllipticCase { dim: 2, length, n_per_unit: cfg.n_per_unit, reaction: c, preset }.kkt()?;
                    Ok(estimate_inverse_norm(&kkt, cfg.trials, cfg.seed, OpNormMethod::RandomProbing)?.value)
                })
                .collect::<CmdResult<Vec<f64>>>()?;
            let eq = equation_name(c);
            if preset == RegionPreset::Full {
                out.push(le(format!("opnorm_uniformity_{eq}"), spread(&est), 0.15));
            } else {
                // largest relative increase from one L to the next; steps are
                // within the probing noise, so a failure is not fatal
                let growth = est.windows(2).map(|w| (w[1] - w[0]) / w[0]).fold(f64::NEG_INFINITY, f64::max);
                let mut chk = le(format!("opnorm_border_gap_growth_{eq}"), growth, 0.0);
                chk.expected_failure = true;
                out.push(chk);
            }
        }
    }
    Ok(())
}

fn parabolic_checks(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> CmdResult<()> {
    let mut norms = Vec::new();
    for length in [10.0, 20.0] {
        for horizon in [2.0, 4.0, 8.0, 16.0] {
            let case = ParabolicCase {
                length,
                n_per_unit: 4,
                reaction: 1.0,
                horizon,
                tau: 0.05,
                mode: Mode::Controlled,
                source: SpaceTimeSource::UNIFORMITY,
            };
            norms.push(ParabolicRun::new(&case)?.w_norm()?);
        }
    }
    out.push(le("parabolic_w_norm_spread", spread(&norms), 0.1));
    for r in heat_bound_experiment(10.0, 40, &[1.0, 2.0, 4.0, 8.0], 0.05)? {
        out.push(le(format!("heat_l2l2_rel_error_T{}", r.horizon), (r.l2l2 - r.l2l2_expected).abs() / r.l2l2_expected, cfg.tol));
        out.push(le(format!("heat_ratio_T{}", r.horizon), r.ratio, r.bound));
    }
    Ok(())
}

/// Runs every check, writes `verify.json` and returns the summary.
pub fn verify(cfg: &ExperimentConfig) -> CmdResult<Summary> {
    let mut checks = Vec::new();
    closed_form_checks(cfg.tol, &mut checks)?;
    invariant_checks(cfg.tol, &mut checks)?;
    scaling_checks(cfg, &mut checks)?;
    let mu_hat = decay_checks(cfg, &mut checks)?;
    opnorm_checks(cfg, &mut checks)?;
    parabolic_checks(cfg, &mut checks)?;
    let passed = checks.iter().all(|c| c.passed || c.expected_failure);
    let summary = Summary { passed, config_sha256: cfg.hash(), checks, mu_hat };
    let json = serde_json::to_string_pretty(&summary)?;
    write_text(&cfg.out, "verify.json", &(json + "\n"))?;
    Ok(summary)
}
