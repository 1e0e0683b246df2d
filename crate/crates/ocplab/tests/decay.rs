use ocplab::analysis::{certify_stabilizability, fit_decay, Component, GreenOracle};
use ocplab::assembly::{BoundaryCondition, Coefficients};
use ocplab::elliptic::{solve_uncontrolled, Source};
use ocplab::experiments::{DifferenceRun, EllipticCase};
use ocplab::mesh::{Mesh, RegionPreset};

#[test]
fn screened_dirac_response_decays_at_unit_rate() {
    let mesh = Mesh::build_interval(40.0, 800).unwrap();
    let z = mesh.center();
    let y = solve_uncontrolled(
        &mesh,
        &Coefficients::reaction_diffusion(1.0),
        BoundaryCondition::Dirichlet,
        &Source::Dirac(z),
        None,
        1e-12,
    )
    .unwrap();
    let fit = fit_decay(&mesh, &y, z, 1.0, Component::State).unwrap();
    assert!((0.9..=1.1).contains(&fit.mu_hat), "{}", fit.mu_hat);
    assert!(fit.r_squared > 0.99);
}

#[test]
fn green_oracle_is_nodally_exact() {
    for (length, n) in [(4.0, 16), (10.0, 50), (7.0, 70)] {
        let mesh = Mesh::build_interval(length, n).unwrap();
        let g = GreenOracle::new(length).unwrap();
        let mut load = vec![0.0; mesh.num_nodes()];
        load[mesh.nearest_node(mesh.center())] = g.source_strength();
        let y = solve_uncontrolled(
            &mesh,
            &Coefficients::reaction_diffusion(0.0),
            BoundaryCondition::Dirichlet,
            &Source::Load(load),
            None,
            1e-12,
        )
        .unwrap();
        for i in 0..mesh.num_nodes() {
            assert!((y[i] - g.dirac_mid(mesh.node(i)[0])).abs() <= 1e-10);
        }
    }
}

#[test]
fn screened_poisson_decays_in_one_and_two_dimensions() {
    for dim in [1, 2] {
        let mut rates = Vec::new();
        for length in [20.0, 40.0] {
            let case = EllipticCase { dim, length, n_per_unit: if dim == 1 { 8 } else { 2 }, reaction: 1.0, preset: RegionPreset::Full };
            let fit = DifferenceRun::new(&case).unwrap().fit(Component::State).unwrap();
            assert!(fit.mu_hat > 0.0 && fit.r_squared > 0.9, "d={dim} L={length}: {fit:?}");
            rates.push(fit.mu_hat);
        }
        assert!((rates[0] - rates[1]).abs() <= 0.2 * rates[0].max(rates[1]), "{rates:?}");
    }
}

#[test]
fn helmholtz_half_control_is_not_stabilizable() {
    let mesh = Mesh::build(2, 20.0, 2).unwrap();
    let cert = certify_stabilizability(
        &mesh,
        &Coefficients::reaction_diffusion(-1.0),
        &RegionPreset::Half.region(20.0, 2),
        BoundaryCondition::Dirichlet,
        1.0,
        1.0,
    )
    .unwrap();
    assert!(!cert.passed && cert.alpha <= 0.0);
}
