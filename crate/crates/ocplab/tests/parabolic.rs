use ocplab::assembly::Coefficients;
use ocplab::experiments::{Mode, ParabolicCase, ParabolicRun, SpaceTimeSource};
use ocplab::mesh::{Mesh, Region};
use ocplab::parabolic::{solve_difference_p, total_mass, ParabolicProblem, SpaceTimeKkt, SpaceTimePerturbation};

#[test]
fn turnpike_decay_in_time() {
    let case = ParabolicCase {
        length: 10.0,
        n_per_unit: 4,
        reaction: 1.0,
        horizon: 20.0,
        tau: 0.05,
        mode: Mode::Controlled,
        source: SpaceTimeSource::POINT,
    };
    let run = ParabolicRun::new(&case).unwrap();
    let profile = run.state_l2_profile();
    let support = profile.iter().filter(|(t, _)| *t <= 2.0).map(|p| p.1).fold(0.0, f64::max);
    let mid = profile.iter().min_by(|a, b| (a.0 - 10.0).abs().total_cmp(&(b.0 - 10.0).abs())).unwrap().1;
    assert!(mid <= 1e-3 * support, "{mid} vs {support}");
}

#[test]
fn uncontrolled_trends() {
    let norm_at = |c: f64, t: f64| {
        let run = ParabolicRun::new(&ParabolicCase {
            length: 10.0,
            n_per_unit: 4,
            reaction: c,
            horizon: 8.0,
            tau: 0.05,
            mode: Mode::Uncontrolled,
            source: SpaceTimeSource::POINT,
        })
        .unwrap();
        let p = run.state_l2_profile();
        p.iter().min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs())).unwrap().1
    };
    assert!(norm_at(-1.0, 8.0) > 10.0 * norm_at(-1.0, 2.0));
    assert!(norm_at(1.0, 8.0) < 0.1 * norm_at(1.0, 2.0));
    for c in [-1.0, 0.0, 1.0] {
        let run = ParabolicRun::new(&ParabolicCase {
            length: 10.0,
            n_per_unit: 4,
            reaction: c,
            horizon: 12.0,
            tau: 0.05,
            mode: Mode::Controlled,
            source: SpaceTimeSource::POINT,
        })
        .unwrap();
        let p = run.state_l2_profile();
        assert!(p.last().unwrap().1 < 1e-2 * p[39].1, "c={c}");
    }
}

#[test]
fn initial_perturbation_conserves_mass_without_control() {
    let mesh = Mesh::build_interval(6.0, 24).unwrap();
    let mut problem = ParabolicProblem::new(mesh.clone(), Coefficients::reaction_diffusion(0.0), 3.0, 30);
    problem.control = Region::Empty;
    problem.observation = Region::Empty;
    let kkt = SpaceTimeKkt::assemble(&problem).unwrap();
    assert_eq!(kkt.n_control(), 0);
    let mut eps = SpaceTimePerturbation::zeros(&kkt);
    eps.initial = (0..mesh.num_nodes()).map(|i| if mesh.node(i)[0] < 2.0 { 1.0 } else { 0.0 }).collect();
    let sol = solve_difference_p(&kkt, &eps).unwrap();
    let m0 = total_mass(&kkt.ops.mass, &eps.initial);
    for y in &sol.y {
        assert!((total_mass(&kkt.ops.mass, y) - m0).abs() <= 1e-10 * m0.abs().max(1.0));
    }
}
