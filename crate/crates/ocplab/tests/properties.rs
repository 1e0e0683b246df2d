use nalgebra::{DMatrix, SymmetricEigen};
use ocplab::analysis::{estimate_inverse_norm, fit_decay, Component, MixedNormSystem, OpNormMethod};
use ocplab::assembly::{assemble_mass, assemble_operator, BoundaryCondition, Coefficients, GramNorm};
use ocplab::elliptic::{solve_difference, BlockVector, KktSystem};
use ocplab::mesh::{Aabb, Mesh, Region, RegionPreset};
use ocplab::parabolic::w_norm;
use ocplab::scaling::one_norm_distance;
use ocplab::sparse::{SparseMatrix, TripletBuilder};
use proptest::prelude::*;

fn preset() -> impl Strategy<Value = RegionPreset> {
    prop_oneof![Just(RegionPreset::Full), Just(RegionPreset::BorderGap), Just(RegionPreset::Half)]
}

fn small_kkt(c: f64, preset: RegionPreset, length: f64, bc: BoundaryCondition) -> KktSystem {
    let mesh = Mesh::build_square(length, (2.0 * length) as usize).unwrap();
    let region = preset.region(length, 2);
    KktSystem::new(&mesh, &Coefficients::reaction_diffusion(c), &region, &region, bc).unwrap()
}

fn dense_gram(sys: &KktSystem) -> DMatrix<f64> {
    let n = MixedNormSystem::dim(sys);
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = MixedNormSystem::gram_apply(sys, &e);
        for i in 0..n {
            g[(i, j)] = col[i];
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn region_and_complement_partition_elements(
        x0 in 0.0f64..4.0, y0 in 0.0f64..4.0, w in 0.1f64..3.0, hgt in 0.1f64..3.0
    ) {
        let mesh = Mesh::build_square(4.0, 6).unwrap();
        let r = Region::Boxes(vec![Aabb::new([x0, y0], [x0 + w, y0 + hgt])]);
        let inside = mesh.region_elements(&r);
        let outside = mesh.region_elements(&r.clone().complement());
        prop_assert_eq!(inside.len() + outside.len(), mesh.num_elements());
        prop_assert!(inside.iter().all(|e| !outside.contains(e)));
        let total = mesh.region_measure(&r) + mesh.region_measure(&r.complement());
        prop_assert!((total - 16.0).abs() < 1e-12);
    }

    #[test]
    fn operator_rows_and_mass_total(c in -2.0f64..2.0, n in 1usize..6, dim in 1usize..3) {
        let mesh = if dim == 1 { Mesh::build_interval(3.0, n + 1).unwrap() } else { Mesh::build_square(3.0, n).unwrap() };
        let ones = vec![1.0; mesh.num_nodes()];
        let m = assemble_mass(&mesh);
        let a = assemble_operator(&mesh, &Coefficients::reaction_diffusion(c));
        // constants are in the kernel of the stiffness part
        let resid: Vec<f64> = a.mul_vec(&ones).iter().zip(m.mul_vec(&ones)).map(|(x, y)| x - c * y).collect();
        prop_assert!(resid.iter().all(|v| v.abs() < 1e-12));
        prop_assert!((m.quad(&ones) - 3f64.powi(dim as i32)).abs() < 1e-12);
        prop_assert!(a.max_asymmetry() <= 1e-14);
    }

    #[test]
    fn kkt_is_symmetric(c in -2.0f64..2.0, p in preset(), neumann in any::<bool>()) {
        let bc = if neumann { BoundaryCondition::Neumann } else { BoundaryCondition::Dirichlet };
        let kkt = small_kkt(c, p, 4.0, bc);
        prop_assert!(kkt.matrix.max_asymmetry() <= 1e-12 * kkt.matrix.max_abs());
        prop_assert_eq!(kkt.dim(), 2 * kkt.n_state() + kkt.n_control());
    }

    #[test]
    fn difference_system_is_linear(c in prop_oneof![Just(1.0), Just(0.0), Just(-1.0)], p in preset(), s in -5.0f64..5.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let kkt = small_kkt(c, p, 4.0, BoundaryCondition::Dirichlet);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (ny, nu) = (kkt.n_state(), kkt.n_control());
        let e1 = BlockVector { y: rv(ny), u: rv(nu), p: rv(ny) };
        let e2 = BlockVector { y: rv(ny), u: rv(nu), p: rv(ny) };
        let mut e = e1.clone();
        e.add_scaled(s, &e2);
        let x = solve_difference(&kkt, &e).unwrap().blocks().concat();
        let mut comb = solve_difference(&kkt, &e1).unwrap().blocks();
        comb.add_scaled(s, &solve_difference(&kkt, &e2).unwrap().blocks());
        let comb = comb.concat();
        let scale = comb.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(x.iter().zip(&comb).all(|(a, b)| (a - b).abs() <= 1e-10 * scale));
    }

    #[test]
    fn triplets_match_dense_accumulation(entries in prop::collection::vec((0usize..5, 0usize..4, -3.0f64..3.0), 0..30)) {
        let mut t = TripletBuilder::new(5, 4);
        let mut d = vec![vec![0.0; 4]; 5];
        for &(i, j, v) in &entries {
            t.push(i, j, v);
            d[i][j] += v;
        }
        let m = t.build();
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [0.3, 1.0, -1.0, 2.0, 0.0];
        for i in 0..5 {
            let dense: f64 = (0..4).map(|j| d[i][j] * x[j]).sum();
            prop_assert!((m.mul_vec(&x)[i] - dense).abs() < 1e-12);
        }
        prop_assert_eq!(m.transpose().transpose(), m.clone());
        let ty = m.tr_mul_vec(&y);
        for j in 0..4 {
            let dense: f64 = (0..5).map(|i| d[i][j] * y[i]).sum();
            prop_assert!((ty[j] - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn w_norm_is_homogeneous(scale in -4.0f64..4.0, vals in prop::collection::vec(-2.0f64..2.0, 12)) {
        let g = SparseMatrix::from_dense(&[vec![2.0, -1.0, 0.0], vec![-1.0, 2.0, -1.0], vec![0.0, -1.0, 2.0]]);
        let m = SparseMatrix::identity(3);
        let norm = GramNorm::new(&g).unwrap();
        let v: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
        let sv: Vec<Vec<f64>> = v.iter().map(|x| x.iter().map(|a| scale * a).collect()).collect();
        let a = w_norm(&v, 0.1, &norm, &m).unwrap().total();
        let b = w_norm(&sv, 0.1, &norm, &m).unwrap().total();
        prop_assert!(a >= 0.0);
        prop_assert!((b - scale.abs() * a).abs() <= 1e-10 * (1.0 + b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn probing_never_exceeds_true_norm(c in prop_oneof![Just(1.0), Just(0.0), Just(-1.0)], p in preset(), seed in 0u64..1000) {
        let kkt = small_kkt(c, p, 3.0, BoundaryCondition::Dirichlet);
        // ||M^{-1}|| = ||L^T M^{-1} L||_2 with G = L L^T
        let g = dense_gram(&kkt);
        let l = g.clone().cholesky().unwrap().l();
        let mdense = {
            let d = kkt.matrix.to_dense();
            DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j])
        };
        let s = l.transpose() * mdense.try_inverse().unwrap() * &l;
        let s = (&s + s.transpose()) * 0.5;
        let exact = SymmetricEigen::new(s).eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let est = estimate_inverse_norm(&kkt, 20, seed, OpNormMethod::PowerIteration { steps: 30 }).unwrap();
        prop_assert!(est.value <= exact * (1.0 + 1e-8));
        prop_assert!(est.ratios.iter().all(|&r| r <= exact * (1.0 + 1e-8)));
        let rm = est.running_max();
        prop_assert!(rm.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn synthetic_decay_rate_is_recovered(mu in 0.2f64..1.0) {
        let mesh = Mesh::build_interval(40.0, 400).unwrap();
        let z = mesh.center();
        let field: Vec<f64> = (0..mesh.num_nodes()).map(|i| (-mu * one_norm_distance(&mesh, z, mesh.node(i))).exp()).collect();
        let fit = fit_decay(&mesh, &field, z, 1.0, Component::State).unwrap();
        prop_assert!((fit.mu_hat - mu).abs() <= 0.1 * mu, "mu {} fitted {}", mu, fit.mu_hat);
        prop_assert!(fit.r_squared > 0.99);
    }
}
