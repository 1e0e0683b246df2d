//! Library results against hand-assembled dense systems solved by plain
//! Gaussian elimination.

use approx::assert_relative_eq;
use ocplab::assembly::{assemble_mass, assemble_stiffness, BoundaryCondition, Coefficients};
use ocplab::elliptic::{solve_ocp, KktSystem};
use ocplab::mesh::{Aabb, Mesh, Region};
use ocplab::parabolic::{solve_parabolic, ParabolicData, ParabolicProblem, SpaceTimeKkt};

type Dense = Vec<Vec<f64>>;

fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

fn gauss(mut a: Dense, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        assert!(a[k][k].abs() > 1e-14, "singular oracle matrix");
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn select(a: &Dense, rows: &[usize], cols: &[usize]) -> Dense {
    rows.iter().map(|&i| cols.iter().map(|&j| a[i][j]).collect()).collect()
}

fn place(dst: &mut Dense, r0: usize, c0: usize, src: &Dense, scale: f64) {
    for (i, row) in src.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            dst[r0 + i][c0 + j] += scale * v;
        }
    }
}

fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// 1D P1 stiffness + c mass, and mass weighted by `w(barycenter)`.
fn p1_interval(length: f64, n: usize, c: f64, w: impl Fn(f64) -> f64) -> (Dense, Dense) {
    let h = length / n as f64;
    let mut a = zeros(n + 1, n + 1);
    let mut m = zeros(n + 1, n + 1);
    for e in 0..n {
        let bary = (e as f64 + 0.5) * h;
        for (i, j, k, mm) in [(0, 0, 1.0, 2.0), (0, 1, -1.0, 1.0), (1, 0, -1.0, 1.0), (1, 1, 1.0, 2.0)] {
            a[e + i][e + j] += k / h + c * mm * h / 6.0;
            m[e + i][e + j] += w(bary) * mm * h / 6.0;
        }
    }
    (a, m)
}

#[test]
fn unit_square_element_matrices() {
    let mesh = Mesh::build_square(1.0, 1).unwrap();
    let k = assemble_stiffness(&mesh).to_dense();
    let expected_k = [[1.0, -0.5, -0.5, 0.0], [-0.5, 1.0, 0.0, -0.5], [-0.5, 0.0, 1.0, -0.5], [0.0, -0.5, -0.5, 1.0]];
    let m = assemble_mass(&mesh).to_dense();
    let s = 1.0 / 24.0;
    let expected_m = [[4.0 * s, s, s, 2.0 * s], [s, 2.0 * s, 0.0, s], [s, 0.0, 2.0 * s, s], [2.0 * s, s, s, 4.0 * s]];
    for i in 0..4 {
        for j in 0..4 {
            assert_relative_eq!(k[i][j], expected_k[i][j], epsilon = 1e-14);
            assert_relative_eq!(m[i][j], expected_m[i][j], epsilon = 1e-14);
        }
    }
}

#[test]
fn elliptic_kkt_matches_hand_assembly() {
    let (length, n) = (4.0, 8);
    for c in [1.0, 0.0, -1.0] {
        let in_control = |x: f64| if x < 2.0 { 1.0 } else { 0.0 };
        let (a_full, mc_full) = p1_interval(length, n, c, in_control);
        let (_, m_full) = p1_interval(length, n, 0.0, |_| 1.0);
        let free: Vec<usize> = (1..n).collect();
        let ctrl: Vec<usize> = (0..=4).collect();
        let a = select(&a_full, &free, &free);
        let q = select(&m_full, &free, &free);
        let b = select(&mc_full, &free, &ctrl);
        let r = select(&mc_full, &ctrl, &ctrl);
        let (ny, nu) = (free.len(), ctrl.len());
        let dim = 2 * ny + nu;
        let mut k = zeros(dim, dim);
        place(&mut k, 0, 0, &q, 1.0);
        place(&mut k, 0, ny + nu, &transpose(&a), 1.0);
        place(&mut k, ny, ny, &r, 1.0);
        place(&mut k, ny, ny + nu, &transpose(&b), 1.0);
        place(&mut k, ny + nu, 0, &a, 1.0);
        place(&mut k, ny + nu, ny, &b, 1.0);

        let nodes: Vec<f64> = (0..=n).map(|i| i as f64 * length / n as f64).collect();
        let y_d: Vec<f64> = nodes.iter().map(|x| x.sin()).collect();
        let f: Vec<f64> = nodes.iter().map(|x| 1.0 + x.cos()).collect();
        let qyd = matvec(&m_full, &y_d);
        let mf = matvec(&m_full, &f);
        let mut rhs = vec![0.0; dim];
        for (i, &fi) in free.iter().enumerate() {
            rhs[i] = qyd[fi];
            rhs[ny + nu + i] = mf[fi];
        }
        let x = gauss(k, rhs);

        let mesh = Mesh::build_interval(length, n).unwrap();
        let control = Region::Boxes(vec![Aabb::interval(0.0, 2.0)]);
        let kkt = KktSystem::new(
            &mesh,
            &Coefficients::reaction_diffusion(c),
            &control,
            &Region::Full,
            BoundaryCondition::Dirichlet,
        )
        .unwrap();
        assert_eq!(kkt.ops.control_nodes, ctrl);
        let sol = solve_ocp(&kkt, &y_d, &f).unwrap();
        let got: Vec<f64> = sol.y.iter().chain(&sol.u).chain(&sol.p).copied().collect();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() <= 1e-9 * (1.0 + e.abs()), "c={c}: {g} vs {e}");
        }
    }
}

#[test]
fn parabolic_kkt_matches_hand_assembly() {
    let (length, n, horizon, nt) = (2.0, 4, 0.5, 2);
    let tau = horizon / nt as f64;
    let c = -1.0;
    let (a, m) = {
        let (a, _) = p1_interval(length, n, c, |_| 1.0);
        let (_, m) = p1_interval(length, n, 0.0, |_| 1.0);
        (a, m)
    };
    let nn = n + 1;
    let dim = nt * 3 * nn;
    let (u0, p0) = (nt * nn, 2 * nt * nn);
    let mut k = zeros(dim, dim);
    let mut d_diag = m.clone();
    for (row, arow) in d_diag.iter_mut().zip(&a) {
        row.iter_mut().zip(arow).for_each(|(x, y)| *x = *x / tau + y);
    }
    for s in 0..nt {
        place(&mut k, s * nn, s * nn, &m, 1.0);
        place(&mut k, u0 + s * nn, u0 + s * nn, &m, 1.0);
        place(&mut k, p0 + s * nn, s * nn, &d_diag, 1.0);
        place(&mut k, p0 + s * nn, u0 + s * nn, &m, 1.0);
        place(&mut k, s * nn, p0 + s * nn, &transpose(&d_diag), 1.0);
        place(&mut k, u0 + s * nn, p0 + s * nn, &m, 1.0);
        if s > 0 {
            place(&mut k, p0 + s * nn, (s - 1) * nn, &m, -1.0 / tau);
            place(&mut k, (s - 1) * nn, p0 + s * nn, &m, -1.0 / tau);
        }
    }
    let nodes: Vec<f64> = (0..nn).map(|i| i as f64 * length / n as f64).collect();
    let mut data = ParabolicData::zeros(nn, nt);
    data.y0 = nodes.iter().map(|x| 1.0 + x * x).collect();
    for s in 0..nt {
        data.y_d[s] = nodes.iter().map(|x| (x + s as f64).sin()).collect();
        data.f[s] = nodes.iter().map(|x| x - s as f64).collect();
    }
    let mut rhs = vec![0.0; dim];
    for s in 0..nt {
        let qyd = matvec(&m, &data.y_d[s]);
        let mf = matvec(&m, &data.f[s]);
        rhs[s * nn..(s + 1) * nn].copy_from_slice(&qyd);
        rhs[p0 + s * nn..p0 + (s + 1) * nn].copy_from_slice(&mf);
    }
    let my0 = matvec(&m, &data.y0);
    for i in 0..nn {
        rhs[p0 + i] += my0[i] / tau;
    }
    let x = gauss(k, rhs);

    let mesh = Mesh::build_interval(length, n).unwrap();
    let kkt = SpaceTimeKkt::assemble(&ParabolicProblem::new(mesh, Coefficients::reaction_diffusion(c), horizon, nt)).unwrap();
    assert_eq!(kkt.dim(), dim);
    let sol = solve_parabolic(&kkt, &data).unwrap();
    let got: Vec<f64> = sol.y.iter().chain(&sol.u).chain(&sol.p).flatten().copied().collect();
    for (g, e) in got.iter().zip(&x) {
        assert!((g - e).abs() <= 1e-9 * (1.0 + e.abs()), "{g} vs {e}");
    }
}

#[test]
fn single_step_is_an_elliptic_problem() {
    // one implicit Euler step from y0 = 0 solves the stationary system with
    // operator Mass/τ + A
    let (length, n, tau) = (3.0, 6, 0.5);
    let mesh = Mesh::build_interval(length, n).unwrap();
    let kkt = SpaceTimeKkt::assemble(&ParabolicProblem::new(mesh.clone(), Coefficients::reaction_diffusion(0.0), tau, 1)).unwrap();
    let shifted = KktSystem::new(
        &mesh,
        &Coefficients::reaction_diffusion(1.0 / tau),
        &Region::Full,
        &Region::Full,
        BoundaryCondition::Neumann,
    )
    .unwrap();
    let nodes: Vec<f64> = (0..=n).map(|i| i as f64 * length / n as f64).collect();
    let mut data = ParabolicData::zeros(n + 1, 1);
    data.y_d[0] = nodes.iter().map(|x| x.cos()).collect();
    data.f[0] = nodes.iter().map(|x| 2.0 - x).collect();
    let p = solve_parabolic(&kkt, &data).unwrap();
    let e = solve_ocp(&shifted, &data.y_d[0], &data.f[0]).unwrap();
    for (a, b) in p.y[0].iter().chain(&p.u[0]).chain(&p.p[0]).zip(e.y.iter().chain(&e.u).chain(&e.p)) {
        assert_relative_eq!(a, b, epsilon = 1e-10);
    }
}
