//! Compressed sparse row matrices, direct solvers and a generalized
//! smallest-eigenvalue estimator.
//!
//! Factorizations are delegated to `faer` (sparse LU with partial pivoting
//! and sparse Cholesky). Every solve is residual checked.

use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator; duplicate entries are summed on `build`.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.nrows && j < self.ncols, "entry ({i}, {j}) out of bounds");
        self.entries.push((i, j, v));
    }

    /// Adds `scale * m` with its top-left corner at `(row0, col0)`.
    pub fn add_block(&mut self, row0: usize, col0: usize, m: &SparseMatrix, scale: f64) {
        for (i, j, v) in m.triplets() {
            self.push(row0 + i, col0 + j, scale * v);
        }
    }

    /// Adds `scale * m^T` with its top-left corner at `(row0, col0)`.
    pub fn add_block_transpose(&mut self, row0: usize, col0: usize, m: &SparseMatrix, scale: f64) {
        for (i, j, v) in m.triplets() {
            self.push(row0 + j, col0 + i, scale * v);
        }
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut t = TripletBuilder::with_capacity(d.len(), d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            t.push(i, i, v);
        }
        t.build()
    }

    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut t = TripletBuilder::with_capacity(nrows, ncols, entries.len());
        for &(i, j, v) in entries {
            t.push(i, j, v);
        }
        t.build()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = TripletBuilder::new(rows.len(), ncols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "mul_vec: length mismatch");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "tr_mul_vec: length mismatch");
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn transpose(&self) -> Self {
        let mut t = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.triplets() {
            t.push(j, i, v);
        }
        t.build()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// `sum_k c_k M_k` for matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Self {
        let (nrows, ncols) = terms.first().map_or((0, 0), |(_, m)| (m.nrows, m.ncols));
        let cap = terms.iter().map(|(_, m)| m.nnz()).sum();
        let mut t = TripletBuilder::with_capacity(nrows, ncols, cap);
        for (c, m) in terms {
            assert!(m.nrows == nrows && m.ncols == ncols, "linear_combination: shape mismatch");
            t.add_block(0, 0, m, *c);
        }
        t.build()
    }

    pub fn symmetric_part(&self) -> Self {
        SparseMatrix::linear_combination(&[(0.5, self), (0.5, &self.transpose())])
    }

    /// Submatrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut t = TripletBuilder::new(rows.len(), cols.len());
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_map[j] != usize::MAX {
                    t.push(r, col_map[j], v);
                }
            }
        }
        t.build()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |A_ij - A_ji|`; infinite for non-square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.triplets().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<Triplet<usize, usize, f64>> =
            self.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .expect("indices were validated on insertion")
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    pub fn read_matrix_market(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("MatrixMarket: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing size line"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("bad size line")))
            .collect::<Result<_>>()?;
        if header.len() != 3 {
            return Err(bad("size line needs three fields"));
        }
        let mut t = TripletBuilder::with_capacity(header[0], header[1], header[2]);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("entry line needs three fields"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("bad row index"))?;
            let j: usize = f[1].parse().map_err(|_| bad("bad column index"))?;
            let v: f64 = f[2].parse().map_err(|_| bad("bad value"))?;
            if i == 0 || j == 0 || i > header[0] || j > header[1] {
                return Err(bad("index out of range"));
            }
            t.push(i - 1, j - 1, v);
        }
        Ok(t.build())
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm2(b);
    let r = norm2(&sub(b, &a.mul_vec(x)));
    if bn > 0.0 { r / bn } else { r }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorStats {
    pub dim: usize,
    pub nnz: usize,
    /// Relative residual before iterative refinement.
    pub initial_residual: f64,
    pub refined: bool,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub relative_residual: f64,
    pub stats: FactorStats,
}

/// Sparse LU factorization kept for repeated solves.
pub struct LuSolver {
    matrix: SparseMatrix,
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl LuSolver {
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows, a.ncols
            )));
        }
        let lu = if a.nrows == 0 {
            None
        } else {
            Some(a.to_faer().sp_lu().map_err(|_| Error::SingularMatrix)?)
        };
        Ok(LuSolver { matrix: a.clone(), lu })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    fn raw(&self, b: &[f64]) -> Vec<f64> {
        match &self.lu {
            None => Vec::new(),
            Some(lu) => {
                let x = lu.solve(Col::<f64>::from_fn(b.len(), |i| b[i]));
                (0..b.len()).map(|i| x[i]).collect()
            }
        }
    }

    /// Solves with one step of iterative refinement and fails when the final
    /// relative residual exceeds `tol`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<SolveReport> {
        check_len(self.dim(), b.len())?;
        refine_and_check(&self.matrix, b, tol, |r| self.raw(r))
    }
}

pub fn solve(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<SolveReport> {
    LuSolver::factorize(a)?.solve(b, tol)
}

fn refine_and_check(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    raw: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<SolveReport> {
    let mut stats = FactorStats { dim: a.nrows, nnz: a.nnz(), initial_residual: 0.0, refined: false };
    if b.iter().all(|&v| v == 0.0) {
        return Ok(SolveReport { solution: vec![0.0; b.len()], relative_residual: 0.0, stats });
    }
    let x0 = raw(b);
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    let res0 = relative_residual(a, &x0, b);
    stats.initial_residual = res0;
    let r = sub(b, &a.mul_vec(&x0));
    let dx = raw(&r);
    let x1: Vec<f64> = x0.iter().zip(&dx).map(|(x, d)| x + d).collect();
    let res1 = relative_residual(a, &x1, b);
    let (solution, relative_residual) = if res1.is_finite() && res1 <= res0 {
        stats.refined = true;
        (x1, res1)
    } else {
        (x0, res0)
    };
    if !(relative_residual <= tol) {
        return Err(Error::NoConvergence { residual: relative_residual, tol });
    }
    Ok(SolveReport { solution, relative_residual, stats })
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct CholeskySolver {
    matrix: SparseMatrix,
    llt: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
}

impl CholeskySolver {
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        if !a.is_square() || a.max_asymmetry() > 1e-12 * a.max_abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite);
        }
        let llt = if a.nrows == 0 {
            None
        } else {
            Some(a.to_faer().sp_cholesky(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?)
        };
        Ok(CholeskySolver { matrix: a.clone(), llt })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    fn raw(&self, b: &[f64]) -> Vec<f64> {
        match &self.llt {
            None => Vec::new(),
            Some(llt) => {
                let x = llt.solve(Col::<f64>::from_fn(b.len(), |i| b[i]));
                (0..b.len()).map(|i| x[i]).collect()
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), b.len())?;
        Ok(refine_and_check(&self.matrix, b, DEFAULT_TOL, |r| self.raw(r))?.solution)
    }

    /// `sqrt(b^T A^{-1} b)`
    pub fn inverse_norm(&self, b: &[f64]) -> Result<f64> {
        Ok(dot(b, &self.solve(b)?).max(0.0).sqrt())
    }
}

pub fn spd_solve(g: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    CholeskySolver::factorize(g)?.solve(b)
}

#[derive(Clone, Debug)]
pub struct RayleighEstimate {
    /// Final Rayleigh quotient: an upper bound for the smallest eigenvalue.
    pub value: f64,
    /// Largest shift at which `A - shift G` was verified positive definite:
    /// a lower bound for the smallest eigenvalue.
    pub lower_bound: f64,
    /// `||A x - value G x||_{G^{-1}}` for the final `G`-normalized iterate.
    pub residual: f64,
    pub iterations: usize,
    /// Rayleigh quotient after every iteration (nonincreasing).
    pub history: Vec<f64>,
}

/// Smallest eigenvalue of the pencil `(A, G)` with `A` symmetric and `G` SPD,
/// by shifted inverse iteration. Shifts are only ever moved to values where
/// `A - shift G` admits a Cholesky factorization, so they stay below the
/// smallest eigenvalue and the Rayleigh quotient decreases monotonically.
pub fn rayleigh_min(a: &SparseMatrix, g: &SparseMatrix, max_iter: usize) -> Result<RayleighEstimate> {
    if !a.is_square() || a.nrows == 0 {
        return Err(Error::InvalidArgument("rayleigh_min needs a nonempty square matrix".into()));
    }
    check_len(a.nrows, g.nrows)?;
    check_len(a.nrows, g.ncols)?;
    let asym = a.max_asymmetry();
    if asym > 1e-10 * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let gram = CholeskySolver::factorize(g)?;
    let shifted = |s: f64| CholeskySolver::factorize(&SparseMatrix::linear_combination(&[(1.0, a), (-s, g)]));

    let mut shift = 0.0;
    let mut solver = shifted(shift);
    let mut step = 1.0;
    while solver.is_err() {
        shift = -step;
        step *= 2.0;
        if step > 1e300 {
            return Err(Error::NotPositiveDefinite);
        }
        solver = shifted(shift);
    }
    let mut solver = solver?;

    let n = a.nrows;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| 1.0 + 0.1 * rng.gen_range(-1.0..1.0)).collect();
    let gx = g.mul_vec(&x);
    let s = dot(&x, &gx).sqrt();
    x.iter_mut().for_each(|v| *v /= s);

    let mut history = Vec::new();
    let mut value = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let w = solver.solve(&g.mul_vec(&x))?;
        let norm = g.quad(&w).sqrt();
        x = w.iter().map(|v| v / norm).collect();
        let ax = a.mul_vec(&x);
        value = dot(&x, &ax);
        history.push(value);
        let gx = g.mul_vec(&x);
        let r: Vec<f64> = ax.iter().zip(&gx).map(|(p, q)| p - value * q).collect();
        residual = gram.inverse_norm(&r)?;

        let scale = value.abs().max(1.0);
        if value - shift <= 1e-10 * scale || residual <= 1e-11 * scale {
            break;
        }
        let trial = shift + 0.5 * (value - shift);
        if let Ok(s) = shifted(trial) {
            shift = trial;
            solver = s;
        }
    }
    Ok(RayleighEstimate { value, lower_bound: shift, residual, iterations, history })
}
