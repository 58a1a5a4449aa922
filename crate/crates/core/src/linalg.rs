//! Dense non-Hermitian eigendecomposition on top of `faer`.
//!
//! Every routine returns eigenvalues in a fixed order: real part descending,
//! then imaginary part ascending, then original index.

use std::cmp::Ordering;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = Mat<C64>;

/// Largest matrix side accepted by the eigensolvers.
pub const DEFAULT_MAX_SIDE: usize = 5000;

/// Relative residual above which eigenvectors are flagged as unreliable.
pub const RESIDUAL_BOUND: f64 = 1e-8;

/// Eigenvalue matching tolerance (relative to the spectral radius) used to
/// pair right and left eigenvectors.
pub const LEFT_MATCH_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vectors {
    None,
    Right,
    /// Right and left eigenvectors.
    Both,
}

#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub eigenvalues: Vec<C64>,
    /// Unit-norm right eigenvectors as columns, in eigenvalue order.
    pub right: Option<CMat>,
    /// Left eigenvectors `w` with `A^H w = conj(lambda) w`, scaled so that
    /// `w^H v = 1` for the matching right vector.
    pub left: Option<CMat>,
    /// max over pairs of `|A v - lambda v| / rho(A)` with unit `v`.
    pub residual_max: f64,
    /// Set when a residual exceeds [`RESIDUAL_BOUND`] or a left vector could
    /// not be matched or normalized (near-defective matrix).
    pub degraded: bool,
    /// Indices whose left eigenvector had no partner within tolerance.
    pub unmatched_left: Vec<usize>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.eigenvalues)
    }
}

pub fn spectral_radius(values: &[C64]) -> f64 {
    values.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Canonical ordering: Re descending, Im ascending, then index.
pub fn eigen_order(a: &(usize, C64), b: &(usize, C64)) -> Ordering {
    b.1.re.total_cmp(&a.1.re).then(a.1.im.total_cmp(&b.1.im)).then(a.0.cmp(&b.0))
}

/// Permutation that sorts `values` canonically.
pub fn sorted_order(values: &[C64]) -> Vec<usize> {
    let mut idx: Vec<(usize, C64)> = values.iter().copied().enumerate().collect();
    idx.sort_by(eigen_order);
    idx.into_iter().map(|(i, _)| i).collect()
}

pub fn sort_eigenvalues(values: &mut Vec<C64>) {
    let order = sorted_order(values);
    *values = order.into_iter().map(|i| values[i]).collect();
}

fn check_input(n_rows: usize, n_cols: usize, finite: bool) -> Result<()> {
    if n_rows != n_cols {
        return Err(Error::DimensionMismatch { expected: n_rows, got: n_cols });
    }
    if n_rows > DEFAULT_MAX_SIDE {
        return Err(Error::MatrixTooLarge { n: n_rows, limit: DEFAULT_MAX_SIDE });
    }
    if !finite {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn all_finite(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].re.is_finite() && a[(i, j)].im.is_finite()))
}

/// All eigenvalues of a complex matrix, canonically sorted.
pub fn eigenvalues(a: &CMat) -> Result<Vec<C64>> {
    check_input(a.nrows(), a.ncols(), all_finite(a))?;
    let mut ev = a.eigenvalues().map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
    sort_eigenvalues(&mut ev);
    Ok(ev)
}

/// All eigenvalues of a real matrix, canonically sorted.
pub fn eigenvalues_real(a: &Mat<f64>) -> Result<Vec<C64>> {
    let finite = (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()));
    check_input(a.nrows(), a.ncols(), finite)?;
    let mut ev = a.eigenvalues().map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
    sort_eigenvalues(&mut ev);
    Ok(ev)
}

/// General eigendecomposition with optional right and left eigenvectors.
pub fn eig_general(a: &CMat, vectors: Vectors) -> Result<EigenSystem> {
    if vectors == Vectors::None {
        let eigenvalues = eigenvalues(a)?;
        return Ok(EigenSystem {
            eigenvalues,
            right: None,
            left: None,
            residual_max: 0.0,
            degraded: false,
            unmatched_left: Vec::new(),
        });
    }
    check_input(a.nrows(), a.ncols(), all_finite(a))?;
    let n = a.nrows();
    let evd = a.eigen().map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
    let raw: Vec<C64> = (0..n).map(|i| evd.S()[i]).collect();
    let order = sorted_order(&raw);
    let eigenvalues: Vec<C64> = order.iter().map(|&i| raw[i]).collect();
    let mut right = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let norm = (0..n).map(|r| evd.U()[(r, i)].norm_sqr()).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for r in 0..n {
            right[(r, k)] = evd.U()[(r, i)] * scale;
        }
    }
    let radius = spectral_radius(&eigenvalues).max(f64::MIN_POSITIVE);
    let residual_max = residuals(a, &eigenvalues, &right).into_iter().fold(0.0, f64::max) / radius;
    let mut sys = EigenSystem {
        degraded: !(residual_max <= RESIDUAL_BOUND),
        eigenvalues,
        right: Some(right),
        left: None,
        residual_max,
        unmatched_left: Vec::new(),
    };
    if vectors == Vectors::Both {
        attach_left_vectors(a, &mut sys)?;
    }
    Ok(sys)
}

/// `|A v_k - lambda_k v_k|` for every column.
fn residuals(a: &CMat, values: &[C64], vecs: &CMat) -> Vec<f64> {
    let av = a * vecs;
    (0..values.len())
        .map(|k| (0..a.nrows()).map(|r| (av[(r, k)] - values[k] * vecs[(r, k)]).norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

fn attach_left_vectors(a: &CMat, sys: &mut EigenSystem) -> Result<()> {
    let n = a.nrows();
    let adj = a.adjoint().to_owned();
    let evd = adj.eigen().map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
    let radius = sys.spectral_radius().max(f64::MIN_POSITIVE);
    let tol = LEFT_MATCH_TOL * radius;
    let adj_vals: Vec<C64> = (0..n).map(|i| evd.S()[i].conj()).collect();

    // Greedy nearest matching of conj(adjoint eigenvalue) to each eigenvalue.
    let mut taken = vec![false; n];
    let mut partner = vec![usize::MAX; n];
    let mut unmatched = Vec::new();
    for (k, &lam) in sys.eigenvalues.iter().enumerate() {
        let best = (0..n)
            .filter(|&i| !taken[i])
            .min_by(|&i, &j| (adj_vals[i] - lam).norm().total_cmp(&(adj_vals[j] - lam).norm()));
        match best {
            Some(i) => {
                taken[i] = true;
                partner[k] = i;
                if (adj_vals[i] - lam).norm() > tol {
                    unmatched.push(k);
                }
            }
            None => unmatched.push(k),
        }
    }
    let mut left = CMat::zeros(n, n);
    for k in 0..n {
        let i = partner[k];
        let norm = (0..n).map(|r| evd.U()[(r, i)].norm_sqr()).sum::<f64>().sqrt();
        for r in 0..n {
            left[(r, k)] = evd.U()[(r, i)] / norm;
        }
    }

    // Biorthogonalize inside clusters of (numerically) coincident eigenvalues.
    let right = sys.right.as_ref().expect("right vectors present");
    let clusters = clusters(&sys.eigenvalues, 1e-6 * radius);
    let mut degraded = !unmatched.is_empty();
    for cluster in clusters {
        let k = cluster.len();
        let mut gram = CMat::zeros(k, k);
        for (a_i, &p) in cluster.iter().enumerate() {
            for (b_i, &q) in cluster.iter().enumerate() {
                gram[(a_i, b_i)] = (0..n).map(|r| left[(r, p)].conj() * right[(r, q)]).sum();
            }
        }
        // W <- W G^{-H} so that W^H V = I inside the cluster.
        let gram_h = gram.adjoint().to_owned();
        let lu = gram_h.partial_piv_lu();
        let inv = lu.solve(CMat::identity(k, k));
        let smallest_pivot = (0..k).map(|i| gram[(i, i)].norm()).fold(f64::INFINITY, f64::min);
        if !all_finite(&inv) || smallest_pivot < 1e-12 {
            degraded = true;
            continue;
        }
        let block = Mat::from_fn(n, k, |r, c| left[(r, cluster[c])]);
        let updated = &block * &inv;
        for (c, &col) in cluster.iter().enumerate() {
            for r in 0..n {
                left[(r, col)] = updated[(r, c)];
            }
        }
    }
    sys.left = Some(left);
    sys.unmatched_left = unmatched;
    sys.degraded |= degraded;
    Ok(())
}

/// Connected components of eigenvalues closer than `tol`.
fn clusters(values: &[C64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Unit vector spanning the numerical null space of `a`.
///
/// An eigenvalue counts as zero when `|lambda| < tol * rho(A)`. Exactly one
/// such eigenvalue is required; the vector is then refined by inverse
/// iteration with a tiny shift.
pub fn null_vector(a: &CMat, tol: f64) -> Result<Vec<C64>> {
    let ev = eigenvalues(a)?;
    null_vector_given(a, &ev, tol)
}

/// [`null_vector`] with the spectrum of `a` already known.
pub fn null_vector_given(a: &CMat, ev: &[C64], tol: f64) -> Result<Vec<C64>> {
    let radius = spectral_radius(ev);
    let n = a.nrows();
    if radius == 0.0 {
        return if n == 1 { Ok(vec![C64::new(1.0, 0.0)]) } else { Err(Error::DegenerateZeroMode { count: n }) };
    }
    let cutoff = tol * radius;
    let zeros: Vec<C64> = ev.iter().copied().filter(|z| z.norm() < cutoff).collect();
    if zeros.is_empty() {
        let smallest = ev.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        return Err(Error::NoZeroMode { tol: cutoff, smallest });
    }
    if zeros.len() > 1 {
        return Err(Error::DegenerateZeroMode { count: zeros.len() });
    }
    let shift = zeros[0] - C64::new(1e-10 * radius, 0.0);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.partial_piv_lu();
    let mut x = Mat::from_fn(n, 1, |i, _| C64::new(1.0 + 0.1 * (i % 7) as f64, 0.05 * (i % 3) as f64));
    for _ in 0..4 {
        x = lu.solve(&x);
        let norm = (0..n).map(|i| x[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NoConvergence { residual: f64::NAN });
        }
        for i in 0..n {
            x[(i, 0)] /= norm;
        }
    }
    let v: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    let av = a * &x;
    let res = (0..n).map(|i| av[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
    if !(res <= tol * radius) {
        return Err(Error::NoConvergence { residual: res / radius });
    }
    Ok(v)
}

/// Orthonormal Hermitian basis of `d x d` matrices, as sparse columns over
/// the column-stacked vectorization. Each element carries at most two
/// entries: `E_mm`, `(E_mn + E_nm)/sqrt2` and `i(E_mn - E_nm)/sqrt2`.
pub fn hermitian_basis(d: usize) -> Vec<[(usize, C64); 2]> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::with_capacity(d * d);
    let zero = (0, C64::new(0.0, 0.0));
    for n in 0..d {
        for m in 0..=n {
            if m == n {
                basis.push([(m + n * d, C64::new(1.0, 0.0)), zero]);
            } else {
                basis.push([(m + n * d, C64::new(s, 0.0)), (n + m * d, C64::new(s, 0.0))]);
                basis.push([(m + n * d, C64::new(0.0, s)), (n + m * d, C64::new(0.0, -s))]);
            }
        }
    }
    basis
}

/// Represents a Hermiticity-preserving superoperator (acting on
/// column-stacked `d x d` matrices) in the Hermitian basis, where it is
/// real. Returns the real matrix and the largest discarded imaginary part.
pub fn to_hermitian_basis(s: &CMat, d: usize) -> (Mat<f64>, f64) {
    let n = d * d;
    assert_eq!(s.nrows(), n);
    let basis = hermitian_basis(d);
    let mut out = Mat::<f64>::zeros(n, n);
    let mut max_imag: f64 = 0.0;
    for (b, col) in basis.iter().enumerate() {
        for (a, row) in basis.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &(i, ti) in row {
                if ti.re == 0.0 && ti.im == 0.0 {
                    continue;
                }
                for &(j, tj) in col {
                    if tj.re == 0.0 && tj.im == 0.0 {
                        continue;
                    }
                    acc += ti.conj() * s[(i, j)] * tj;
                }
            }
            out[(a, b)] = acc.re;
            max_imag = max_imag.max(acc.im.abs());
        }
    }
    (out, max_imag)
}

/// Eigenvalues of a Hermiticity-preserving superoperator via its real
/// representation, about four times cheaper than the complex solver.
pub fn eigenvalues_hermiticity_preserving(s: &CMat, d: usize) -> Result<Vec<C64>> {
    check_input(s.nrows(), s.ncols(), all_finite(s))?;
    if s.nrows() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: s.nrows() });
    }
    let (real, max_imag) = to_hermitian_basis(s, d);
    let scale = (0..real.ncols())
        .flat_map(|j| (0..real.nrows()).map(move |i| (i, j)))
        .map(|(i, j)| real[(i, j)].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    if max_imag > 1e-9 * scale {
        return Err(Error::InvalidParams(format!(
            "superoperator is not Hermiticity preserving (imaginary residue {max_imag:e})"
        )));
    }
    eigenvalues_real(&real)
}

pub fn frobenius_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .flat_map(|j| (0..a.nrows()).map(move |i| (i, j)))
        .map(|(i, j)| a[(i, j)].norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}
