//! Lindblad superoperators on column-stacked density matrices.
//!
//! `vec(rho)[m + n*D] = rho[m, n]`, so `vec(A X B) = (B^T kron A) vec(X)`.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::OperatorMatrix;
use crate::linalg::{self, CMat, EigenSystem, Vectors};

/// Default zero-eigenvalue tolerance relative to the spectral radius.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn vec_index(m: usize, n: usize, d: usize) -> Result<usize> {
    if m >= d {
        return Err(Error::SiteOutOfRange { site: m, sites: d });
    }
    if n >= d {
        return Err(Error::SiteOutOfRange { site: n, sites: d });
    }
    Ok(m + n * d)
}

/// Inverse of [`vec_index`].
pub fn devec_index(i: usize, d: usize) -> (usize, usize) {
    (i % d, i / d)
}

pub fn vectorize(x: &CMat) -> Vec<C64> {
    let d = x.nrows();
    (0..d * x.ncols()).map(|i| x[(i % d, i / d)]).collect()
}

pub fn devectorize(v: &[C64], d: usize) -> Result<CMat> {
    if v.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: v.len() });
    }
    Ok(Mat::from_fn(d, d, |m, n| v[m + n * d]))
}

#[derive(Clone, Debug)]
pub struct SuperOperator {
    d: usize,
    matrix: CMat,
}

impl SuperOperator {
    /// Hilbert-space dimension `D`; the matrix side is `D^2`.
    pub fn hilbert_dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn apply(&self, x: &CMat) -> Result<CMat> {
        check_square(x, self.d)?;
        let v = vectorize(x);
        let out: Vec<C64> = (0..v.len()).map(|r| (0..v.len()).map(|c| self.matrix[(r, c)] * v[c]).sum()).collect();
        devectorize(&out, self.d)
    }

    /// All eigenvalues, using the real Hermitian-basis representation.
    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        linalg::eigenvalues_hermiticity_preserving(&self.matrix, self.d)
    }

    pub fn eigensystem(&self, vectors: Vectors) -> Result<EigenSystem> {
        linalg::eig_general(&self.matrix, vectors)
    }
}

fn check_square(x: &CMat, d: usize) -> Result<()> {
    if x.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.nrows() });
    }
    if x.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.ncols() });
    }
    Ok(())
}

fn check_ops(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> Result<usize> {
    let d = h.rows();
    if h.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: h.cols() });
    }
    for l in jumps {
        if l.rows() != d || l.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: l.rows().max(l.cols()) });
        }
    }
    Ok(d)
}

/// `H - (i/2) sum L^dag L`.
fn effective_hamiltonian(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> OperatorMatrix {
    let mut out = h.clone();
    for l in jumps {
        out = out.add(&l.adjoint().matmul(l).scale(C64::new(0.0, -0.5)));
    }
    out
}

fn allocate(d: usize) -> Result<CMat> {
    let n = d * d;
    if n > linalg::DEFAULT_MAX_SIDE {
        return Err(Error::MatrixTooLarge { n, limit: linalg::DEFAULT_MAX_SIDE });
    }
    Ok(CMat::zeros(n, n))
}

/// Matrix of `rho -> -i[H, rho] + sum (L rho L^dag - 1/2 {L^dag L, rho})`.
pub fn build_superoperator(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> Result<SuperOperator> {
    let d = check_ops(h, jumps)?;
    let mut s = allocate(d)?;
    let heff = effective_hamiltonian(h, jumps);
    // -i Heff rho + i rho Heff^dag
    for &(m, p, a) in heff.entries() {
        for n in 0..d {
            s[(m + n * d, p + n * d)] += -I * a;
            // (rho Heff^dag)[k, m] picks up rho[k, p] * conj(a)
            s[(n + m * d, n + p * d)] += I * a.conj();
        }
    }
    for l in jumps {
        for &(m, p, a) in l.entries() {
            for &(n, q, b) in l.entries() {
                s[(m + n * d, p + q * d)] += a * b.conj();
            }
        }
    }
    Ok(SuperOperator { d, matrix: s })
}

/// Matrix of `A -> i[H, A] + sum (L^dag A L - 1/2 {L^dag L, A})`, built
/// directly rather than by transposing the forward matrix.
pub fn adjoint_liouvillian(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> Result<SuperOperator> {
    let d = check_ops(h, jumps)?;
    let mut s = allocate(d)?;
    let heff = effective_hamiltonian(h, jumps);
    // i Heff^dag A - i A Heff
    for &(p, m, a) in heff.entries() {
        for n in 0..d {
            s[(m + n * d, p + n * d)] += I * a.conj();
        }
    }
    for &(q, k, a) in heff.entries() {
        for m in 0..d {
            s[(m + k * d, m + q * d)] += -I * a;
        }
    }
    for l in jumps {
        for &(p, m, a) in l.entries() {
            for &(q, n, b) in l.entries() {
                s[(m + n * d, p + q * d)] += a.conj() * b;
            }
        }
    }
    Ok(SuperOperator { d, matrix: s })
}

/// Precomputed matrix-free Liouvillian: `H_eff`, its adjoint and the jump
/// operators with their adjoints.
#[derive(Clone, Debug)]
pub struct LiouvillianAction {
    d: usize,
    heff: OperatorMatrix,
    heff_dag: OperatorMatrix,
    jumps: Vec<(OperatorMatrix, OperatorMatrix)>,
}

impl LiouvillianAction {
    pub fn new(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> Result<Self> {
        let d = check_ops(h, jumps)?;
        let heff = effective_hamiltonian(h, jumps);
        let heff_dag = heff.adjoint();
        let jumps = jumps.iter().map(|l| (l.clone(), l.adjoint())).collect();
        Ok(LiouvillianAction { d, heff, heff_dag, jumps })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        check_square(rho, self.d)?;
        let left = self.heff.mul_dense(rho);
        let right = self.heff_dag.dense_mul(rho);
        let d = self.d;
        let mut out = Mat::from_fn(d, d, |i, j| -I * left[(i, j)] + I * right[(i, j)]);
        for (l, ld) in &self.jumps {
            out += &ld.dense_mul(&l.mul_dense(rho));
        }
        Ok(out)
    }
}

/// Matrix-free action of the Liouvillian on a dense operator.
pub fn apply_liouvillian(h: &OperatorMatrix, jumps: &[OperatorMatrix], rho: &CMat) -> Result<CMat> {
    LiouvillianAction::new(h, jumps)?.apply(rho)
}

/// Matrix-free action of the adjoint Liouvillian.
pub fn apply_adjoint(h: &OperatorMatrix, jumps: &[OperatorMatrix], a: &CMat) -> Result<CMat> {
    let d = check_ops(h, jumps)?;
    check_square(a, d)?;
    let heff = effective_hamiltonian(h, jumps);
    let left = heff.adjoint().mul_dense(a);
    let right = heff.dense_mul(a);
    let mut out = Mat::from_fn(d, d, |i, j| I * left[(i, j)] - I * right[(i, j)]);
    for l in jumps {
        let la = l.adjoint().mul_dense(a);
        out += &l.dense_mul(&la);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: CMat,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-10) and positivity
    /// (eigenvalues at least -1e-8).
    pub fn new(matrix: CMat) -> Result<Self> {
        let d = matrix.nrows();
        check_square(&matrix, d)?;
        let mut herm: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                herm = herm.max((matrix[(i, j)] - matrix[(j, i)].conj()).norm());
            }
        }
        if herm > 1e-10 {
            return Err(Error::InvalidParams(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = linalg::trace(&matrix);
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::InvalidParams(format!("density matrix trace {tr}")));
        }
        let ev = matrix
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::InvalidParams(format!("density matrix eigenvalue {min:e}")));
        }
        Ok(Self { matrix })
    }

    /// Projector onto a normalized pure state.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidParams("zero state vector".into()));
        }
        let d = psi.len();
        Self::new(Mat::from_fn(d, d, |i, j| psi[i] * psi[j].conj() / (norm * norm)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    /// `tr(rho O)`.
    pub fn expectation(&self, op: &OperatorMatrix) -> C64 {
        op.entries().iter().map(|&(i, j, a)| a * self.matrix[(j, i)]).sum()
    }
}

/// Unique steady state of `s`, Hermitized and trace-normalized.
pub fn steady_state(s: &SuperOperator, tol: Option<f64>) -> Result<DensityMatrix> {
    let tol = tol.unwrap_or(DEFAULT_ZERO_TOL);
    let ev = s.eigenvalues()?;
    let v = linalg::null_vector_given(s.matrix(), &ev, tol)?;
    let raw = devectorize(&v, s.d)?;
    let d = s.d;
    let herm = Mat::from_fn(d, d, |i, j| 0.5 * (raw[(i, j)] + raw[(j, i)].conj()));
    let tr = linalg::trace(&herm);
    if tr.norm() < 1e-14 {
        return Err(Error::InvalidParams("steady-state null vector is traceless".into()));
    }
    let rho = Mat::from_fn(d, d, |i, j| herm[(i, j)] / tr.re);
    DensityMatrix::new(rho)
}

#[derive(Clone, Debug)]
pub struct ModeExpansion {
    pub coefficients: Vec<C64>,
    pub eigenvalues: Vec<C64>,
    /// `|sum c_a rho_a - O| / |O|`.
    pub residual: f64,
}

impl ModeExpansion {
    /// `sum_a c_a exp(lambda_a t) rho_a`, devectorized.
    pub fn evolve(&self, sys: &EigenSystem, t: f64) -> Result<CMat> {
        let right = sys.right.as_ref().ok_or(Error::MissingVectors("right"))?;
        let n = right.nrows();
        let d = (n as f64).sqrt().round() as usize;
        let mut v = vec![C64::new(0.0, 0.0); n];
        for (a, (&c, &lam)) in self.coefficients.iter().zip(&self.eigenvalues).enumerate() {
            let w = c * (lam * t).exp();
            for (r, x) in v.iter_mut().enumerate() {
                *x += w * right[(r, a)];
            }
        }
        devectorize(&v, d)
    }
}

/// Coefficients `c_a = tr(rho'_a^dag O) / tr(rho'_a^dag rho_a)`.
pub fn mode_expansion(sys: &EigenSystem, o: &CMat) -> Result<ModeExpansion> {
    let right = sys.right.as_ref().ok_or(Error::MissingVectors("right"))?;
    let left = sys.left.as_ref().ok_or(Error::MissingVectors("left"))?;
    if sys.degraded {
        return Err(Error::ExceptionalPoint(sys.residual_max));
    }
    let n = right.nrows();
    let target = vectorize(o);
    if target.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: target.len() });
    }
    let mut coefficients = Vec::with_capacity(n);
    for a in 0..n {
        let wnorm = (0..n).map(|r| left[(r, a)].norm_sqr()).sum::<f64>().sqrt();
        let vnorm = (0..n).map(|r| right[(r, a)].norm_sqr()).sum::<f64>().sqrt();
        let norm: C64 = (0..n).map(|r| left[(r, a)].conj() * right[(r, a)]).sum();
        if norm.norm() < 1e-12 * wnorm * vnorm {
            return Err(Error::ExceptionalPoint(norm.norm() / (wnorm * vnorm)));
        }
        let num: C64 = (0..n).map(|r| left[(r, a)].conj() * target[r]).sum();
        coefficients.push(num / norm);
    }
    let mut recon = vec![C64::new(0.0, 0.0); n];
    for (a, &c) in coefficients.iter().enumerate() {
        for (r, x) in recon.iter_mut().enumerate() {
            *x += c * right[(r, a)];
        }
    }
    let err = recon.iter().zip(&target).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let scale = target.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    Ok(ModeExpansion { coefficients, eigenvalues: sys.eigenvalues.clone(), residual: err / scale })
}

/// Writes `re,im` rows with 17 significant digits.
pub fn write_spectrum_csv<W: Write>(mut w: W, eigenvalues: &[C64]) -> std::io::Result<()> {
    writeln!(w, "re,im")?;
    for z in eigenvalues {
        writeln!(w, "{:.16e},{:.16e}", z.re, z.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, build_basis, BasisMode, Model, ModelParams, SiteOp};
    use proptest::prelude::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn max_diff(a: &CMat, b: &CMat) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                m = m.max((a[(i, j)] - b[(i, j)]).norm());
            }
        }
        m
    }

    fn model1(l: usize, n: usize, p: &ModelParams) -> (OperatorMatrix, Vec<OperatorMatrix>, fock::FockBasis) {
        let b = build_basis(BasisMode::ChainFixedN { sites: l, particles: n }).unwrap();
        let h = fock::hamiltonian(&b, p).unwrap();
        let j = fock::jump_set(&b, p, Model::One).unwrap();
        (h, j, b)
    }

    #[test]
    fn vec_index_convention() {
        assert_eq!(vec_index(0, 0, 2).unwrap(), 0);
        assert_eq!(vec_index(1, 0, 2).unwrap(), 1);
        assert_eq!(vec_index(0, 1, 2).unwrap(), 2);
        assert!(vec_index(2, 0, 2).is_err());
        assert_eq!(devec_index(2, 2), (0, 1));
    }

    #[test]
    fn empty_generator_is_zero() {
        let s = build_superoperator(&OperatorMatrix::zeros(3, 3), &[]).unwrap();
        assert_eq!(linalg::frobenius_norm(s.matrix()), 0.0);
    }

    #[test]
    fn single_decay_step() {
        let b = build_basis(BasisMode::SingleSite { d_max: 2 }).unwrap();
        let l = fock::loss_jump(&b, 0, 1.0).unwrap();
        let s = build_superoperator(&OperatorMatrix::zeros(2, 2), &[l]).unwrap();
        let rho = Mat::from_fn(2, 2, |i, j| c(if i == 1 && j == 1 { 1.0 } else { 0.0 }));
        let out = s.apply(&rho).unwrap();
        let expect = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => c(1.0),
            (1, 1) => c(-1.0),
            _ => c(0.0),
        });
        assert!(max_diff(&out, &expect) < 1e-15);
    }

    #[test]
    fn pure_commutator_spectrum() {
        let b = build_basis(BasisMode::SingleSite { d_max: 10 }).unwrap();
        let h = site_number(&b);
        let s = build_superoperator(&h, &[]).unwrap();
        let sys = s.eigensystem(Vectors::Right).unwrap();
        assert!(sys.residual_max <= 1e-10);
        let mut expect: Vec<C64> =
            (0..10).flat_map(|m| (0..10).map(move |n| C64::new(0.0, -((m as f64) - n as f64)))).collect();
        linalg::sort_eigenvalues(&mut expect);
        for (x, y) in sys.eigenvalues.iter().zip(&expect) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    fn site_number(b: &fock::FockBasis) -> OperatorMatrix {
        fock::site_operator(b, 0, SiteOp::Number).unwrap()
    }

    #[test]
    fn model1_spectrum_properties() {
        let p = ModelParams { bond_rate: 2.0, interaction: 2.0, dephasing: 1.0, sites: 3, ..Default::default() };
        let (h, j, _) = model1(3, 2, &p);
        let s = build_superoperator(&h, &j).unwrap();
        let ev = s.eigenvalues().unwrap();
        assert_eq!(ev.len(), 36);
        assert!(ev.iter().all(|z| z.re <= 1e-10));
        for z in &ev {
            let best = ev.iter().map(|w| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-10);
        }
        // The real-basis path agrees with the complex solver.
        let full = linalg::eigenvalues(s.matrix()).unwrap();
        let mut used = vec![false; full.len()];
        for x in &ev {
            let (k, dist) = full
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, y)| (k, (x - y).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            used[k] = true;
            assert!(dist < 1e-9, "{x} off by {dist:e}");
        }
    }

    #[test]
    fn matrix_free_and_adjoint_agree() {
        let p = ModelParams {
            bond_rate: 1.5,
            interaction: 1.0,
            dephasing: 0.7,
            chemical_potential: 0.3,
            sites: 3,
            ..Default::default()
        };
        let (h, j, b) = model1(3, 2, &p);
        let d = b.dim();
        let s = build_superoperator(&h, &j).unwrap();
        let sa = adjoint_liouvillian(&h, &j).unwrap();
        let m = s.matrix();
        let ma = sa.matrix();
        let mut diff: f64 = 0.0;
        for i in 0..d * d {
            for k in 0..d * d {
                diff = diff.max((m[(k, i)].conj() - ma[(i, k)]).norm());
            }
        }
        assert!(diff < 1e-12);

        let rho = Mat::from_fn(d, d, |i, k| C64::new(((i * 3 + k) % 5) as f64, (i as f64) - (k as f64)));
        let a = apply_liouvillian(&h, &j, &rho).unwrap();
        assert!(max_diff(&a, &s.apply(&rho).unwrap()) < 1e-12);
        let b2 = apply_adjoint(&h, &j, &rho).unwrap();
        assert!(max_diff(&b2, &sa.apply(&rho).unwrap()) < 1e-12);

        let id = CMat::identity(d, d);
        assert!(linalg::frobenius_norm(&apply_adjoint(&h, &j, &id).unwrap()) < 1e-12);
    }

    #[test]
    fn adjoint_sign_on_coherence() {
        let b = build_basis(BasisMode::SingleSite { d_max: 3 }).unwrap();
        let h = site_number(&b).scale(c(1.7));
        let a = Mat::from_fn(3, 3, |i, j| c(if i == 0 && j == 1 { 1.0 } else { 0.0 }));
        let out = apply_adjoint(&h, &[], &a).unwrap();
        // i[H, A] = i(0 - 1.7) A
        assert!((out[(0, 1)] - C64::new(0.0, -1.7)).norm() < 1e-14);
    }

    #[test]
    fn bec_is_dark_and_steady() {
        let p = ModelParams { sites: 3, ..Default::default() };
        let (h, j, b) = model1(3, 2, &p);
        let psi = fock::bec_state(&b).unwrap();
        let rho = DensityMatrix::pure(&psi).unwrap();
        let out = apply_liouvillian(&h, &j, rho.matrix()).unwrap();
        assert!(linalg::frobenius_norm(&out) < 1e-12);

        let s = build_superoperator(&h, &j).unwrap();
        let ss = steady_state(&s, None).unwrap();
        assert!(max_diff(ss.matrix(), rho.matrix()) < 1e-8);
        assert!(linalg::frobenius_norm(&apply_liouvillian(&h, &j, ss.matrix()).unwrap()) < 1e-10);
    }

    #[test]
    fn vacuum_is_loss_steady_state() {
        let b = build_basis(BasisMode::SingleSite { d_max: 4 }).unwrap();
        let l = fock::loss_jump(&b, 0, 1.0).unwrap();
        let s = build_superoperator(&OperatorMatrix::zeros(4, 4), &[l]).unwrap();
        let v = linalg::null_vector(s.matrix(), 1e-8).unwrap();
        let rho = devectorize(&v, 4).unwrap();
        assert!((rho[(0, 0)].norm() - 1.0).abs() < 1e-10);
        let ss = steady_state(&s, None).unwrap();
        assert!((ss.matrix()[(0, 0)] - c(1.0)).norm() < 1e-10);
    }

    #[test]
    fn gain_loss_matches_rate_equations() {
        let d = 12;
        let (rp, rl) = (0.5, 1.0);
        let b = build_basis(BasisMode::SingleSite { d_max: d }).unwrap();
        let jumps = vec![fock::pump_jump(&b, 0, rp).unwrap(), fock::loss_jump(&b, 0, rl).unwrap()];
        let s = build_superoperator(&OperatorMatrix::zeros(d, d), &jumps).unwrap();
        let ss = steady_state(&s, None).unwrap();

        // Brute-force relaxation of the classical birth-death chain.
        let mut pop = vec![0.0; d];
        pop[0] = 1.0;
        for _ in 0..200_000 {
            let mut dp = vec![0.0; d];
            for n in 0..d {
                let up = if n + 1 < d { rp * (n + 1) as f64 * pop[n] } else { 0.0 };
                let down = rl * n as f64 * pop[n];
                dp[n] -= up + down;
                if n + 1 < d {
                    dp[n + 1] += up;
                }
                if n > 0 {
                    dp[n - 1] += down;
                }
            }
            for n in 0..d {
                pop[n] += 1e-3 * dp[n];
            }
        }
        for n in 0..d {
            assert!((ss.matrix()[(n, n)].re - pop[n]).abs() < 1e-8, "n={n}");
        }
        let mean: f64 = (0..d).map(|n| n as f64 * pop[n]).sum();
        assert!((mean - rp / (rl - rp)).abs() < 0.01);
    }

    #[test]
    fn expansion_reconstructs_and_evolves() {
        let d = 4;
        let b = build_basis(BasisMode::SingleSite { d_max: d }).unwrap();
        let h = site_number(&b).scale(c(0.3));
        let jumps = vec![fock::loss_jump(&b, 0, 1.0).unwrap()];
        let s = build_superoperator(&h, &jumps).unwrap();
        let sys = s.eigensystem(Vectors::Both).unwrap();
        let ss = steady_state(&s, None).unwrap();
        let e = mode_expansion(&sys, ss.matrix()).unwrap();
        assert!((e.coefficients[0] - c(1.0)).norm() < 1e-8);
        assert!(e.coefficients[1..].iter().all(|z| z.norm() <= 1e-8));

        let right = sys.right.as_ref().unwrap();
        let mode = devectorize(&(0..d * d).map(|r| right[(r, 5)]).collect::<Vec<_>>(), d).unwrap();
        let e5 = mode_expansion(&sys, &mode).unwrap();
        for (a, z) in e5.coefficients.iter().enumerate() {
            let expect = if a == 5 { 1.0 } else { 0.0 };
            assert!((z - c(expect)).norm() < 1e-8);
        }

        let one = Mat::from_fn(d, d, |i, j| c(if i == 1 && j == 1 { 1.0 } else { 0.0 }));
        let e1 = mode_expansion(&sys, &one).unwrap();
        assert!(e1.residual < 1e-10);
        let spectral = e1.evolve(&sys, 1.0).unwrap();
        let mut rho = one.clone();
        let dt = 1e-3;
        for _ in 0..1000 {
            let k1 = s.apply(&rho).unwrap();
            let k2 = s.apply(&(&rho + &k1 * faer::Scale(c(dt / 2.0)))).unwrap();
            let k3 = s.apply(&(&rho + &k2 * faer::Scale(c(dt / 2.0)))).unwrap();
            let k4 = s.apply(&(&rho + &k3 * faer::Scale(c(dt)))).unwrap();
            rho = &rho + (&k1 + &k2 * faer::Scale(c(2.0)) + &k3 * faer::Scale(c(2.0)) + &k4) * faer::Scale(c(dt / 6.0));
        }
        assert!(max_diff(&spectral, &rho) < 1e-6);
    }

    #[test]
    fn appendix_properties_on_model2() {
        let p = ModelParams {
            bond_rate: 0.5,
            interaction: 1.0,
            pump: 0.4,
            loss: 0.2,
            two_body_loss: 0.3,
            sites: 2,
            d_max: 3,
            ..Default::default()
        };
        let b = build_basis(BasisMode::ChainTruncated { sites: 2, d_max: 3 }).unwrap();
        let h = fock::hamiltonian(&b, &p).unwrap();
        let j = fock::jump_set(&b, &p, Model::Two).unwrap();
        let s = build_superoperator(&h, &j).unwrap();
        let sys = s.eigensystem(Vectors::Both).unwrap();
        assert!(!sys.degraded);
        let d = b.dim();
        let right = sys.right.as_ref().unwrap();
        let left = sys.left.as_ref().unwrap();
        let n = d * d;
        let col = |m: &CMat, a: usize| -> Vec<C64> { (0..n).map(|r| m[(r, a)]).collect() };
        let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for a in 0..n {
            let lam = sys.eigenvalues[a];
            assert!(lam.re <= 1e-10);
            let ra = devectorize(&col(right, a), d).unwrap();
            if lam.norm() > 1e-8 {
                assert!(linalg::trace(&ra).norm() <= 1e-8 * linalg::frobenius_norm(&ra));
            }
            // (lambda*, rho^dag) is also an eigenpair.
            let dag = ra.adjoint().to_owned();
            let out = s.apply(&dag).unwrap();
            let want = &dag * faer::Scale(lam.conj());
            assert!(max_diff(&out, &want) <= 1e-8 * linalg::frobenius_norm(&dag).max(1.0));
            for bb in 0..n {
                if (lam - sys.eigenvalues[bb]).norm() > 1e-6 {
                    let w = col(left, a);
                    let v = col(right, bb);
                    let ip: C64 = w.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                    assert!(ip.norm() <= 1e-8 * norm(&w) * norm(&v));
                }
            }
        }
        // Weak U(1): commutes with the gauge superoperator at theta = pi/3.
        let theta = std::f64::consts::FRAC_PI_3;
        let phase: Vec<C64> = (0..d).map(|i| C64::from_polar(1.0, theta * b.total_number(i) as f64)).collect();
        let m = s.matrix();
        let mut comm: f64 = 0.0;
        for r in 0..n {
            for cc in 0..n {
                let (i, k) = devec_index(r, d);
                let (p2, q) = devec_index(cc, d);
                let gr = phase[i] * phase[k].conj();
                let gc = phase[p2] * phase[q].conj();
                comm = comm.max((m[(r, cc)] * (gc - gr)).norm());
            }
        }
        assert!(comm <= 1e-10);
    }

    #[test]
    fn strong_symmetry_conserves_number() {
        let p = ModelParams { bond_rate: 1.0, interaction: 2.0, dephasing: 0.5, sites: 3, ..Default::default() };
        // Truncated basis mixes sectors, so number conservation is a real check.
        let b = build_basis(BasisMode::ChainTruncated { sites: 3, d_max: 3 }).unwrap();
        let h = fock::hamiltonian(&b, &p).unwrap();
        let j = fock::jump_set(&b, &p, Model::One).unwrap();
        let num = b.number_operator();
        let d = b.dim();
        let mut rho = Mat::from_fn(d, d, |i, k| C64::new(1.0 / (1.0 + (i + k) as f64), 0.1 * (i as f64 - k as f64)));
        let tr = linalg::trace(&rho);
        rho = &rho * faer::Scale(c(1.0) / tr);
        let n0: C64 = num.entries().iter().map(|&(i, k, a)| a * rho[(k, i)]).sum();
        let dt = 0.01;
        for _ in 0..100 {
            let k1 = apply_liouvillian(&h, &j, &rho).unwrap();
            rho = &rho + &k1 * faer::Scale(c(dt));
            let nt: C64 = num.entries().iter().map(|&(i, k, a)| a * rho[(k, i)]).sum();
            assert!((nt - n0).norm() < 1e-8);
        }
    }

    #[test]
    fn spectrum_csv_format() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[C64::new(-0.5, 1.0 / 3.0)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "re,im\n-5.0000000000000000e-1,3.3333333333333331e-1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trace_preserved_for_random_hermitian(seed in 0u64..1000, u in 0.0f64..3.0, g in 0.0f64..2.0) {
            let p = ModelParams { bond_rate: 1.0, interaction: u, dephasing: g, sites: 3, ..Default::default() };
            let (h, j, b) = model1(3, 2, &p);
            let d = b.dim();
            let mut s = seed;
            let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5 };
            let raw = Mat::from_fn(d, d, |_, _| C64::new(next(), next()));
            let herm = Mat::from_fn(d, d, |i, k| raw[(i, k)] + raw[(k, i)].conj());
            let out = apply_liouvillian(&h, &j, &herm).unwrap();
            prop_assert!(linalg::trace(&out).norm() <= 1e-12);
            let sop = build_superoperator(&h, &j).unwrap();
            let id = vectorize(&CMat::identity(d, d));
            let m = sop.matrix();
            for cc in 0..d * d {
                let row: C64 = (0..d * d).map(|r| id[r].conj() * m[(r, cc)]).sum();
                prop_assert!(row.norm() <= 1e-12);
            }
        }
    }
}
