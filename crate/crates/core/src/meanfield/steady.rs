//! Uniform steady states.
//!
//! The normal (`psi = 0`) fixed point is found first, in the diagonal
//! sector. If it is stable against uniform coherence fluctuations it is the
//! steady state, and `mu` is chosen so the slowest coherence mode does not
//! rotate. Otherwise the coherent branch is relaxed from a coherent state
//! with running `mu` corrections and then polished by Newton iteration with
//! `mu` as an extra unknown and the gauge fixed by `Im psi = 0`.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use num_complex::Complex64 as C64;

use super::evolve::{substeps, Stepper};
use super::{coherent_state, linearize, thermal_steady, ChainRhs, ChainState, MfOptions};
use crate::error::{Error, Result};
use crate::fock::{Model, ModelParams};
use crate::linalg::{self, CMat};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Normal,
    Superfluid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyStateReport {
    pub psi: C64,
    /// Condensate density `|psi|^2`.
    pub n0: f64,
    pub n: f64,
    /// Non-condensed density `n - n0`.
    pub n1: f64,
    pub mu: f64,
    /// Rotation frequency of `psi` at `mu = 0`.
    pub omega: C64,
    pub phase: Phase,
    pub converged: bool,
    /// Frobenius norm of the site derivative at termination.
    pub residual: f64,
    /// Evolution time spent before polishing.
    pub time: f64,
    /// Largest growth rate over the momentum blocks of the `L`-site chain.
    pub max_growth: f64,
}

/// Uniform single-site problem: both neighbours equal the site itself.
struct Uniform {
    p: ModelParams,
    rhs: ChainRhs,
}

impl Uniform {
    fn new(p: &ModelParams) -> Self {
        Uniform { p: *p, rhs: ChainRhs::new(p) }
    }

    fn set_mu(&mut self, mu: f64) {
        self.p.chemical_potential = mu;
        self.rhs = ChainRhs::new(&self.p);
    }

    fn f(&mut self, x: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![vec![ZERO; x.len()]];
        self.rhs.eval(&[x.to_vec()], &mut out)?;
        Ok(out.pop().unwrap())
    }

    /// `(M_loc + 2 M_nb)` at `x`, i.e. the Jacobian of `f`.
    fn jacobian(&self, x: &[C64]) -> Result<CMat> {
        let d = self.p.d_max;
        let state = ChainState::from_raw(d, vec![x.to_vec()], 0.0);
        let (loc, nb) = linearize(&state, &self.p)?.block_parts()?;
        Ok(Mat::from_fn(loc.nrows(), loc.ncols(), |i, j| loc[(i, j)] + nb[(i, j)] * 2.0))
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn to_vec(m: &CMat) -> Vec<C64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k % d, k / d)]).collect()
}

fn hermitize(x: &mut [C64], d: usize) {
    for n in 0..d {
        for m in 0..=n {
            let a = 0.5 * (x[m + n * d] + x[n + m * d].conj());
            x[m + n * d] = a;
            x[n + m * d] = a.conj();
        }
    }
}

fn psi_of(x: &[C64], d: usize) -> C64 {
    (0..d - 1).map(|m| x[m + 1 + m * d] * ((m + 1) as f64).sqrt()).sum()
}

struct Constraints {
    density: Option<f64>,
    /// Solve for `mu` and fix the gauge `Im psi = 0`.
    with_mu: bool,
    diagonal_only: bool,
}

/// Damped Gauss-Newton on the Hermitian coordinates of the site matrix.
/// Returns the final derivative norm.
fn newton(u: &mut Uniform, x: &mut Vec<C64>, c: &Constraints, tol: f64) -> Result<f64> {
    let d = u.p.d_max;
    let basis = linalg::hermitian_basis(d);
    let active: Vec<usize> = (0..basis.len())
        .filter(|&a| !c.diagonal_only || (basis[a][1].1 == ZERO && basis[a][0].0.is_multiple_of(d + 1)))
        .collect();
    let elem = |a: usize| -> Vec<C64> {
        let mut v = vec![ZERO; d * d];
        for &(i, t) in &basis[a] {
            v[i] += t;
        }
        v
    };
    let coords = |v: &[C64]| -> Vec<f64> {
        active.iter().map(|&a| basis[a].iter().map(|&(i, t)| (t.conj() * v[i]).re).sum()).collect()
    };
    let merit = |u: &mut Uniform, x: &[C64]| -> Result<(f64, f64)> {
        let f = norm(&u.f(x)?);
        let tr: C64 = (0..d).map(|m| x[m * (d + 1)]).sum();
        let mut viol = (tr - 1.0).norm();
        if let Some(nbar) = c.density {
            let n: f64 = (0..d).map(|m| m as f64 * x[m * (d + 1)].re).sum();
            viol += (n - nbar).abs();
        }
        if c.with_mu {
            viol += psi_of(x, d).im.abs();
        }
        Ok((f, f + viol))
    };

    let mut best = merit(u, x)?;
    for _ in 0..40 {
        if best.1 < tol * 1e-3 {
            break;
        }
        let f = u.f(x)?;
        let jac = u.jacobian(x)?;
        let (real, _) = linalg::to_hermitian_basis(&jac, d);
        let na = active.len();
        let ncol = na + usize::from(c.with_mu);
        let nrow = na + 1 + usize::from(c.density.is_some()) + usize::from(c.with_mu);
        let mut a = Mat::<f64>::zeros(nrow, ncol);
        let mut rhs = Mat::<f64>::zeros(nrow, 1);
        for (ri, &ra) in active.iter().enumerate() {
            for (ci, &ca) in active.iter().enumerate() {
                a[(ri, ci)] = real[(ra, ca)];
            }
        }
        for (ri, v) in coords(&f).into_iter().enumerate() {
            rhs[(ri, 0)] = -v;
        }
        if c.with_mu {
            // d f / d mu = i [n, rho]
            let dmu: Vec<C64> = (0..d * d).map(|k| C64::new(0.0, (k % d) as f64 - (k / d) as f64) * x[k]).collect();
            for (ri, v) in coords(&dmu).into_iter().enumerate() {
                a[(ri, na)] = v;
            }
        }
        let mut row = na;
        let tr: C64 = (0..d).map(|m| x[m * (d + 1)]).sum();
        for (ci, &ca) in active.iter().enumerate() {
            let e = elem(ca);
            a[(row, ci)] = (0..d).map(|m| e[m * (d + 1)].re).sum();
        }
        rhs[(row, 0)] = 1.0 - tr.re;
        row += 1;
        if let Some(nbar) = c.density {
            for (ci, &ca) in active.iter().enumerate() {
                let e = elem(ca);
                a[(row, ci)] = (0..d).map(|m| m as f64 * e[m * (d + 1)].re).sum();
            }
            let n: f64 = (0..d).map(|m| m as f64 * x[m * (d + 1)].re).sum();
            rhs[(row, 0)] = nbar - n;
            row += 1;
        }
        if c.with_mu {
            for (ci, &ca) in active.iter().enumerate() {
                a[(row, ci)] = psi_of(&elem(ca), d).im;
            }
            rhs[(row, 0)] = -psi_of(x, d).im;
        }
        let step = a.col_piv_qr().solve_lstsq(&rhs);
        if !(0..ncol).all(|i| step[(i, 0)].is_finite()) {
            break;
        }

        let mu0 = u.p.chemical_potential;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let mut trial = x.clone();
            for (ci, &ca) in active.iter().enumerate() {
                for &(i, t) in &basis[ca] {
                    trial[i] += t * (lambda * step[(ci, 0)]);
                }
            }
            hermitize(&mut trial, d);
            if c.with_mu {
                u.set_mu(mu0 + lambda * step[(na, 0)]);
            }
            let m = merit(u, &trial)?;
            if m.1 < best.1 {
                *x = trial;
                best = m;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            if c.with_mu {
                u.set_mu(mu0);
            }
            break;
        }
    }
    Ok(best.0)
}

/// Charge-`q` sector (`m - n = q`) of a block matrix.
fn sector(block: &CMat, d: usize, q: isize) -> CMat {
    let idx: Vec<usize> = (0..d * d).filter(|&k| (k % d) as isize - (k / d) as isize == q).collect();
    Mat::from_fn(idx.len(), idx.len(), |i, j| block[(idx[i], idx[j])])
}

fn report(
    x: &[C64],
    d: usize,
    mu: f64,
    omega: C64,
    phase: Phase,
    residual: f64,
    tol: f64,
    time: f64,
) -> SteadyStateReport {
    let psi = psi_of(x, d);
    let n: f64 = (0..d).map(|m| m as f64 * x[m * (d + 1)].re).sum();
    let n0 = psi.norm_sqr();
    SteadyStateReport {
        psi,
        n0,
        n,
        n1: n - n0,
        mu,
        omega,
        phase,
        converged: residual < tol,
        residual,
        time,
        max_growth: f64::NAN,
    }
}

/// Relaxes the uniform chain with periodic `mu <- mu - Re omega`
/// corrections until the derivative norm drops below `target` or the clock
/// reaches `t_stop`.
fn relax(u: &mut Uniform, x: &mut Vec<C64>, opts: &MfOptions, t: &mut f64, t_stop: f64, target: f64) -> Result<f64> {
    let d = u.p.d_max;
    let n: f64 = (0..d).map(|m| m as f64 * x[m * (d + 1)].re).sum();
    let dt = opts.dt / substeps(&u.p, opts.dt, 1.5 * n + 1.0) as f64;
    let check_every = ((1.0 / dt).round() as usize).max(1);
    let mut stepper = Stepper::new(&u.p, dt, opts.integrator, 1);
    let mut field = vec![x.clone()];
    let mut res = f64::INFINITY;
    let mut since_update = 0usize;
    while *t < t_stop {
        for _ in 0..check_every {
            stepper.step(&mut field)?;
        }
        *t += check_every as f64 * stepper.h();
        since_update += 1;
        let f = u.f(&field[0])?;
        res = norm(&f);
        if res < target {
            break;
        }
        let psi = psi_of(&field[0], d);
        if since_update >= 2 && psi.norm() > 1e-8 {
            let dpsi = psi_of(&f, d);
            let omega = -C64::i() * dpsi / psi;
            if omega.re.abs() > 1e-10 {
                u.set_mu(u.p.chemical_potential - omega.re);
                stepper = Stepper::new(&u.p, dt, opts.integrator, 1);
                since_update = 0;
            }
        }
    }
    *x = field.pop().unwrap();
    Ok(res)
}

/// Steady state of the uniform chain and its report. The returned chain has
/// `p.sites` identical sites.
pub fn find_steady(p: &ModelParams, model: Model, opts: &MfOptions) -> Result<(ChainState, SteadyStateReport)> {
    p.validate(model)?;
    let d = p.d_max;
    let nbar = opts.density_for(p);
    let density = (model == Model::One).then_some(nbar);

    // Normal fixed point in the diagonal sector.
    let start = match model {
        Model::One => nbar,
        Model::Two => 0.5,
    };
    let mut u = Uniform::new(&ModelParams { chemical_potential: 0.0, ..*p });
    let mut x = to_vec(&thermal_steady(start, d)?.0);
    let mut t = 0.0;
    if model == Model::Two {
        relax(&mut u, &mut x, opts, &mut t, opts.t_relax, 1e-6)?;
    }
    let normal = Constraints { density, with_mu: false, diagonal_only: true };
    let mut res = newton(&mut u, &mut x, &normal, opts.tol)?;
    if res >= opts.tol {
        relax(&mut u, &mut x, opts, &mut t, opts.t_max, opts.tol)?;
        res = newton(&mut u, &mut x, &normal, opts.tol)?;
    }

    let jac = u.jacobian(&x)?;
    let coh = linalg::eigenvalues(&sector(&jac, d, 1))?;
    let slowest = coh[0];
    let (state_vec, mut rep) = if slowest.re <= opts.stability_tol {
        let omega = -C64::i() * slowest;
        let mu = -slowest.im;
        let rep = report(&x, d, mu, omega, Phase::Normal, res, opts.tol, t);
        (x, rep)
    } else {
        let mut u = Uniform::new(p);
        let alpha = match model {
            Model::One => nbar.sqrt(),
            Model::Two => 1.0,
        };
        let mut y = to_vec(&coherent_state(C64::new(alpha, 0.0), d));
        let coherent = Constraints { density, with_mu: true, diagonal_only: false };
        let mut t = 0.0;
        let mut res = relax(&mut u, &mut y, opts, &mut t, opts.t_relax, 1e-5)?;
        while res >= opts.tol {
            let mut trial = y.clone();
            let saved = u.p.chemical_potential;
            let r = newton(&mut u, &mut trial, &coherent, opts.tol)?;
            if r < opts.tol && psi_of(&trial, d).norm_sqr() > 1e-10 {
                y = trial;
                res = r;
                break;
            }
            u.set_mu(saved);
            if t >= opts.t_max {
                break;
            }
            let stop = (t + 100.0).min(opts.t_max);
            res = relax(&mut u, &mut y, opts, &mut t, stop, opts.tol)?;
        }
        let mu = u.p.chemical_potential;
        let rep = report(&y, d, mu, C64::new(-mu, 0.0), Phase::Superfluid, res, opts.tol, t);
        (y, rep)
    };

    let pt = ModelParams { chemical_potential: rep.mu, ..*p };
    let state = ChainState::from_raw(d, vec![state_vec; p.sites], 0.0);
    if opts.check_uniform {
        let single = ChainState::from_raw(d, vec![state.raw()[0].clone()], 0.0);
        let growth = linearize(&single, &pt)?.max_growth_rate(p.sites, opts)?;
        rep.max_growth = growth;
        if growth > opts.stability_tol {
            return Err(Error::NonUniform { spread: growth });
        }
    }
    if !rep.converged {
        return Err(Error::NotConverged { residual: rep.residual, time: rep.time });
    }
    Ok((state, rep))
}

/// Bracket of a phase boundary along one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boundary {
    pub lo: f64,
    pub hi: f64,
    /// Phase at `lo`; `hi` is in the other one.
    pub lo_phase: Phase,
}

impl Boundary {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Bisects the normal/superfluid boundary of the uniform steady state along
/// `x`, with `params(x)` giving the model at each point. The endpoints must
/// lie in different phases.
pub fn bisect_boundary<F>(params: F, model: Model, opts: &MfOptions, lo: f64, hi: f64, tol: f64) -> Result<Boundary>
where
    F: Fn(f64) -> ModelParams,
{
    let phase = |x: f64| find_steady(&params(x), model, opts).map(|(_, r)| r.phase);
    let (mut a, mut b) = (lo, hi);
    let pa = phase(a)?;
    if phase(b)? == pa {
        return Err(Error::InvalidParams(format!("no phase change between {lo} and {hi}")));
    }
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        if phase(m)? == pa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(Boundary { lo: a, hi: b, lo_phase: pa })
}
