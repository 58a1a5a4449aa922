use std::io::Write;

use num_complex::Complex64 as C64;

use super::{check_state, default_initial, ChainRhs, ChainState, MfOptions};
use crate::error::{Error, Result};
use crate::fock::{Model, ModelParams};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    /// Classical RK4 on every matrix element.
    Rk4,
    /// RK4 in the interaction picture of the diagonal generator
    /// `-i(E_m - E_n) - (gamma/2 + kappa)(m - n)^2`, which is integrated
    /// exactly. Populations see plain RK4.
    Lawson,
}

type Field = Vec<Vec<C64>>;

pub(crate) struct Stepper {
    rhs: ChainRhs,
    h: f64,
    integrator: Integrator,
    g: Vec<C64>,
    e1: Vec<C64>,
    e2: Vec<C64>,
    k: [Field; 4],
    tmp: Field,
}

impl Stepper {
    pub fn new(p: &ModelParams, h: f64, integrator: Integrator, sites: usize) -> Self {
        let rhs = ChainRhs::new(p);
        let dd = p.d_max * p.d_max;
        let (g, e1, e2) = match integrator {
            Integrator::Rk4 => (vec![ZERO; dd], vec![C64::new(1.0, 0.0); dd], vec![C64::new(1.0, 0.0); dd]),
            Integrator::Lawson => {
                let g = rhs.kernel.stiff_generator();
                let e1 = g.iter().map(|x| (x * (0.5 * h)).exp()).collect();
                let e2 = g.iter().map(|x| (x * h).exp()).collect();
                (g, e1, e2)
            }
        };
        let field = || vec![vec![ZERO; dd]; sites];
        Stepper { rhs, h, integrator, g, e1, e2, k: [field(), field(), field(), field()], tmp: field() }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `N(x) = f(x) - G o x`.
    fn nonstiff(rhs: &mut ChainRhs, g: &[C64], lawson: bool, x: &[Vec<C64>], out: &mut [Vec<C64>]) -> Result<()> {
        rhs.eval(x, out)?;
        if lawson {
            for (o, xi) in out.iter_mut().zip(x) {
                for k in 0..o.len() {
                    o[k] -= g[k] * xi[k];
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, x: &mut Field) -> Result<()> {
        let h = self.h;
        let lawson = self.integrator == Integrator::Lawson;
        let (e1, e2, g) = (&self.e1, &self.e2, &self.g);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;

        Self::nonstiff(&mut self.rhs, g, lawson, x, k1)?;
        for j in 0..x.len() {
            for k in 0..x[j].len() {
                tmp[j][k] = e1[k] * (x[j][k] + 0.5 * h * k1[j][k]);
            }
        }
        Self::nonstiff(&mut self.rhs, g, lawson, tmp, k2)?;
        for j in 0..x.len() {
            for k in 0..x[j].len() {
                tmp[j][k] = e1[k] * x[j][k] + 0.5 * h * k2[j][k];
            }
        }
        Self::nonstiff(&mut self.rhs, g, lawson, tmp, k3)?;
        for j in 0..x.len() {
            for k in 0..x[j].len() {
                tmp[j][k] = e2[k] * x[j][k] + h * e1[k] * k3[j][k];
            }
        }
        Self::nonstiff(&mut self.rhs, g, lawson, tmp, k4)?;
        for j in 0..x.len() {
            for k in 0..x[j].len() {
                x[j][k] =
                    e2[k] * x[j][k] + (h / 6.0) * (e2[k] * k1[j][k] + 2.0 * e1[k] * (k2[j][k] + k3[j][k]) + k4[j][k]);
            }
        }
        Ok(())
    }
}

/// Largest step for which explicit RK4 stays stable on the population
/// sector, from a bound on its decay rates: on-site pump and losses at the
/// top level plus bond processes with both neighbours at density `n`.
pub(crate) fn stable_step(p: &ModelParams, n: f64) -> f64 {
    let top = (p.d_max - 1) as f64;
    let rate = p.pump * (top + 1.0)
        + p.loss * top
        + p.two_body_loss * top * (top - 1.0)
        + 4.0 * p.bond_rate * (2.0 * n.max(0.0) + 1.0) * top;
    if rate > 0.0 {
        2.5 / rate
    } else {
        f64::INFINITY
    }
}

/// Number of equal substeps of `h` that respects [`stable_step`].
pub(crate) fn substeps(p: &ModelParams, h: f64, n: f64) -> usize {
    ((h / stable_step(p, n)).ceil() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub site: usize,
    pub psi: C64,
    pub n: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub state: ChainState,
    /// Largest per-site trace deviation seen during the run.
    pub max_drift: f64,
}

impl Trajectory {
    /// Samples of a single site in time order.
    pub fn site(&self, j: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.site == j)
    }
}

fn record(state: &ChainState, out: &mut Vec<Sample>) {
    for j in 0..state.len() {
        out.push(Sample { t: state.time, site: j, psi: state.psi(j), n: state.density(j) });
    }
}

/// Integrates the chain to `state.time + t_end`, sampling every
/// `sample_every` time units (at least once per step). The step is shrunk
/// so that it divides `t_end` and stays inside the RK4 stability region of
/// the population sector.
pub fn evolve_mf(
    state: &ChainState,
    p: &ModelParams,
    t_end: f64,
    opts: &MfOptions,
    sample_every: Option<f64>,
) -> Result<Trajectory> {
    check_state(state, p)?;
    if !(opts.dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and t_end >= 0, got {} and {t_end}", opts.dt)));
    }
    let n_max = (0..state.len()).map(|j| state.density(j)).fold(0.0, f64::max);
    let dt = opts.dt / substeps(p, opts.dt, 1.5 * n_max + 1.0) as f64;
    let steps = (t_end / dt).ceil() as usize;
    let h = if steps > 0 { t_end / steps as f64 } else { dt };
    let stride = sample_every.map(|s| ((s / h).round() as usize).max(1));
    let mut stepper = Stepper::new(p, h, opts.integrator, state.len());
    let mut x = state.raw().to_vec();
    let t0 = state.time;
    let tr0: Vec<C64> = (0..state.len()).map(|j| state.trace(j)).collect();
    let mut samples = Vec::new();
    let mut cur = state.clone();
    if stride.is_some() {
        record(&cur, &mut samples);
    }
    let mut max_drift: f64 = 0.0;
    for i in 1..=steps {
        stepper.step(&mut x)?;
        let t = t0 + i as f64 * h;
        cur = ChainState::from_raw(state.dim(), x.clone(), t);
        for (j, tr) in tr0.iter().enumerate() {
            let drift = (cur.trace(j) - tr).norm();
            max_drift = max_drift.max(drift);
            if !(drift <= opts.drift_limit) {
                return Err(Error::TraceDrift { drift, limit: opts.drift_limit });
            }
        }
        if let Some(s) = stride {
            if i % s == 0 || i == steps {
                record(&cur, &mut samples);
            }
        }
    }
    Ok(Trajectory { samples, state: cur, max_drift })
}

/// Writes `t,site,re_psi,im_psi,n`.
pub fn write_trajectory_csv<W: Write>(mut w: W, samples: &[Sample]) -> std::io::Result<()> {
    writeln!(w, "t,site,re_psi,im_psi,n")?;
    for s in samples {
        writeln!(w, "{:.16e},{},{:.16e},{:.16e},{:.16e}", s.t, s.site, s.psi.re, s.psi.im, s.n)?;
    }
    Ok(())
}

/// Mean of `-i psi'/psi` with centered differences over equally spaced
/// samples. Samples whose modulus underflows are skipped.
pub fn rotation_frequency(psi: &[C64], h: f64) -> Option<C64> {
    let mut acc = ZERO;
    let mut count = 0usize;
    for k in 1..psi.len().saturating_sub(1) {
        if psi[k].norm() > 1e-250 {
            let dpsi = (psi[k + 1] - psi[k - 1]) / (2.0 * h);
            acc += -C64::i() * dpsi / psi[k];
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuTuning {
    pub mu: f64,
    /// Rotation frequency of the untuned run.
    pub omega: C64,
    pub superfluid: bool,
    /// Residual rotation rate (superfluid) or final `|psi|` (normal) after
    /// rerunning with the tuned chemical potential.
    pub residual: f64,
}

fn final_window(tr: &Trajectory) -> Vec<C64> {
    let psi: Vec<C64> = tr.site(0).map(|s| s.psi).collect();
    let start = psi.len() - (psi.len() / 10).max(3).min(psi.len());
    psi[start..].to_vec()
}

/// Chemical-potential tuning from the rotation of `psi` on the uniform
/// reduced chain: run at `mu = 0`, average `omega` over the final 10%, set
/// `mu = -Re omega`, and rerun once to report the residual.
pub fn tune_mu(p: &ModelParams, model: Model, t_relax: f64, opts: &MfOptions) -> Result<MuTuning> {
    p.validate(model)?;
    let p0 = ModelParams { chemical_potential: 0.0, ..*p };
    let init = default_initial(&p0, opts, model, 1)?;
    let first = evolve_mf(&init, &p0, t_relax, opts, Some(opts.dt))?;
    let times: Vec<f64> = first.site(0).map(|s| s.t).collect();
    let h = if times.len() > 1 { times[1] - times[0] } else { opts.dt };
    let omega = rotation_frequency(&final_window(&first), h).unwrap_or(ZERO);
    let superfluid = omega.im.abs() < 1e-4 && first.state.psi(0).norm() > 1e-6;
    let mu = -omega.re;

    let p1 = ModelParams { chemical_potential: mu, ..*p };
    let second = evolve_mf(&init, &p1, t_relax, opts, Some(opts.dt))?;
    let residual = if superfluid {
        rotation_frequency(&final_window(&second), h).map_or(0.0, |w| w.re.abs())
    } else {
        second.state.psi(0).norm()
    };
    if opts.check_uniform && superfluid {
        let lin = super::linearize(&second.state, &p1)?;
        let growth = lin.max_growth_rate(p.sites, opts)?;
        if growth > opts.stability_tol.max(1e-3) {
            return Err(Error::NonUniform { spread: growth });
        }
    }
    Ok(MuTuning { mu, omega, superfluid, residual })
}
