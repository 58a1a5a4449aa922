//! Gutzwiller mean-field dynamics of the dissipative chain.
//!
//! Every site carries a truncated `d_max x d_max` density matrix coupled to
//! its two periodic neighbours through the hopping field `<b>` and the bond
//! matrix `Gamma`. A one-site chain is its own neighbour on both sides, which
//! is how uniform states are evolved cheaply.

mod evolve;
mod kernel;
mod linear;
mod steady;

use std::io::Write;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::ModelParams;
use crate::linalg::CMat;

pub use evolve::{
    evolve_mf, rotation_frequency, tune_mu, write_trajectory_csv, Integrator, MuTuning, Sample, Trajectory,
};
pub use kernel::{Moments, SiteKernel};
pub use linear::{linearize, mf_spectrum, BlockSpectrum, LinearizedChain, MfBlock, MfSpectrum};
pub use steady::{bisect_boundary, find_steady, Boundary, Phase, SteadyStateReport};

use kernel::{add_gamma, Scratch};

/// Numerical controls shared by evolution and the steady-state search.
#[derive(Clone, Debug, PartialEq)]
pub struct MfOptions {
    pub dt: f64,
    pub integrator: Integrator,
    /// Mean density for Model 1 initial states; defaults to `N/L`, else 0.5.
    pub density: Option<f64>,
    /// Per-site derivative norm at which a state counts as stationary.
    pub tol: f64,
    pub t_max: f64,
    /// Relaxation time before Newton polishing starts.
    pub t_relax: f64,
    /// Trace drift that aborts an integration.
    pub drift_limit: f64,
    /// Growth rate above which a mode counts as unstable.
    pub stability_tol: f64,
    /// Reject steady states unstable toward modulated patterns.
    pub check_uniform: bool,
}

impl Default for MfOptions {
    fn default() -> Self {
        MfOptions {
            dt: 0.005,
            integrator: Integrator::Lawson,
            density: None,
            tol: 1e-9,
            t_max: 2000.0,
            t_relax: 200.0,
            drift_limit: 1e-5,
            stability_tol: 1e-6,
            check_uniform: true,
        }
    }
}

impl MfOptions {
    pub fn density_for(&self, p: &ModelParams) -> f64 {
        self.density.or_else(|| p.density()).unwrap_or(0.5)
    }
}

/// Product state of a periodic chain, one column-major site matrix each.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    d: usize,
    sites: Vec<Vec<C64>>,
    pub time: f64,
}

impl ChainState {
    pub fn from_sites(sites: &[CMat]) -> Result<Self> {
        let d = sites.first().map(|m| m.nrows()).ok_or_else(|| Error::InvalidParams("empty chain".into()))?;
        let mut out = Vec::with_capacity(sites.len());
        for m in sites {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.nrows().max(m.ncols()) });
            }
            out.push((0..d * d).map(|k| m[(k % d, k / d)]).collect());
        }
        Ok(ChainState { d, sites: out, time: 0.0 })
    }

    pub fn uniform(site: &CMat, sites: usize) -> Result<Self> {
        Self::from_sites(&vec![site.clone(); sites])
    }

    pub(crate) fn from_raw(d: usize, sites: Vec<Vec<C64>>, time: f64) -> Self {
        ChainState { d, sites, time }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, j: usize) -> CMat {
        let d = self.d;
        Mat::from_fn(d, d, |m, n| self.sites[j][m + n * d])
    }

    pub(crate) fn raw(&self) -> &[Vec<C64>] {
        &self.sites
    }

    pub fn trace(&self, j: usize) -> C64 {
        (0..self.d).map(|m| self.sites[j][m * (self.d + 1)]).sum()
    }

    /// `<b_j>`.
    pub fn psi(&self, j: usize) -> C64 {
        let d = self.d;
        (0..d - 1).map(|m| self.sites[j][m + 1 + m * d] * ((m + 1) as f64).sqrt()).sum()
    }

    /// `<n_j>`.
    pub fn density(&self, j: usize) -> f64 {
        (0..self.d).map(|m| m as f64 * self.sites[j][m * (self.d + 1)].re).sum()
    }

    pub fn mean_density(&self) -> f64 {
        (0..self.len()).map(|j| self.density(j)).sum::<f64>() / self.len() as f64
    }

    /// Largest per-site deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.d;
        let mut e: f64 = 0.0;
        for s in &self.sites {
            for m in 0..d {
                for n in 0..d {
                    e = e.max((s[m + n * d] - s[n + m * d].conj()).norm());
                }
            }
        }
        e
    }

    /// Largest elementwise difference to another chain of equal shape.
    pub fn max_diff(&self, other: &ChainState) -> f64 {
        self.sites
            .iter()
            .zip(&other.sites)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max)
    }
}

/// Chain right-hand side with reusable buffers.
pub(crate) struct ChainRhs {
    pub kernel: SiteKernel,
    scratch: Scratch,
    moments: Vec<Moments>,
}

impl ChainRhs {
    pub fn new(p: &ModelParams) -> Self {
        ChainRhs { kernel: SiteKernel::new(p), scratch: Scratch::new(p.d_max), moments: Vec::new() }
    }

    pub fn eval(&mut self, sites: &[Vec<C64>], out: &mut [Vec<C64>]) -> Result<()> {
        let l = sites.len();
        self.moments.clear();
        for (j, s) in sites.iter().enumerate() {
            let m = self.kernel.moments(s);
            if !m.is_finite() {
                return Err(Error::Blowup { site: j });
            }
            self.moments.push(m);
        }
        for j in 0..l {
            let (lft, rgt) = ((j + l - 1) % l, (j + 1) % l);
            let (ml, mr) = (&self.moments[lft], &self.moments[rgt]);
            let g = add_gamma(&ml.gamma(), &mr.gamma());
            self.kernel.site_rhs(ml.b + mr.b, ml.bd + mr.bd, &g, &sites[j], &mut out[j], &mut self.scratch);
        }
        Ok(())
    }
}

fn check_state(state: &ChainState, p: &ModelParams) -> Result<()> {
    if state.d != p.d_max {
        return Err(Error::DimensionMismatch { expected: p.d_max, got: state.d });
    }
    if state.is_empty() {
        return Err(Error::InvalidParams("empty chain".into()));
    }
    Ok(())
}

/// Time derivative of every site matrix.
pub fn mf_rhs(state: &ChainState, p: &ModelParams) -> Result<Vec<CMat>> {
    check_state(state, p)?;
    let mut rhs = ChainRhs::new(p);
    let mut out = vec![vec![C64::new(0.0, 0.0); state.d * state.d]; state.len()];
    rhs.eval(&state.sites, &mut out)?;
    let d = state.d;
    Ok(out.iter().map(|v| Mat::from_fn(d, d, |m, n| v[m + n * d])).collect())
}

/// Largest per-site Frobenius norm of the derivative.
pub fn rhs_norm(state: &ChainState, p: &ModelParams) -> Result<f64> {
    Ok(mf_rhs(state, p)?.iter().map(crate::linalg::frobenius_norm).fold(0.0, f64::max))
}

/// Normalized geometric distribution `p_m ~ (nbar/(nbar+1))^m` on `d_max`
/// levels. Returns the state and the truncated tail mass of the untruncated
/// distribution.
pub fn thermal_steady(nbar: f64, d_max: usize) -> Result<(CMat, f64)> {
    if !(nbar >= 0.0) || !nbar.is_finite() || d_max < 1 {
        return Err(Error::InvalidParams(format!("thermal state needs nbar >= 0, got {nbar}")));
    }
    let q = nbar / (nbar + 1.0);
    let pops: Vec<f64> = (0..d_max).map(|m| q.powi(m as i32)).collect();
    let total: f64 = pops.iter().sum();
    let tail = q.powi(d_max as i32);
    Ok((Mat::from_fn(d_max, d_max, |m, n| C64::new(if m == n { pops[m] / total } else { 0.0 }, 0.0)), tail))
}

/// Truncated coherent state `|alpha><alpha|`, renormalized.
pub fn coherent_state(alpha: C64, d_max: usize) -> CMat {
    let mut amp = Vec::with_capacity(d_max);
    let mut a = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for m in 0..d_max {
        if m > 0 {
            a *= alpha / (m as f64).sqrt();
        }
        amp.push(a);
    }
    let norm: f64 = amp.iter().map(|z| z.norm_sqr()).sum();
    Mat::from_fn(d_max, d_max, |m, n| amp[m] * amp[n].conj() / norm)
}

/// Initial coherent state with amplitude `sqrt(nbar)` for Model 1, or a
/// unit amplitude otherwise (Model 2 fixes its own density).
pub fn default_initial(
    p: &ModelParams,
    opts: &MfOptions,
    model: crate::fock::Model,
    sites: usize,
) -> Result<ChainState> {
    let alpha = match model {
        crate::fock::Model::One => opts.density_for(p).sqrt(),
        crate::fock::Model::Two => 1.0,
    };
    ChainState::uniform(&coherent_state(C64::new(alpha, 0.0), p.d_max), sites)
}

/// Writes `site,re_psi,im_psi,n` for every site.
pub fn write_state_csv<W: Write>(mut w: W, state: &ChainState) -> std::io::Result<()> {
    writeln!(w, "site,re_psi,im_psi,n")?;
    for j in 0..state.len() {
        let psi = state.psi(j);
        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", j, psi.re, psi.im, state.density(j))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
