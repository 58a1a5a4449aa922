use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as C64;

use super::kernel::{add_gamma, Moments, Scratch, SiteKernel};
use super::{check_state, ChainState, MfOptions};
use crate::error::{Error, Result};
use crate::fock::ModelParams;
use crate::linalg::{self, CMat};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Linearization of the chain generator around a stationary product state.
#[derive(Clone, Debug)]
pub struct LinearizedChain {
    kernel: SiteKernel,
    ss: Vec<Vec<C64>>,
    moments: Vec<Moments>,
}

pub fn linearize(steady: &ChainState, p: &ModelParams) -> Result<LinearizedChain> {
    check_state(steady, p)?;
    let kernel = SiteKernel::new(p);
    let moments = steady.raw().iter().map(|s| kernel.moments(s)).collect();
    Ok(LinearizedChain { kernel, ss: steady.raw().to_vec(), moments })
}

#[derive(Clone, Debug)]
pub struct MfBlock {
    pub m: usize,
    pub phi: f64,
    pub matrix: CMat,
}

#[derive(Clone, Debug)]
pub struct BlockSpectrum {
    pub m: usize,
    pub phi: f64,
    pub eigenvalues: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct MfSpectrum {
    pub blocks: Vec<BlockSpectrum>,
    /// Union over all blocks, canonically ordered.
    pub eigenvalues: Vec<C64>,
}

impl MfSpectrum {
    /// Eigenvalues tagged with their block index, in canonical order.
    pub fn tagged(&self) -> Vec<(usize, C64)> {
        let mut out: Vec<(usize, C64)> =
            self.blocks.iter().flat_map(|b| b.eigenvalues.iter().map(move |&z| (b.m, z))).collect();
        out.sort_by(|a, b| linalg::eigen_order(&(0, a.1), &(0, b.1)).then(a.0.cmp(&b.0)));
        out
    }
}

impl LinearizedChain {
    pub fn sites(&self) -> usize {
        self.ss.len()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn neighbours(&self, j: usize) -> (usize, usize) {
        let l = self.ss.len();
        ((j + l - 1) % l, (j + 1) % l)
    }

    /// Part of the map acting on the site's own perturbation.
    fn local(&self, j: usize, x: &[C64], out: &mut [C64], s: &mut Scratch) {
        let (a, b) = self.neighbours(j);
        let (ma, mb) = (&self.moments[a], &self.moments[b]);
        let g = add_gamma(&ma.gamma(), &mb.gamma());
        self.kernel.site_rhs(ma.b + mb.b, ma.bd + mb.bd, &g, x, out, s);
    }

    /// Response of site `j` to a neighbour perturbation with the given
    /// (summed) moments. Adds into `out`.
    fn neighbour(&self, j: usize, dm: &Moments, out: &mut [C64], s: &mut Scratch) {
        let rho = &self.ss[j];
        self.kernel.add_hopping(dm.b, dm.bd, rho, out, s);
        self.kernel.add_bond(&dm.gamma_linear(), rho, out, s);
    }

    /// Applies the linearized generator to a chain perturbation.
    pub fn apply(&self, delta: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let l = self.ss.len();
        let dd = self.dim() * self.dim();
        if delta.len() != l || delta.iter().any(|v| v.len() != dd) {
            return Err(Error::DimensionMismatch { expected: l * dd, got: delta.iter().map(Vec::len).sum() });
        }
        let mut s = Scratch::new(self.dim());
        let dmom: Vec<Moments> = delta.iter().map(|x| self.kernel.moments(x)).collect();
        let mut out = vec![vec![ZERO; dd]; l];
        for j in 0..l {
            self.local(j, &delta[j], &mut out[j], &mut s);
            let (a, b) = self.neighbours(j);
            let sum = sum_moments(&dmom[a], &dmom[b]);
            self.neighbour(j, &sum, &mut out[j], &mut s);
        }
        Ok(out)
    }

    /// Matrix of the full chain map on `L d^2` coordinates, site-major.
    pub fn full_matrix(&self) -> Result<CMat> {
        let l = self.ss.len();
        let dd = self.dim() * self.dim();
        let n = l * dd;
        if n > linalg::DEFAULT_MAX_SIDE {
            return Err(Error::MatrixTooLarge { n, limit: linalg::DEFAULT_MAX_SIDE });
        }
        let mut m = CMat::zeros(n, n);
        let mut delta = vec![vec![ZERO; dd]; l];
        for c in 0..n {
            delta[c / dd][c % dd] = C64::new(1.0, 0.0);
            let out = self.apply(&delta)?;
            delta[c / dd][c % dd] = ZERO;
            for (j, v) in out.iter().enumerate() {
                for (k, &z) in v.iter().enumerate() {
                    m[(j * dd + k, c)] = z;
                }
            }
        }
        Ok(m)
    }

    fn require_uniform(&self) -> Result<()> {
        let spread =
            self.ss.iter().flat_map(|s| s.iter().zip(&self.ss[0]).map(|(a, b)| (a - b).norm())).fold(0.0, f64::max);
        if spread > 1e-10 {
            return Err(Error::NonUniform { spread });
        }
        Ok(())
    }

    /// On-site and per-neighbour parts `(M_loc, M_nb)` of the momentum
    /// block, so that the block at `phi` is `M_loc + 2 cos(phi) M_nb`.
    pub fn block_parts(&self) -> Result<(CMat, CMat)> {
        self.require_uniform()?;
        let dd = self.dim() * self.dim();
        let mut s = Scratch::new(self.dim());
        let mut loc = CMat::zeros(dd, dd);
        let mut nb = CMat::zeros(dd, dd);
        let mut x = vec![ZERO; dd];
        let mut out = vec![ZERO; dd];
        for c in 0..dd {
            x[c] = C64::new(1.0, 0.0);
            self.local(0, &x, &mut out, &mut s);
            for (k, &z) in out.iter().enumerate() {
                loc[(k, c)] = z;
            }
            out.fill(ZERO);
            let dm = self.kernel.moments(&x);
            self.neighbour(0, &dm, &mut out, &mut s);
            for (k, &z) in out.iter().enumerate() {
                nb[(k, c)] = z;
            }
            x[c] = ZERO;
        }
        Ok((loc, nb))
    }

    /// Plane-wave block `delta_j = exp(i phi j) X` with `phi = 2 pi m / L`.
    pub fn block_matrix(&self, m: usize, sites: usize) -> Result<MfBlock> {
        let (loc, nb) = self.block_parts()?;
        let phi = 2.0 * PI * m as f64 / sites as f64;
        Ok(MfBlock { m, phi, matrix: combine(&loc, &nb, phi) })
    }

    /// Union of all `L` block spectra. Blocks `m` and `L - m` coincide, so
    /// each distinct block is diagonalized once.
    pub fn spectrum(&self, sites: usize) -> Result<MfSpectrum> {
        if sites == 0 {
            return Err(Error::InvalidParams("need at least one momentum".into()));
        }
        let (loc, nb) = self.block_parts()?;
        let d = self.dim();
        let mut distinct: Vec<Vec<C64>> = Vec::new();
        for m in 0..=sites / 2 {
            let phi = 2.0 * PI * m as f64 / sites as f64;
            distinct.push(linalg::eigenvalues_hermiticity_preserving(&combine(&loc, &nb, phi), d)?);
        }
        let mut blocks = Vec::with_capacity(sites);
        for m in 0..sites {
            let r = m.min(sites - m);
            blocks.push(BlockSpectrum { m, phi: 2.0 * PI * m as f64 / sites as f64, eigenvalues: distinct[r].clone() });
        }
        let mut eigenvalues: Vec<C64> = blocks.iter().flat_map(|b| b.eigenvalues.iter().copied()).collect();
        linalg::sort_eigenvalues(&mut eigenvalues);
        Ok(MfSpectrum { blocks, eigenvalues })
    }

    /// Largest real part over all momentum blocks of an `L`-site chain.
    pub fn max_growth_rate(&self, sites: usize, _opts: &MfOptions) -> Result<f64> {
        let spec = self.spectrum(sites)?;
        Ok(spec.eigenvalues.first().map_or(f64::NEG_INFINITY, |z| z.re))
    }
}

fn sum_moments(a: &Moments, b: &Moments) -> Moments {
    Moments {
        n2: a.n2 + b.n2,
        bd_n: a.bd_n + b.bd_n,
        b_n: a.b_n + b.b_n,
        n: a.n + b.n,
        n_b: a.n_b + b.n_b,
        b2: a.b2 + b.b2,
        b: a.b + b.b,
        n_bd: a.n_bd + b.n_bd,
        bd2: a.bd2 + b.bd2,
        bd: a.bd + b.bd,
        b_bd: a.b_bd + b.b_bd,
    }
}

fn combine(loc: &CMat, nb: &CMat, phi: f64) -> CMat {
    let c = 2.0 * phi.cos();
    Mat::from_fn(loc.nrows(), loc.ncols(), |i, j| loc[(i, j)] + nb[(i, j)] * c)
}

/// Mean-field spectrum of a uniform steady state on `p.sites` sites.
pub fn mf_spectrum(steady: &ChainState, p: &ModelParams) -> Result<MfSpectrum> {
    linearize(steady, p)?.spectrum(p.sites)
}
