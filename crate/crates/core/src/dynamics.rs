//! Relaxation of a density modulation: modulated initial states, exact and
//! mean-field trajectories, the modulation amplitude and a damped-cosine
//! fit of its decay.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{Dyn, Owned, U3};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{site_operator, FockBasis, OperatorMatrix, SiteOp};
use crate::linalg::CMat;
use crate::liouville::{DensityMatrix, LiouvillianAction};
use crate::meanfield::{coherent_state, ChainState, Trajectory};

/// Coherent product state with `psi_j = sqrt(nbar (1 + delta cos(2 pi j / L)))`.
pub fn modulated_coherent_chain(nbar: f64, delta: f64, sites: usize, d_max: usize) -> Result<ChainState> {
    if !(0.0..1.0).contains(&delta) || !(nbar >= 0.0) || sites == 0 {
        return Err(Error::InvalidParams(format!("need 0 <= delta < 1 and nbar >= 0, got {delta} and {nbar}")));
    }
    let states: Vec<CMat> = (0..sites)
        .map(|j| {
            let n = nbar * (1.0 + delta * (2.0 * PI * j as f64 / sites as f64).cos());
            coherent_state(C64::new(n.sqrt(), 0.0), d_max)
        })
        .collect();
    ChainState::from_sites(&states)
}

/// Projector onto a Fock state of the basis.
pub fn exact_fock_initial(pattern: &[u16], basis: &FockBasis) -> Result<DensityMatrix> {
    let i = basis.index_of(pattern).ok_or_else(|| Error::StateNotInBasis(pattern.to_vec()))?;
    let d = basis.dim();
    DensityMatrix::new(Mat::from_fn(d, d, |a, b| C64::new(if a == i && b == i { 1.0 } else { 0.0 }, 0.0)))
}

/// `sum_j n_j cos(2 pi j / L)`. Labelling sites `1..L` instead of `0..L-1`
/// gives the same value since site `0` and site `L` carry the same phase.
/// Site 0's density is subtracted first (the cosines sum to zero), so a
/// uniform chain gives exactly zero instead of rounding noise.
pub fn modulation_amplitude(densities: &[f64]) -> f64 {
    let l = densities.len() as f64;
    let n0 = densities.first().copied().unwrap_or(0.0);
    densities.iter().enumerate().map(|(j, n)| (n - n0) * (2.0 * PI * j as f64 / l).cos()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationSeries {
    pub t: Vec<f64>,
    pub delta_n: Vec<f64>,
}

impl ModulationSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Writes `t,delta_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta_n")?;
        for (t, v) in self.t.iter().zip(&self.delta_n) {
            writeln!(w, "{t:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// Modulation series of a mean-field trajectory.
pub fn density_modulation(tr: &Trajectory) -> ModulationSeries {
    let l = tr.state.len();
    let mut out = ModulationSeries { t: Vec::new(), delta_n: Vec::new() };
    for chunk in tr.samples.chunks(l) {
        let dens: Vec<f64> = chunk.iter().map(|s| s.n).collect();
        out.t.push(chunk[0].t);
        out.delta_n.push(modulation_amplitude(&dens));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactOptions {
    pub dt: f64,
    /// Sampling interval; every step when `None`.
    pub sample_every: Option<f64>,
    /// Trace or Hermiticity drift that aborts the run.
    pub drift_limit: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { dt: 0.005, sample_every: None, drift_limit: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct ExactTrajectory {
    pub t: Vec<f64>,
    /// `Re tr(O rho)` for every requested observable at every sample.
    pub values: Vec<Vec<f64>>,
    pub state: CMat,
    pub max_trace_drift: f64,
}

impl ExactTrajectory {
    /// Modulation series, assuming the observables are the site densities.
    pub fn modulation(&self) -> ModulationSeries {
        ModulationSeries { t: self.t.clone(), delta_n: self.values.iter().map(|v| modulation_amplitude(v)).collect() }
    }
}

/// Number operators of every site.
pub fn site_densities(basis: &FockBasis) -> Result<Vec<OperatorMatrix>> {
    (0..basis.sites()).map(|j| site_operator(basis, j, SiteOp::Number)).collect()
}

fn expectation(op: &OperatorMatrix, rho: &CMat) -> f64 {
    op.entries().iter().map(|&(i, j, a)| a * rho[(j, i)]).sum::<C64>().re
}

/// Classical RK4 on the full density matrix.
pub fn evolve_exact(
    rho0: &DensityMatrix,
    l: &LiouvillianAction,
    t_end: f64,
    opts: &ExactOptions,
    observables: &[OperatorMatrix],
) -> Result<ExactTrajectory> {
    if rho0.dim() != l.dim() {
        return Err(Error::DimensionMismatch { expected: l.dim(), got: rho0.dim() });
    }
    if !(opts.dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and t_end >= 0, got {} and {t_end}", opts.dt)));
    }
    let steps = (t_end / opts.dt).ceil() as usize;
    let h = if steps > 0 { t_end / steps as f64 } else { opts.dt };
    let stride = opts.sample_every.map_or(1, |s| ((s / h).round() as usize).max(1));
    let mut rho = rho0.matrix().clone();
    let d = rho.nrows();
    let tr0: C64 = (0..d).map(|i| rho[(i, i)]).sum();
    let mut out = ExactTrajectory { t: Vec::new(), values: Vec::new(), state: CMat::zeros(0, 0), max_trace_drift: 0.0 };
    let record = |out: &mut ExactTrajectory, t: f64, rho: &CMat| {
        out.t.push(t);
        out.values.push(observables.iter().map(|o| expectation(o, rho)).collect());
    };
    record(&mut out, 0.0, &rho);
    for i in 1..=steps {
        let k1 = l.apply(&rho)?;
        let k2 = l.apply(&(&rho + &k1 * faer::Scale(C64::new(0.5 * h, 0.0))))?;
        let k3 = l.apply(&(&rho + &k2 * faer::Scale(C64::new(0.5 * h, 0.0))))?;
        let k4 = l.apply(&(&rho + &k3 * faer::Scale(C64::new(h, 0.0))))?;
        let c = C64::new(h / 6.0, 0.0);
        rho = Mat::from_fn(d, d, |a, b| {
            rho[(a, b)] + c * (k1[(a, b)] + 2.0 * k2[(a, b)] + 2.0 * k3[(a, b)] + k4[(a, b)])
        });
        let tr: C64 = (0..d).map(|a| rho[(a, a)]).sum();
        let drift = (tr - tr0).norm();
        out.max_trace_drift = out.max_trace_drift.max(drift);
        if !(drift <= opts.drift_limit) {
            return Err(Error::TraceDrift { drift, limit: opts.drift_limit });
        }
        if i % stride == 0 || i == steps {
            let herm = (0..d)
                .flat_map(|a| (0..d).map(move |b| (a, b)))
                .map(|(a, b)| (rho[(a, b)] - rho[(b, a)].conj()).norm())
                .fold(0.0, f64::max);
            if !(herm <= opts.drift_limit) {
                return Err(Error::TraceDrift { drift: herm, limit: opts.drift_limit });
            }
            record(&mut out, i as f64 * h, &rho);
        }
    }
    out.state = rho;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxationFit {
    pub amplitude: f64,
    pub decay: f64,
    pub frequency: f64,
    /// Root-mean-square residual over the window.
    pub residual: f64,
    pub window: (f64, f64),
}

impl RelaxationFit {
    pub const CSV_HEADER: &'static str = "A,Gamma,Omega,residual";

    pub fn csv_fields(&self) -> String {
        format!("{:.16e},{:.16e},{:.16e},{:.16e}", self.amplitude, self.decay, self.frequency, self.residual)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FitOptions {
    /// Start of the fit window; the whole series when `None`.
    pub t_start: Option<f64>,
}

/// Minimum number of samples inside the fit window.
pub const MIN_FIT_SAMPLES: usize = 50;

struct DampedCosine<'a> {
    t: &'a [f64],
    y: &'a [f64],
    p: nalgebra::Vector3<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U3> for DampedCosine<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U3>;
    type ParameterStorage = Owned<f64, U3>;

    fn set_params(&mut self, x: &nalgebra::Vector3<f64>) {
        self.p = *x;
    }

    fn params(&self) -> nalgebra::Vector3<f64> {
        self.p
    }

    fn residuals(&self) -> Option<nalgebra::DVector<f64>> {
        let (a, g, w) = (self.p[0], self.p[1], self.p[2]);
        Some(nalgebra::DVector::from_iterator(
            self.t.len(),
            self.t.iter().zip(self.y).map(|(&t, &y)| a * (-g * t).exp() * (w * t).cos() - y),
        ))
    }

    fn jacobian(&self) -> Option<nalgebra::OMatrix<f64, Dyn, U3>> {
        let (a, g, w) = (self.p[0], self.p[1], self.p[2]);
        let mut j = nalgebra::OMatrix::<f64, Dyn, U3>::zeros(self.t.len());
        for (i, &t) in self.t.iter().enumerate() {
            let e = (-g * t).exp();
            let (s, c) = (w * t).sin_cos();
            j[(i, 0)] = e * c;
            j[(i, 1)] = -t * a * e * c;
            j[(i, 2)] = -t * a * e * s;
        }
        Some(j)
    }
}

fn rms(t: &[f64], y: &[f64], a: f64, g: f64, w: f64) -> f64 {
    let ss: f64 = t.iter().zip(y).map(|(&t, &y)| (a * (-g * t).exp() * (w * t).cos() - y).powi(2)).sum();
    (ss / t.len() as f64).sqrt()
}

/// Angular frequency of the largest spectral peak of the linearly detrended
/// series, zero-padded to eight times its length.
fn peak_frequency(t: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let (a, b, _) = crate::spectra::line_fit(t, y);
    let len = (8 * n).next_power_of_two();
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..len)
        .map(|i| rustfft::num_complex::Complex::new(if i < n { y[i] - a - b * t[i] } else { 0.0 }, 0.0))
        .collect();
    rustfft::FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    let best = (1..len / 2).max_by(|&i, &j| buf[i].norm_sqr().total_cmp(&buf[j].norm_sqr())).unwrap_or(0);
    2.0 * PI * best as f64 / (len as f64 * dt)
}

/// Decay rate from the log-slope of the envelope (local maxima of `|y|`),
/// falling back to all samples for monotone data. Returns `(Gamma, A)`.
fn envelope_guess(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = y.len();
    let peaks: Vec<usize> =
        (1..n - 1).filter(|&i| y[i].abs() >= y[i - 1].abs() && y[i].abs() >= y[i + 1].abs() && y[i] != 0.0).collect();
    let idx: Vec<usize> = if peaks.len() >= 3 { peaks } else { (0..n).filter(|&i| y[i] != 0.0).collect() };
    if idx.len() < 2 {
        return (0.0, y[0]);
    }
    let ts: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
    let ls: Vec<f64> = idx.iter().map(|&i| y[i].abs().ln()).collect();
    let (_, slope, _) = crate::spectra::line_fit(&ts, &ls);
    let g = (-slope).max(0.0);
    let first = idx[0];
    let sign = if y[0] < 0.0 { -1.0 } else { 1.0 };
    (g, sign * y[first].abs() * (g * t[first]).exp())
}

/// Fits `A exp(-Gamma t) cos(Omega t)` by Levenberg-Marquardt from three
/// starting frequencies `{0, peak, 2 peak}`. A fitted `Omega` below the
/// resolution `2 pi / window` is replaced by the pure-decay fit.
pub fn fit_damped_cosine(series: &ModulationSeries, opts: &FitOptions) -> Result<RelaxationFit> {
    let start = opts.t_start.map_or(0, |t0| series.t.partition_point(|&t| t < t0 - 1e-12));
    let t = &series.t[start..];
    let y = &series.delta_n[start..];
    if t.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "fit needs {MIN_FIT_SAMPLES} samples in the window, got {}",
            t.len()
        )));
    }
    let window = (t[0], t[t.len() - 1]);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(RelaxationFit { amplitude: 0.0, decay: 0.0, frequency: 0.0, residual: 0.0, window });
    }
    let peak = peak_frequency(t, y);
    let (g0, a0) = envelope_guess(t, y);

    let mut fits: Vec<(f64, [f64; 3])> = Vec::new();
    for w0 in [0.0, peak, 2.0 * peak] {
        let problem = DampedCosine { t, y, p: nalgebra::Vector3::new(a0, g0, w0) };
        let (done, report) = LevenbergMarquardt::new().with_patience(400).minimize(problem);
        let p = done.p;
        if p.iter().all(|v| v.is_finite()) && report.termination.was_successful() {
            let p = [p[0], p[1], p[2].abs()];
            fits.push((rms(t, y, p[0], p[1], p[2]), p));
        }
    }
    let Some(&(res, best)) = fits.iter().min_by(|a, b| a.0.total_cmp(&b.0)) else {
        return Err(Error::FitFailed("no starting frequency converged".into()));
    };
    let resolution = 2.0 * PI / (window.1 - window.0);
    let (res, best) = if best[2] < resolution {
        // the first start keeps Omega = 0 exactly: its derivative vanishes there
        fits.iter().find(|f| f.1[2] == 0.0).map_or((res, [best[0], best[1], 0.0]), |f| (f.0, f.1))
    } else {
        (res, best)
    };
    Ok(RelaxationFit { amplitude: best[0], decay: best[1], frequency: best[2], residual: res, window })
}
