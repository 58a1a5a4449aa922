//! Closed-form Gross-Pitaevskii results for the pumped chain (Model 2):
//! uniform solution, excitation rates, their small-`k` limits and the
//! spectrum at the critical point.

use std::io::Write;

use num_complex::Complex64 as C64;

use crate::fock::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpParams {
    pub hopping: f64,
    pub interaction: f64,
    pub bond_rate: f64,
    pub pump: f64,
    pub loss: f64,
    pub two_body_loss: f64,
}

impl GpParams {
    /// Net linear gain `r_d = (r_p - r_l) / 2`.
    pub fn net_gain(&self) -> f64 {
        0.5 * (self.pump - self.loss)
    }
}

impl From<&ModelParams> for GpParams {
    fn from(p: &ModelParams) -> Self {
        GpParams {
            hopping: p.hopping,
            interaction: p.interaction,
            bond_rate: p.bond_rate,
            pump: p.pump,
            loss: p.loss,
            two_body_loss: p.two_body_loss,
        }
    }
}

/// Uniform solution `(n0, mu)`: `n0 = r_d / r_t` above threshold, else 0,
/// and `mu = -2J + U n0`.
pub fn gp_uniform(p: &GpParams) -> (f64, f64) {
    let rd = p.net_gain();
    let n0 = if rd > 0.0 && p.two_body_loss > 0.0 { rd / p.two_body_loss } else { 0.0 };
    (n0, -2.0 * p.hopping + p.interaction * n0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionPoint {
    pub k: f64,
    pub plus: C64,
    pub minus: C64,
}

/// `-2 kappa (1 + 2 n0)(1 - cos k) - r_t n0 +- i sqrt(arg)` with
/// `arg = [2J(1 - cos k) + U n0]^2 - (U^2 + r_t^2) n0^2`. A negative `arg`
/// gives two real rates, `plus` being the larger.
pub fn gp_dispersion(p: &GpParams, n0: f64, k: f64) -> DispersionPoint {
    let c = 1.0 - k.cos();
    let base = -2.0 * p.bond_rate * (1.0 + 2.0 * n0) * c - p.two_body_loss * n0;
    let e = 2.0 * p.hopping * c + p.interaction * n0;
    // factored so that k = 0 gives exactly -(r_t n0)^2
    let un = p.interaction * n0;
    let arg = (e - un) * (e + un) - (p.two_body_loss * n0).powi(2);
    let (plus, minus) = if arg >= 0.0 {
        let s = arg.sqrt();
        (C64::new(base, s), C64::new(base, -s))
    } else {
        let s = (-arg).sqrt();
        (C64::new(base + s, 0.0), C64::new(base - s, 0.0))
    };
    DispersionPoint { k, plus, minus }
}

/// Which density enters the rates when comparing with a mean-field
/// spectrum. `Total` replaces `n0` by the total density `n`, which
/// compensates for cutoff and depletion effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DensityChoice {
    #[default]
    Condensate,
    Total,
}

/// Dispersion on the momenta `2 pi m / L`, `m = 0..L`, evaluated at the
/// chosen density.
pub fn gp_lattice_dispersion(
    p: &GpParams,
    n0: f64,
    n: f64,
    sites: usize,
    choice: DensityChoice,
) -> Vec<DispersionPoint> {
    let dens = match choice {
        DensityChoice::Condensate => n0,
        DensityChoice::Total => n,
    };
    (0..sites).map(|m| gp_dispersion(p, dens, 2.0 * std::f64::consts::PI * m as f64 / sites as f64)).collect()
}

/// `(D_eff, c)` with `lambda_+ ~ -D_eff k^2` and `lambda_- ~ -c` as `k -> 0`.
pub fn gp_small_k(p: &GpParams, n0: f64) -> (f64, f64) {
    let d = p.bond_rate * (1.0 + 2.0 * n0) + p.hopping * p.interaction / p.two_body_loss;
    (d, 2.0 * p.two_body_loss * n0)
}

/// Critical spectrum (`n0 = 0`): `-2 kappa (1 - cos k) + 2 i J (1 - cos k)`.
/// The conjugate is the other branch.
pub fn gp_critical(p: &GpParams, k: f64) -> C64 {
    let c = 1.0 - k.cos();
    C64::new(-2.0 * p.bond_rate * c, 2.0 * p.hopping * c)
}

/// Writes `k,re_plus,im_plus,re_minus,im_minus`.
pub fn write_dispersion_csv<W: Write>(mut w: W, pts: &[DispersionPoint]) -> std::io::Result<()> {
    writeln!(w, "k,re_plus,im_plus,re_minus,im_minus")?;
    for d in pts {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", d.k, d.plus.re, d.plus.im, d.minus.re, d.minus.im)?;
    }
    Ok(())
}
