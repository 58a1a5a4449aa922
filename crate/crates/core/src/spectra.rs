//! Gaps, spectral types, gap scaling and kernel-density edge detection.

use std::io::Write;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;

/// Relative default for both "nonzero" tolerances.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Absolute tolerances; `None` means `1e-8` times the spectral radius.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GapTolerances {
    pub eps_zero: Option<f64>,
    pub eps_im: Option<f64>,
}

impl GapTolerances {
    pub fn resolve(&self, s: &[C64]) -> (f64, f64) {
        let r = DEFAULT_REL_TOL * spectral_radius(s);
        (self.eps_zero.unwrap_or(r), self.eps_im.unwrap_or(r))
    }
}

/// Slowest nonzero mode first: smaller `|Re|`, then smaller `|Im|`, then
/// `Im >= 0`, then input order.
fn slower(a: (usize, C64), b: (usize, C64)) -> bool {
    let key = |z: C64| (z.re.abs(), z.im.abs(), z.im < 0.0);
    let (ka, kb) = (key(a.1), key(b.1));
    match ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.0 < b.0,
    }
}

/// `Delta_L = min |Re lambda|` over `|lambda| > eps_zero`, with the
/// minimizing eigenvalue `lambda*`.
pub fn liouvillian_gap(s: &[C64], eps_zero: f64) -> Result<(f64, C64)> {
    let mut best: Option<(usize, C64)> = None;
    for (i, &z) in s.iter().enumerate() {
        if z.norm() > eps_zero && best.is_none_or(|b| slower((i, z), b)) {
            best = Some((i, z));
        }
    }
    match best {
        Some((_, z)) => Ok((z.re.abs(), z)),
        None if s.is_empty() => Err(Error::InsufficientData("empty spectrum".into())),
        None => Err(Error::AllZero(eps_zero)),
    }
}

/// `Delta_OM = min |Re lambda|` over `|Im lambda| > eps_im`; `None` if the
/// spectrum has no oscillating mode.
pub fn om_gap(s: &[C64], eps_im: f64) -> Option<f64> {
    s.iter().filter(|z| z.im.abs() > eps_im).map(|z| z.re.abs()).min_by(f64::total_cmp)
}

/// Slowest oscillating eigenvalue, preferring `Im >= 0` within a pair.
pub fn om_mode(s: &[C64], eps_im: f64) -> Option<C64> {
    let mut best: Option<(usize, C64)> = None;
    for (i, &z) in s.iter().enumerate() {
        if z.im.abs() > eps_im && best.is_none_or(|b| slower((i, z), b)) {
            best = Some((i, z));
        }
    }
    best.map(|b| b.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpectralType {
    /// Both gaps open, `Delta_OM > Delta_L`.
    One,
    /// Both gaps open and equal.
    Two,
    /// Liouvillian gap closed, OM gap open.
    Three,
    /// Both closed.
    Four,
}

impl SpectralType {
    pub fn number(self) -> u8 {
        match self {
            SpectralType::One => 1,
            SpectralType::Two => 2,
            SpectralType::Three => 3,
            SpectralType::Four => 4,
        }
    }
}

/// Four-way classification with closure threshold `eps_gap`. A missing OM
/// gap counts as infinite. Returns `None` for the inconsistent case
/// `Delta_OM < Delta_L - eps_gap`.
pub fn classify(delta_l: f64, delta_om: Option<f64>, eps_gap: f64) -> Option<SpectralType> {
    let om = delta_om.unwrap_or(f64::INFINITY);
    if delta_l > eps_gap {
        if om > delta_l + eps_gap {
            Some(SpectralType::One)
        } else if (om - delta_l).abs() <= eps_gap {
            Some(SpectralType::Two)
        } else {
            None
        }
    } else if om > eps_gap {
        Some(SpectralType::Three)
    } else {
        Some(SpectralType::Four)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    pub delta_l: f64,
    pub delta_om: Option<f64>,
    pub lambda_star: C64,
    pub spectral_type: Option<SpectralType>,
    pub eps_zero: f64,
    pub eps_im: f64,
    pub eps_gap: f64,
}

pub fn gap_report(s: &[C64], tol: &GapTolerances, eps_gap: f64) -> Result<GapReport> {
    let (eps_zero, eps_im) = tol.resolve(s);
    let (delta_l, lambda_star) = liouvillian_gap(s, eps_zero)?;
    let delta_om = om_gap(s, eps_im);
    Ok(GapReport {
        delta_l,
        delta_om,
        lambda_star,
        spectral_type: classify(delta_l, delta_om, eps_gap),
        eps_zero,
        eps_im,
        eps_gap,
    })
}

/// Header of [`GapReport::csv_fields`].
pub const GAP_CSV_HEADER: &str = "delta_L,delta_OM,re_lambda_star,im_lambda_star,type";

impl GapReport {
    /// Comma-separated record; a missing OM gap is `nan` and an
    /// unclassified spectrum has type `0`.
    pub fn csv_fields(&self) -> String {
        format!(
            "{:.16e},{},{:.16e},{:.16e},{}",
            self.delta_l,
            self.delta_om.map_or("nan".to_string(), |v| format!("{v:.16e}")),
            self.lambda_star.re,
            self.lambda_star.im,
            self.spectral_type.map_or(0, SpectralType::number)
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{GAP_CSV_HEADER}")?;
        writeln!(w, "{}", self.csv_fields())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    /// `z` in `Delta ~ A L^-z`.
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least squares `ln y = a + s ln x`; returns `(a, s, R^2)`.
pub fn log_log_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 points, got {}", points.len())));
    }
    for &(x, y) in points {
        if !(y > 0.0) {
            return Err(Error::NonPositiveGap(y));
        }
        if !(x > 0.0) {
            return Err(Error::InvalidParams(format!("nonpositive abscissa {x}")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (a, s, r2) = line_fit(&xs, &ys);
    Ok((a, s, r2))
}

/// Fit of `ln Delta = a - z ln L`.
pub fn gap_scaling_fit(gaps: &[(usize, f64)]) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = gaps.iter().map(|&(l, g)| (l as f64, g)).collect();
    let (a, s, r_squared) = log_log_fit(&pts)?;
    Ok(ScalingFit { exponent: -s, prefactor: a.exp(), r_squared })
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, R^2)`. `R^2` is 1
/// for data with no spread in `y`.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, r2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeConfig {
    pub sigma: f64,
    pub density_threshold: f64,
    /// Half-width of the real-axis band; `None` means `1e-8` times the
    /// spectral radius.
    pub eps_im: Option<f64>,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig { sigma: 1.0, density_threshold: 1.5, eps_im: None }
    }
}

/// Straight edge `Re = intercept + slope * Im`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeLine {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

impl EdgeLine {
    pub fn re_at(&self, im: f64) -> f64 {
        self.intercept + self.slope * im
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeReport {
    /// Kernel density of every input point.
    pub densities: Vec<f64>,
    /// Indices with density below threshold, ascending.
    pub edge_points: Vec<usize>,
    /// Edge points of the upper and lower branch facing the imaginary axis,
    /// used in the line fits.
    pub upper_points: Vec<usize>,
    pub lower_points: Vec<usize>,
    /// Edge points inside the real-axis band.
    pub real_band: Vec<usize>,
    pub upper: Option<EdgeLine>,
    pub lower: Option<EdgeLine>,
    pub delta_om_estimate: Option<f64>,
}

/// Gaussian kernel density `D_i = sum_j K(z_i - z_j)` including `j = i`,
/// with `K = exp(-|z|^2 / 2 sigma^2) / (2 pi sigma^2)`.
pub fn kernel_density(points: &[C64], sigma: f64) -> Vec<f64> {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let n = points.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        // symmetric sum in a fixed order keeps the result independent of
        // how the loop is split
        let mut acc = 0.0;
        for j in 0..n {
            acc += (-(points[i] - points[j]).norm_sqr() * inv).exp();
        }
        d[i] = acc * norm;
    }
    d
}

/// Outer boundary of one branch facing the imaginary axis: edge points not
/// dominated by any spectral point with both larger `Re` and larger
/// `sign * Im`. This traces the wedge from its tip to its widest point and
/// drops the far side of the cloud.
fn facing_edge(points: &[C64], idx: &[usize], sign: f64) -> Vec<usize> {
    idx.iter()
        .copied()
        .filter(|&i| {
            let p = points[i];
            !points.iter().enumerate().any(|(j, q)| j != i && q.re >= p.re && sign * q.im >= sign * p.im && *q != p)
        })
        .collect()
}

fn fit_edge(points: &[C64], idx: &[usize]) -> Option<EdgeLine> {
    if idx.len() < 3 {
        return None;
    }
    let ims: Vec<f64> = idx.iter().map(|&i| points[i].im).collect();
    let res: Vec<f64> = idx.iter().map(|&i| points[i].re).collect();
    let (a, b, _) = line_fit(&ims, &res);
    (a.is_finite() && b.is_finite()).then_some(EdgeLine { slope: b, intercept: a, points: idx.len() })
}

/// Kernel-density edge detection. Low-density points are split into an
/// upper branch, a lower branch and the real-axis band. Each oscillating
/// branch keeps the part of its boundary facing the imaginary axis and gets
/// one straight line. The OM gap estimate is
/// `|Re|` of the line at the band edge, averaged over the two branches.
pub fn edge_detect(points: &[C64], cfg: &EdgeConfig) -> Result<EdgeReport> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidParams(format!("kernel width must be positive, got {}", cfg.sigma)));
    }
    if points.len() < 10 {
        return Err(Error::InsufficientData(format!("edge detection needs 10 points, got {}", points.len())));
    }
    let band = cfg.eps_im.unwrap_or(DEFAULT_REL_TOL * spectral_radius(points));
    let densities = kernel_density(points, cfg.sigma);
    let edge_points: Vec<usize> = (0..points.len()).filter(|&i| densities[i] < cfg.density_threshold).collect();
    let (mut up, mut lo, mut real_band) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &edge_points {
        let y = points[i].im;
        if y > band {
            up.push(i);
        } else if y < -band {
            lo.push(i);
        } else {
            real_band.push(i);
        }
    }
    let upper_points = facing_edge(points, &up, 1.0);
    let lower_points = facing_edge(points, &lo, -1.0);
    let upper = fit_edge(points, &upper_points);
    let lower = fit_edge(points, &lower_points);
    let estimates: Vec<f64> =
        [upper.map(|l| l.re_at(band).abs()), lower.map(|l| l.re_at(-band).abs())].into_iter().flatten().collect();
    let delta_om_estimate = (!estimates.is_empty()).then(|| estimates.iter().sum::<f64>() / estimates.len() as f64);
    Ok(EdgeReport { densities, edge_points, upper_points, lower_points, real_band, upper, lower, delta_om_estimate })
}
