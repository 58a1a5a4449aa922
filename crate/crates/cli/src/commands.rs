use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use omgap::dynamics::{
    density_modulation, evolve_exact, exact_fock_initial, fit_damped_cosine, modulated_coherent_chain, site_densities,
    ExactOptions, FitOptions, ModulationSeries, RelaxationFit,
};
use omgap::fock::{self, build_basis, BasisMode, Model, ModelParams};
use omgap::gp::{self, DensityChoice, GpParams};
use omgap::liouville::{build_superoperator, write_spectrum_csv, LiouvillianAction};
use omgap::meanfield::{evolve_mf, find_steady, mf_spectrum, ChainState, SteadyStateReport};
use omgap::spectra::{edge_detect, gap_report, gap_scaling_fit, EdgeConfig, EdgeReport, GapReport};
use omgap::C64;
use rayon::prelude::*;

use crate::config::{Config, ConfigError, GpDensity, Mode, Params, DEFAULT_EPS_GAP};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical(omgap::Error),
    Io(std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<omgap::Error> for CliError {
    fn from(e: omgap::Error) -> Self {
        match e {
            omgap::Error::Io(io) => CliError::Io(io),
            omgap::Error::InvalidParams(m) => CliError::Config(ConfigError(m)),
            e => CliError::Numerical(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type Res<T> = std::result::Result<T, CliError>;

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(out: &Path, name: &str) -> Res<BufWriter<File>> {
    fs::create_dir_all(out)?;
    Ok(BufWriter::new(File::create(out.join(name))?))
}

/// Model 2 with every gain and loss rate at zero conserves the particle
/// number, so its density must be fixed externally: such points run as
/// Model 1 at the configured `nbar`.
fn cell_model(model: Model, p: &Params) -> Model {
    if model == Model::Two && p.r_p == 0.0 && p.r_l == 0.0 && p.r_t == 0.0 {
        Model::One
    } else {
        model
    }
}

/// Uniform mean-field steady state and its spectrum in the rotating frame.
fn mf_point(cfg: &Config, p: &Params, model: Model, sites: usize) -> Res<(SteadyStateReport, Vec<C64>)> {
    let mp = ModelParams { particles: None, ..p.model_params(sites) };
    let (st, rep) = find_steady(&mp, cell_model(model, p), &cfg.mf_options())?;
    let one = ChainState::from_sites(&[st.site(0)])?;
    let sp = mf_spectrum(&one, &ModelParams { chemical_potential: rep.mu, ..mp })?;
    Ok((rep, sp.eigenvalues))
}

fn eps_gap(cfg: &Config, model: Model) -> Res<f64> {
    let t = &cfg.tolerances;
    if let Some(e) = t.eps_gap {
        return Ok(e);
    }
    let Some(reference) = &t.eps_gap_reference else { return Ok(DEFAULT_EPS_GAP) };
    let mut p = cfg.params.clone();
    for (k, v) in reference {
        let v = v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| ConfigError(format!("eps_gap_reference.{k} must be a number")))?;
        p.set(k, v)?;
    }
    let (_, s) = mf_point(cfg, &p, model, cfg.params.L)?;
    let g = gap_report(&s, &cfg.tolerances.gap(), DEFAULT_EPS_GAP)?;
    Ok(10.0 * g.delta_l)
}

fn exact_spectrum(cfg: &Config, model: Model) -> Res<Vec<C64>> {
    let p = &cfg.params;
    let mode = match model {
        Model::One => {
            let n = p.N.ok_or_else(|| ConfigError("exact Model 1 needs the particle number `N`".into()))?;
            BasisMode::ChainFixedN { sites: p.L, particles: n }
        }
        Model::Two => BasisMode::ChainTruncated { sites: p.L, d_max: p.d_max },
    };
    let b = build_basis(mode)?;
    let mp = p.model_params(p.L);
    let h = fock::hamiltonian(&b, &mp)?;
    let j = fock::jump_set(&b, &mp, model)?;
    Ok(build_superoperator(&h, &j)?.eigenvalues()?)
}

// ---------------------------------------------------------------- phase diagram

pub const PHASE_HEADER: &str = "axis1,axis2,n0,n,delta_L,delta_OM,type,converged";

struct Cell {
    a1: f64,
    a2: Option<f64>,
}

impl Cell {
    fn key(&self) -> String {
        format!("{},{}", f(self.a1), self.a2.map_or(String::new(), f))
    }
}

fn run_cell(cfg: &Config, model: Model, names: (&str, Option<&str>), cell: &Cell, eps_gap: f64, omega: bool) -> String {
    let mut p = cfg.params.clone();
    let computed = (|| -> Res<String> {
        p.set(names.0, cell.a1)?;
        if let (Some(n2), Some(v)) = (names.1, cell.a2) {
            p.set(n2, v)?;
        }
        let (rep, s) = mf_point(cfg, &p, model, p.L)?;
        let g = gap_report(&s, &cfg.tolerances.gap(), eps_gap)?;
        let mut row = format!(
            "{},{},{},{},{},{}",
            f(rep.psi.norm_sqr()),
            f(rep.n),
            f(g.delta_l),
            g.delta_om.map_or("nan".into(), f),
            g.spectral_type.map_or(0, |t| t.number()),
            rep.converged
        );
        if omega {
            let fit = relax_meanfield(cfg, &p, model)?.1;
            row.push_str(&format!(",{}", f(fit.frequency)));
        }
        Ok(row)
    })();
    let tail = computed.unwrap_or_else(|_| {
        let mut r = "nan,nan,nan,nan,0,false".to_string();
        if omega {
            r.push_str(",nan");
        }
        r
    });
    format!("{},{tail}", cell.key())
}

/// Sweeps the grid in row-major order (axis 1 outer). Rows already present
/// in an existing output file are kept and not recomputed; the file is
/// rewritten in grid order at the end.
pub fn phase_diagram(cfg: &Config, out: &Path) -> Res<PathBuf> {
    let model = cfg.model()?;
    let ax1 = cfg.grid.axis1.as_ref().ok_or_else(|| ConfigError("phase-diagram needs [grid.axis1]".into()))?;
    let v1 = ax1.points()?;
    let v2 = cfg.grid.axis2.as_ref().map(|a| a.points()).transpose()?;
    let names = (ax1.name.as_str(), cfg.grid.axis2.as_ref().map(|a| a.name.as_str()));
    let omega = cfg.grid.outputs.iter().any(|o| o == "omega_relax");
    let header = if omega { format!("{PHASE_HEADER},omega_relax") } else { PHASE_HEADER.to_string() };

    let cells: Vec<Cell> = v1
        .iter()
        .flat_map(|&a1| match &v2 {
            Some(v2) => v2.iter().map(|&a2| Cell { a1, a2: Some(a2) }).collect::<Vec<_>>(),
            None => vec![Cell { a1, a2: None }],
        })
        .collect();

    fs::create_dir_all(out)?;
    let path = out.join("phase_diagram.csv");
    let mut done: HashMap<String, String> = HashMap::new();
    if let Ok(text) = fs::read_to_string(&path) {
        let mut lines = text.lines();
        if lines.next() == Some(header.as_str()) {
            for line in lines {
                let mut it = line.splitn(3, ',');
                if let (Some(a), Some(b), Some(_)) = (it.next(), it.next(), it.next()) {
                    done.insert(format!("{a},{b}"), line.to_string());
                }
            }
        }
    }
    if done.is_empty() {
        fs::write(&path, format!("{header}\n"))?;
    }

    let eps_gap = eps_gap(cfg, model)?;
    let pending: Vec<&Cell> = cells.iter().filter(|c| !done.contains_key(&c.key())).collect();
    let chunk = 4 * rayon::current_num_threads();
    for batch in pending.chunks(chunk) {
        let rows: Vec<String> = batch.par_iter().map(|c| run_cell(cfg, model, names, c, eps_gap, omega)).collect();
        let mut fh = OpenOptions::new().append(true).open(&path)?;
        for (c, r) in batch.iter().zip(rows) {
            writeln!(fh, "{r}")?;
            done.insert(c.key(), r);
        }
    }

    let tmp = out.join("phase_diagram.csv.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        writeln!(w, "{header}")?;
        for c in &cells {
            writeln!(w, "{}", done[&c.key()])?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

// ---------------------------------------------------------------- spectrum

fn write_gaps(out: &Path, g: &GapReport) -> Res<()> {
    let mut w = create(out, "gaps.csv")?;
    g.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_edge(out: &Path, pts: &[C64], r: &EdgeReport) -> Res<()> {
    let mut w = create(out, "edge_points.csv")?;
    writeln!(w, "re,im,density,edge,branch")?;
    for (i, z) in pts.iter().enumerate() {
        let branch = if r.upper_points.contains(&i) {
            "upper"
        } else if r.lower_points.contains(&i) {
            "lower"
        } else {
            ""
        };
        let edge = u8::from(r.edge_points.contains(&i));
        writeln!(w, "{},{},{},{edge},{branch}", f(z.re), f(z.im), f(r.densities[i]))?;
    }
    w.flush()?;
    let mut w = create(out, "edge_report.csv")?;
    writeln!(w, "delta_OM_estimate,upper_slope,upper_intercept,upper_points,lower_slope,lower_intercept,lower_points")?;
    let line = |l: Option<&omgap::spectra::EdgeLine>| match l {
        Some(l) => format!("{},{},{}", f(l.slope), f(l.intercept), l.points),
        None => "nan,nan,0".into(),
    };
    writeln!(
        w,
        "{},{},{}",
        r.delta_om_estimate.map_or("nan".into(), f),
        line(r.upper.as_ref()),
        line(r.lower.as_ref())
    )?;
    w.flush()?;
    Ok(())
}

fn edge_config(cfg: &Config) -> EdgeConfig {
    EdgeConfig { sigma: cfg.edge.sigma, density_threshold: cfg.edge.density_threshold, eps_im: cfg.tolerances.eps_im }
}

/// Writes `spectrum.csv` and `gaps.csv`, plus edge files on request.
pub fn spectrum(cfg: &Config, out: &Path) -> Res<usize> {
    let model = cfg.model()?;
    let s = match cfg.spectrum.mode {
        Mode::Meanfield => mf_point(cfg, &cfg.params, model, cfg.params.L)?.1,
        Mode::Exact => exact_spectrum(cfg, model)?,
    };
    let mut w = create(out, "spectrum.csv")?;
    write_spectrum_csv(&mut w, &s)?;
    w.flush()?;
    write_gaps(out, &gap_report(&s, &cfg.tolerances.gap(), eps_gap(cfg, model)?)?)?;
    if cfg.spectrum.edge {
        write_edge(out, &s, &edge_detect(&s, &edge_config(cfg))?)?;
    }
    Ok(s.len())
}

pub fn edge(cfg: &Config, out: &Path) -> Res<Option<f64>> {
    let s = match &cfg.edge.input {
        Some(path) => read_spectrum(Path::new(path))?,
        None => exact_spectrum(cfg, cfg.model()?)?,
    };
    let r = edge_detect(&s, &edge_config(cfg))?;
    write_edge(out, &s, &r)?;
    Ok(r.delta_om_estimate)
}

fn read_spectrum(path: &Path) -> Res<Vec<C64>> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parse = |s: Option<&str>| s.and_then(|s| s.trim().parse::<f64>().ok());
        let mut it = line.split(',');
        match (parse(it.next()), parse(it.next())) {
            (Some(re), Some(im)) => out.push(C64::new(re, im)),
            _ => return Err(ConfigError(format!("{}:{}: expected `re,im`", path.display(), i + 1)).into()),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- relaxation

fn fit_or_flat(series: &ModulationSeries, t_start: f64) -> Res<RelaxationFit> {
    let t0 = series.t.iter().copied().find(|&t| t >= t_start).unwrap_or(t_start);
    let t1 = series.t.last().copied().unwrap_or(t0);
    if series.delta_n.iter().all(|v| v.abs() < 1e-300) {
        return Ok(RelaxationFit { amplitude: 0.0, decay: 0.0, frequency: 0.0, residual: 0.0, window: (t0, t1) });
    }
    Ok(fit_damped_cosine(series, &FitOptions { t_start: Some(t_start) })?)
}

fn relax_meanfield(cfg: &Config, p: &Params, model: Model) -> Res<(ModulationSeries, RelaxationFit)> {
    let r = &cfg.relax;
    let mp = ModelParams { particles: None, ..p.model_params(p.L) };
    let (_, rep) = find_steady(&mp, cell_model(model, p), &cfg.mf_options())?;
    let init = modulated_coherent_chain(p.nbar, r.delta, p.L, p.d_max)?;
    let pt = ModelParams { chemical_potential: rep.mu, ..mp };
    let tr = evolve_mf(&init, &pt, r.t_end, &cfg.mf_options(), Some(r.sample))?;
    let series = density_modulation(&tr);
    let fit = fit_or_flat(&series, r.t_start)?;
    Ok((series, fit))
}

fn relax_exact(cfg: &Config, model: Model) -> Res<(ModulationSeries, RelaxationFit)> {
    let (p, r) = (&cfg.params, &cfg.relax);
    let pattern = match &r.pattern {
        Some(v) => v.clone(),
        None => match p.N {
            Some(n) if p.L % 2 == 0 && n == p.L / 2 => (0..p.L).map(|j| u16::from(j < n)).collect(),
            _ => return Err(ConfigError("exact relaxation needs relax.pattern (or N = L/2)".into()).into()),
        },
    };
    if pattern.len() != p.L {
        return Err(ConfigError(format!("relax.pattern has {} sites, L = {}", pattern.len(), p.L)).into());
    }
    let mode = match model {
        Model::One => BasisMode::ChainFixedN { sites: p.L, particles: pattern.iter().map(|&m| m as usize).sum() },
        Model::Two => BasisMode::ChainTruncated { sites: p.L, d_max: p.d_max },
    };
    let b = build_basis(mode)?;
    let mp = p.model_params(p.L);
    let h = fock::hamiltonian(&b, &mp)?;
    let j = fock::jump_set(&b, &mp, model)?;
    let opts = ExactOptions { dt: cfg.meanfield.dt, sample_every: Some(r.sample), ..ExactOptions::default() };
    let tr = evolve_exact(
        &exact_fock_initial(&pattern, &b)?,
        &LiouvillianAction::new(&h, &j)?,
        r.t_end,
        &opts,
        &site_densities(&b)?,
    )?;
    let series = tr.modulation();
    let fit = fit_or_flat(&series, r.t_start)?;
    Ok((series, fit))
}

/// Writes `series.csv` (`t,delta_n`) and `fit.csv`.
pub fn relax(cfg: &Config, out: &Path) -> Res<RelaxationFit> {
    let model = cfg.model()?;
    let (series, fit) = match cfg.relax.mode {
        Mode::Meanfield => relax_meanfield(cfg, &cfg.params, model)?,
        Mode::Exact => relax_exact(cfg, model)?,
    };
    let mut w = create(out, "series.csv")?;
    series.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "fit.csv")?;
    writeln!(w, "{},t_start,t_end", RelaxationFit::CSV_HEADER)?;
    writeln!(w, "{},{},{}", fit.csv_fields(), f(fit.window.0), f(fit.window.1))?;
    w.flush()?;
    Ok(fit)
}

// ---------------------------------------------------------------- GP and scaling

/// Lattice GP dispersion at the momenta of the configured chain. Model 1
/// has no gain, so its condensate density is `nbar`.
pub fn gp_dispersion(cfg: &Config, out: &Path) -> Res<usize> {
    let model = cfg.model()?;
    let p = &cfg.params;
    let gpp = GpParams::from(&p.model_params(p.L));
    let n0 = match cell_model(model, p) {
        Model::One => p.nbar,
        Model::Two => gp::gp_uniform(&gpp).0,
    };
    let (choice, n) = match cfg.gp.density {
        GpDensity::Condensate => (DensityChoice::Condensate, n0),
        GpDensity::Total => (DensityChoice::Total, mf_point(cfg, p, model, 1)?.0.n),
    };
    let pts = gp::gp_lattice_dispersion(&gpp, n0, n, p.L, choice);
    let mut w = create(out, "dispersion.csv")?;
    gp::write_dispersion_csv(&mut w, &pts)?;
    w.flush()?;
    Ok(pts.len())
}

/// Mean-field Liouvillian gap over `scaling.sizes` and its power-law fit.
pub fn gap_scaling(cfg: &Config, out: &Path) -> Res<f64> {
    let model = cfg.model()?;
    let sizes = &cfg.scaling.sizes;
    if sizes.len() < 3 {
        return Err(ConfigError("scaling.sizes needs at least three system sizes".into()).into());
    }
    let gaps = sizes
        .par_iter()
        .map(|&l| -> Res<(usize, f64)> {
            let (_, s) = mf_point(cfg, &cfg.params, model, l)?;
            Ok((l, gap_report(&s, &cfg.tolerances.gap(), DEFAULT_EPS_GAP)?.delta_l))
        })
        .collect::<Res<Vec<_>>>()?;
    let fit = gap_scaling_fit(&gaps)?;
    let mut w = create(out, "gap_scaling.csv")?;
    writeln!(w, "L,delta_L")?;
    for (l, g) in &gaps {
        writeln!(w, "{l},{}", f(*g))?;
    }
    w.flush()?;
    let mut w = create(out, "scaling_fit.csv")?;
    writeln!(w, "exponent,prefactor,r_squared")?;
    writeln!(w, "{},{},{}", f(fit.exponent), f(fit.prefactor), f(fit.r_squared))?;
    w.flush()?;
    Ok(fit.exponent)
}
