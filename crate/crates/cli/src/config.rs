//! Run configuration: a TOML file, overridden key by key from the command
//! line, deserialized into typed sections with physics defaults.

use std::path::Path;

use omgap::fock::{Model, ModelParams};
use omgap::meanfield::MfOptions;
use omgap::spectra::GapTolerances;
use serde::Deserialize;
use toml::{Table, Value};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: Option<u8>,
    pub params: Params,
    pub grid: Grid,
    pub tolerances: Tolerances,
    pub meanfield: MeanField,
    pub spectrum: SpectrumSection,
    pub relax: RelaxSection,
    pub edge: EdgeSection,
    pub scaling: ScalingSection,
    pub gp: GpSection,
}

/// Physical parameters; names follow the usual symbols.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct Params {
    pub J: f64,
    pub U: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub r_p: f64,
    pub r_l: f64,
    pub r_t: f64,
    pub mu: f64,
    pub nbar: f64,
    pub L: usize,
    pub N: Option<usize>,
    pub d_max: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            J: 1.0,
            U: 0.0,
            kappa: 1.0,
            gamma: 0.0,
            r_p: 0.0,
            r_l: 0.0,
            r_t: 0.0,
            mu: 0.0,
            nbar: 0.5,
            L: 16,
            N: None,
            d_max: 20,
        }
    }
}

/// Names accepted as grid axes and in `eps_gap_reference`. `r` sets
/// `r_p = r_l = r_t` together.
pub const AXIS_NAMES: [&str; 10] = ["J", "U", "kappa", "gamma", "r_p", "r_l", "r_t", "mu", "nbar", "r"];

impl Params {
    pub fn set(&mut self, name: &str, v: f64) -> Result<(), ConfigError> {
        match name {
            "J" => self.J = v,
            "U" => self.U = v,
            "kappa" => self.kappa = v,
            "gamma" => self.gamma = v,
            "r_p" => self.r_p = v,
            "r_l" => self.r_l = v,
            "r_t" => self.r_t = v,
            "mu" => self.mu = v,
            "nbar" => self.nbar = v,
            "r" => {
                self.r_p = v;
                self.r_l = v;
                self.r_t = v;
            }
            _ => return Err(bad(format!("unknown parameter `{name}`; expected one of {AXIS_NAMES:?}"))),
        }
        Ok(())
    }

    pub fn model_params(&self, sites: usize) -> ModelParams {
        ModelParams {
            hopping: self.J,
            interaction: self.U,
            chemical_potential: self.mu,
            bond_rate: self.kappa,
            dephasing: self.gamma,
            pump: self.r_p,
            loss: self.r_l,
            two_body_loss: self.r_t,
            sites,
            particles: self.N,
            d_max: self.d_max,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Option<Vec<f64>>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub steps: Option<usize>,
}

impl Axis {
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        if !AXIS_NAMES.contains(&self.name.as_str()) {
            return Err(bad(format!("grid axis `{}` is not a parameter; expected one of {AXIS_NAMES:?}", self.name)));
        }
        if let Some(v) = &self.values {
            if v.is_empty() || self.min.is_some() || self.max.is_some() || self.steps.is_some() {
                return Err(bad(format!(
                    "axis `{}`: give either a nonempty `values` list or min/max/steps",
                    self.name
                )));
            }
            return Ok(v.clone());
        }
        let (Some(lo), Some(hi), Some(steps)) = (self.min, self.max, self.steps) else {
            return Err(bad(format!("axis `{}` needs min, max and steps", self.name)));
        };
        if steps == 0 {
            return Err(bad(format!("axis `{}`: steps must be at least 1", self.name)));
        }
        if steps == 1 {
            return Ok(vec![lo]);
        }
        Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Grid {
    pub axis1: Option<Axis>,
    pub axis2: Option<Axis>,
    /// Extra per-cell outputs beyond the fixed columns; `omega_relax` is
    /// the only one.
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub eps_zero: Option<f64>,
    pub eps_im: Option<f64>,
    pub eps_gap: Option<f64>,
    /// Parameter overrides of a reference point; `eps_gap` becomes ten
    /// times its Liouvillian gap at the same L.
    pub eps_gap_reference: Option<Table>,
}

pub const DEFAULT_EPS_GAP: f64 = 1e-3;

impl Tolerances {
    pub fn gap(&self) -> GapTolerances {
        GapTolerances { eps_zero: self.eps_zero, eps_im: self.eps_im }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanField {
    pub dt: f64,
    pub tol: f64,
    pub t_max: f64,
    pub check_uniform: bool,
}

impl Default for MeanField {
    fn default() -> Self {
        let o = MfOptions::default();
        MeanField { dt: o.dt, tol: o.tol, t_max: o.t_max, check_uniform: o.check_uniform }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Meanfield,
    Exact,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub mode: Mode,
    /// Also run edge detection (exact mode).
    pub edge: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxSection {
    pub mode: Mode,
    pub delta: f64,
    pub t_end: f64,
    pub sample: f64,
    pub t_start: f64,
    /// Initial occupations for exact mode.
    pub pattern: Option<Vec<u16>>,
}

impl Default for RelaxSection {
    fn default() -> Self {
        RelaxSection { mode: Mode::Meanfield, delta: 0.05, t_end: 60.0, sample: 0.05, t_start: 2.0, pattern: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSection {
    pub sigma: f64,
    pub density_threshold: f64,
    /// `re,im` spectrum to analyse instead of computing one.
    pub input: Option<String>,
}

impl Default for EdgeSection {
    fn default() -> Self {
        EdgeSection { sigma: 1.0, density_threshold: 1.5, input: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub sizes: Vec<usize>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection { sizes: vec![16, 32, 64] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpDensity {
    #[default]
    Condensate,
    Total,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub density: GpDensity,
}

impl Config {
    /// Reads `path` (if any), applies `key=value` overrides and an explicit
    /// model, then deserializes.
    pub fn load(path: Option<&Path>, sets: &[String], model: Option<u8>) -> Result<Config, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bad(format!("{}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| bad(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for s in sets {
            apply_set(&mut table, s)?;
        }
        if let Some(m) = model {
            table.insert("model".into(), Value::Integer(m.into()));
        }
        let cfg: Config = Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if let Some(m) = self.model {
            if Model::from_index(m).is_none() {
                return Err(bad(format!("model must be 1 or 2, got {m}")));
            }
        }
        if self.params.d_max < 2 {
            return Err(bad("d_max must be at least 2"));
        }
        for out in &self.grid.outputs {
            if !["n0", "n", "delta_L", "delta_OM", "type", "omega_relax"].contains(&out.as_str()) {
                return Err(bad(format!("unknown grid output `{out}`")));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        self.model
            .and_then(Model::from_index)
            .ok_or_else(|| bad("missing `model` (set it in the config or pass --model 1|2)"))
    }

    pub fn mf_options(&self) -> MfOptions {
        MfOptions {
            dt: self.meanfield.dt,
            tol: self.meanfield.tol,
            t_max: self.meanfield.t_max,
            check_uniform: self.meanfield.check_uniform,
            density: Some(self.params.nbar),
            ..MfOptions::default()
        }
    }
}

/// `section.key=value` or `key=value`; a bare key other than `model`
/// addresses `[params]`. Values parse as TOML, falling back to a string.
fn apply_set(table: &mut Table, s: &str) -> Result<(), ConfigError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| bad(format!("--set expects key=value, got `{s}`")))?;
    let key = key.trim();
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("bad key `{key}`")));
    }
    if path.len() == 1 && path[0] != "model" {
        path.insert(0, "params");
    }
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| bad(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
