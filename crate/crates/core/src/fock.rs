//! Truncated bosonic Fock bases and sparse operators on them.
//!
//! Three basis flavours are supported:
//!
//! * `SingleSite { d_max }`: occupations `0..d_max`, index equals occupation.
//! * `ChainFixedN { sites, particles }`: all occupation tuples with a fixed
//!   total particle number, enumerated in descending lexicographic order
//!   (`(2,0), (1,1), (0,2)` for two particles on two sites).
//! * `ChainTruncated { sites, d_max }`: every site capped at `d_max - 1`
//!   particles, enumerated in ascending lexicographic (mixed-radix) order.
//!   Ladder amplitudes that would leave the cap are dropped.
//!
//! Operators are assembled from words of ladder operators, so every bilinear
//! used by the models stays inside the fixed-N space when it conserves N.

use std::collections::HashMap;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::CMat;

/// Default cap on the number of basis states.
pub const DEFAULT_MAX_STATES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisMode {
    SingleSite { d_max: usize },
    ChainFixedN { sites: usize, particles: usize },
    ChainTruncated { sites: usize, d_max: usize },
}

impl BasisMode {
    /// Number of states, computed without enumeration.
    pub fn dimension(&self) -> u128 {
        match *self {
            BasisMode::SingleSite { d_max } => d_max as u128,
            BasisMode::ChainFixedN { sites, particles } => {
                if sites == 0 {
                    return u128::from(particles == 0);
                }
                binomial((sites + particles - 1) as u128, particles as u128)
            }
            BasisMode::ChainTruncated { sites, d_max } => {
                let mut dim: u128 = 1;
                for _ in 0..sites {
                    dim = dim.saturating_mul(d_max as u128);
                }
                dim
            }
        }
    }

    pub fn sites(&self) -> usize {
        match *self {
            BasisMode::SingleSite { .. } => 1,
            BasisMode::ChainFixedN { sites, .. } | BasisMode::ChainTruncated { sites, .. } => sites,
        }
    }

    /// Largest allowed occupation of a single site, if the mode caps it.
    fn site_cap(&self) -> Option<u16> {
        match *self {
            BasisMode::SingleSite { d_max } | BasisMode::ChainTruncated { d_max, .. } => Some((d_max - 1) as u16),
            BasisMode::ChainFixedN { .. } => None,
        }
    }
}

pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

#[derive(Clone, Debug)]
pub struct FockBasis {
    mode: BasisMode,
    states: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

/// Builds a basis, refusing anything larger than [`DEFAULT_MAX_STATES`].
pub fn build_basis(mode: BasisMode) -> Result<FockBasis> {
    build_basis_with_limit(mode, DEFAULT_MAX_STATES)
}

pub fn build_basis_with_limit(mode: BasisMode, max_states: usize) -> Result<FockBasis> {
    match mode {
        BasisMode::SingleSite { d_max } | BasisMode::ChainTruncated { d_max, .. } if d_max == 0 => {
            return Err(Error::InvalidParams("d_max must be at least 1".into()));
        }
        _ => {}
    }
    let dim = mode.dimension();
    if dim > max_states as u128 {
        return Err(Error::DimensionLimit { dim, limit: max_states });
    }
    let mut states = Vec::with_capacity(dim as usize);
    match mode {
        BasisMode::SingleSite { d_max } => {
            states.extend((0..d_max).map(|n| vec![n as u16]));
        }
        BasisMode::ChainFixedN { sites, particles } => {
            let mut current = vec![0u16; sites];
            fill_fixed_n(&mut states, &mut current, 0, particles);
        }
        BasisMode::ChainTruncated { sites, d_max } => {
            let mut current = vec![0u16; sites];
            for _ in 0..dim {
                states.push(current.clone());
                for s in (0..sites).rev() {
                    if (current[s] as usize) + 1 < d_max {
                        current[s] += 1;
                        break;
                    }
                    current[s] = 0;
                }
            }
        }
    }
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(FockBasis { mode, states, index })
}

fn fill_fixed_n(out: &mut Vec<Vec<u16>>, current: &mut [u16], site: usize, remaining: usize) {
    if site + 1 == current.len() {
        current[site] = remaining as u16;
        out.push(current.to_vec());
        return;
    }
    for n in (0..=remaining).rev() {
        current[site] = n as u16;
        fill_fixed_n(out, current, site + 1, remaining - n);
    }
    current[site] = 0;
}

impl FockBasis {
    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn sites(&self) -> usize {
        self.mode.sites()
    }

    pub fn states(&self) -> &[Vec<u16>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.states[i]
    }

    pub fn index_of(&self, occupations: &[u16]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    /// Total particle number of every basis state.
    pub fn total_number(&self, i: usize) -> usize {
        self.states[i].iter().map(|&n| n as usize).sum()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.sites() {
            return Err(Error::SiteOutOfRange { site, sites: self.sites() });
        }
        Ok(())
    }

    /// Applies a word of ladder operators (rightmost acts first).
    fn apply_word(&self, occ: &[u16], word: &[Ladder]) -> Option<(f64, Vec<u16>)> {
        let cap = self.mode.site_cap();
        let mut out = occ.to_vec();
        let mut amp = 1.0;
        for op in word.iter().rev() {
            match *op {
                Ladder::Annihilate(s) => {
                    if out[s] == 0 {
                        return None;
                    }
                    amp *= f64::from(out[s]).sqrt();
                    out[s] -= 1;
                }
                Ladder::Create(s) => {
                    if cap.is_some_and(|c| out[s] >= c) {
                        return None;
                    }
                    out[s] += 1;
                    amp *= f64::from(out[s]).sqrt();
                }
            }
        }
        Some((amp, out))
    }

    /// Sparse matrix of `sum_k c_k * word_k` acting within this basis.
    pub fn operator(&self, terms: &[(C64, Vec<Ladder>)]) -> Result<OperatorMatrix> {
        self.transition(self, terms)
    }

    /// Matrix of `sum_k c_k * word_k` mapping this basis into `target`.
    pub fn transition(&self, target: &FockBasis, terms: &[(C64, Vec<Ladder>)]) -> Result<OperatorMatrix> {
        for (_, word) in terms {
            for op in word {
                let (Ladder::Create(s) | Ladder::Annihilate(s)) = *op;
                self.check_site(s)?;
            }
        }
        let mut entries = Vec::new();
        for (col, occ) in self.states.iter().enumerate() {
            for (coef, word) in terms {
                if let Some((amp, out)) = self.apply_word(occ, word) {
                    match target.index_of(&out) {
                        Some(row) => entries.push((row, col, coef * amp)),
                        None => return Err(Error::NotNumberConserving),
                    }
                }
            }
        }
        Ok(OperatorMatrix::new(target.dim(), self.dim(), entries))
    }

    /// The same chain with a different fixed particle number.
    pub fn with_particles(&self, particles: usize) -> Result<FockBasis> {
        match self.mode {
            BasisMode::ChainFixedN { sites, .. } => build_basis(BasisMode::ChainFixedN { sites, particles }),
            _ => Ok(self.clone()),
        }
    }

    /// Diagonal operator of the total particle number.
    pub fn number_operator(&self) -> OperatorMatrix {
        let entries = (0..self.dim()).map(|i| (i, i, C64::new(self.total_number(i) as f64, 0.0))).collect();
        OperatorMatrix::new(self.dim(), self.dim(), entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create(usize),
    Annihilate(usize),
}

use Ladder::{Annihilate as A, Create as Cr};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteOp {
    Annihilate,
    Create,
    Number,
}

/// Single-site ladder or number operator.
///
/// In fixed-N mode the annihilator maps into the (N-1)-particle basis and
/// the creator into the (N+1)-particle basis, so the returned matrices are
/// rectangular. The number operator always stays inside the basis.
pub fn site_operator(basis: &FockBasis, site: usize, kind: SiteOp) -> Result<OperatorMatrix> {
    basis.check_site(site)?;
    let one = C64::new(1.0, 0.0);
    match (basis.mode(), kind) {
        (_, SiteOp::Number) => site_diagonal(basis, site, |n| n),
        (BasisMode::ChainFixedN { particles, .. }, SiteOp::Annihilate) => {
            if particles == 0 {
                let target = basis.with_particles(0)?;
                return Ok(OperatorMatrix::zeros(target.dim(), basis.dim()));
            }
            basis.transition(&basis.with_particles(particles - 1)?, &[(one, vec![A(site)])])
        }
        (BasisMode::ChainFixedN { particles, .. }, SiteOp::Create) => {
            basis.transition(&basis.with_particles(particles + 1)?, &[(one, vec![Cr(site)])])
        }
        (_, SiteOp::Annihilate) => basis.operator(&[(one, vec![A(site)])]),
        (_, SiteOp::Create) => basis.operator(&[(one, vec![Cr(site)])]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    /// Bond dissipation plus dephasing; conserves N.
    One,
    /// Bond dissipation plus pumping, one- and two-particle loss.
    Two,
}

impl Model {
    pub fn from_index(i: u8) -> Option<Model> {
        match i {
            1 => Some(Model::One),
            2 => Some(Model::Two),
            _ => None,
        }
    }

    pub fn index(&self) -> u8 {
        match self {
            Model::One => 1,
            Model::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub hopping: f64,
    pub interaction: f64,
    pub chemical_potential: f64,
    pub bond_rate: f64,
    pub dephasing: f64,
    pub pump: f64,
    pub loss: f64,
    pub two_body_loss: f64,
    pub sites: usize,
    /// Total particle number; Model 1 only.
    pub particles: Option<usize>,
    pub d_max: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            hopping: 1.0,
            interaction: 0.0,
            chemical_potential: 0.0,
            bond_rate: 1.0,
            dephasing: 0.0,
            pump: 0.0,
            loss: 0.0,
            two_body_loss: 0.0,
            sites: 2,
            particles: None,
            d_max: 20,
        }
    }
}

impl ModelParams {
    /// Bounds shared by both models.
    pub fn validate_bounds(&self) -> Result<()> {
        let rates = [
            ("kappa", self.bond_rate),
            ("gamma", self.dephasing),
            ("r_p", self.pump),
            ("r_l", self.loss),
            ("r_t", self.two_body_loss),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be a finite nonnegative rate, got {v}")));
            }
        }
        if !(self.hopping > 0.0) {
            return Err(Error::InvalidParams(format!("J must be positive, got {}", self.hopping)));
        }
        if !self.interaction.is_finite() || !self.chemical_potential.is_finite() {
            return Err(Error::InvalidParams("U and mu must be finite".into()));
        }
        if self.sites < 2 {
            return Err(Error::InvalidParams(format!("L must be at least 2, got {}", self.sites)));
        }
        if self.d_max < 2 {
            return Err(Error::InvalidParams(format!("d_max must be at least 2, got {}", self.d_max)));
        }
        Ok(())
    }

    pub fn validate(&self, model: Model) -> Result<()> {
        self.validate_bounds()?;
        match model {
            Model::One => {
                if self.pump != 0.0 || self.loss != 0.0 || self.two_body_loss != 0.0 {
                    return Err(Error::InvalidParams("Model 1 requires r_p = r_l = r_t = 0".into()));
                }
            }
            Model::Two => {
                if self.dephasing != 0.0 {
                    return Err(Error::InvalidParams("Model 2 requires gamma = 0".into()));
                }
                if !(self.two_body_loss > 0.0) {
                    return Err(Error::InvalidParams("Model 2 requires r_t > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean density N/L when a particle number is set.
    pub fn density(&self) -> Option<f64> {
        self.particles.map(|n| n as f64 / self.sites as f64)
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Periodic Bose-Hubbard Hamiltonian.
///
/// The hopping sum runs over `j = 0..L` with `j + 1` taken modulo `L`, so for
/// `L = 2` the single bond appears twice and the effective hopping doubles.
/// A single-site basis carries only the on-site terms.
pub fn hamiltonian(basis: &FockBasis, p: &ModelParams) -> Result<OperatorMatrix> {
    let l = basis.sites();
    let mut terms = Vec::new();
    if l > 1 {
        for j in 0..l {
            let k = (j + 1) % l;
            terms.push((c(-p.hopping), vec![Cr(j), A(k)]));
            terms.push((c(-p.hopping), vec![Cr(k), A(j)]));
        }
    }
    for j in 0..l {
        terms.push((c(0.5 * p.interaction), vec![Cr(j), Cr(j), A(j), A(j)]));
        terms.push((c(-p.chemical_potential), vec![Cr(j), A(j)]));
    }
    basis.operator(&terms)
}

/// `sqrt(kappa) (b_j^dag + b_{j+1}^dag)(b_j - b_{j+1})`.
pub fn bond_jump(basis: &FockBasis, j: usize, kappa: f64) -> Result<OperatorMatrix> {
    let l = basis.sites();
    basis.check_site(j)?;
    let k = (j + 1) % l;
    let s = kappa.sqrt();
    basis.operator(&[
        (c(s), vec![Cr(j), A(j)]),
        (c(-s), vec![Cr(j), A(k)]),
        (c(s), vec![Cr(k), A(j)]),
        (c(-s), vec![Cr(k), A(k)]),
    ])
}

pub fn dephasing_jump(basis: &FockBasis, j: usize, gamma: f64) -> Result<OperatorMatrix> {
    let s = gamma.sqrt();
    site_diagonal(basis, j, |n| s * n)
}

/// Diagonal operator `f(n_j)`, built directly from occupations so that it is
/// exact rather than a product of square roots.
fn site_diagonal(basis: &FockBasis, j: usize, f: impl Fn(f64) -> f64) -> Result<OperatorMatrix> {
    basis.check_site(j)?;
    let entries = (0..basis.dim()).map(|i| (i, i, c(f(basis.state(i)[j] as f64)))).collect();
    Ok(OperatorMatrix::new(basis.dim(), basis.dim(), entries))
}

pub fn pump_jump(basis: &FockBasis, j: usize, rate: f64) -> Result<OperatorMatrix> {
    basis.operator(&[(c(rate.sqrt()), vec![Cr(j)])])
}

pub fn loss_jump(basis: &FockBasis, j: usize, rate: f64) -> Result<OperatorMatrix> {
    basis.operator(&[(c(rate.sqrt()), vec![A(j)])])
}

pub fn two_body_loss_jump(basis: &FockBasis, j: usize, rate: f64) -> Result<OperatorMatrix> {
    basis.operator(&[(c(rate.sqrt()), vec![A(j), A(j)])])
}

/// Jump operators of Model 1 (all bond, then all dephasing) or Model 2
/// (bond, pump, loss, two-body loss). Bond jumps need at least two sites.
pub fn jump_set(basis: &FockBasis, p: &ModelParams, model: Model) -> Result<Vec<OperatorMatrix>> {
    match model {
        Model::One => {
            if p.pump != 0.0 || p.loss != 0.0 || p.two_body_loss != 0.0 {
                return Err(Error::InvalidParams("Model 1 requires r_p = r_l = r_t = 0".into()));
            }
        }
        Model::Two => {
            if p.dephasing != 0.0 || !(p.two_body_loss > 0.0) {
                return Err(Error::InvalidParams("Model 2 requires gamma = 0 and r_t > 0".into()));
            }
        }
    }
    let l = basis.sites();
    let mut jumps = Vec::new();
    if l > 1 {
        for j in 0..l {
            jumps.push(bond_jump(basis, j, p.bond_rate)?);
        }
    }
    for j in 0..l {
        match model {
            Model::One => jumps.push(dephasing_jump(basis, j, p.dephasing)?),
            Model::Two => {
                jumps.push(pump_jump(basis, j, p.pump)?);
                jumps.push(loss_jump(basis, j, p.loss)?);
                jumps.push(two_body_loss_jump(basis, j, p.two_body_loss)?);
            }
        }
    }
    Ok(jumps)
}

/// Zero-momentum condensate `(N!)^{-1/2} (b_0^dag)^N |vac>` in a fixed-N basis.
pub fn bec_state(basis: &FockBasis) -> Result<Vec<C64>> {
    let BasisMode::ChainFixedN { sites, particles } = basis.mode() else {
        return Err(Error::InvalidParams("condensate state needs a fixed-N chain basis".into()));
    };
    let ln_fact = |n: usize| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
    let norm = -0.5 * particles as f64 * (sites as f64).ln();
    Ok(basis
        .states()
        .iter()
        .map(|occ| {
            let ln_multinomial = ln_fact(particles) - occ.iter().map(|&n| ln_fact(n as usize)).sum::<f64>();
            c((0.5 * ln_multinomial + norm).exp())
        })
        .collect())
}

/// Sparse complex matrix with entries sorted by (row, col) and no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl OperatorMatrix {
    /// Sorts, merges duplicate positions and drops exact zeros.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        assert!(entries.iter().all(|&(r, c, _)| r < rows && c < cols), "operator entry out of bounds");
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != C64::new(0.0, 0.0));
        OperatorMatrix { rows, cols, entries: merged }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        OperatorMatrix { rows, cols, entries: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        OperatorMatrix { rows: n, cols: n, entries: (0..n).map(|i| (i, i, c(1.0))).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length of a square operator.
    pub fn dim(&self) -> usize {
        debug_assert_eq!(self.rows, self.cols);
        self.rows
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries
            .binary_search_by_key(&(row, col), |&(r, c, _)| (r, c))
            .map(|i| self.entries[i].2)
            .unwrap_or_default()
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        let entries = self.entries.iter().map(|&(r, c, v)| (c, r, v.conj())).collect();
        OperatorMatrix::new(self.cols, self.rows, entries)
    }

    pub fn scale(&self, s: C64) -> OperatorMatrix {
        let entries = self.entries.iter().map(|&(r, c, v)| (r, c, v * s)).collect();
        OperatorMatrix::new(self.rows, self.cols, entries)
    }

    pub fn add(&self, other: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let entries = self.entries.iter().chain(other.entries.iter()).copied().collect();
        OperatorMatrix::new(self.rows, self.cols, entries)
    }

    pub fn sub(&self, other: &OperatorMatrix) -> OperatorMatrix {
        self.add(&other.scale(c(-1.0)))
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.cols, other.rows);
        let mut by_row: Vec<Vec<(usize, C64)>> = vec![Vec::new(); other.rows];
        for &(r, c, v) in &other.entries {
            by_row[r].push((c, v));
        }
        let mut entries = Vec::new();
        for &(r, k, v) in &self.entries {
            for &(c, w) in &by_row[k] {
                entries.push((r, c, v * w));
            }
        }
        OperatorMatrix::new(self.rows, other.cols, entries)
    }

    pub fn commutator(&self, other: &OperatorMatrix) -> OperatorMatrix {
        self.matmul(other).sub(&other.matmul(self))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![C64::default(); self.rows];
        for &(r, c, a) in &self.entries {
            out[r] += a * v[c];
        }
        out
    }

    /// Dense product `self * x`.
    pub fn mul_dense(&self, x: &CMat) -> CMat {
        assert_eq!(self.cols, x.nrows());
        let mut out = CMat::zeros(self.rows, x.ncols());
        for &(r, k, a) in &self.entries {
            for col in 0..x.ncols() {
                out[(r, col)] += a * x[(k, col)];
            }
        }
        out
    }

    /// Dense product `x * self`.
    pub fn dense_mul(&self, x: &CMat) -> CMat {
        assert_eq!(x.ncols(), self.rows);
        let mut out = CMat::zeros(x.nrows(), self.cols);
        for &(k, c, a) in &self.entries {
            for row in 0..x.nrows() {
                out[(row, c)] += x[(row, k)] * a;
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
        }
        m
    }
}
