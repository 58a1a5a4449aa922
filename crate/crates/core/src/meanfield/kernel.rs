//! Single-site Gutzwiller generator, applied directly to column-major
//! `d x d` arrays so that every ladder product costs `O(d^2)`.

use num_complex::Complex64 as C64;

use crate::fock::ModelParams;

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Op {
    One,
    Create,
    Annihilate,
    Number,
}

impl Op {
    fn dagger(self) -> Op {
        match self {
            Op::Create => Op::Annihilate,
            Op::Annihilate => Op::Create,
            o => o,
        }
    }
}

/// `A = (1, b^dag, b, n)`.
pub(crate) const A_OPS: [Op; 4] = [Op::One, Op::Create, Op::Annihilate, Op::Number];

/// Single-site moments entering the hopping field and the bond matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n2: C64,
    pub bd_n: C64,
    pub b_n: C64,
    pub n: C64,
    pub n_b: C64,
    pub b2: C64,
    pub b: C64,
    pub n_bd: C64,
    pub bd2: C64,
    pub bd: C64,
    /// Truncated `<b b^dag>`, i.e. `<n> + 1` minus the top-level population
    /// times `d_max`.
    pub b_bd: C64,
}

impl Moments {
    pub fn is_finite(&self) -> bool {
        [self.n2, self.bd_n, self.b_n, self.n, self.n_b, self.b2, self.b, self.n_bd, self.bd2, self.bd, self.b_bd]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Part of the bond matrix linear in the state (the constant entries
    /// `1` at (3,3) and (4,4) are added separately).
    pub fn gamma_linear(&self) -> [[C64; 4]; 4] {
        [
            [self.n2, self.bd_n, -self.b_n, -self.n],
            [self.n_b, self.n, -self.b2, -self.b],
            [-self.n_bd, -self.bd2, self.b_bd, self.bd],
            [-self.n, -self.bd, self.b, ZERO],
        ]
    }

    /// Full bond matrix of a normalized site state.
    pub fn gamma(&self) -> [[C64; 4]; 4] {
        let mut g = self.gamma_linear();
        g[3][3] += 1.0;
        g
    }
}

pub(crate) fn add_gamma(a: &[[C64; 4]; 4], b: &[[C64; 4]; 4]) -> [[C64; 4]; 4] {
    let mut out = *a;
    for r in 0..4 {
        for s in 0..4 {
            out[r][s] += b[r][s];
        }
    }
    out
}

/// Sparse real operator stored as `(row, col, value)`.
type Sparse = Vec<(usize, usize, f64)>;

#[derive(Clone, Debug)]
pub struct SiteKernel {
    d: usize,
    /// `sq[m] = sqrt(m)` for `m = 0..=d`.
    sq: Vec<f64>,
    energy: Vec<f64>,
    /// Diagonal of the truncated `b b^dag`.
    bbd: Vec<f64>,
    p: ModelParams,
    observables: [Sparse; 11],
}

impl SiteKernel {
    pub fn new(p: &ModelParams) -> Self {
        let d = p.d_max;
        let sq: Vec<f64> = (0..=d).map(|m| (m as f64).sqrt()).collect();
        let energy = (0..d)
            .map(|m| {
                let m = m as f64;
                0.5 * p.interaction * m * (m - 1.0) - p.chemical_potential * m
            })
            .collect();
        let bbd = (0..d).map(|m| if m + 1 < d { (m + 1) as f64 } else { 0.0 }).collect();

        let b = dense(d, |i, j| if j == i + 1 { sq[j] } else { 0.0 });
        let bd = dense(d, |i, j| b[j][i]);
        let n = dense(d, |i, j| if i == j { i as f64 } else { 0.0 });
        let observables = [
            sparse(&mul(&n, &n)),
            sparse(&mul(&bd, &n)),
            sparse(&mul(&b, &n)),
            sparse(&n),
            sparse(&mul(&n, &b)),
            sparse(&mul(&b, &b)),
            sparse(&b),
            sparse(&mul(&n, &bd)),
            sparse(&mul(&bd, &bd)),
            sparse(&bd),
            sparse(&mul(&b, &bd)),
        ];
        SiteKernel { d, sq, energy, bbd, p: *p, observables }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &ModelParams {
        &self.p
    }

    /// On-site energies `U/2 m(m-1) - mu m`.
    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn moments(&self, x: &[C64]) -> Moments {
        let d = self.d;
        let tr = |ops: &Sparse| -> C64 { ops.iter().map(|&(i, j, v)| x[j + i * d] * v).sum() };
        let o = &self.observables;
        Moments {
            n2: tr(&o[0]),
            bd_n: tr(&o[1]),
            b_n: tr(&o[2]),
            n: tr(&o[3]),
            n_b: tr(&o[4]),
            b2: tr(&o[5]),
            b: tr(&o[6]),
            n_bd: tr(&o[7]),
            bd2: tr(&o[8]),
            bd: tr(&o[9]),
            b_bd: tr(&o[10]),
        }
    }

    /// `out = op * x`.
    pub(crate) fn left(&self, op: Op, x: &[C64], out: &mut [C64]) {
        let d = self.d;
        for n in 0..d {
            let col = n * d;
            for m in 0..d {
                out[m + col] = match op {
                    Op::One => x[m + col],
                    Op::Number => x[m + col] * m as f64,
                    Op::Create => {
                        if m > 0 {
                            x[m - 1 + col] * self.sq[m]
                        } else {
                            ZERO
                        }
                    }
                    Op::Annihilate => {
                        if m + 1 < d {
                            x[m + 1 + col] * self.sq[m + 1]
                        } else {
                            ZERO
                        }
                    }
                };
            }
        }
    }

    /// `out = x * op`.
    pub(crate) fn right(&self, op: Op, x: &[C64], out: &mut [C64]) {
        let d = self.d;
        for n in 0..d {
            let col = n * d;
            match op {
                Op::One => out[col..col + d].copy_from_slice(&x[col..col + d]),
                Op::Number => {
                    for m in 0..d {
                        out[m + col] = x[m + col] * n as f64;
                    }
                }
                // (X b^dag)[m, n] = X[m, n+1] sqrt(n+1)
                Op::Create => {
                    if n + 1 < d {
                        let s = self.sq[n + 1];
                        for m in 0..d {
                            out[m + col] = x[m + col + d] * s;
                        }
                    } else {
                        out[col..col + d].fill(ZERO);
                    }
                }
                // (X b)[m, n] = X[m, n-1] sqrt(n)
                Op::Annihilate => {
                    if n > 0 {
                        let s = self.sq[n];
                        for m in 0..d {
                            out[m + col] = x[m + col - d] * s;
                        }
                    } else {
                        out[col..col + d].fill(ZERO);
                    }
                }
            }
        }
    }

    /// Adds the on-site linear part: diagonal energies, dephasing, pump,
    /// one-body and two-body loss.
    pub(crate) fn add_local(&self, x: &[C64], out: &mut [C64], s: &mut Scratch) {
        let d = self.d;
        let p = &self.p;
        for n in 0..d {
            for m in 0..d {
                let k = m + n * d;
                let (mf, nf) = (m as f64, n as f64);
                let mut rate = C64::new(-0.5 * p.dephasing * (mf - nf) * (mf - nf), 0.0);
                rate += -I * (self.energy[m] - self.energy[n]);
                rate -= 0.5 * p.pump * (self.bbd[m] + self.bbd[n]);
                rate -= 0.5 * p.loss * (mf + nf);
                rate -= 0.5 * p.two_body_loss * (mf * (mf - 1.0) + nf * (nf - 1.0));
                out[k] += rate * x[k];
            }
        }
        let [t0, t1] = &mut s.t;
        if p.pump != 0.0 {
            self.left(Op::Create, x, t0);
            self.right(Op::Annihilate, t0, t1);
            axpy(out, p.pump, t1);
        }
        if p.loss != 0.0 {
            self.left(Op::Annihilate, x, t0);
            self.right(Op::Create, t0, t1);
            axpy(out, p.loss, t1);
        }
        if p.two_body_loss != 0.0 {
            self.left(Op::Annihilate, x, t0);
            self.left(Op::Annihilate, t0, t1);
            self.right(Op::Create, t1, t0);
            self.right(Op::Create, t0, t1);
            axpy(out, p.two_body_loss, t1);
        }
    }

    /// Adds `-i[h_hop, x]` with `h_hop = -J (psi b^dag + psi_dag b)`, where
    /// `psi` and `psi_dag` are the summed neighbour moments.
    pub(crate) fn add_hopping(&self, psi: C64, psi_dag: C64, x: &[C64], out: &mut [C64], s: &mut Scratch) {
        let j = self.p.hopping;
        if psi != ZERO {
            let f = I * j * psi;
            self.left(Op::Create, x, &mut s.t[0]);
            self.right(Op::Create, x, &mut s.t[1]);
            for k in 0..out.len() {
                out[k] += f * (s.t[0][k] - s.t[1][k]);
            }
        }
        if psi_dag != ZERO {
            let f = I * j * psi_dag;
            self.left(Op::Annihilate, x, &mut s.t[0]);
            self.right(Op::Annihilate, x, &mut s.t[1]);
            for k in 0..out.len() {
                out[k] += f * (s.t[0][k] - s.t[1][k]);
            }
        }
    }

    /// Adds `kappa sum_rs G[r][s] (A_r x A_s^dag - 1/2 {A_s^dag A_r, x})`.
    pub(crate) fn add_bond(&self, g: &[[C64; 4]; 4], x: &[C64], out: &mut [C64], s: &mut Scratch) {
        let kappa = self.p.bond_rate;
        if kappa == 0.0 {
            return;
        }
        let len = x.len();
        // y[r] = A_r x
        for r in 0..4 {
            let (y, _) = s.y.split_at_mut(r + 1);
            self.left(A_OPS[r], x, &mut y[r]);
        }
        // z[s] = sum_r G[r][s] y[r]; w[s] = x A_s^dag
        for sidx in 0..4 {
            let z = &mut s.z[sidx];
            z.fill(ZERO);
            for r in 0..4 {
                let gv = g[r][sidx];
                if gv != ZERO {
                    for k in 0..len {
                        z[k] += gv * s.y[r][k];
                    }
                }
            }
        }
        for sidx in 0..4 {
            let adag = A_OPS[sidx].dagger();
            // A_r x A_s^dag summed over r with weights
            self.right(adag, &s.z[sidx], &mut s.t[0]);
            // A_s^dag A_r x
            self.left(adag, &s.z[sidx], &mut s.t[1]);
            for k in 0..len {
                out[k] += kappa * (s.t[0][k] - 0.5 * s.t[1][k]);
            }
        }
        // v[r] = sum_s G[r][s] x A_s^dag, then x A_s^dag A_r
        for sidx in 0..4 {
            let (w, _) = s.y.split_at_mut(sidx + 1);
            self.right(A_OPS[sidx].dagger(), x, &mut w[sidx]);
        }
        for r in 0..4 {
            let v = &mut s.z[r];
            v.fill(ZERO);
            for sidx in 0..4 {
                let gv = g[r][sidx];
                if gv != ZERO {
                    for k in 0..len {
                        v[k] += gv * s.y[sidx][k];
                    }
                }
            }
        }
        for r in 0..4 {
            self.right(A_OPS[r], &s.z[r], &mut s.t[0]);
            for k in 0..len {
                out[k] -= 0.5 * kappa * s.t[0][k];
            }
        }
    }

    /// Full single-site generator given the neighbour-summed field and bond
    /// matrix. Overwrites `out`.
    pub(crate) fn site_rhs(
        &self,
        psi: C64,
        psi_dag: C64,
        gamma: &[[C64; 4]; 4],
        x: &[C64],
        out: &mut [C64],
        s: &mut Scratch,
    ) {
        out.fill(ZERO);
        self.add_local(x, out, s);
        self.add_hopping(psi, psi_dag, x, out, s);
        self.add_bond(gamma, x, out, s);
    }

    /// Diagonal generator integrated exactly by the Lawson scheme:
    /// `-i(E_m - E_n) - (gamma/2 + kappa)(m - n)^2`, which vanishes on the
    /// diagonal so populations are advanced by plain RK4.
    pub(crate) fn stiff_generator(&self) -> Vec<C64> {
        let d = self.d;
        let p = &self.p;
        let mut g = vec![ZERO; d * d];
        for n in 0..d {
            for m in 0..d {
                let q = (m as f64 - n as f64).powi(2);
                g[m + n * d] = C64::new(-(0.5 * p.dephasing + p.bond_rate) * q, -(self.energy[m] - self.energy[n]));
            }
        }
        g
    }
}

/// Reusable work arrays for the kernel.
#[derive(Clone, Debug)]
pub(crate) struct Scratch {
    t: [Vec<C64>; 2],
    y: [Vec<C64>; 4],
    z: [Vec<C64>; 4],
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        let v = || vec![ZERO; d * d];
        Scratch { t: [v(), v()], y: [v(), v(), v(), v()], z: [v(), v(), v(), v()] }
    }
}

fn axpy(out: &mut [C64], a: f64, x: &[C64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn dense(d: usize, f: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| f(i, j)).collect()).collect()
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = a.len();
    dense(d, |i, j| (0..d).map(|k| a[i][k] * b[k][j]).sum())
}

fn sparse(a: &[Vec<f64>]) -> Sparse {
    let mut out = Vec::new();
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}
