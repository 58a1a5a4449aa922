use faer::Mat;
use num_complex::Complex64 as C64;

use super::*;
use crate::fock::Model;
use crate::linalg::{self, CMat};

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }
}

fn random_state(d: usize, rng: &mut Lcg) -> CMat {
    let a = Mat::from_fn(d, d, |_, _| C64::new(rng.next(), rng.next()));
    let rho = &a * a.adjoint();
    let tr = linalg::trace(&rho);
    Mat::from_fn(d, d, |i, j| rho[(i, j)] / tr)
}

fn ladder(d: usize) -> (CMat, CMat, CMat) {
    let b = Mat::from_fn(d, d, |i, j| c(if j == i + 1 { (j as f64).sqrt() } else { 0.0 }));
    let bd = b.adjoint().to_owned();
    let n = Mat::from_fn(d, d, |i, j| c(if i == j { i as f64 } else { 0.0 }));
    (b, bd, n)
}

fn ev(o: &CMat, rho: &CMat) -> C64 {
    linalg::trace(&(o * rho))
}

fn dissipator(l: &CMat, ld: &CMat, rho: &CMat) -> CMat {
    let k = ld * l;
    let a = l * rho * ld;
    let b = &k * rho;
    let cc = rho * &k;
    Mat::from_fn(rho.nrows(), rho.ncols(), |i, j| a[(i, j)] - 0.5 * (b[(i, j)] + cc[(i, j)]))
}

/// Direct dense transcription of the single-site mean-field generator.
fn dense_rhs(sites: &[CMat], p: &ModelParams) -> Vec<CMat> {
    let d = p.d_max;
    let (b, bd, n) = ladder(d);
    let id = CMat::identity(d, d);
    let l = sites.len();
    let gamma = |rho: &CMat| -> [[C64; 4]; 4] {
        let e = |o: &CMat| ev(o, rho);
        [
            [e(&(&n * &n)), e(&(&bd * &n)), -e(&(&b * &n)), -e(&n)],
            [e(&(&n * &b)), e(&n), -e(&(&b * &b)), -e(&b)],
            [-e(&(&n * &bd)), -e(&(&bd * &bd)), e(&(&b * &bd)), e(&bd)],
            [-e(&n), -e(&bd), e(&b), c(1.0)],
        ]
    };
    let a_ops = [id.clone(), bd.clone(), b.clone(), n.clone()];
    let mut out = Vec::new();
    for j in 0..l {
        let rho = &sites[j];
        let (lf, rt) = (&sites[(j + l - 1) % l], &sites[(j + 1) % l]);
        let hop = ev(&b, rt) + ev(&b, lf);
        let hop_d = ev(&bd, rt) + ev(&bd, lf);
        let nn = &n * &n;
        let h = Mat::from_fn(d, d, |i, k| {
            -p.hopping * (hop * bd[(i, k)] + hop_d * b[(i, k)]) + 0.5 * p.interaction * (nn[(i, k)] - n[(i, k)])
                - p.chemical_potential * n[(i, k)]
        });
        let hr = &h * rho;
        let rh = rho * &h;
        let mut acc = Mat::from_fn(d, d, |i, k| C64::new(0.0, -1.0) * (hr[(i, k)] - rh[(i, k)]));
        let (g1, g2) = (gamma(rt), gamma(lf));
        for r in 0..4 {
            for s in 0..4 {
                let w = p.bond_rate * (g1[r][s] + g2[r][s]);
                let asd = a_ops[s].adjoint().to_owned();
                let t1 = &a_ops[r] * rho * &asd;
                let k = &asd * &a_ops[r];
                let t2 = &k * rho;
                let t3 = rho * &k;
                acc = Mat::from_fn(d, d, |i, q| acc[(i, q)] + w * (t1[(i, q)] - 0.5 * (t2[(i, q)] + t3[(i, q)])));
            }
        }
        let scale = |m: CMat, s: f64| Mat::from_fn(d, d, |i, q| m[(i, q)] * s);
        let b2 = &b * &b;
        let bd2 = &bd * &bd;
        acc = &acc + scale(dissipator(&n, &n, rho), p.dephasing);
        acc = &acc + scale(dissipator(&bd, &b, rho), p.pump);
        acc = &acc + scale(dissipator(&b, &bd, rho), p.loss);
        acc = &acc + scale(dissipator(&b2, &bd2, rho), p.two_body_loss);
        out.push(acc);
    }
    out
}

fn max_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

fn all_rates(d: usize) -> ModelParams {
    ModelParams {
        hopping: 0.7,
        interaction: 1.3,
        chemical_potential: -0.4,
        bond_rate: 0.9,
        dephasing: 0.6,
        pump: 0.5,
        loss: 0.3,
        two_body_loss: 0.2,
        sites: 3,
        particles: None,
        d_max: d,
    }
}

#[test]
fn kernel_matches_dense_transcription() {
    let mut rng = Lcg(11);
    for &l in &[1usize, 2, 3] {
        let p = ModelParams { sites: l.max(2), ..all_rates(6) };
        let sites: Vec<CMat> = (0..l).map(|_| random_state(6, &mut rng)).collect();
        let state = ChainState::from_sites(&sites).unwrap();
        let fast = mf_rhs(&state, &p).unwrap();
        let slow = dense_rhs(&sites, &p);
        for (a, b) in fast.iter().zip(&slow) {
            assert!(max_diff(a, b) < 1e-12, "L={l}: {}", max_diff(a, b));
            assert!(linalg::trace(a).norm() < 1e-12);
        }
    }
}

#[test]
fn decoupled_unitary_limit() {
    let p = ModelParams {
        hopping: 1e-300,
        bond_rate: 0.0,
        interaction: 2.0,
        chemical_potential: 0.3,
        d_max: 5,
        ..Default::default()
    };
    let mut rng = Lcg(5);
    let rho = random_state(5, &mut rng);
    let out = mf_rhs(&ChainState::from_sites(std::slice::from_ref(&rho)).unwrap(), &p).unwrap();
    let h = Mat::from_fn(5, 5, |i, j| c(if i == j { i as f64 * (i as f64 - 1.0) - 0.3 * i as f64 } else { 0.0 }));
    let expect = Mat::from_fn(5, 5, |i, j| C64::new(0.0, -1.0) * (h[(i, i)] - h[(j, j)]) * rho[(i, j)]);
    assert!(max_diff(&out[0], &expect) < 1e-12);
}

#[test]
fn gauge_covariance() {
    let p = all_rates(6);
    let mut rng = Lcg(9);
    let sites: Vec<CMat> = (0..3).map(|_| random_state(6, &mut rng)).collect();
    let theta = 0.83;
    let rot = |m: &CMat| Mat::from_fn(6, 6, |i, j| m[(i, j)] * C64::from_polar(1.0, theta * (i as f64 - j as f64)));
    let rotated: Vec<CMat> = sites.iter().map(rot).collect();
    let a = mf_rhs(&ChainState::from_sites(&rotated).unwrap(), &p).unwrap();
    let b = mf_rhs(&ChainState::from_sites(&sites).unwrap(), &p).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(max_diff(x, &rot(y)) < 1e-12);
    }
}

#[test]
fn thermal_state_values() {
    let (rho, tail) = thermal_steady(0.5, 20).unwrap();
    assert!((rho[(0, 0)].re - 2.0 / 3.0).abs() < 1e-9);
    assert!((rho[(1, 1)].re - 2.0 / 9.0).abs() < 1e-9);
    assert!((rho[(2, 2)].re - 2.0 / 27.0).abs() < 1e-9);
    assert!(tail < 1e-8);
    // Mean of the normalized truncated geometric law: q/(1-q) - d q^d/(1-q^d).
    let mean = |rho: &CMat| (0..rho.nrows()).map(|m| m as f64 * rho[(m, m)].re).sum::<f64>();
    let exact = |nbar: f64, d: i32| {
        let q = nbar / (nbar + 1.0);
        q / (1.0 - q) - d as f64 * q.powi(d) / (1.0 - q.powi(d))
    };
    assert!((mean(&rho) - exact(0.5, 20)).abs() < 1e-14);
    assert!((mean(&rho) - 0.5).abs() < 6e-9);
    let (one, _) = thermal_steady(1.0, 30).unwrap();
    assert!((mean(&one) - exact(1.0, 30)).abs() < 1e-13);
    assert!((mean(&one) - 1.0).abs() < 3e-8);
    let (vac, _) = thermal_steady(0.0, 4).unwrap();
    assert_eq!(vac[(0, 0)], c(1.0));
    assert!(thermal_steady(-1.0, 4).is_err());
}

#[test]
fn thermal_state_is_model1_fixed_point() {
    for &(g, u) in &[(6.0, 2.0), (2.0, 4.0), (0.5, 0.0)] {
        let p = ModelParams { dephasing: g, interaction: u, ..Default::default() };
        let (rho, _) = thermal_steady(0.5, 20).unwrap();
        let st = ChainState::uniform(&rho, 3).unwrap();
        assert!(rhs_norm(&st, &p).unwrap() < 1e-12);
        let tr = evolve_mf(&st, &p, 1.0, &MfOptions::default(), None).unwrap();
        assert!(tr.state.max_diff(&st) < 1e-12);
    }
}

#[test]
fn single_site_loss_decay() {
    let p = ModelParams { bond_rate: 0.0, loss: 1.0, d_max: 4, ..Default::default() };
    let rho = Mat::from_fn(4, 4, |i, j| c(if i == 1 && j == 1 { 1.0 } else { 0.0 }));
    let st = ChainState::from_sites(&[rho]).unwrap();
    for integ in [Integrator::Lawson, Integrator::Rk4] {
        let opts = MfOptions { integrator: integ, ..Default::default() };
        let tr = evolve_mf(&st, &p, 1.0, &opts, None).unwrap();
        assert!((tr.state.density(0) - (-1.0f64).exp()).abs() < 1e-8);
    }
}

fn modulated(p: &ModelParams, l: usize) -> ChainState {
    let sites: Vec<CMat> = (0..l)
        .map(|j| {
            let phase = 2.0 * std::f64::consts::PI * j as f64 / l as f64;
            coherent_state(C64::from_polar((0.5 + 0.2 * phase.cos()).sqrt(), 0.3 * j as f64), p.d_max)
        })
        .collect();
    ChainState::from_sites(&sites).unwrap()
}

#[test]
fn fourth_order_convergence() {
    let p = ModelParams { dephasing: 1.0, interaction: 2.0, d_max: 8, ..Default::default() };
    let st = modulated(&p, 4);
    let run = |dt: f64| evolve_mf(&st, &p, 10.0, &MfOptions { dt, ..Default::default() }, None).unwrap().state;
    let (a, b, r) = (run(0.01), run(0.005), run(0.00125));
    let ratio = a.max_diff(&r) / b.max_diff(&r);
    assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
}

#[test]
fn model1_conserves_density_and_trace() {
    let p = ModelParams { dephasing: 1.0, interaction: 2.0, ..Default::default() };
    let st = modulated(&p, 4);
    let n0 = st.mean_density();
    let tr = evolve_mf(&st, &p, 100.0, &MfOptions::default(), Some(10.0)).unwrap();
    assert!(tr.max_drift <= 1e-7, "drift {}", tr.max_drift);
    assert!((tr.state.mean_density() - n0).abs() < 1e-8);
    assert!(tr.state.hermiticity_error() < 1e-9);
    assert_eq!(tr.samples.len(), 11 * 4);
}

#[test]
fn dephasing_decay_rate_in_decoupled_limit() {
    let g = 1.3;
    let p = ModelParams { hopping: 1e-300, bond_rate: 0.0, dephasing: g, d_max: 6, ..Default::default() };
    let mut rng = Lcg(3);
    let rho = random_state(6, &mut rng);
    let st = ChainState::from_sites(std::slice::from_ref(&rho)).unwrap();
    let t = 0.7;
    let out = evolve_mf(&st, &p, t, &MfOptions::default(), None).unwrap().state.site(0);
    for m in 0..6 {
        for n in 0..6 {
            if m != n {
                let rate = -(out[(m, n)].norm() / rho[(m, n)].norm()).ln() / t;
                let want = g * ((m as f64 - n as f64).powi(2)) / 2.0;
                assert!((rate - want).abs() <= 0.01 * want);
            }
        }
    }
}

#[test]
fn trajectory_csv_header() {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &[Sample { t: 0.5, site: 2, psi: C64::new(0.25, -1.0), n: 0.5 }]).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().next().unwrap(), "t,site,re_psi,im_psi,n");
    assert!(s.contains("5.0000000000000000e-1,2,2.5000000000000000e-1,-1.0000000000000000e0,"));
}

#[test]
fn rotation_of_constant_and_rotating_psi() {
    let flat = vec![C64::new(0.3, 0.4); 20];
    assert_eq!(rotation_frequency(&flat, 0.1).unwrap(), c(0.0));
    let w = 0.7;
    let rot: Vec<C64> = (0..200).map(|k| C64::from_polar(1.0, w * k as f64 * 0.001)).collect();
    assert!((rotation_frequency(&rot, 0.001).unwrap() - c(w)).norm() < 1e-6);
}

#[test]
fn linearization_matches_central_differences() {
    let p = all_rates(6);
    let mut rng = Lcg(21);
    let sites: Vec<CMat> = (0..3).map(|_| random_state(6, &mut rng)).collect();
    let base = ChainState::from_sites(&sites).unwrap();
    let lin = linearize(&base, &p).unwrap();
    let eps = 1e-6;
    for _ in 0..20 {
        let delta: Vec<Vec<C64>> =
            (0..3).map(|_| (0..36).map(|_| C64::new(rng.next(), rng.next())).collect()).collect();
        let shift = |s: f64| {
            let raw: Vec<Vec<C64>> = base
                .raw()
                .iter()
                .zip(&delta)
                .map(|(x, dx)| x.iter().zip(dx).map(|(a, b)| a + b * s).collect())
                .collect();
            let st = ChainState::from_raw(6, raw, 0.0);
            mf_rhs(&st, &p).unwrap()
        };
        let (plus, minus) = (shift(eps), shift(-eps));
        let lin_out = lin.apply(&delta).unwrap();
        for j in 0..3 {
            let mut err: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for k in 0..36 {
                let fd = (plus[j][(k % 6, k / 6)] - minus[j][(k % 6, k / 6)]) / (2.0 * eps);
                err = err.max((fd - lin_out[j][k]).norm());
                scale = scale.max(lin_out[j][k].norm());
            }
            assert!(err <= 1e-5 * scale, "{err} vs {scale}");
        }
    }
    let zero = vec![vec![c(0.0); 36]; 3];
    assert!(lin.apply(&zero).unwrap().iter().flatten().all(|z| z.norm() == 0.0));
}

#[test]
fn block_union_equals_full_matrix() {
    let p = ModelParams { dephasing: 1.0, interaction: 2.0, d_max: 5, sites: 4, ..Default::default() };
    let (rho, _) = thermal_steady(0.5, 5).unwrap();
    let rho = {
        // A coherent admixture makes every coupling term active.
        let coh = coherent_state(C64::new(0.4, 0.1), 5);
        Mat::from_fn(5, 5, |i, j| 0.5 * (rho[(i, j)] + coh[(i, j)]))
    };
    let chain = ChainState::uniform(&rho, 4).unwrap();
    let lin = linearize(&chain, &p).unwrap();
    let full = linalg::eigenvalues(&lin.full_matrix().unwrap()).unwrap();
    let spec = lin.spectrum(4).unwrap();
    assert_eq!(spec.eigenvalues.len(), 100);
    let mut used = [false; 100];
    for z in &spec.eigenvalues {
        let (k, dist) = full
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, w)| (k, (w - z).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        used[k] = true;
        assert!(dist < 1e-7, "{z} off by {dist:e}");
    }
    // phi and -phi blocks give conjugation-closed spectra.
    for b in &spec.blocks {
        for z in &b.eigenvalues {
            let best = b.eigenvalues.iter().map(|w| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8);
        }
    }
}

#[test]
fn steady_state_examples() {
    let opts = MfOptions::default();
    // Non-interacting, no dephasing: coherent condensate at full density.
    let p = ModelParams { sites: 8, ..Default::default() };
    let (st, rep) = find_steady(&p, Model::One, &opts).unwrap();
    assert_eq!(rep.phase, Phase::Superfluid);
    assert!((rep.n0 - 0.5).abs() < 1e-4, "{rep:?}");
    assert!((rep.n - 0.5).abs() < 1e-6);
    assert!(rhs_norm(&st, &ModelParams { chemical_potential: rep.mu, ..p }).unwrap() < 1e-9);

    // Normal fluid: thermal state.
    let p = ModelParams { dephasing: 2.0, interaction: 4.0, sites: 8, ..Default::default() };
    let (st, rep) = find_steady(&p, Model::One, &opts).unwrap();
    assert_eq!(rep.phase, Phase::Normal);
    assert!(rep.n0 <= 1e-8);
    let (th, _) = thermal_steady(0.5, 20).unwrap();
    assert!(max_diff(&st.site(0), &th) < 1e-6);

    // No pump: vacuum.
    let p = ModelParams { two_body_loss: 1.0, loss: 1.0, sites: 8, ..Default::default() };
    let (_, rep) = find_steady(&p, Model::Two, &opts).unwrap();
    assert!(rep.n.abs() < 1e-10 && rep.n0 < 1e-10);
}

#[test]
fn goldstone_mode_in_superfluid() {
    let p = ModelParams { dephasing: 1.0, interaction: 2.0, sites: 16, d_max: 12, ..Default::default() };
    let (st, rep) = find_steady(&p, Model::One, &MfOptions::default()).unwrap();
    assert_eq!(rep.phase, Phase::Superfluid);
    let pt = ModelParams { chemical_potential: rep.mu, ..p };
    let one = ChainState::from_sites(&[st.site(0)]).unwrap();
    let lin = linearize(&one, &pt).unwrap();
    // Gauge direction i[n, rho] is annihilated.
    let x = &one.raw()[0];
    let d = p.d_max;
    let gauge: Vec<C64> = (0..d * d).map(|k| C64::new(0.0, (k % d) as f64 - (k / d) as f64) * x[k]).collect();
    let out = lin.apply(&[gauge]).unwrap();
    assert!(out[0].iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-6);
    let block0 = lin.block_matrix(0, 16).unwrap();
    let ev = linalg::eigenvalues_hermiticity_preserving(&block0.matrix, d).unwrap();
    let zeros = ev.iter().filter(|z| z.norm() <= 1e-6).count();
    assert!(zeros >= 2, "trace and Goldstone zero modes, got {zeros}");
}

#[test]
fn strong_pump_stays_stable() {
    // on-site rates near the cutoff exceed the plain RK4 limit at dt = 0.005
    let p = ModelParams { pump: 3.0, loss: 1.0, two_body_loss: 1.0, interaction: 1.0, sites: 8, ..Default::default() };
    let st = ChainState::from_sites(&vec![thermal_steady(0.5, 20).unwrap().0; 2]).unwrap();
    let tr = evolve_mf(&st, &p, 5.0, &MfOptions::default(), None).unwrap();
    assert!(tr.max_drift < 1e-10);
    let (st, rep) = find_steady(&p, Model::Two, &MfOptions::default()).unwrap();
    assert_eq!(rep.phase, Phase::Superfluid);
    assert!(rhs_norm(&st, &ModelParams { chemical_potential: rep.mu, ..p }).unwrap() < 1e-9);
    // coherent-state density balance r_p (n + 1) - r_l n - 2 r_t n^2 = 0 gives n ~ 1.82
    assert!((rep.n - 1.82).abs() < 0.1, "{rep:?}");
}

#[test]
fn boundary_bisection_brackets_phase_change() {
    let mk = |u: f64| ModelParams { dephasing: 1.0, interaction: u, sites: 4, d_max: 12, ..Default::default() };
    let opts = MfOptions::default();
    let b = bisect_boundary(mk, Model::One, &opts, 2.0, 8.0, 0.05).unwrap();
    assert!(b.hi - b.lo <= 0.05);
    assert_eq!(b.lo_phase, Phase::Superfluid);
    assert_eq!(find_steady(&mk(b.hi), Model::One, &opts).unwrap().1.phase, Phase::Normal);
    assert!(bisect_boundary(mk, Model::One, &opts, 6.0, 8.0, 0.05).is_err());
}
