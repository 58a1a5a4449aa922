use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use omgap::fock::{Model, ModelParams};
use omgap::meanfield::{find_steady, mf_spectrum, ChainState, MfOptions};
use omgap::spectra::{gap_report, GapTolerances};

fn omgap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omgap")).args(args).arg("--out").arg(dir).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing_model = omgap(dir.path(), &["spectrum"]);
    assert_eq!(missing_model.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing_model.stderr).contains("model"));
    assert_eq!(omgap(dir.path(), &["spectrum", "--model", "1", "--set", "params.bogus=1"]).status.code(), Some(2));
    assert_eq!(omgap(dir.path(), &["phase-diagram", "--model", "1"]).status.code(), Some(2));
    let bad_axis = ["phase-diagram", "--model", "1", "--set", "grid.axis1={name=\"L\",values=[4]}"];
    assert_eq!(omgap(dir.path(), &bad_axis).status.code(), Some(2));
    assert_eq!(
        omgap(dir.path(), &["spectrum", "--config", "/nonexistent.toml", "--model", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn single_cell_grid_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "phase-diagram",
        "--model",
        "1",
        "--set",
        "L=8",
        "--set",
        "d_max=10",
        "--set",
        "U=4",
        "--set",
        "grid.axis1={name=\"gamma\",min=2,max=3,steps=1}",
        "--set",
        "tolerances.eps_gap=0.01",
    ];
    ok(&omgap(dir.path(), &args));
    let text = fs::read_to_string(dir.path().join("phase_diagram.csv")).unwrap();
    assert!(text.starts_with("axis1,axis2,n0,n,delta_L,delta_OM,type,converged\n"));
    let r = rows(&dir.path().join("phase_diagram.csv"));
    assert_eq!(r.len(), 1);

    let p = ModelParams { dephasing: 2.0, interaction: 4.0, sites: 8, d_max: 10, ..Default::default() };
    let opts = MfOptions { density: Some(0.5), ..MfOptions::default() };
    let (st, rep) = find_steady(&p, Model::One, &opts).unwrap();
    let sp =
        mf_spectrum(&ChainState::from_sites(&[st.site(0)]).unwrap(), &ModelParams { chemical_potential: rep.mu, ..p })
            .unwrap();
    let g = gap_report(&sp.eigenvalues, &GapTolerances::default(), 0.01).unwrap();
    assert_eq!(num(&r[0][0]), 2.0);
    assert_eq!(r[0][1], "");
    assert_eq!(num(&r[0][3]), rep.n);
    assert_eq!(num(&r[0][4]), g.delta_l);
    assert_eq!(num(&r[0][5]), g.delta_om.unwrap());
    assert_eq!(r[0][6], g.spectral_type.map_or(0, |t| t.number()).to_string());
    assert_eq!(r[0][7], "true");
}

#[test]
fn model1_grid_phases_rerun_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "phase-diagram",
        "--model",
        "1",
        "--threads",
        "1",
        "--set",
        "grid.axis1={name=\"gamma\",values=[1,2]}",
        "--set",
        "grid.axis2={name=\"U\",values=[2,4]}",
    ];
    ok(&omgap(dir.path(), &args));
    let path = dir.path().join("phase_diagram.csv");
    let first = fs::read(&path).unwrap();
    let r = rows(&path);
    assert_eq!(r.len(), 4);
    let cell = |g: f64, u: f64| r.iter().find(|x| num(&x[0]) == g && num(&x[1]) == u).unwrap();
    assert!(num(&cell(1.0, 2.0)[2]) > 1e-3, "(1,2) should be superfluid");
    assert!(num(&cell(2.0, 4.0)[2]) <= 1e-6, "(2,4) should be normal");
    // row-major: axis 1 outer
    let order: Vec<(f64, f64)> = r.iter().map(|x| (num(&x[0]), num(&x[1]))).collect();
    assert_eq!(order, vec![(1.0, 2.0), (1.0, 4.0), (2.0, 2.0), (2.0, 4.0)]);

    ok(&omgap(dir.path(), &args));
    assert_eq!(fs::read(&path).unwrap(), first, "rerun must be byte-identical");

    // an interrupted sweep: keep the header and the first two rows, with a
    // hand-marked row that must survive untouched
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines: Vec<&str> = text.lines().take(3).collect();
    let marked = lines[2].replace(",true", ",kept");
    lines[2] = &marked;
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    ok(&omgap(dir.path(), &args));
    let resumed = fs::read_to_string(&path).unwrap();
    assert!(resumed.contains(",kept"), "existing cells are not recomputed");
    assert_eq!(resumed.replace(",kept", ",true"), text);
}

#[test]
fn spectrum_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&omgap(dir.path(), &["spectrum", "--model", "1", "--set", "L=64"]));
    assert_eq!(rows(&dir.path().join("spectrum.csv")).len(), 20 * 20 * 64);
    let gaps = fs::read_to_string(dir.path().join("gaps.csv")).unwrap();
    assert!(gaps.starts_with("delta_L,delta_OM,re_lambda_star,im_lambda_star,type\n"));

    let exact = tempfile::tempdir().unwrap();
    let args = [
        "spectrum",
        "--model",
        "1",
        "--set",
        "spectrum.mode=\"exact\"",
        "--set",
        "spectrum.edge=true",
        "--set",
        "L=6",
        "--set",
        "N=3",
        "--set",
        "kappa=2",
        "--set",
        "U=2",
    ];
    ok(&omgap(exact.path(), &args));
    assert_eq!(rows(&exact.path().join("spectrum.csv")).len(), 3136);
    assert_eq!(rows(&exact.path().join("edge_points.csv")).len(), 3136);
    let est = rows(&exact.path().join("edge_report.csv"));
    assert!(num(&est[0][0]) > 0.0);

    // edge detection from the written spectrum reproduces the estimate
    let again = tempfile::tempdir().unwrap();
    let input = format!("edge.input=\"{}\"", exact.path().join("spectrum.csv").display());
    ok(&omgap(again.path(), &["edge-detect", "--set", &input]));
    assert_eq!(rows(&again.path().join("edge_report.csv")), est);
}

#[test]
fn relaxation_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&omgap(dir.path(), &["relax", "--model", "1", "--set", "gamma=1", "--set", "U=2"]));
    let fit = rows(&dir.path().join("fit.csv"));
    assert!(num(&fit[0][2]) > 0.01, "oscillatory point, Omega = {}", fit[0][2]);
    let series = rows(&dir.path().join("series.csv"));
    assert_eq!(series.len(), 1201);

    let flat = tempfile::tempdir().unwrap();
    let args = [
        "relax",
        "--model",
        "1",
        "--set",
        "relax.delta=0",
        "--set",
        "relax.t_end=5",
        "--set",
        "gamma=2",
        "--set",
        "U=4",
    ];
    ok(&omgap(flat.path(), &args));
    assert!(rows(&flat.path().join("series.csv")).iter().all(|r| num(&r[1]) == 0.0));
    let fit = rows(&flat.path().join("fit.csv"));
    assert_eq!((num(&fit[0][0]), num(&fit[0][2])), (0.0, 0.0));

    let exact = tempfile::tempdir().unwrap();
    let args = [
        "relax",
        "--model",
        "1",
        "--set",
        "relax.mode=\"exact\"",
        "--set",
        "L=6",
        "--set",
        "N=3",
        "--set",
        "kappa=2",
        "--set",
        "U=2",
        "--set",
        "gamma=1",
        "--set",
        "relax.t_end=50",
    ];
    ok(&omgap(exact.path(), &args));
    let series = rows(&exact.path().join("series.csv"));
    assert!((num(&series[0][1]) - 1.0).abs() < 1e-12, "(1,1,1,0,0,0) has modulation 1");
    assert!((num(&series.last().unwrap()[0]) - 50.0).abs() < 1e-9);
}

#[test]
fn gp_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gp-dispersion", "--model", "2", "--set", "r_p=3", "--set", "r_l=1", "--set", "r_t=1", "--set", "U=1"];
    ok(&omgap(dir.path(), &args));
    let d = rows(&dir.path().join("dispersion.csv"));
    assert_eq!(d.len(), 16);
    // k = 0: lambda_- = -2 r_t n0 with n0 = (r_p - r_l) / (2 r_t) = 1
    assert_eq!(num(&d[0][3]), -2.0);

    let s = tempfile::tempdir().unwrap();
    let args = ["gap-scaling", "--model", "1", "--set", "gamma=2", "--set", "U=4", "--set", "scaling.sizes=[8,16,32]"];
    ok(&omgap(s.path(), &args));
    let fit = rows(&s.path().join("scaling_fit.csv"));
    assert!((num(&fit[0][0]) - 2.0).abs() < 0.1);
}

#[test]
fn model2_ladder_with_reference_eps_gap() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "phase-diagram",
        "--model",
        "2",
        "--set",
        "L=128",
        "--set",
        "U=6",
        "--set",
        "grid.axis1={name=\"r\",values=[0,0.05,0.1,0.2]}",
        "--set",
        "tolerances.eps_gap_reference={r=0}",
    ];
    ok(&omgap(dir.path(), &args));
    let types: Vec<String> = rows(&dir.path().join("phase_diagram.csv")).iter().map(|r| r[6].clone()).collect();
    assert_eq!(types, ["3", "1", "2", "2"]);
}
