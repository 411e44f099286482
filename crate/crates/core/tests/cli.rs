use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use harmonic_swarm::cli::presets::PRESET_NAMES;

fn hswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hswarm"))
        .args(args)
        .output()
        .expect("run hswarm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_preset_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    for name in PRESET_NAMES {
        let out = tmp.path().join(name);
        let o = hswarm(&["--preset", name, "--out", out.to_str().unwrap()]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(out.join("manifest.txt").exists());
        assert!(out.join("summary.txt").exists());
    }
    let summary = fs::read_to_string(tmp.path().join("fig7/summary.txt")).unwrap();
    assert!(
        summary.contains("cells_differing_from_approximation 0"),
        "{summary}"
    );
}

#[test]
fn manifest_rerun_reproduces_the_csv_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let o = hswarm(&[
        "--preset",
        "fig3",
        "--seed",
        "11",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let manifest = first.join("manifest.txt");
    let o = hswarm(&[
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = csvs(&first);
    assert!(!a.is_empty());
    assert_eq!(a, csvs(&second));
    assert!(fs::read_to_string(&manifest).unwrap().contains("seed = 11"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&hswarm(&["--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&hswarm(&["--preset", "fig6"])), 2);
    let cfg = tmp.path().join("bad.txt");
    fs::write(
        &cfg,
        "[scenario]\nmode = eigen\nwobble = 3\n[environment]\nline = 4\n",
    )
    .unwrap();
    assert_eq!(
        code(&hswarm(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        2
    );
    assert_eq!(code(&hswarm(&["--no-such-flag"])), 2);
}

#[test]
fn infeasible_design_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.txt");
    fs::write(
        &cfg,
        "[scenario]\nmode = dynamics\n[environment]\nline = 20\n\
         [design]\nharmonic = 10\nmethod = optimized\norder = 2\nepsilon = 0.9\nauto_epsilon = false\n",
    )
    .unwrap();
    let o = hswarm(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn step_limit_is_partial_unless_allowed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.txt");
    fs::write(
        &cfg,
        "[scenario]\nmode = dynamics\nstart = 1\n[environment]\nline = 20\n\
         [design]\nharmonic = 5\nmethod = closed-form\nbeta = 0.7\n[dynamics]\nmax_steps = 10\nsnapshots = 0,5\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(code(&hswarm(&args)), 4);
    let mut allowed = args.to_vec();
    allowed.push("--allow-partial");
    assert_eq!(code(&hswarm(&allowed)), 0);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("t,v0,v1"));
    assert!(rows[1].starts_with("0,1.0000000000000000e0"));
}

#[test]
fn grid_harmonics_render_with_obstacles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = hswarm(&[
        "--preset",
        "fig7",
        "--mode",
        "eigen",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eigen = fs::read_to_string(out.join("eigen.csv")).unwrap();
    assert_eq!(eigen.lines().count(), 96);
    let pic = fs::read_to_string(out.join("harmonic_1.txt")).unwrap();
    assert!(pic.starts_with("grid 10 12\n"));
    assert_eq!(pic.matches('%').count(), 25);
    // the steady state is positive everywhere
    assert!(!pic.contains('-') && !pic.contains('='));
}
