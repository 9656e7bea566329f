use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn porous(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porous"))
        .args(args)
        .env_remove("POROUS_LOG")
        .output()
        .expect("spawn porous")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(cfg: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = scenario(cfg);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    porous(&args)
}

/// Minimal legacy-VTK reader: point count, cell connectivity and the three
/// scalar arrays.
struct Vtk {
    points: Vec<[f64; 3]>,
    cells: Vec<Vec<usize>>,
    scalars: Vec<(String, Vec<f64>)>,
}

fn read_vtk(text: &str) -> Vtk {
    let mut lines = text.lines();
    let mut next = || lines.next().expect("truncated VTK");
    assert_eq!(next(), "# vtk DataFile Version 3.0");
    next();
    assert_eq!(next(), "ASCII");
    assert_eq!(next(), "DATASET UNSTRUCTURED_GRID");
    let header: Vec<&str> = next().split_whitespace().collect();
    assert_eq!((header[0], header[2]), ("POINTS", "double"));
    let n: usize = header[1].parse().unwrap();
    let points = (0..n)
        .map(|_| {
            let v: Vec<f64> = next().split_whitespace().map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    let header: Vec<usize> = next().split_whitespace().skip(1).map(|s| s.parse().unwrap()).collect();
    let cells: Vec<Vec<usize>> = (0..header[0])
        .map(|_| next().split_whitespace().map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(cells.iter().map(Vec::len).sum::<usize>(), header[1]);
    assert_eq!(next(), format!("CELL_TYPES {}", cells.len()));
    for _ in 0..cells.len() {
        assert_eq!(next(), "5");
    }
    assert_eq!(next(), format!("POINT_DATA {n}"));
    let mut scalars = Vec::new();
    for _ in 0..3 {
        let name = next().split_whitespace().nth(1).unwrap().to_string();
        assert_eq!(next(), "LOOKUP_TABLE default");
        scalars.push((name, (0..n).map(|_| next().parse().unwrap()).collect()));
    }
    Vtk { points, cells, scalars }
}

#[test]
fn default_run_writes_diagnostics_snapshots_and_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("default.cfg", dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,t,min_u,max_u"));
    let width = header.split(',').count();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.split(',').count() == width));
    // snapshot_every = 10 in the scenario file: levels 0, 10, …, 100.
    let snaps: Vec<_> = (0..=100).step_by(10).map(|k| dir.path().join(format!("snapshot_{k:05}.vtk"))).collect();
    assert!(snaps.iter().all(|p| p.exists()));
    let vtk = read_vtk(&fs::read_to_string(&snaps[10]).unwrap());
    assert_eq!(vtk.points.len(), 17 * 17);
    assert_eq!(vtk.cells.len(), 2 * 16 * 16);
    assert!(vtk.cells.iter().all(|c| c[0] == 3 && c[1..].iter().all(|&i| i < 289)));
    let names: Vec<&str> = vtk.scalars.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["u", "w", "theta"]);
    assert!(dir.path().join("mesh.txt").exists());
}

#[test]
fn snapshot_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("oracle.cfg", dir.path(), &["--snapshot-every", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut vtk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".vtk"))
        .collect();
    vtk.sort();
    assert_eq!(vtk, ["snapshot_00000.vtk", "snapshot_00001.vtk"]);
}

#[test]
fn diagnostics_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&run_into("shifted.cfg", d.path(), &[])), 0);
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("diagnostics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn two_triangle_initial_snapshot_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into("oracle.cfg", dir.path(), &[])), 0);
    let got = fs::read_to_string(dir.path().join("snapshot_00000.vtk")).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_triangle_initial.vtk")).unwrap();
    assert_eq!(got, golden);
    let vtk = read_vtk(&got);
    assert_eq!(vtk.cells, [vec![3, 0, 1, 3], vec![3, 0, 3, 2]]);
    // u = -1 - x - y/2, with the left edge pinned to the boundary value -1.
    assert_eq!(vtk.scalars[0].1, [-1.0, -2.0, -1.0, -2.5]);
    assert_eq!(vtk.points[3], [1.0, 1.0, 0.0]);
}

#[test]
fn newton_budget_exhaustion_exits_one_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("newton_failure.cfg", dir.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Newton did not converge"), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn overshoot_fails_strict_but_not_report_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("convection_overshoot.cfg", dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bounds-w"));
    let o = run_into("convection_overshoot.cfg", dir.path(), &["--check-invariants", "report"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED"));
}

#[test]
fn validate_accepts_bundled_and_rejects_broken_sets() {
    let ok = porous(&["validate", scenario("default.cfg").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    for (cfg, clause) in [
        ("broken_constant_b.cfg", "b-strictly-monotone"),
        ("broken_lambda.cfg", "lambda-positive"),
    ] {
        let o = porous(&["validate", scenario(cfg).to_str().unwrap()]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains(clause), "{cfg}: {}", stderr(&o));
    }
    let narrow = porous(&[
        "validate",
        scenario("default.cfg").to_str().unwrap(),
        "--probe-lo",
        "-5",
        "--probe-hi",
        "-10",
    ]);
    assert_eq!(code(&narrow), 64);
}

#[test]
fn oracle_comparison_passes() {
    let o = porous(&["oracle", scenario("oracle.cfg").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max nodal deviation"));
    let big = porous(&["oracle", scenario("default.cfg").to_str().unwrap()]);
    assert_eq!(code(&big), 64);
}

#[test]
fn usage_errors_exit_64_and_help_exits_zero() {
    assert_eq!(code(&porous(&["frobnicate"])), 64);
    assert_eq!(code(&porous(&["run"])), 64);
    assert_eq!(code(&porous(&["run", "/nonexistent/scenario.cfg"])), 64);
    assert_eq!(code(&porous(&["--help"])), 0);
    assert_eq!(code(&porous(&["--version"])), 0);
}

#[test]
fn malformed_config_reports_line_and_exits_64() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("oracle.cfg")).unwrap().replace("tau = 1/10", "tau = -1");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, text).unwrap();
    let o = porous(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("tau must be positive (line"), "{}", stderr(&o));
}
