mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quadgroup::data::{save_dataset, Dataset};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_quadgroup"));
    c.env_remove("QUADGROUP_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data with signal on the first three covariates.
fn write_data(dir: &Path, seed: u64, n: usize, p: usize, signal: f64) -> PathBuf {
    let mut r = common::rng(seed);
    let x = common::gaussian_matrix(&mut r, n, p);
    let mut y = common::gaussian_vector(&mut r, n);
    for j in 0..3 {
        y.scaled_add(signal, &x.column(j));
    }
    let path = dir.join("data.csv");
    save_dataset(&path, &Dataset::new(x, y).unwrap()).unwrap();
    path
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("not JSON ({e}): {s}"))
}

#[test]
fn estimate_prints_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 1, 120, 40, 0.8);
    let o = run(&["estimate", "--data", data.to_str().unwrap(), "--indices", "1,2,3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&stdout(&o));
    for key in [
        "mode",
        "group",
        "q_hat",
        "v_hat",
        "plug_in",
        "correction",
        "statistic",
        "p_value",
        "ci",
        "tau",
        "lambda_effective",
        "sigma_hat",
        "n",
        "p",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["q_hat"].as_f64().unwrap() > 0.5);
    assert!(stderr(&o).contains("manifest:"));
}

#[test]
fn test_and_ci_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 2, 100, 30, 0.8);
    let group = dir.path().join("g.txt");
    fs::write(&group, "1\n2\n3\n").unwrap();
    let d = data.to_str().unwrap();
    let g = group.to_str().unwrap();
    let t = run(&["test", "--data", d, "--group", g]);
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    assert_eq!(json(&stdout(&t))["reject"], true);
    let out = dir.path().join("ci");
    let c = run(&[
        "ci",
        "--data",
        d,
        "--group",
        g,
        "--level",
        "0.9",
        "--truncate",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(c.status.code(), Some(0), "{}", stderr(&c));
    let v = json(&stdout(&c));
    assert_eq!(v["level"], 0.9);
    assert!(v["ci"][0].as_f64().unwrap() >= 0.0);
    let m = json(&fs::read_to_string(out.join("manifest.json")).unwrap());
    assert_eq!(m["command"], "ci");
    assert!(out.join("result.json").exists());
}

#[test]
fn general_mode_needs_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 3, 80, 10, 0.5);
    let d = data.to_str().unwrap();
    let o = run(&["estimate", "--data", d, "--indices", "1,2", "--mode", "general"]);
    assert_eq!(o.status.code(), Some(2));
    let a = dir.path().join("a.csv");
    fs::write(&a, "2,0.5\n0.5,1\n").unwrap();
    let o = run(&[
        "estimate",
        "--data",
        d,
        "--indices",
        "1,2",
        "--mode",
        "general",
        "--weight",
        a.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&stdout(&o))["mode"], "general");
}

#[test]
fn bad_group_file_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 4, 30, 5, 0.0);
    let group = dir.path().join("g.txt");
    fs::write(&group, "1\n2\nthree\n").unwrap();
    let o = run(&[
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--group",
        group.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn invalid_alpha_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 5, 30, 5, 0.0);
    let o = run(&[
        "test",
        "--data",
        data.to_str().unwrap(),
        "--indices",
        "1",
        "--alpha",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blank_cell_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "x1,x2,y\n1,2,3\n4,5,\n7,8,9\n").unwrap();
    let o = run(&["estimate", "--data", path.to_str().unwrap(), "--indices", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2, column 3"), "{}", stderr(&o));
}

#[test]
fn hiertest_on_null_data_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 6, 100, 12, 0.0);
    let out = dir.path().join("h");
    let o = run(&[
        "hiertest",
        "--data",
        data.to_str().unwrap(),
        "--linkage",
        "average",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("findings.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("members,p_raw,p_tilde,p_adjusted"));
    assert_eq!(csv.lines().count(), 1);
    let m = json(&fs::read_to_string(out.join("manifest.json")).unwrap());
    assert_eq!(m["config"]["hiertest"]["linkage"], "average");
    assert!(out.join("tree.json").exists());
}

#[test]
fn hiertest_finds_signal_and_accepts_tree() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 7, 200, 12, 1.0);
    let out = dir.path().join("h");
    let d = data.to_str().unwrap();
    let o = run(&["hiertest", "--data", d, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("findings.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    let out2 = dir.path().join("h2");
    let tree = out.join("tree.json");
    let o = run(&[
        "hiertest",
        "--data",
        d,
        "--tree",
        tree.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out2.join("findings.csv")).unwrap(), csv);
}

#[test]
fn interact_and_herit() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(8);
    let (n, p) = (150, 10);
    let x = common::gaussian_matrix(&mut r, n, p);
    let noise = common::gaussian_vector(&mut r, n);
    let path = dir.path().join("d.csv");
    let mut body = String::from("treat,");
    body += &(1..=p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    body += ",y\n";
    for i in 0..n {
        let t = (i % 2) as f64;
        let y = x[[i, 0]] + t * x[[i, 1]] + noise[i];
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        body += &format!("{t},{},{y}\n", row.join(","));
    }
    fs::write(&path, body).unwrap();
    let d = path.to_str().unwrap();
    let o = run(&["interact", "--data", d, "--treatment-col", "treat"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&stdout(&o));
    assert_eq!(v["p"], 2 * p);
    assert_eq!(v["degenerate"], false);
    assert_eq!(v["reject"], true);

    let groups = dir.path().join("groups.txt");
    fs::write(&groups, "1,2,3,4,5\n6,7,8,9,10\n").unwrap();
    let o = run(&[
        "herit",
        "--data",
        d,
        "--response",
        "y",
        "--groups",
        groups.to_str().unwrap(),
        "--normalize",
    ]);
    // the treatment column is a covariate here, so p = 11
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&stdout(&o));
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v[0]["proportion"].is_f64());
}

#[test]
fn simulate_writes_tables_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--scenario",
            "dense",
            "--n",
            "80",
            "--p",
            "200",
            "--delta",
            "0.06",
            "--reps",
            "2",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in [
        "manifest.json",
        "report.json",
        "decision.csv",
        "coverage.csv",
        "bias.csv",
    ] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let dec = fs::read_to_string(a.join("decision.csv")).unwrap();
    assert_eq!(dec.lines().next(), Some("delta,n,method,value"));
    let m = json(&fs::read_to_string(a.join("manifest.json")).unwrap());
    assert_eq!(m["seed"], 3);
    assert!(m.get("c_lambda").is_some() && m.get("version").is_some());
    assert!(a.join("runtime.json").exists());
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = bin()
        .env("QUADGROUP_SEED", "77")
        .args([
            "simulate",
            "--scenario",
            "highcorr",
            "--n",
            "40",
            "--p",
            "20",
            "--reps",
            "1",
            "--seed",
            "3",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&fs::read_to_string(out.join("manifest.json")).unwrap());
    assert_eq!(m["seed"], 77);
    let o = bin()
        .env("QUADGROUP_SEED", "x")
        .args(["simulate", "--scenario", "dense", "--out", "y"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_scenario_exits_2() {
    let o = run(&["simulate", "--scenario", "sparse", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_subcommands() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let h = stdout(&o);
    for s in ["estimate", "test", "ci", "hiertest", "interact", "herit", "simulate"] {
        assert!(h.contains(s), "{s}");
    }
}
