use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kernel-lmi");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn stability_exit_codes() {
    let o = run(&["stability", "--r", "0.13"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim_end().ends_with("feasible"));
    assert!(stdout(&o).contains("variables = 12"));

    let o = run(&["stability", "--r", "0.4", "--condition", "b"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("variables = 24"));
    assert!(stdout(&o).trim_end().ends_with("infeasible"));
}

#[test]
fn transform_file_and_problem_dump() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.txt");
    std::fs::write(&g, "1 0.5 0.2\n0 2 -1\n0 0 2\n").unwrap();
    let dump = dir.path().join("p.json");
    let o = run(&[
        "stability",
        "--r",
        "0.65",
        "--G",
        g.to_str().unwrap(),
        "--dump-problem",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let p = kernel_lmi::stability::LmiProblem::from_json(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(p.variable_count(), 12);

    std::fs::write(&g, "1 0\n0 1\n").unwrap();
    let o = run(&["stability", "--G", g.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn errors_exit_two() {
    assert_eq!(run(&["--system", "/nonexistent/system.cfg", "gram"]).status.code(), Some(2));
    assert_eq!(run(&["stability", "--r", "0"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["bound"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[system]\nr = 0.1\n").unwrap();
    let o = run(&["--system", cfg.to_str().unwrap(), "gram"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn gram_prints_blocks() {
    let o = run(&["gram", "--r", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    for key in ["gram =", "gram_inv =", "cond =", "orthonormalizer ="] {
        assert!(s.contains(key), "{key} missing from\n{s}");
    }
}

#[test]
fn bound_with_signal_section() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = kernel_lmi::config::RunConfig::paper51().to_toml().unwrap();
    cfg.push_str("\n[signal]\npoly = [[1.0, -0.5, 2.0]]\nsines = [[0, 0.3, 7.0, 0.2]]\n");
    let path = dir.path().join("sig.cfg");
    std::fs::write(&path, cfg).unwrap();
    for kind in ["gram", "free", "corollary2"] {
        let o = run(&["--system", path.to_str().unwrap(), "bound", "--kind", kind]);
        assert_eq!(o.status.code(), Some(0), "{kind}: {}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("pass"));
    }
}

#[test]
fn verify_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = run(&["verify", "--suite", "gram", "--count", "20", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 20);
}

#[test]
fn sweep_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = run(&["sweep", "--grid", "0.1:0.05:0.7", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("r,verdict,min_margin"));
    assert_eq!(csv.lines().count(), 14);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v["condition"], "a");
    assert!(stdout(&o).contains("intervals = [0.1, 0.15], [0.65, 0.7]"), "{}", stdout(&o));
}

#[test]
fn simulate_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = run(&[
        "simulate",
        "--r",
        "1.178",
        "--steps-per-delay",
        "16",
        "--initial",
        "constant",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x1,y1"));
    assert_eq!(csv.lines().count(), 1 + 40 * 16 + 1);
    assert!(stdout(&o).contains("decay_ratio"));
}
