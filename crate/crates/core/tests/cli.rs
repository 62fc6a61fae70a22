use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn sfcdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfcdd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sfcdd-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn weak_scale_reruns_are_byte_identical() {
    let (a, b) = (scratch("a"), scratch("b"));
    for dir in [&a, &b] {
        let out = sfcdd(&[
            "weak-scale",
            "--p",
            "2..16",
            "--method",
            "richardson,pcg",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let ra = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.csv")).unwrap());
    let text = String::from_utf8(ra).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for col in [
        "d",
        "levels",
        "s",
        "p",
        "gamma",
        "q",
        "variant",
        "weighting",
        "method",
        "seed",
    ] {
        assert!(header.split(',').any(|h| h == col), "missing column {col}");
    }
    assert_eq!(lines.count(), 8);
    assert!(a.join("timing.csv").exists());
    let summary = fs::read_to_string(a.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 7"));
    let _ = fs::remove_dir_all(&a);
    let _ = fs::remove_dir_all(&b);
}

#[test]
fn config_file_with_flag_override() {
    let dir = scratch("cfg");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        "# overlap sweep\ngamma = 0.5, 1\nP = 4\nS = 5\nmethod = richardson\n",
    )
    .unwrap();
    let out = sfcdd(&[
        "gamma-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "pcg",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r.contains(",pcg,") && r.contains(",ok,")));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn solve_echoes_config_and_history() {
    let out = sfcdd(&["solve", "--levels", "3,3", "--p", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# config {"));
    assert!(text.contains("\"levels\":[3,3]"));
    assert!(text.contains("k,energy_error,residual"));
}

#[test]
fn sfc_check_rows() {
    let out = sfcdd(&[
        "sfc-check",
        "--dim",
        "3",
        "--level",
        "2",
        "--samples",
        "500",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "d,n,bijective,adjacent,holder_est,holder_bound");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("3,1,true,true,"));
}

#[test]
fn combine_writes_plan_and_error_summary() {
    let dir = scratch("combine");
    let out = sfcdd(&[
        "combine",
        "--dim",
        "2",
        "--level",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let plan = fs::read_to_string(dir.join("plan.csv")).unwrap();
    assert_eq!(plan.lines().count(), 1 + 7);
    let summary = fs::read_to_string(dir.join("error_summary.json")).unwrap();
    assert!(summary.contains("max_abs"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn errors_give_nonzero_exit_and_json_line() {
    let out = sfcdd(&["weak-scale", "--variant", "sideways"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.trim_start().starts_with("{\"error\":"), "{err}");
}
