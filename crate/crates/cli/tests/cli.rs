use std::process::{Command, Output};

fn sgfbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgfbsde")).args(args).output().expect("binary runs")
}

#[test]
fn solve_writes_csv_with_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("brownian.csv");
    let o = sgfbsde(&[
        "solve",
        "--problem",
        "brownian",
        "--k",
        "2",
        "--N",
        "4,8,16",
        "--p",
        "4",
        "--pq",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--no-runtime",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "problem,k,p,pq,N,err_y,err_z,runtime_s,cr_y,cr_z");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("brownian,2,4,3,4,"));
    assert!(lines[3].starts_with("brownian,2,4,3,16,"));
}

#[test]
fn solve_to_stdout_is_repeatable() {
    let args = ["solve", "--problem", "example2:q=2", "--k", "2", "--N", "4,8", "--no-runtime", "--threads", "2"];
    let a = sgfbsde(&args);
    let b = sgfbsde(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stderr).contains("CR_Y"));
}

#[test]
fn point_norm_is_accepted() {
    let o = sgfbsde(&["solve", "--problem", "example2:q=2", "--N", "4,8", "--norm", "point:0.1,-0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_arguments_exit_2() {
    for args in [
        vec!["solve", "--problem", "example7"],
        vec!["solve", "--problem", "example1", "--k", "7"],
        vec!["solve", "--problem", "example2:q=3", "--N", "16,8"],
        vec!["solve", "--problem", "example2:q=3", "--norm", "l2"],
        vec!["validate", "--problem", "example3:q=9"],
        vec!["frobnicate"],
    ] {
        let o = sgfbsde(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unwritable_output_is_reported_with_path() {
    let o = sgfbsde(&["solve", "--problem", "brownian", "--N", "4", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/x.csv"));
}

#[test]
fn divergence_exits_3_after_writing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div.csv");
    let o = sgfbsde(&[
        "solve",
        "--problem",
        "example3:q=2",
        "--N",
        "4,8",
        "--tol",
        "1e-300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("NaN"));
}

#[test]
fn validate_reports_checks() {
    let o = sgfbsde(&["validate", "--problem", "example2:q=3", "--bound-samples", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("feynman-kac residual"));
    assert!(text.contains("terminal consistency"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn degenerate_problems_validate() {
    for id in ["constant:q=2", "brownian"] {
        let o = sgfbsde(&["validate", "--problem", id, "--bound-samples", "1000"]);
        assert!(o.status.success(), "{id}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn inconsistent_generator_fails_validation_with_exit_4() {
    let o = sgfbsde(&["validate", "--problem", "example3:q=3:M=3", "--bound-samples", "1000"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn scaling_emits_one_row_per_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scaling.csv");
    let o = sgfbsde(&["scaling", "--problem", "example2", "--q", "2,3", "--N", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "q,p,pq,N,grid_points,quad_points,tensor_points,runtime_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,3,3,4,"));
    assert!(lines[2].starts_with("3,4,4,4,"));
}
