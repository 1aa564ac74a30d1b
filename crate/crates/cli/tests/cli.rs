use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn legstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_legstar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn solve_exponential() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "exp.json", r#"{"n": 1, "a": [["1"]]}"#);
    let out = legstar(&["solve", "--input", &input]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["t", "u_0_0", "ref_0_0", "abs_error"]);
    assert_eq!(rows.len(), 12);
    for r in &rows[1..] {
        let t: f64 = r[0].parse().unwrap();
        let u: f64 = r[1].parse().unwrap();
        let err: f64 = r[3].parse().unwrap();
        assert!(err <= 1e-9);
        assert!((u - t.exp()).abs() <= 1e-9);
    }
}

#[test]
fn solve_is_deterministic_and_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "rot.json",
        r#"{"n": 2, "a": [["0", "1"], ["-(1+t^2)", "0"]], "m": 30}"#,
    );
    let args = [
        "solve",
        "--input",
        &input,
        "--no-oracle",
        "--grid",
        "0,0.5,1",
        "--m",
        "24",
    ];
    let a = legstar(&args);
    let b = legstar(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let rows = csv_rows(&a);
    assert_eq!(rows[0], ["t", "u_0_0", "u_0_1", "u_1_0", "u_1_1"]);
    assert_eq!(rows.len(), 4);
    assert!(rows[1][1].starts_with("1.0000000000000"));

    let output = dir.path().join("out.csv");
    let out = legstar(&[
        "solve",
        "--input",
        &input,
        "--neumann",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("neumann gap"));
    assert!(fs::read_to_string(&output).unwrap().starts_with("t,u_0_0"));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"n\": 1,\n \"a\": [[\"1\"]");
    let out = legstar(&["solve", "--input", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let schema = write(
        dir.path(),
        "s.json",
        r#"{"n": 2, "a": [["0","1","2"],["0","1","2"]]}"#,
    );
    let out = legstar(&["solve", "--input", &schema]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("A must be square"));

    let out = legstar(&["solve", "--input", "/nonexistent/p.json"]);
    assert_eq!(out.status.code(), Some(2));

    let ok = write(dir.path(), "ok.json", r#"{"n": 1, "a": [["1"]]}"#);
    let out = legstar(&["solve", "--input", &ok, "--grid", "0.5,0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = legstar(&[
        "solve",
        "--input",
        &ok,
        "--output",
        "/nonexistent/dir/x.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = legstar(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "log.json",
        r#"{"n": 1, "a": [["log(t - 0.5)"]]}"#,
    );
    let out = legstar(&["solve", "--input", &input]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("entry (0, 0) of A"));
}

#[test]
fn convergence_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "exp.json", r#"{"n": 1, "a": [["1"]]}"#);
    let out = legstar(&[
        "convergence",
        "--input",
        &input,
        "--m-list",
        "8,16,24,32,40",
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["m", "max_error", "solve_seconds"]);
    let errs: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(errs.len(), 5);
    assert!(errs[1] < errs[0]);
    assert!(errs.iter().skip(1).all(|e| *e < 1e-9));

    let out = legstar(&["convergence", "--input", &input, "--m-list", "12"]);
    assert_eq!(csv_rows(&out).len(), 2);
    let out = legstar(&["convergence", "--input", &input, "--m-list", "16,8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kernel_dumps() {
    let out = legstar(&["kernel", "--kind", "theta", "--m", "5"]);
    assert!(out.status.success());
    let table = csv_rows(&out);
    assert_eq!(table.len(), 7);
    let first: f64 = table[1][0].parse().unwrap();
    assert_eq!(first, 0.5);
    for (r, row) in table[1..6].iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if r.abs_diff(c) > 1 {
                assert_eq!(v.parse::<f64>().unwrap(), 0.0);
            }
        }
    }

    for args in [["--kind", "pk(2)"], ["--kind", "pk --k 2"]] {
        let mut full = vec!["kernel"];
        full.extend(args.iter().flat_map(|a| a.split(' ')));
        full.extend(["--m", "8"]);
        let out = legstar(&full);
        assert!(out.status.success());
        for (r, row) in rows_of(&out).iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if r.abs_diff(c) > 3 {
                    assert!(v.parse::<f64>().unwrap().abs() < 1e-14);
                }
            }
        }
    }

    let out = legstar(&["kernel", "--kind", "from-expr(exp(t))", "--m", "30"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let footer = text.lines().last().unwrap();
    let rho: f64 = footer.split("rho=").nth(1).unwrap().parse().unwrap();
    assert!(rho > 0.0 && rho < 1.0, "{footer}");

    let out = legstar(&[
        "kernel",
        "--kind",
        "from-expr",
        "--expr",
        "cos(3*t)",
        "--m",
        "12",
    ]);
    assert!(out.status.success());
    let out = legstar(&["kernel", "--kind", "spline", "--m", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = legstar(&["kernel", "--kind", "from-expr(s)", "--m", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

/// Matrix rows without header and footer.
fn rows_of(out: &Output) -> Vec<Vec<String>> {
    let all = csv_rows(out);
    all[1..all.len() - 1].to_vec()
}

#[test]
fn verify_quick_passes() {
    let out = legstar(&["verify", "--level", "quick"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text
        .lines()
        .all(|l| l.starts_with("PASS") || l.starts_with("all ")));
}
