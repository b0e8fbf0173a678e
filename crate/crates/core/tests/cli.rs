use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.market")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchmarket")).args(args).output().expect("binary runs")
}

fn run_in(cmd: &str, market: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "-m", market.to_str().unwrap(), "-o", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("missing `{key}` in\n{text}"))
        .to_string()
}

fn single_error_line(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: "), "{err}");
    lines[0].to_string()
}

#[test]
fn revenue_solve_writes_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("solve", &example(), dir.path(), &["--objective", "revenue"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("solution.txt")).unwrap();
    let ds: f64 = field(&text, "delta_S").parse().unwrap();
    let db: f64 = field(&text, "delta_B").parse().unwrap();
    assert!((ds - 3.5).abs() <= 1e-6);
    assert!((db - 95.0 / 29.0).abs() <= 1e-6);
    assert!(text.contains("delta_S = 3.500000\n"));
    assert!(text.contains("delta_B = 3.275862\n"));
    assert_eq!(field(&text, "pattern"), "bottom-eliminated / bottom-eliminated");
    for name in ["rule_seller.csv", "rule_buyer.csv", "payments_seller.csv", "payments_buyer.csv"] {
        let csv = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(csv.lines().count(), 513, "{name}");
        assert!(!csv.contains('\r'));
    }
    let rule = fs::read_to_string(dir.path().join("rule_seller.csv")).unwrap();
    assert!(rule.starts_with("lambda,tau\n3.5,10\n"));
}

#[test]
fn welfare_solve_pattern_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("solve", &example(), dir.path(), &["--objective", "welfare"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("solution.txt")).unwrap();
    assert_eq!(field(&text, "pattern"), "complete-matched / complete-matched");
    let pay = fs::read_to_string(dir.path().join("payments_seller.csv")).unwrap();
    assert!(pay.lines().skip(1).all(|l| l.ends_with(",2.75")), "{pay}");
}

#[test]
fn verify_after_solve_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in("solve", &example(), dir.path(), &[]).status.code(), Some(0));
    let o = run_in("verify", &example(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let audit = fs::read_to_string(dir.path().join("audit.txt")).unwrap();
    assert_eq!(audit.lines().last(), Some("PASS"));
    assert!(audit.contains("source = files"));
    for side in ["S", "B"] {
        let line = audit.lines().find(|l| l.starts_with(&format!("ic_max_gain_{side} = "))).unwrap();
        let v: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(v <= 1e-6);
    }
}

#[test]
fn verify_flags_tampered_payments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in("solve", &example(), dir.path(), &["--objective", "welfare"]).status.code(), Some(0));
    let path = dir.path().join("payments_seller.csv");
    let csv = fs::read_to_string(&path).unwrap();
    let tampered: String = csv
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{},{}\n", l.split(',').next().unwrap(), 3.0) })
        .collect();
    fs::write(&path, tampered).unwrap();
    let o = run_in("verify", &example(), dir.path(), &["--objective", "welfare"]);
    assert_eq!(o.status.code(), Some(1));
    let audit = fs::read_to_string(dir.path().join("audit.txt")).unwrap();
    assert_eq!(audit.lines().last(), Some("FAIL"));
}

#[test]
fn verify_without_files_solves() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("verify", &example(), dir.path(), &["--objective", "welfare", "--audit-n", "51"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(dir.path().join("audit.txt")).unwrap().contains("source = solved"));
}

#[test]
fn outputs_are_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(run_in("solve", &example(), d.path(), &[]).status.code(), Some(0));
    }
    for name in ["rule_seller.csv", "rule_buyer.csv", "payments_seller.csv", "payments_buyer.csv", "solution.txt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--objective", "welfare", "--n-sellers", "300", "--n-buyers", "200", "--seed", "9"];
    let o = run_in("simulate", &example(), dir.path(), &args);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(csv.lines().count(), 501);
    assert!(csv.starts_with("side,lambda,matched_mass,utility,payment\n"));
    let summary = fs::read_to_string(dir.path().join("sim_summary.txt")).unwrap();
    assert_eq!(field(&summary, "seed"), "9");
    let again = tempfile::tempdir().unwrap();
    run_in("simulate", &example(), again.path(), &args);
    assert_eq!(csv, fs::read_to_string(again.path().join("sim.csv")).unwrap());
}

#[test]
fn validate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "-m", example().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("market ok"));
    let o = run_in("report", &example(), dir.path(), &["--grid-n", "64"]);
    assert_eq!(o.status.code(), Some(0));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("complete-matched") && report.contains("bottom-eliminated"));
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example()).unwrap();

    let reversed = dir.path().join("reversed.market");
    fs::write(&reversed, text.replacen("support = [1, 10]", "support = [10, 1]", 1)).unwrap();
    let o = run(&["validate", "-m", reversed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(single_error_line(&o).contains("lo < hi"));

    let no_buyer = dir.path().join("no_buyer.market");
    let cut: String = text.split("[buyer]").next().unwrap().to_string()
        + "[kernels]\nR_S = \"0.5*lam*x\"\nR_B = \"0.5*lam*x\"\n";
    fs::write(&no_buyer, cut).unwrap();
    let o = run(&["solve", "-m", no_buyer.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(single_error_line(&o).contains("[buyer]"));

    let bad_expr = dir.path().join("bad_expr.market");
    fs::write(&bad_expr, text.replace("0.5*lam*x", "0.5**x")).unwrap();
    let o = run(&["validate", "-m", bad_expr.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = single_error_line(&o);
    assert!(line.contains(":14:"), "{line}");

    let o = run(&["solve", "-m", "/definitely/not/here.market"]);
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o);

    let o = run(&["solve", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o);

    let o = run(&["solve", "-m", example().to_str().unwrap(), "--grid-n", "4"]);
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o);
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(example()).unwrap();
    // kernel blows up inside the support once lam reaches 5
    let path = dir.path().join("pole.market");
    fs::write(&path, text.replace("0.5*lam*x\"", "0.5*lam*x + 1/(lam - 5)^2*0\"")).unwrap();
    let o = run(&["solve", "-m", path.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    single_error_line(&o);
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
}
