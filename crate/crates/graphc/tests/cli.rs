use std::path::PathBuf;
use std::process::{Command, Output};

fn graphc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphc")).args(args).output().unwrap()
}

fn program(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name).display().to_string()
}

fn temp(name: &str, text: &str) -> String {
    let path = std::env::temp_dir().join(format!("graphc-cli-{}-{name}", std::process::id()));
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_prints_stabilized_values() {
    let o = graphc(&["run", &program("stability.gx"), "--fn", "f", "--in", "x=1e-18"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("out0 = 1e-18") || out.contains("out0 = 0.000000000000000001"), "{out}");
    let o = graphc(&["run", &program("stability.gx"), "--fn", "f", "--in", "x=1e-18", "--opt", "none"]);
    assert!(stdout(&o).contains("out0 = 0"), "{}", stdout(&o));
}

#[test]
fn compile_reports_rewrites() {
    let o = graphc(&["compile", &program("stability.gx")]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("fn f:") && out.contains("log1p"), "{out}");
}

#[test]
fn syntax_error_exits_with_one() {
    let path = temp("bad.gx", "input x : f64[];\nfn f(x) -> (log(x);\n");
    let o = graphc(&["compile", &path]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with(&format!("{path}:2:")), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(graphc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(graphc(&["compile", &program("stability.gx"), "--opt", "max"]).status.code(), Some(1));
    assert_eq!(graphc(&["run", &program("stability.gx"), "--fn", "g"]).status.code(), Some(1));
    assert_eq!(graphc(&["--help"]).status.code(), Some(0));
}

#[test]
fn grad_check_passes_and_fails() {
    let o = graphc(&["grad-check", &program("logreg.gx"), "--fn", "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("max relative error"));
    // |x| written as a square root has no derivative at zero.
    let path = temp("sqrt.gx", "input x : f64[];\nfn f(x) -> (pow(x * x, 0.5));\n");
    let o = graphc(&["grad-check", &path, "--fn", "f", "--in", "x=0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn bench_writes_json() {
    let path = temp("bench.json", "");
    let o = graphc(&["bench", "--model", "logreg", "--batch", "1,4", "--steps", "2", "--reps", "2", "--json", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 4);
    let results = graphc::report::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(results.len(), 8);
}
