mod common;

use common::*;
use graphc_core::random::{random_graph, RandomGraphConfig};
use graphc_core::rewrite::{builtin_rules, check_semantics_with, Stage, optimize, optimize_with, Config, Level, SemanticsConfig};
use graphc_core::vm::{compile, Options};
use graphc_core::{builder as b, Graph, Op, Tensor, Var};
use rand::Rng;

fn run(g: &Graph, level: Level, ins: Vec<Tensor>) -> Vec<Tensor> {
    compile(g, Options::default().level(level)).unwrap().call(ins).unwrap()
}

/// `level` without the stabilization rules, which change results exactly
/// where the original expression loses precision.
fn exact(level: Level) -> Config {
    builtin_rules()
        .iter()
        .filter(|r| r.stage == Stage::Stabilize)
        .fold(Config::new(level), |c, r| c.without(r.name))
}

#[test]
fn random_graphs_keep_their_values() {
    let mut r = rng(21);
    let mut rewritten = 0;
    for trial in 0..200 {
        let cfg = RandomGraphConfig { n_ops: r.gen_range(3..16), unknown_rows: trial % 2 == 0, ..Default::default() };
        let g = random_graph(&mut r, &cfg);
        for level in [Level::StabilizeOnly, Level::Default] {
            let (h, report) = optimize_with(&g, &exact(level));
            rewritten += (report.total() > 0) as usize;
            let sc = SemanticsConfig { trials: 5, tol: 1e-12, seed: trial, floor: 1e-8 };
            let rep = check_semantics_with(&g, &h, &sc).unwrap();
            assert!(rep.passed(), "trial {trial} at {level}: {:?}", rep.failures);
        }
    }
    assert!(rewritten > 200, "rewrites fired on only {rewritten} runs");
}

#[test]
fn log1p_of_tiny_argument() {
    let x = f64_in("x", &[]);
    let g = Graph::new(vec![x.clone()], vec![b::log(&b::add(&Var::scalar(1.0), &x).unwrap()).unwrap()]);
    let ins = vec![Tensor::scalar(1e-18)];
    assert_eq!(run(&g, Level::None, ins.clone())[0].item().unwrap(), 0.0);
    // Correctly rounded ln(1 + 1e-18), worked out to 80 digits.
    let oracle = f64::from_bits(0x3c3_2725dd1d243ac);
    let got = run(&g, Level::StabilizeOnly, ins)[0].item().unwrap();
    assert!((got.to_bits() as i64 - oracle.to_bits() as i64).abs() <= 1, "{got:e} vs {oracle:e}");
}

#[test]
fn log_sigmoid_of_large_negative_argument() {
    let x = f64_in("x", &[]);
    let g = Graph::new(vec![x.clone()], vec![b::log(&b::sigmoid(&x).unwrap()).unwrap()]);
    let ins = vec![Tensor::scalar(-40.0)];
    assert_eq!(run(&g, Level::None, ins.clone())[0].item().unwrap(), f64::NEG_INFINITY);
    let got = run(&g, Level::StabilizeOnly, ins)[0].item().unwrap();
    assert!(got.is_finite());
    // -40 - ln(1 + e^-40) rounds to -40.
    assert_eq!(got, -40.0);
}

#[test]
fn stabilization_can_be_disabled_per_rule() {
    let x = f64_in("x", &[]);
    let g = Graph::new(vec![x.clone()], vec![b::log(&b::add(&Var::scalar(1.0), &x).unwrap()).unwrap()]);
    let (h, report) = optimize_with(&g, &Config::new(Level::Default).without("log1p"));
    assert_eq!(report.count("log1p"), 0);
    assert_eq!(run(&h, Level::None, vec![Tensor::scalar(1e-18)])[0].item().unwrap(), 0.0);
}

#[test]
fn algebraic_rules_fire_once_each() {
    let x = f64_in("x", &[None]);
    let y = f64_in("y", &[None]);
    let cases: Vec<(&str, Var)> = vec![
        ("sub_self_zero", b::sub(&b::tanh(&x).unwrap(), &b::tanh(&x).unwrap()).unwrap()),
        ("neg_neg", b::neg(&b::neg(&x).unwrap()).unwrap()),
        ("add_zero", b::add(&x, &Var::scalar(0.0)).unwrap()),
        ("mul_one", b::mul(&Var::scalar(1.0), &x).unwrap()),
        ("div_one", b::div(&x, &Var::scalar(1.0)).unwrap()),
        ("div_const_to_mul", b::div(&x, &Var::scalar(4.0)).unwrap()),
        ("mul_self_to_sqr", b::mul(&y, &y).unwrap()),
        ("log1p", b::log(&b::add(&x, &Var::scalar(1.0)).unwrap()).unwrap()),
        ("log_sigmoid", b::log(&b::sigmoid(&x).unwrap()).unwrap()),
    ];
    for (rule, out) in cases {
        let g = Graph::new(vec![x.clone(), y.clone()], vec![out]);
        let (h, report) = optimize(&g, Level::Default);
        assert_eq!(report.count(rule), 1, "{rule}: {}", report.to_text());
        let sc = SemanticsConfig { trials: 5, ..Default::default() };
        assert!(check_semantics_with(&g, &h, &sc).unwrap().passed(), "{rule}");
    }
}

#[test]
fn stabilize_only_leaves_structure_alone() {
    let x = f64_in("x", &[None]);
    let out = b::tanh(&b::exp(&b::neg(&x).unwrap()).unwrap()).unwrap();
    let g = Graph::new(vec![x], vec![out]);
    let (h, report) = optimize(&g, Level::StabilizeOnly);
    assert_eq!(report.count("fuse_elementwise"), 0);
    assert_eq!(h.nodes().len(), 3);
    let (h, report) = optimize(&g, Level::Default);
    assert!(report.count("fuse_elementwise") > 0);
    assert_eq!(h.nodes().len(), 1);
    assert!(matches!(h.nodes()[0].op, Op::Composite(_)));
}

#[test]
fn common_subexpressions_are_shared() {
    let x = f64_in("x", &[None]);
    let a = b::sum(&b::exp(&x).unwrap()).unwrap();
    let c = b::sum(&b::exp(&x).unwrap()).unwrap();
    let g = Graph::new(vec![x], vec![b::add(&a, &c).unwrap()]);
    let (h, _) = optimize(&g, Level::StabilizeOnly);
    assert_eq!(h.nodes().iter().filter(|n| matches!(n.op, Op::Sum { .. })).count(), 1);
}

#[test]
fn constants_fold() {
    let c = Var::constant(Tensor::vector(vec![1.0, 2.0]));
    let x = f64_in("x", &[None]);
    let out = b::add(&x, &b::exp(&c).unwrap()).unwrap();
    let g = Graph::new(vec![x], vec![out]);
    let (h, report) = optimize(&g, Level::Default);
    assert_eq!(report.count("constant_fold"), 1);
    assert!(h.nodes().iter().all(|n| !matches!(n.op, Op::Elemwise(graphc_core::ops::ScalarOp::Exp))));
}

#[test]
fn optimizing_twice_changes_nothing() {
    let mut r = rng(22);
    for _ in 0..40 {
        let g = random_graph(&mut r, &RandomGraphConfig::default());
        let (h, _) = optimize(&g, Level::Default);
        let (k, report) = optimize(&h, Level::Default);
        assert_eq!(h.nodes().len(), k.nodes().len(), "{}", report.to_text());
    }
}

#[test]
fn report_serializes() {
    let x = f64_in("x", &[None]);
    let g = Graph::new(vec![x.clone()], vec![b::neg(&b::neg(&x).unwrap()).unwrap()]);
    let (_, report) = optimize(&g, Level::Default);
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let row = v.as_array().unwrap().iter().find(|r| r["rule"] == "neg_neg").unwrap();
    assert_eq!(row["count"], 1);
    assert!(report.to_text().contains("neg_neg"));
}
