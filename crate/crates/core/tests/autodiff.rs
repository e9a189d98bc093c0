mod common;

use common::*;
use graphc_core::autodiff::{gauss_newton_vector_product, grad, lop, rop};
use graphc_core::random::{random_graph, RandomGraphConfig};
use graphc_core::rewrite::random_inputs;
use graphc_core::{builder as b, DType, Graph, Tensor, TensorType, Var};
use rand::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;
// Denominator floor for the relative error.
const FLOOR: f64 = 1e-8;

fn weights(rng: &mut impl Rng, like: &Tensor) -> Var {
    Var::constant(rand_tensor(rng, like.shape(), 1.0))
}

/// Checks reverse-mode gradients of `sum(out * w)` against central
/// differences for every float input.
fn check_op(name: &str, ins: &[(Var, Tensor)], out: Var) {
    let mut r = rng(name.len() as u64);
    let vars: Vec<Var> = ins.iter().map(|(v, _)| v.clone()).collect();
    let vals: Vec<Tensor> = ins.iter().map(|(_, t)| t.clone()).collect();
    let probe = eval(&Graph::new(vars.clone(), vec![out.clone()]), &vals);
    let cost = b::sum(&b::mul(&out, &weights(&mut r, &probe[0])).unwrap()).unwrap();
    let wrt: Vec<Var> = vars.iter().filter(|v| v.ty().dtype.is_float()).cloned().collect();
    let gs = grad(&cost, &wrt).unwrap();
    let an = eval(&Graph::new(vars.clone(), gs), &vals);
    let f = Graph::new(vars.clone(), vec![cost]);
    let mut j = 0;
    for (k, v) in vars.iter().enumerate() {
        if !v.ty().dtype.is_float() {
            continue;
        }
        let fd = fd_grad(&f, &vals, k, H);
        let err = max_rel(&an[j], &fd, FLOOR);
        assert!(err <= TOL, "{name}: input {k} relative error {err:e}\nanalytic {}\nnumeric {}", an[j], fd);
        j += 1;
    }
}

fn mat(name: &str) -> Var {
    f64_in(name, &[None, None])
}

fn vecv(name: &str) -> Var {
    f64_in(name, &[None])
}

fn positive(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap()
}

#[test]
fn unary_elementwise_gradients() {
    let mut r = rng(1);
    let x = mat("x");
    let xv = rand_tensor(&mut r, &[3, 4], 1.5);
    let pv = positive(&mut r, &[3, 4]);
    type Unary = fn(&Var) -> graphc_core::Result<Var>;
    let general: [(&str, Unary); 7] = [
        ("neg", b::neg),
        ("exp", b::exp),
        ("sigmoid", b::sigmoid),
        ("softplus", b::softplus),
        ("tanh", b::tanh),
        ("sqr", b::sqr),
        ("scale", |x| b::scale(x, -2.5)),
    ];
    for (name, f) in general {
        check_op(name, &[(x.clone(), xv.clone())], f(&x).unwrap());
    }
    let domain: [(&str, Unary); 3] = [("log", b::log), ("log1p", b::log1p), ("pow", |x| b::pow(x, 2.5))];
    for (name, f) in domain {
        check_op(name, &[(x.clone(), pv.clone())], f(&x).unwrap());
    }
}

#[test]
fn binary_elementwise_gradients_with_broadcasting() {
    let mut r = rng(2);
    let (x, y, v, s) = (mat("x"), mat("y"), vecv("v"), f64_in("s", &[]));
    let xv = rand_tensor(&mut r, &[3, 4], 1.5);
    let yv = rand_tensor(&mut r, &[3, 4], 1.5);
    let vv = rand_tensor(&mut r, &[4], 1.5);
    let sv = Tensor::scalar(0.7);
    let py = positive(&mut r, &[3, 4]);
    type Binary = fn(&Var, &Var) -> graphc_core::Result<Var>;
    let ops: [(&str, Binary); 5] = [("add", b::add), ("sub", b::sub), ("mul", b::mul), ("div", b::div), ("maximum", b::maximum)];
    for (name, f) in ops {
        let yvals = if name == "div" { py.clone() } else { yv.clone() };
        check_op(name, &[(x.clone(), xv.clone()), (y.clone(), yvals)], f(&x, &y).unwrap());
        check_op(&format!("{name} row"), &[(x.clone(), xv.clone()), (v.clone(), vv.clone())], f(&x, &v).unwrap());
        let sval = if name == "div" { Tensor::scalar(1.3) } else { sv.clone() };
        check_op(&format!("{name} scalar"), &[(s.clone(), sval), (x.clone(), xv.clone())], f(&s, &x).unwrap());
    }
}

#[test]
fn reduction_gradients() {
    let mut r = rng(3);
    let x = mat("x");
    let xv = rand_tensor(&mut r, &[3, 4], 1.5);
    check_op("sum", &[(x.clone(), xv.clone())], b::sum(&x).unwrap());
    check_op("sum axis 0", &[(x.clone(), xv.clone())], b::sum_axis(&x, 0).unwrap());
    check_op("sum axis 1", &[(x.clone(), xv.clone())], b::sum_axis(&x, 1).unwrap());
    check_op("max", &[(x.clone(), xv.clone())], b::max(&x).unwrap());
    check_op("max axis 0", &[(x.clone(), xv.clone())], b::max_axis(&x, 0).unwrap());
    check_op("max axis 1", &[(x.clone(), xv.clone())], b::max_axis(&x, 1).unwrap());
}

#[test]
fn linear_algebra_and_shape_gradients() {
    let mut r = rng(4);
    let (a, c, u, w) = (mat("a"), mat("c"), vecv("u"), vecv("w"));
    let av = rand_tensor(&mut r, &[3, 4], 1.0);
    let cv = rand_tensor(&mut r, &[4, 2], 1.0);
    let uv = rand_tensor(&mut r, &[4], 1.0);
    let wv = rand_tensor(&mut r, &[3], 1.0);
    check_op("dot mm", &[(a.clone(), av.clone()), (c.clone(), cv.clone())], b::dot(&a, &c).unwrap());
    check_op("dot mv", &[(a.clone(), av.clone()), (u.clone(), uv.clone())], b::dot(&a, &u).unwrap());
    check_op("dot vm", &[(w.clone(), wv.clone()), (a.clone(), av.clone())], b::dot(&w, &a).unwrap());
    let u2 = vecv("u2");
    check_op("dot vv", &[(u.clone(), uv.clone()), (u2.clone(), rand_tensor(&mut r, &[4], 1.0))], b::dot(&u, &u2).unwrap());
    check_op("transpose", &[(a.clone(), av.clone())], b::transpose(&a).unwrap());
    check_op("reshape", &[(a.clone(), av.clone())], b::reshape(&a, &[2, -1]).unwrap());
    check_op("index", &[(a.clone(), av.clone())], b::index(&a, -1).unwrap());
    check_op("stack", &[(u.clone(), uv.clone())], b::stack(&[u.clone(), b::tanh(&u).unwrap()]).unwrap());
    check_op("concat", &[(a.clone(), av.clone())], b::concat(&a, &b::sqr(&a).unwrap()).unwrap());
}

#[test]
fn softmax_and_crossentropy_gradients() {
    let mut r = rng(5);
    let (x, v) = (mat("x"), vecv("v"));
    let xv = rand_tensor(&mut r, &[3, 4], 2.0);
    check_op("softmax matrix", &[(x.clone(), xv.clone())], b::softmax(&x).unwrap());
    check_op("softmax vector", &[(v.clone(), rand_tensor(&mut r, &[5], 2.0))], b::softmax(&v).unwrap());
    let t = Var::input("t", TensorType::vector(DType::I64, graphc_core::Dim::Unknown));
    let tv = Tensor::new(DType::I64, vec![3], vec![0.0, 3.0, 1.0]).unwrap();
    let ce = b::crossentropy(&b::softmax(&x).unwrap(), &t).unwrap();
    check_op("crossentropy", &[(x.clone(), xv), (t, tv)], ce);
}

#[test]
fn conditional_gradients_follow_the_taken_branch() {
    let mut r = rng(6);
    let (x, s) = (mat("x"), f64_in("s", &[]));
    let xv = rand_tensor(&mut r, &[2, 3], 1.0);
    for sv in [1.0, -1.0] {
        let out = b::if_else(&b::gt(&s, &Var::scalar(0.0)).unwrap(), &b::tanh(&x).unwrap(), &b::sqr(&x).unwrap()).unwrap();
        check_op("if_else", &[(s.clone(), Tensor::scalar(sv)), (x.clone(), xv.clone())], out);
    }
}

#[test]
fn grad_is_lop_with_unit_covector() {
    let mut r = rng(7);
    for _ in 0..20 {
        let g = random_graph(&mut r, &RandomGraphConfig { n_outputs: 1, ..Default::default() });
        let cost = b::sum(&g.outputs[0]).unwrap();
        let a = grad(&cost, &g.inputs).unwrap();
        let c = lop(&[cost.clone()], &g.inputs, &[Var::scalar(1.0)]).unwrap();
        let ins = random_inputs(&g.inputs, &mut r);
        let (x, y) = (eval(&Graph::new(g.inputs.clone(), a), &ins), eval(&Graph::new(g.inputs.clone(), c), &ins));
        for (p, q) in x.iter().zip(&y) {
            assert_eq!(p.data(), q.data());
        }
    }
}

#[test]
fn lop_of_linear_map_is_transpose_product() {
    let mut r = rng(8);
    let w = Var::constant(rand_tensor(&mut r, &[4, 3], 1.0));
    let theta = vecv("theta");
    let eta = vecv("eta");
    let f = b::dot(&w, &theta).unwrap();
    let l = lop(&[f], &[theta.clone()], &[eta.clone()]).unwrap();
    let ev = rand_tensor(&mut r, &[4], 1.0);
    let got = eval(&Graph::new(vec![theta, eta], l), &[rand_tensor(&mut r, &[3], 1.0), ev.clone()]);
    let wd = w.constant_value().unwrap().data();
    let want: Vec<f64> = (0..3).map(|j| (0..4).map(|i| wd[i * 3 + j] * ev.data()[i]).sum()).collect();
    assert!(max_rel(&got[0], &Tensor::vector(want), 1e-300) <= 1e-14);
}

fn dot_all(a: &[Tensor], c: &[Tensor]) -> f64 {
    a.iter().zip(c).flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| p * q)).sum()
}

fn var_like(name: &str, t: &Tensor) -> Var {
    Var::input(name, t.tensor_type())
}

/// `<η, Jγ> = <Jᵀη, γ>` on random graphs, including loops.
#[test]
fn adjoint_identity_on_random_graphs() {
    let mut r = rng(9);
    let mut with_scans = 0;
    for trial in 0..120 {
        let cfg = RandomGraphConfig { n_ops: r.gen_range(4..14), unknown_rows: trial % 3 == 0, ..Default::default() };
        let g = random_graph(&mut r, &cfg);
        with_scans += g.nodes().iter().any(|n| n.op.as_scan().is_some()) as usize;
        let ins = random_inputs(&g.inputs, &mut r);
        let outs = eval(&g, &ins);
        let etas: Vec<Var> = outs.iter().enumerate().map(|(i, t)| var_like(&format!("eta{i}"), t)).collect();
        let gammas: Vec<Var> = ins.iter().enumerate().map(|(i, t)| var_like(&format!("gamma{i}"), t)).collect();
        let jg = rop(&g.outputs, &g.inputs, &gammas).unwrap();
        let jt = lop(&g.outputs, &g.inputs, &etas).unwrap();
        let mut all_in = g.inputs.clone();
        all_in.extend(etas.iter().cloned());
        all_in.extend(gammas.iter().cloned());
        let eta_v: Vec<Tensor> = outs.iter().map(|t| rand_tensor(&mut r, t.shape(), 1.0)).collect();
        let gamma_v: Vec<Tensor> = ins.iter().map(|t| rand_tensor(&mut r, t.shape(), 1.0)).collect();
        let mut vals = ins.clone();
        vals.extend(eta_v.iter().cloned());
        vals.extend(gamma_v.iter().cloned());
        let jg_v = eval(&Graph::new(all_in.clone(), jg), &vals);
        let jt_v = eval(&Graph::new(all_in, jt), &vals);
        let lhs = dot_all(&eta_v, &jg_v);
        let rhs = dot_all(&jt_v, &gamma_v);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        assert!(rel <= 1e-10, "trial {trial}: <eta, J gamma> = {lhs:e} but <J^T eta, gamma> = {rhs:e}");
    }
    assert!(with_scans >= 20, "only {with_scans} graphs had loops");
}

fn small_model() -> (Vec<Var>, Var, Var) {
    let w = mat("w");
    let bias = vecv("b");
    let x = Var::constant(Tensor::matrix(4, 3, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect()).unwrap());
    let f = b::tanh(&b::add(&b::dot(&x, &w).unwrap(), &bias).unwrap()).unwrap();
    (vec![w, bias], f, x)
}

/// The Gauss-Newton product against `JᵀJγ` with `J` assembled column by
/// column from R-ops on basis vectors.
#[test]
fn gauss_newton_matches_explicit_jacobian() {
    let mut r = rng(10);
    let (theta, f, _) = small_model();
    let tv = vec![rand_tensor(&mut r, &[3, 2], 1.0), rand_tensor(&mut r, &[2], 1.0)];
    let n_params: usize = tv.iter().map(Tensor::len).sum();
    assert!(n_params <= 20);
    let gam: Vec<Var> = tv.iter().enumerate().map(|(i, t)| var_like(&format!("g{i}"), t)).collect();
    let jv = rop(&[f.clone()], &theta, &gam).unwrap();
    let gv = gauss_newton_vector_product(&[f.clone()], &theta, &gam).unwrap();
    let mut all_in = theta.clone();
    all_in.extend(gam.iter().cloned());
    let jv_graph = Graph::new(all_in.clone(), jv);
    let gv_graph = Graph::new(all_in, gv);

    let split = |flat: &[f64]| -> Vec<Tensor> {
        let mut out = Vec::new();
        let mut o = 0;
        for t in &tv {
            out.push(Tensor::from_vec(t.shape().to_vec(), flat[o..o + t.len()].to_vec()).unwrap());
            o += t.len();
        }
        out
    };
    let run = |g: &Graph, dir: &[f64]| -> Vec<Tensor> {
        let mut vals = tv.clone();
        vals.extend(split(dir));
        eval(g, &vals)
    };
    let cols: Vec<Vec<f64>> = (0..n_params)
        .map(|i| {
            let mut e = vec![0.0; n_params];
            e[i] = 1.0;
            run(&jv_graph, &e)[0].data().to_vec()
        })
        .collect();
    let n_out = cols[0].len();
    for trial in 0..5 {
        let gamma: Vec<f64> = (0..n_params).map(|_| r.gen_range(-1.0..1.0)).collect();
        let jg: Vec<f64> = (0..n_out).map(|o| (0..n_params).map(|p| cols[p][o] * gamma[p]).sum()).collect();
        let want: Vec<f64> = (0..n_params).map(|p| (0..n_out).map(|o| cols[p][o] * jg[o]).sum()).collect();
        let got: Vec<f64> = run(&gv_graph, &gamma).iter().flat_map(|t| t.data().to_vec()).collect();
        let err = Tensor::vector(got).max_rel_diff(&Tensor::vector(want), 1e-300);
        assert!(err <= 1e-8, "trial {trial}: {err:e}");
    }
    let zero = run(&gv_graph, &vec![0.0; n_params]);
    assert!(zero.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
}

#[test]
fn gauss_newton_of_linear_map_is_gram_product() {
    let mut r = rng(11);
    let xt = rand_tensor(&mut r, &[5, 3], 1.0);
    let x = Var::constant(xt.clone());
    let w = vecv("w");
    let g = vecv("g");
    let gv = gauss_newton_vector_product(&[b::dot(&x, &w).unwrap()], &[w.clone()], &[g.clone()]).unwrap();
    let gamma = rand_tensor(&mut r, &[3], 1.0);
    let got = eval(&Graph::new(vec![w, g], gv), &[rand_tensor(&mut r, &[3], 1.0), gamma.clone()]);
    let xd = xt.data();
    let xg: Vec<f64> = (0..5).map(|i| (0..3).map(|j| xd[i * 3 + j] * gamma.data()[j]).sum()).collect();
    let want: Vec<f64> = (0..3).map(|j| (0..5).map(|i| xd[i * 3 + j] * xg[i]).sum()).collect();
    assert!(max_rel(&got[0], &Tensor::vector(want), 1e-300) <= 1e-12);
}

#[test]
fn integer_parameters_are_rejected() {
    let t = Var::input("t", TensorType::vector(DType::I64, graphc_core::Dim::Unknown));
    let y = b::sum(&b::scale(&t, 2.0).unwrap()).unwrap();
    assert!(grad(&y, &[t]).is_err());
}

#[test]
fn non_scalar_cost_is_rejected() {
    let x = vecv("x");
    assert!(grad(&b::tanh(&x).unwrap(), &[x]).is_err());
}
