#![allow(dead_code)]

use graphc_core::tensor::Tensor;
use graphc_core::{DType, Dim, Graph, TensorType, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn f64_in(name: &str, dims: &[Option<usize>]) -> Var {
    let dims = dims.iter().map(|d| d.map_or(Dim::Unknown, Dim::Known)).collect();
    Var::input(name, TensorType::new(DType::F64, dims))
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn max_rel(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.max_rel_diff(b, floor)
}

pub fn eval(g: &Graph, ins: &[Tensor]) -> Vec<Tensor> {
    graphc_core::vm::eval_graph(g, ins.to_vec()).unwrap()
}

/// Central finite difference of a scalar graph output along every entry of
/// input `k`.
pub fn fd_grad(g: &Graph, ins: &[Tensor], k: usize, h: f64) -> Tensor {
    let base = &ins[k];
    let mut out = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = ins.to_vec();
        let mut minus = ins.to_vec();
        plus[k].data_mut()[i] += h;
        minus[k].data_mut()[i] -= h;
        let fp = eval(g, &plus)[0].item().unwrap();
        let fm = eval(g, &minus)[0].item().unwrap();
        out[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(base.dtype(), base.shape().to_vec(), out).unwrap()
}
