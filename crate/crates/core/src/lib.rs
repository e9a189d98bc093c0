//! Typed tensor expression graphs.
//!
//! Build a [`Graph`] with the functions in [`builder`] and [`scan`],
//! differentiate it with [`autodiff`], optimize it with [`rewrite`] and run
//! it with [`vm`].
//!
//! ```
//! use graphc_core::{builder as b, vm, Graph, Tensor, TensorType, DType, Dim, Var};
//!
//! let x = Var::input("x", TensorType::vector(DType::F64, Dim::Unknown));
//! let y = b::log(&b::add(&Var::scalar(1.0), &x).unwrap()).unwrap();
//! let mut f = vm::compile(&Graph::new(vec![x], vec![y]), vm::Options::default()).unwrap();
//! let out = f.call(vec![Tensor::vector(vec![1e-18])]).unwrap();
//! assert_eq!(out[0].data()[0], 1e-18);
//! ```

pub mod autodiff;
pub mod builder;
pub mod error;
pub mod graph;
pub mod ops;
pub mod random;
pub mod rewrite;
pub mod scan;
pub mod tensor;
pub mod types;
pub mod vm;

pub use error::{Error, Result};
pub use graph::{apply, apply1, ApplyNode, Graph, SharedValue, Var, VarId, VarKind};
pub use ops::Op;
pub use tensor::Tensor;
pub use types::{DType, Dim, TensorType};
