//! Dense `f64` tensors with a tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every differentiable operation in execution order. Model
//! weights live in a [`ParamStore`] and are bound into a graph per forward pass
//! with [`Graph::param`]; after [`Graph::backward`] the parameter gradients are
//! folded back into the store with [`Graph::accumulate_param_grads`] and an
//! optimizer such as [`Adam`] consumes them.
//!
//! ```
//! use hinsr_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
