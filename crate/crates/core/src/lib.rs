//! Identity-initialized deep multilayer perceptrons.
//!
//! Every hidden layer of an [`InterpretableMLP`] is a square `(C+N) x (C+N)` matrix that starts
//! at `sigma * I`. The input is the data vector with `C` zeros prepended, so each hidden state
//! splits into a class-likelihood slot `z` and a data part `x`. Because the trained weights stay
//! close to the identity, `z^l` can be read as the class likelihood at layer `l` and `x^l - x^0`
//! as a contribution map.
//!
//! - [`sigprop`]: variance fixed point, Jacobian spectrum at initialization, `(sigma, q*)`
//!   calibration and Monte-Carlo validators.
//! - [`network`]: initialization, forward passes, backpropagation, Jacobian products.
//! - [`checkpoint`]: the `.iimlp` binary format.
//! - [`data`]: IDX / CIFAR-10 loaders, synthetic blobs, per-sample normalization.
//! - [`trainer`]: momentum SGD with deterministic shuffling and per-epoch metrics.
//! - [`interpret`]: layer-wise accuracy, contribution maps, discriminability, image export.
//! - [`cli`]: the `calibrate` / `propagate` / `train` / `analyze` commands.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod interpret;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod sigprop;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use network::{Activation, InitKind, InterpretableMLP, LayerTrace, NetworkConfig};
pub use rng::SeededRng;
