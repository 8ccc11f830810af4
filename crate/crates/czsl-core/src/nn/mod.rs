//! Numerical core: dense f64 matrices, a reverse-mode gradient tape, fully
//! connected networks, Adam, and deterministic random streams.

pub mod adam;
pub mod dense;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, DenseLayer, DenseNet, TapedForward, LEAKY_SLOPE};
pub use matrix::{cosine_matrix, l2_normalize_rows, softmax_cross_entropy, Matrix, NORM_EPS};
pub use rng::{Rng, Stream};
pub use tape::{Gradients, Tape, Var};
