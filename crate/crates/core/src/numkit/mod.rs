//! Dense numeric kernel: matrices, seeded randomness, the two-layer
//! perceptron with analytic gradients, and AdamW.

mod adamw;
mod matrix;
mod mlp;
mod rng;
mod scalar;

pub use adamw::{AdamW, AdamWConfig};
pub use matrix::Matrix;
pub use mlp::{Mlp2Cache, Mlp2Grads, Mlp2Params, GRAD_NORM_FLOOR, LEAKY_SLOPE};
pub use rng::Rng;
pub use scalar::Scalar;
