//! Deterministic dense math: tensors, products, reductions, PCA, PRNG and the
//! EVMF tensor file format.
//!
//! Every reduction sums in ascending index order, so results are bit-stable
//! across runs and platforms.

pub mod evmf;
mod linalg;
mod rng;
mod tensor;

pub use linalg::{cosine_similarity, dot, matmul, mean_pool, norm, pca_embed, Cosine, Pca};
pub use rng::Rng;
pub use tensor::Tensor;
