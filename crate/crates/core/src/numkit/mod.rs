//! Dense linear algebra, seeded randomness and the DFT used by the rest of
//! the crate. Everything is `f64`.

mod dft;
mod matrix;
mod rng;

pub use dft::{dft_magnitudes, DftPlan};
#[allow(unused_imports)]
pub(crate) use matrix::gemm;
pub use matrix::{frobenius_norm, matmul, Matrix};
pub use rng::{gaussian_matrix, hash64, mix64, Rng};
