//! Dense linear algebra, seeded randomness and the finite-difference oracle.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use matrix::{
    dot, l2_normalize_rows, log_sum_exp, matmul, matmul_transpose_a, matmul_transpose_b, softmax_rows, Matrix,
};
pub use rng::{Rng, RngState};

/// `rng_uniform` in free-function form.
pub fn rng_uniform(rng: &mut Rng, lo: f64, hi: f64) -> crate::Result<f64> {
    rng.uniform(lo, hi)
}

pub fn rng_normal(rng: &mut Rng, mean: f64, std: f64) -> crate::Result<f64> {
    rng.normal(mean, std)
}

pub fn rng_choice(rng: &mut Rng, n: usize) -> crate::Result<usize> {
    rng.choice(n)
}
