//! Dense `f64` linear algebra, seeded randomness and FLOP accounting.

mod flops;
mod matrix;
mod rng;
mod softmax;

pub use flops::count_flops;
pub(crate) use flops::record as record_flops;
pub(crate) use matrix::matmul_into;
#[cfg(feature = "parallel")]
pub use matrix::matmul_par;
pub use matrix::{approx_equal, matmul, matmul_seq, Matrix};
pub use rng::{gaussian_init, Prng};
pub(crate) use softmax::softmax_row_in_place;
pub use softmax::softmax_rows_masked;
