//! Shared inputs for the criterion benches.

use turbo_core::linalg::Mat;
use turbo_core::rng::gaussian_vec;

pub fn gauss(rows: usize, cols: usize, seed: u64) -> Mat {
    Mat::from_vec(rows, cols, gaussian_vec(rows * cols, seed)).expect("dims match")
}
