//! Dense symmetric/rectangular matrix primitives: Jacobi eigendecomposition,
//! truncated SVD, PSD utilities.

mod eig;
mod matrix;

pub use eig::{
    inverse_sqrt_psd, psd_clip, sym_eig, truncated_svd, EigenDecomposition, SYMMETRY_TOL,
};
pub use matrix::{l1_distance, squared_distance, Matrix};
