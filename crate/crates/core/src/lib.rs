//! Deep kernel machines: Nystrom dense-embedding ensembles feeding
//! fully connected representation networks fused under kernel dropout,
//! for single-kernel (DKMO) and multiple-kernel (M-DKMO) classification.

pub mod clustering;
pub mod data;
pub mod dkmo;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mdkmo;
pub mod metrics;
pub mod nn;
pub mod nystroem;
pub mod util;

pub use error::{Error, Result};
pub use linalg::Matrix;
