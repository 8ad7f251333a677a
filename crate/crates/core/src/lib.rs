//! Cross-layered defense for multi-channel periodic piecewise linear
//! systems under denial-of-service flooding.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

// Links the system OpenBLAS used by the conic solver's PSD cone.
use openblas_src as _;

pub mod certificate;
pub mod channel;
pub mod conic;
pub mod defense;
pub mod design;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod output;
pub mod pipeline;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod worst_case;

pub use error::{Error, Result};
