//! Randomized sketch-and-project solvers for the tensor equation
//! `A * X * B = C` under the t-product.

pub mod analysis;
pub mod bench;
pub mod error;
pub mod linalg;
pub mod sketch;
pub mod solver;
pub mod tensor;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
