//! Discovery of rate-sensitive elasto-viscoplastic constitutive laws from
//! uniaxial stress-strain data.

pub mod autodiff;
pub mod network;
pub mod data;
pub mod solver;
pub mod tape_tensor;
pub mod elasticity;
pub mod error;
pub mod reference;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
