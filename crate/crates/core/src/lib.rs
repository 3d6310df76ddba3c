pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod kms;
pub mod lattice;
pub mod linalg;
pub mod monomial;
pub mod multikms;

pub use error::{Error, Result};
