pub mod batch;
pub mod checkpoint;
pub mod container;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod inversion;
pub mod nn;
pub mod sdn;
pub mod training;

pub use error::{Error, Result};
