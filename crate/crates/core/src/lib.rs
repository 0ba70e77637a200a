pub mod acat;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod linalg;
pub mod sampling;
pub mod score_model;
pub mod simharness;

pub use error::{Error, Result};
