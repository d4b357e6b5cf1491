pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod layers;
pub mod models;
pub mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
