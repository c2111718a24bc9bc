pub mod datagen;
pub mod error;
pub mod export;
pub mod gdfm;
pub mod identify;
pub mod linalg;
pub mod lvdn;
pub mod panel;
pub mod solver;
pub mod sparse_var;
pub mod spectral;
pub mod volpipe;

pub use error::{Error, ErrorKind, Result};
