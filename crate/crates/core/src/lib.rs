pub mod birkhoff;
pub mod cli;
pub mod conditioning;
pub mod error;
pub mod fd;
pub mod grid;
pub mod interp;
pub mod linalg;
pub mod nlpsolve;
pub mod ocp;
pub mod ode;
pub mod poly;
pub mod refine;
pub mod transcribe;
pub mod validate;

pub use error::{Error, Result};
