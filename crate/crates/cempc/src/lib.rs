pub mod certificates;
pub mod controller;
pub mod cost;
pub mod error;
pub mod linalg;
pub mod lms;
pub mod lp;
pub mod model;
pub mod qp;
pub mod simbench;
pub mod solver;

pub use error::{Error, Result};
