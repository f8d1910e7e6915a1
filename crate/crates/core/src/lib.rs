pub mod basis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forest;
pub mod io;
pub mod model;
pub mod oracle;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod simulate;

pub use error::{Error, Result};
