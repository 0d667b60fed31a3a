pub mod attacks;
pub mod cli;
pub mod coeffs;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod model;
pub mod multiround;
pub mod sim;
pub mod ode;
pub mod synthesis;

pub use error::{Error, Result};
