pub mod dynamics;
pub mod error;
pub mod ergodic;
pub mod estimation;
pub mod par;
pub mod riccati;
pub mod scheduler;
pub mod sim;
pub mod trajgen;

pub use error::{MeschError, Result};
