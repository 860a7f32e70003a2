pub mod anchors;
pub mod cli;
pub mod error;
pub mod fit;
pub mod kernels;
pub mod lambda;
pub mod msd;
pub mod numeric;
pub mod simstudy;
pub mod smoothers;
pub mod transform;

pub use error::{Error, Result};
