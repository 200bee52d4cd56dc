pub mod analysis;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imageproc;
pub mod model;
pub mod pipeline;
pub mod random;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, ErrorFamily, Result, WeightError};
