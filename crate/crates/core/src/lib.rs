pub mod design;
pub mod dimensionality;
pub mod error;
pub mod estimation;
pub mod fit;
pub mod generators;
pub mod harness;
pub mod recovery;

pub use error::{IrtError, Result};
