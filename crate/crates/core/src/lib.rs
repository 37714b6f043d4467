pub mod amp;
pub mod bayes;
pub mod conformal;
pub mod data;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod glm;
pub mod linalg;
pub mod rbp;
pub mod taylor;

pub use error::{Error, Result};
