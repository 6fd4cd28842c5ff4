pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod montage;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod retrieval;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
