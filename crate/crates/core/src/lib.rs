pub mod checkpoint;
pub mod data;
pub mod detection;
pub mod error;
pub mod grid;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod phantom;
pub mod protocol;
pub mod regions;
pub mod trainer;

pub use error::{Error, Result};
