pub mod dyaddesign;
pub mod error;
pub mod graphmetrics;
pub mod inference;
pub mod mixedfit;
pub mod netdata;
pub mod pipeline;
pub mod predictsim;
pub mod study;

pub use error::{Error, Result};
