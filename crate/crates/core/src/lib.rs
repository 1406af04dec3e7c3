//! Functional simulator and analytical cost model for quantized dot-product
//! kernels on a coarse-grained linear array (IMAX-style) accelerator.

pub mod calibrate;
pub mod error;
pub mod isa;
pub mod kernels;
pub mod machine;
pub mod perf;
pub mod planner;
pub mod profiles;
pub mod quantfmt;
pub mod report;
pub mod verify;
pub mod workload;

pub use error::{Error, Result};
pub use quantfmt::QuantFormat;
