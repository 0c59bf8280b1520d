pub mod cdfc;
pub mod cdg;
pub mod csi_pipeline;
pub mod error;
pub mod eval;
pub mod harness;
pub mod lmkb_core;
pub mod mimo_channel;
pub mod optim;
pub mod sdg;
pub mod seed;

pub use error::{Error, Result};
