pub mod blur;
pub mod cloud;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod plas;
pub mod ply;
pub mod quant;
pub mod smooth;
pub mod synth;
