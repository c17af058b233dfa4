//! Joint MRI reconstruction and super-resolution with a task transformer
//! network, built on a small reverse-mode autodiff engine.

pub mod gradcheck;
pub mod tensor;
pub mod checkpoint;
pub mod sidecar;
pub mod mri;
pub mod metrics;
pub mod model;
pub mod training;
pub mod pgm;
pub mod cli;
