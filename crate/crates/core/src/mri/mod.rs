//! Acquisition forward model: centred FFTs, Cartesian undersampling,
//! low-resolution degradation by k-space truncation, and a synthetic
//! ellipse phantom standing in for real anatomy.

mod dataset;
mod fft;
mod mask;
mod phantom;
mod sample;

pub use dataset::{generate_dataset, load_dataset, read_sample, write_sample, GenConfig, Manifest};
pub use fft::{fft2, ifft2, ComplexGrid};
pub use mask::{make_cartesian_mask, undersample, CartesianMask};
pub use phantom::{generate_phantom, render_ellipses, Ellipse, PhantomSpec};
pub use sample::{degrade_lr, make_sample, SampleTriple};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MriError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Sidecar(#[from] crate::sidecar::SidecarError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad sample file: {0}")]
    Format(String),
}

pub type Result<T, E = MriError> = std::result::Result<T, E>;
