//! Pseudo-healthy inpainting of the trochlear region in 3D knee volumes.
//!
//! A denoising diffusion model runs on single-level Haar coefficients and
//! regenerates a mask around the patella, conditioned on the rest of the
//! volume. Around it sit preprocessing, masking, synthetic phantoms with a
//! known groove geometry, sulcus-angle measurement and masked metrics.
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod preprocess;
pub mod selftest;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Dims, Grid, LabelMap, Spacing, Volume};
pub use wavelet::{dwt3, idwt3, WaveletCoeffs};

/// The guide's snippets, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/volumes.md")]
    struct Volumes;
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    struct Preprocessing;
    #[doc = include_str!("../../../book/src/masking.md")]
    struct Masking;
    #[doc = include_str!("../../../book/src/wavelets.md")]
    struct Wavelets;
    #[doc = include_str!("../../../book/src/diffusion.md")]
    struct Diffusion;
    #[doc = include_str!("../../../book/src/denoiser.md")]
    struct Denoiser;
    #[doc = include_str!("../../../book/src/phantoms.md")]
    struct Phantoms;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
