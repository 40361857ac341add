//! Building registered HE/IHC image pairs from whole-slide scans, Gaussian
//! pyramid losses for paired translation, and PSNR/SSIM evaluation.

pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod patchify;
pub mod raster;
pub mod registration;
pub mod scale_space;

pub use error::{Error, Result};
pub use raster::{
    load_image, merge_channels, save_image, split_channels, to_luma, Plane, Raster, Rect,
    ValidityMask,
};
