//! Building blocks for optical/SAR fusion detection at desk scale.
//!
//! The crate covers handcrafted filter augmentation, interleaved cross-modal
//! state-space scanning, area attention fusion, oriented-box geometry and
//! losses, rotated COCO-style evaluation, and dataset label/statistics tooling.

pub mod areafusion;
pub mod datasetio;
pub mod error;
pub mod evalkit;
pub mod filters;
pub mod numcore;
pub mod obbgeom;
pub mod scanorders;
pub mod ssmfusion;

pub use error::{Error, Result};
