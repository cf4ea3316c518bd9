//! Filter Augment Module: handcrafted descriptors and the residual
//! augmentation `F = I + α · filter(I)`.

pub mod canny;
pub mod grad;
pub mod haar;
pub mod hog;
mod image;
pub mod wst;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

pub use image::{normalize_per_channel, Image};

/// The handcrafted descriptors available to the augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Wst,
    Canny,
    Haar,
    Hog,
    Grad,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Wst,
        FilterKind::Canny,
        FilterKind::Haar,
        FilterKind::Hog,
        FilterKind::Grad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Wst => "wst",
            FilterKind::Canny => "canny",
            FilterKind::Haar => "haar",
            FilterKind::Hog => "hog",
            FilterKind::Grad => "grad",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown filter kind '{s}'")))
    }
}

/// Runs one descriptor and returns a single-channel map in `[0, 1]` of the input size.
pub fn apply_filter(kind: FilterKind, img: &Image) -> Result<Image> {
    if img.height() == 0 || img.width() == 0 {
        return Err(Error::Dimension("zero-sized image".into()));
    }
    let gray = img.to_gray();
    let raw = match kind {
        FilterKind::Wst => wst::scattering_energy(&gray),
        FilterKind::Canny => canny::canny(&gray),
        FilterKind::Haar => haar::haar_energy(&gray),
        FilterKind::Hog => hog::hog_render(&gray),
        FilterKind::Grad => grad::ratio_edges(&gray),
    };
    let out = Image::gray(img.height(), img.width(), raw)?;
    Ok(normalize_per_channel(&out))
}

/// Learnable residual weight of the augmentation, one per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterAugmentParams {
    pub alpha: f64,
}

impl Default for FilterAugmentParams {
    /// `alpha = 0`: the augmentation starts as the identity.
    fn default() -> Self {
        Self { alpha: 0.0 }
    }
}

/// `img + alpha · broadcast(filter)`, with a single-channel filter map broadcast over channels.
pub fn augment_with(img: &Image, filtered: &Image, alpha: f64) -> Result<Image> {
    if filtered.height() != img.height() || filtered.width() != img.width() {
        return Err(Error::Dimension(format!(
            "filter map {}x{} does not match image {}x{}",
            filtered.height(),
            filtered.width(),
            img.height(),
            img.width()
        )));
    }
    let ch = img.channels();
    let fch = filtered.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let px = i / ch;
            let f = if fch == 1 {
                filtered.data()[px]
            } else {
                filtered.data()[i]
            };
            v + alpha * f
        })
        .collect();
    Image::new(img.height(), img.width(), ch, data)
}

pub fn filter_augment(img: &Image, kind: FilterKind, params: FilterAugmentParams) -> Result<Image> {
    let filtered = apply_filter(kind, img)?;
    augment_with(img, &filtered, params.alpha)
}

/// Differentiable form on a tape: `image + alpha · filtered`, with `alpha` a one-element variable.
///
/// `image` and `filtered` must hold tensors of the same shape.
pub fn filter_augment_var(g: &mut Graph, image: Var, filtered: Var, alpha: Var) -> Result<Var> {
    let scaled = g.scale(filtered, alpha)?;
    g.add(image, scaled)
}

/// Image data as a `[height, width·channels]` tensor.
pub fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(
        vec![img.height(), img.width() * img.channels()],
        img.data().to_vec(),
    )
    .expect("image dimensions are positive")
}
