use crate::error::{Error, Result};

/// `height × width × channels` raster stored interleaved (HWC), values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`Image::new`] but also requires every value to lie in `[0, 1]`.
    pub fn checked(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Self::new(height, width, channels, data)
    }

    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::gray(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[(r * self.width + c) * self.channels + ch]
    }

    /// Single-channel pixel with coordinates clamped to the border.
    pub fn at_clamped(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.data[(r * self.width + c) * self.channels]
    }

    /// Luma (0.299 R + 0.587 G + 0.114 B) for colour input, a copy otherwise.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Spans at or below this are treated as constant (rounding residue of flat inputs).
pub const FLAT_SPAN: f64 = 1e-10;

/// Min-max normalises every channel to `[0, 1]`; constant channels become zero.
pub fn normalize_per_channel(img: &Image) -> Image {
    let ch = img.channels();
    let mut out = img.clone();
    for k in 0..ch {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in img.data().iter().skip(k).step_by(ch) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let span = hi - lo;
        for v in out.data_mut().iter_mut().skip(k).step_by(ch) {
            *v = if span > FLAT_SPAN {
                (*v - lo) / span
            } else {
                0.0
            };
        }
    }
    out
}

/// 2-D correlation of a single-channel image with an odd-sized kernel, replicate borders.
pub(crate) fn correlate_replicate(img: &Image, kernel: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let k = kernel[ky * kw + kx];
                    if k != 0.0 {
                        acc += k * img.at_clamped(
                            r as isize + ky as isize - ry,
                            c as isize + kx as isize - rx,
                        );
                    }
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}
