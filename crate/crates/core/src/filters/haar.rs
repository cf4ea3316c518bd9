//! Haar-like box features evaluated through an integral image.

use super::image::Image;

/// Haar-like kernels anchored at a pixel `(r, c)` with scale `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaarKernel {
    /// Mean of rows `[r-s, r)` minus mean of rows `[r, r+s)`.
    HorizontalEdge,
    /// Mean of columns `[c-s, c)` minus mean of columns `[c, c+s)`.
    VerticalEdge,
    /// Mean of the centred `s×s` square minus mean of the surrounding `2s×2s` ring.
    CenterSurround,
}

pub const DEFAULT_SCALE: usize = 4;

/// Summed-area table over an image replicate-padded by `pad` pixels on every side.
pub struct IntegralImage {
    sums: Vec<f64>,
    stride: usize,
    pad: isize,
}

impl IntegralImage {
    pub fn new(gray: &Image, pad: usize) -> Self {
        let (h, w) = (gray.height() + 2 * pad, gray.width() + 2 * pad);
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += gray.at_clamped(r as isize - pad as isize, c as isize - pad as isize);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Self {
            sums,
            stride,
            pad: pad as isize,
        }
    }

    /// Sum over rows `[r0, r1)` and columns `[c0, c1)` in unpadded image coordinates.
    pub fn box_sum(&self, r0: isize, r1: isize, c0: isize, c1: isize) -> f64 {
        let idx =
            |r: isize, c: isize| ((r + self.pad) as usize) * self.stride + (c + self.pad) as usize;
        self.sums[idx(r1, c1)] - self.sums[idx(r0, c1)] - self.sums[idx(r1, c0)]
            + self.sums[idx(r0, c0)]
    }

    fn box_mean(&self, r0: isize, r1: isize, c0: isize, c1: isize) -> f64 {
        self.box_sum(r0, r1, c0, c1) / ((r1 - r0) * (c1 - c0)) as f64
    }
}

/// Signed response map of one kernel at scale `scale` (≥ 1).
pub fn haar_response(gray: &Image, kernel: HaarKernel, scale: usize) -> Vec<f64> {
    let s = scale.max(1) as isize;
    let ii = IntegralImage::new(gray, 2 * scale.max(1));
    let (h, w) = (gray.height(), gray.width());
    let half = s / 2;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let v = match kernel {
                HaarKernel::HorizontalEdge => {
                    let (c0, c1) = (c - half, c - half + s);
                    ii.box_mean(r - s, r, c0, c1) - ii.box_mean(r, r + s, c0, c1)
                }
                HaarKernel::VerticalEdge => {
                    let (r0, r1) = (r - half, r - half + s);
                    ii.box_mean(r0, r1, c - s, c) - ii.box_mean(r0, r1, c, c + s)
                }
                HaarKernel::CenterSurround => {
                    let inner = ii.box_sum(r - half, r - half + s, c - half, c - half + s);
                    let outer = ii.box_sum(r - s, r + s, c - s, c + s);
                    let n_in = (s * s) as f64;
                    let n_ring = (4 * s * s) as f64 - n_in;
                    inner / n_in - (outer - inner) / n_ring
                }
            };
            out.push(v);
        }
    }
    out
}

/// Mean absolute response of the three kernels at the default scale.
pub fn haar_energy(gray: &Image) -> Vec<f64> {
    let kernels = [
        HaarKernel::HorizontalEdge,
        HaarKernel::VerticalEdge,
        HaarKernel::CenterSurround,
    ];
    let maps: Vec<Vec<f64>> = kernels
        .iter()
        .map(|&k| haar_response(gray, k, DEFAULT_SCALE))
        .collect();
    (0..gray.height() * gray.width())
        .map(|i| maps.iter().map(|m| m[i].abs()).sum::<f64>() / maps.len() as f64)
        .collect()
}
