//! Depth-2 wavelet scattering with oriented Haar wavelets.
//!
//! Wavelets live at two dyadic scales (supports 2×2 and 4×4) and four
//! orientations (0°, 45°, 90°, 135°) and are applied by circular
//! correlation. The low-pass stage is a 4×4 average pooling. The wavelet bank
//! is rescaled per image size so that its Littlewood–Paley sum never exceeds
//! `1 - ‖pool‖²`; every layer is then non-expansive and so is the whole
//! transform: `‖S(x) − S(y)‖ ≤ ‖x − y‖`.

use std::f64::consts::PI;

use super::image::Image;

pub const SCALES: usize = 2;
pub const ORIENTATIONS: usize = 4;
pub const POOL: usize = 4;

#[derive(Debug, Clone)]
struct Wavelet {
    scale: usize,
    size: usize,
    taps: Vec<f64>,
}

fn haar_wavelet(scale: usize, orientation: usize) -> Wavelet {
    let s = 1usize << scale;
    let size = 2 * s;
    let mut taps = Vec::with_capacity(size * size);
    for y in 0..size as isize {
        for x in 0..size as isize {
            let v = match orientation {
                0 => {
                    if x < s as isize {
                        1.0
                    } else {
                        -1.0
                    }
                }
                1 => (2 * s as isize - 1 - x - y).signum() as f64,
                2 => {
                    if y < s as isize {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => (x - y).signum() as f64,
            };
            taps.push(v);
        }
    }
    let nnz = taps.iter().filter(|v| **v != 0.0).count() as f64;
    taps.iter_mut().for_each(|v| *v /= nnz);
    Wavelet { scale, size, taps }
}

/// Scattering coefficients on the pooled grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scattering {
    pub pooled_height: usize,
    pub pooled_width: usize,
    pub order0: Vec<f64>,
    pub order1: Vec<Vec<f64>>,
    pub order2: Vec<Vec<f64>>,
}

impl Scattering {
    /// All coefficients flattened in a fixed order.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = self.order0.clone();
        for m in self.order1.iter().chain(&self.order2) {
            out.extend_from_slice(m);
        }
        out
    }

    /// Mean over the first- and second-order maps.
    pub fn energy_map(&self) -> Vec<f64> {
        let maps: Vec<&Vec<f64>> = self.order1.iter().chain(&self.order2).collect();
        let n = self.pooled_height * self.pooled_width;
        (0..n)
            .map(|i| maps.iter().map(|m| m[i]).sum::<f64>() / maps.len() as f64)
            .collect()
    }
}

/// Filter bank sized for a fixed image shape.
pub struct ScatteringNetwork {
    height: usize,
    width: usize,
    wavelets: Vec<Wavelet>,
}

impl ScatteringNetwork {
    pub fn new(height: usize, width: usize) -> Self {
        let mut wavelets: Vec<Wavelet> = (0..SCALES)
            .flat_map(|j| (0..ORIENTATIONS).map(move |o| haar_wavelet(j, o)))
            .collect();
        let lp = littlewood_paley_max(&wavelets, height, width);
        let bound = 1.0 - 1.0 / min_pool_block(height, width) as f64;
        let gain = if lp > 0.0 { (bound / lp).sqrt() } else { 0.0 };
        for wv in &mut wavelets {
            wv.taps.iter_mut().for_each(|t| *t *= gain);
        }
        Self {
            height,
            width,
            wavelets,
        }
    }

    /// Largest `Σ_λ |ψ̂_λ(ω)|²` of the rescaled bank over the image's DFT grid.
    pub fn frame_bound(&self) -> f64 {
        littlewood_paley_max(&self.wavelets, self.height, self.width)
    }

    pub fn transform(&self, gray: &Image) -> Scattering {
        assert_eq!(
            (gray.height(), gray.width()),
            (self.height, self.width),
            "network built for a different image size"
        );
        let x = gray.data().to_vec();
        let (ph, pw) = pooled_dims(self.height, self.width);
        let mut order1 = Vec::new();
        let mut order2 = Vec::new();
        let mut first: Vec<(usize, Vec<f64>)> = Vec::new();
        for wv in &self.wavelets {
            let u = self.modulus_conv(&x, wv);
            order1.push(self.pool(&u));
            first.push((wv.scale, u));
        }
        for (j1, u1) in &first {
            for wv in self.wavelets.iter().filter(|w| w.scale > *j1) {
                order2.push(self.pool(&self.modulus_conv(u1, wv)));
            }
        }
        Scattering {
            pooled_height: ph,
            pooled_width: pw,
            order0: self.pool(&x),
            order1,
            order2,
        }
    }

    fn modulus_conv(&self, u: &[f64], wv: &Wavelet) -> Vec<f64> {
        let (h, w) = (self.height as isize, self.width as isize);
        let off = (wv.size / 2) as isize;
        let mut out = vec![0.0; u.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for ky in 0..wv.size as isize {
                    let rr = (r + ky - off).rem_euclid(h) as usize;
                    for kx in 0..wv.size as isize {
                        let cc = (c + kx - off).rem_euclid(w) as usize;
                        acc += wv.taps[(ky as usize) * wv.size + kx as usize]
                            * u[rr * self.width + cc];
                    }
                }
                out[(r * w + c) as usize] = acc.abs();
            }
        }
        out
    }

    fn pool(&self, u: &[f64]) -> Vec<f64> {
        let (ph, pw) = pooled_dims(self.height, self.width);
        let mut out = vec![0.0; ph * pw];
        let mut counts = vec![0usize; ph * pw];
        for r in 0..self.height {
            for c in 0..self.width {
                let i = (r / POOL) * pw + c / POOL;
                out[i] += u[r * self.width + c];
                counts[i] += 1;
            }
        }
        out.iter_mut()
            .zip(&counts)
            .for_each(|(o, &n)| *o /= n as f64);
        out
    }
}

fn pooled_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(POOL), w.div_ceil(POOL))
}

fn min_pool_block(h: usize, w: usize) -> usize {
    let last = |n: usize| if n.is_multiple_of(POOL) { POOL.min(n) } else { n % POOL };
    let rows = if h >= POOL { last(h).min(POOL) } else { h };
    let cols = if w >= POOL { last(w).min(POOL) } else { w };
    rows * cols
}

fn littlewood_paley_max(wavelets: &[Wavelet], h: usize, w: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for u in 0..h {
        for v in 0..w {
            let mut total = 0.0;
            for wv in wavelets {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..wv.size {
                    for x in 0..wv.size {
                        let phase =
                            -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let t = wv.taps[y * wv.size + x];
                        re += t * phase.cos();
                        im += t * phase.sin();
                    }
                }
                total += re * re + im * im;
            }
            worst = worst.max(total);
        }
    }
    worst
}

/// Bilinear upsampling of a pooled map back to `height × width`, sampling at pool-cell centres.
pub fn upsample_bilinear(
    map: &[f64],
    ph: usize,
    pw: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    let coord = |i: usize, n: usize| -> (usize, usize, f64) {
        let y = ((i as f64 + 0.5) / POOL as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(n - 1);
        (y0, y1, y - y0 as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let (y0, y1, fy) = coord(r, ph);
        for c in 0..width {
            let (x0, x1, fx) = coord(c, pw);
            let top = map[y0 * pw + x0] * (1.0 - fx) + map[y0 * pw + x1] * fx;
            let bot = map[y1 * pw + x0] * (1.0 - fx) + map[y1 * pw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Mean first/second-order scattering energy upsampled to the input size.
pub fn scattering_energy(gray: &Image) -> Vec<f64> {
    let net = ScatteringNetwork::new(gray.height(), gray.width());
    let s = net.transform(gray);
    upsample_bilinear(
        &s.energy_map(),
        s.pooled_height,
        s.pooled_width,
        gray.height(),
        gray.width(),
    )
}
