//! Canny edge detector: 5×5 Gaussian (σ = 1), Sobel gradients, non-maximum
//! suppression, double threshold at 0.1/0.2 of the peak magnitude and
//! 8-connected hysteresis.

use std::collections::VecDeque;

use super::image::{correlate_replicate, Image};

pub const LOW_RATIO: f64 = 0.1;
pub const HIGH_RATIO: f64 = 0.2;
const MAG_FLOOR: f64 = 1e-9;

fn gaussian_kernel_5x5(sigma: f64) -> Vec<f64> {
    let mut k = Vec::with_capacity(25);
    for y in -2i32..=2 {
        for x in -2i32..=2 {
            k.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let s: f64 = k.iter().sum();
    k.iter().map(|v| v / s).collect()
}

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Sobel gradients `(gx, gy)` of the Gaussian-smoothed grayscale image.
pub fn smoothed_gradients(gray: &Image) -> (Vec<f64>, Vec<f64>) {
    let blurred = correlate_replicate(gray, &gaussian_kernel_5x5(1.0), 5, 5);
    let blurred = Image::gray(gray.height(), gray.width(), blurred).expect("same shape");
    (
        correlate_replicate(&blurred, &SOBEL_X, 3, 3),
        correlate_replicate(&blurred, &SOBEL_Y, 3, 3),
    )
}

/// Binary edge map (1 on edges, 0 elsewhere) of a single-channel image.
pub fn canny(gray: &Image) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let (gx, gy) = smoothed_gradients(gray);
    // Magnitudes this far below the input scale are rounding residue of flat regions.
    let floor = MAG_FLOOR * gray.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| x.hypot(*y))
        .map(|m| if m > floor { m } else { 0.0 })
        .collect();

    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };

    let mut thin = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (dr, dc) step along the quantised gradient direction.
            let (dr, dc) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (ri, ci) = (r as isize, c as isize);
            let before = at(ri - dr, ci - dc);
            let after = at(ri + dr, ci + dc);
            // Strict on one side so a symmetric plateau of two keeps a single pixel.
            if m > before && m >= after {
                thin[i] = m;
            }
        }
    }

    let peak = thin.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return vec![0.0; h * w];
    }
    let (low, high) = (LOW_RATIO * peak, HIGH_RATIO * peak);

    let mut edges = vec![0.0; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            edges[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if edges[j] == 0.0 && thin[j] >= low {
                    edges[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}
