//! Gradient-by-ratio edge strength for multiplicative (speckle) noise.
//!
//! For each pixel and each axis the detector compares exponentially weighted
//! means of the two opposite half-windows (4 pixels deep along the axis,
//! 5 pixels wide across it). The edge strength along an axis is `|ln R|` with
//! `R` the ratio of the two means; the two axes combine in quadrature.
//!
//! The guard added to both means is proportional to the global image mean,
//! which keeps the response exactly invariant to a positive rescaling of the
//! input.

use super::image::Image;

pub const HALF_WINDOW: usize = 4;
const ACROSS: isize = 2;
const DECAY: f64 = 0.5;
const GUARD: f64 = 1e-6;

fn weights() -> (Vec<f64>, Vec<f64>) {
    let along: Vec<f64> = (0..HALF_WINDOW)
        .map(|k| (-DECAY * k as f64).exp())
        .collect();
    let across: Vec<f64> = (-ACROSS..=ACROSS)
        .map(|p| (-DECAY * p.unsigned_abs() as f64).exp())
        .collect();
    (along, across)
}

/// Per-pixel ratio edge strength (not yet min-max normalised).
pub fn ratio_edges(gray: &Image) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let global_mean = gray.data().iter().sum::<f64>() / (h * w) as f64;
    if global_mean <= 0.0 {
        return vec![0.0; h * w];
    }
    let eps = GUARD * global_mean;
    let (along, across) = weights();
    let norm: f64 = along.iter().sum::<f64>() * across.iter().sum::<f64>();

    // Weighted mean of a half-window starting one pixel from (r, c) in direction `sign`.
    let side = |r: isize, c: isize, vertical: bool, sign: isize| -> f64 {
        let mut acc = 0.0;
        for (k, wa) in along.iter().enumerate() {
            let d = sign * (k as isize + 1);
            for (p, wp) in (-ACROSS..=ACROSS).zip(&across) {
                let v = if vertical {
                    gray.at_clamped(r + d, c + p)
                } else {
                    gray.at_clamped(r + p, c + d)
                };
                acc += wa * wp * v;
            }
        }
        acc / norm
    };

    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let rh = ((side(r, c, false, 1) + eps) / (side(r, c, false, -1) + eps)).ln();
            let rv = ((side(r, c, true, 1) + eps) / (side(r, c, true, -1) + eps)).ln();
            out.push(rh.hypot(rv));
        }
    }
    out
}
