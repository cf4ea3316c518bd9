//! Histogram of oriented gradients with a dense per-pixel rendering.
//!
//! Gradients use centred `[-1, 0, 1]` differences with replicated borders.
//! Each pixel votes its magnitude into one of nine unsigned orientation bins
//! (hard assignment, 20° wide, bin 0 holds horizontal gradients) of its 8×8
//! cell. Histograms are L2-Hys normalised over 2×2 cell blocks and every
//! pixel is rendered as its own magnitude times the normalisation gain of its
//! (cell, bin) entry, so a cell's rendered mass per bin equals its
//! block-averaged descriptor value.

use std::f64::consts::PI;

use super::image::Image;

pub const CELL: usize = 8;
pub const BINS: usize = 9;
pub const BLOCK: usize = 2;
const HYS_CLIP: f64 = 0.2;

/// Per-pixel `(magnitude, bin)`.
pub fn pixel_orientations(gray: &Image) -> Vec<(f64, usize)> {
    let (h, w) = (gray.height(), gray.width());
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = gray.at_clamped(r, c + 1) - gray.at_clamped(r, c - 1);
            let gy = gray.at_clamped(r + 1, c) - gray.at_clamped(r - 1, c);
            let mag = gx.hypot(gy);
            let theta = gy.atan2(gx).rem_euclid(PI);
            let bin = ((theta / (PI / BINS as f64)) as usize).min(BINS - 1);
            out.push((mag, bin));
        }
    }
    out
}

/// Grid size `(rows, cols)` of cells; partial cells at the border count.
pub fn cell_grid(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(CELL), width.div_ceil(CELL))
}

/// Raw magnitude-weighted histograms per cell, row-major over the cell grid.
pub fn cell_histograms(gray: &Image) -> Vec<[f64; BINS]> {
    let (h, w) = (gray.height(), gray.width());
    let (cr, cc) = cell_grid(h, w);
    let mut hist = vec![[0.0; BINS]; cr * cc];
    for (i, (mag, bin)) in pixel_orientations(gray).into_iter().enumerate() {
        let (r, c) = (i / w, i % w);
        hist[(r / CELL) * cc + c / CELL][bin] += mag;
    }
    hist
}

/// Block-normalised descriptor value for every (cell, bin), averaged over the blocks covering the cell.
pub fn normalized_cell_histograms(gray: &Image) -> Vec<[f64; BINS]> {
    let (cr, cc) = cell_grid(gray.height(), gray.width());
    let raw = cell_histograms(gray);
    let (br, bc) = (BLOCK.min(cr), BLOCK.min(cc));
    let mut acc = vec![[0.0; BINS]; cr * cc];
    let mut hits = vec![0usize; cr * cc];
    for by in 0..=(cr - br) {
        for bx in 0..=(cc - bc) {
            let cells: Vec<usize> = (by..by + br)
                .flat_map(|y| (bx..bx + bc).map(move |x| y * cc + x))
                .collect();
            let mut v: Vec<f64> = cells.iter().flat_map(|&i| raw[i]).collect();
            l2_hys(&mut v);
            for (k, &i) in cells.iter().enumerate() {
                for b in 0..BINS {
                    acc[i][b] += v[k * BINS + b];
                }
                hits[i] += 1;
            }
        }
    }
    for (a, &n) in acc.iter_mut().zip(&hits) {
        for x in a.iter_mut() {
            *x /= n as f64;
        }
    }
    acc
}

fn l2_hys(v: &mut [f64]) {
    let renorm = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            let d = (n * n + 1e-12).sqrt();
            v.iter_mut().for_each(|x| *x /= d);
        }
    };
    renorm(v);
    v.iter_mut().for_each(|x| *x = x.min(HYS_CLIP));
    renorm(v);
}

/// Dense HOG magnitude map with the input's height and width (not yet min-max normalised).
pub fn hog_render(gray: &Image) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let (_, cc) = cell_grid(h, w);
    let raw = cell_histograms(gray);
    let norm = normalized_cell_histograms(gray);
    pixel_orientations(gray)
        .into_iter()
        .enumerate()
        .map(|(i, (mag, bin))| {
            let cell = ((i / w) / CELL) * cc + (i % w) / CELL;
            let total = raw[cell][bin];
            if total > 0.0 {
                mag * norm[cell][bin] / total
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_renders_zero() {
        let img = Image::constant(16, 24, 1, 0.3).unwrap();
        assert!(hog_render(&img).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_normalized_entries_are_bounded() {
        let img = Image::from_fn(24, 24, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap();
        for cell in normalized_cell_histograms(&img) {
            assert!(cell.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rendered_mass_matches_descriptor() {
        let img = Image::from_fn(16, 16, |r, c| ((r + 2 * c) % 5) as f64 / 4.0).unwrap();
        let rendered = hog_render(&img);
        let norm = normalized_cell_histograms(&img);
        let orient = pixel_orientations(&img);
        let mut mass = vec![[0.0; BINS]; 4];
        for (i, v) in rendered.iter().enumerate() {
            let cell = ((i / 16) / CELL) * 2 + (i % 16) / CELL;
            mass[cell][orient[i].1] += v;
        }
        for (m, n) in mass.iter().zip(&norm) {
            for b in 0..BINS {
                assert!((m[b] - n[b]).abs() < 1e-12);
            }
        }
    }
}
