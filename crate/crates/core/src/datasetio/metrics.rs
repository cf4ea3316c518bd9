use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Image;

pub const MI_BINS: usize = 64;
const WINDOW: usize = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub mse: f64,
    pub ssim: f64,
    /// Bits.
    pub mi: f64,
}

fn luma_pair(a: &Image, b: &Image) -> Result<(Image, Image)> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Contract(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok((a.to_gray(), b.to_gray()))
}

/// Mean local SSIM over every uniform `8 × 8` window (smaller when the image is), stride 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let (a, b) = luma_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    let (wh, ww) = (WINDOW.min(h), WINDOW.min(w));
    let n = (wh * ww) as f64;
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..=h - wh {
        for c in 0..=w - ww {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + wh {
                for j in c..c + ww {
                    let (p, q) = (x[i * w + j], y[i * w + j]);
                    sx += p;
                    sy += q;
                    sxx += p * p;
                    syy += q * q;
                    sxy += p * q;
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cov = sxy / n - mx * my;
            total += (2.0 * mx * my + C1) * (2.0 * cov + C2)
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

fn bin(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * MI_BINS as f64) as usize).min(MI_BINS - 1)
}

/// Mutual information (bits) from a `64 × 64` joint histogram over `[0, 1]`.
pub fn mutual_information(a: &Image, b: &Image) -> Result<f64> {
    let (a, b) = luma_pair(a, b)?;
    let mut joint = vec![0usize; MI_BINS * MI_BINS];
    for (p, q) in a.data().iter().zip(b.data()) {
        joint[bin(*p) * MI_BINS + bin(*q)] += 1;
    }
    let n = a.data().len() as f64;
    let mut px = vec![0.0; MI_BINS];
    let mut py = vec![0.0; MI_BINS];
    for i in 0..MI_BINS {
        for j in 0..MI_BINS {
            let p = joint[i * MI_BINS + j] as f64 / n;
            px[i] += p;
            py[j] += p;
        }
    }
    let mut mi = 0.0;
    for i in 0..MI_BINS {
        for j in 0..MI_BINS {
            let c = joint[i * MI_BINS + j];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (px[i] * py[j])).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Shannon entropy (bits) of the 64-bin luma histogram.
pub fn entropy_bits(img: &Image) -> f64 {
    let g = img.to_gray();
    let mut hist = vec![0usize; MI_BINS];
    for v in g.data() {
        hist[bin(*v)] += 1;
    }
    let n = g.data().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn pair_metrics(a: &Image, b: &Image) -> Result<PairMetrics> {
    let (ga, gb) = luma_pair(a, b)?;
    let mse = ga
        .data()
        .iter()
        .zip(gb.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / ga.data().len() as f64;
    Ok(PairMetrics {
        mse,
        ssim: ssim(&ga, &gb)?,
        mi: mutual_information(&ga, &gb)?,
    })
}

/// Per-pair mean of each metric.
pub fn mean_pair_metrics(pairs: &[(Image, Image)]) -> Result<PairMetrics> {
    if pairs.is_empty() {
        return Err(Error::Contract("no image pairs to compare".into()));
    }
    let mut acc = PairMetrics {
        mse: 0.0,
        ssim: 0.0,
        mi: 0.0,
    };
    for (a, b) in pairs {
        let m = pair_metrics(a, b)?;
        acc.mse += m.mse;
        acc.ssim += m.ssim;
        acc.mi += m.mi;
    }
    let n = pairs.len() as f64;
    Ok(PairMetrics {
        mse: acc.mse / n,
        ssim: acc.ssim / n,
        mi: acc.mi / n,
    })
}
