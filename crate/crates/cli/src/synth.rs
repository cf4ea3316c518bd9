//! Paired synthetic scenes with complementary corruptions: modality A keeps target
//! texture but may be hidden behind an opaque blob, modality B is never occluded but
//! loses texture and carries multiplicative speckle.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use osfuse_core::datasetio::{format_label_file, write_image, LabeledInstance};
use osfuse_core::filters::Image;
use osfuse_core::obbgeom::{obb_to_quad, OrientedBox};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::rng::{substream, Purpose};
use crate::CliError;

pub const NUM_CLASSES: usize = 2;
const BACKGROUND: f64 = 0.25;
/// Target brightness per class, shared by both modalities.
const TARGET_LEVEL: [f64; NUM_CLASSES] = [0.50, 0.36];
/// Stripe contrast of class-0 targets; class-1 targets are flat.
const STRIPE_AMPLITUDE: f64 = 0.14;
const STRIPE_PERIOD_PX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub id: String,
    /// Modality A: textured, possibly occluded.
    pub optical: Image,
    /// Modality B: untextured, speckled, never occluded.
    pub sar: Image,
    pub labels: Vec<LabeledInstance>,
    pub class: usize,
    pub occlusion: Occlusion,
}

/// Ground truth recorded by the generator about the blob over modality A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    /// Fraction of the image the blob covers.
    pub image_fraction: f64,
    /// Fraction of target pixels hidden by the blob.
    pub target_fraction: f64,
}

/// Pixel mask of a disc of the given area fraction centred at `(cr, cc)`, wrapping at the
/// borders so every pixel is covered with probability equal to the fraction.
fn wrapped_disc(size: usize, fraction: f64, cr: f64, cc: f64) -> Vec<bool> {
    let radius = (fraction * (size * size) as f64 / PI).sqrt();
    let s = size as f64;
    let wrap = |d: f64| {
        let d = d.rem_euclid(s);
        d.min(s - d)
    };
    (0..size * size)
        .map(|i| {
            let (r, c) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
            let (dr, dc) = (wrap(r - cr), wrap(c - cc));
            fraction > 0.0 && dr * dr + dc * dc <= radius * radius
        })
        .collect()
}

fn background(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq = rng.random_range(1.0..4.0);
            let dir = rng.random_range(0.0..TAU);
            (
                rng.random_range(0.01..0.03),
                freq * dir.cos(),
                freq * dir.sin(),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    (0..size * size)
        .map(|i| {
            let (y, x) = (
                (i / size) as f64 / size as f64,
                (i % size) as f64 / size as f64,
            );
            BACKGROUND
                + waves
                    .iter()
                    .map(|(a, fx, fy, ph)| a * (TAU * (fx * x + fy * y) + ph).sin())
                    .sum::<f64>()
        })
        .collect()
}

/// One scene pair; `index` selects the generator substream and the balanced class.
pub fn generate_pair(cfg: &DataConfig, seed: u64, split: Split, index: usize) -> SyntheticPair {
    let purpose = match split {
        Split::Train => Purpose::TrainData,
        Split::Test => Purpose::TestData,
    };
    let mut rng = substream(seed, purpose, index as u64);
    let size = cfg.image_size;
    let class = index % NUM_CLASSES;
    let (w, h, theta) = (
        rng.random_range(0.4..0.6),
        rng.random_range(0.4..0.6),
        rng.random_range(0.0..PI),
    );
    // Half extents of the rotated box keep the whole target inside the image.
    let ex = 0.5 * (w * theta.cos().abs() + h * theta.sin().abs());
    let ey = 0.5 * (w * theta.sin().abs() + h * theta.cos().abs());
    let bbox = OrientedBox::new(
        rng.random_range(ex..=1.0 - ex),
        rng.random_range(ey..=1.0 - ey),
        w,
        h,
        theta,
    )
    .expect("sides are positive");
    let base = background(size, &mut rng);
    let stripe_phase = rng.random_range(0.0..TAU);
    let (sin_t, cos_t) = bbox.theta.sin_cos();

    let mut optical = base.clone();
    let mut sar = base;
    let mut target = vec![false; size * size];
    for i in 0..size * size {
        let (y, x) = (
            ((i / size) as f64 + 0.5) / size as f64,
            ((i % size) as f64 + 0.5) / size as f64,
        );
        if !bbox.contains(x, y) {
            continue;
        }
        target[i] = true;
        let level = TARGET_LEVEL[class];
        sar[i] = level;
        optical[i] = if class == 0 {
            let u = ((x - bbox.cx) * cos_t + (y - bbox.cy) * sin_t) * size as f64;
            level + STRIPE_AMPLITUDE * (TAU * u / STRIPE_PERIOD_PX + stripe_phase).sin().signum()
        } else {
            level
        };
    }

    let image_fraction = if cfg.occlusion_rate > 0.0 {
        rng.random_range(0.0..2.0 * cfg.occlusion_rate)
    } else {
        0.0
    };
    let (cr, cc) = (
        rng.random_range(0.0..size as f64),
        rng.random_range(0.0..size as f64),
    );
    let blob_value = rng.random_range(0.1..0.6);
    let blob = wrapped_disc(size, image_fraction, cr, cc);
    let mut hidden = 0usize;
    for i in 0..size * size {
        if blob[i] {
            optical[i] = blob_value;
            hidden += usize::from(target[i]);
        }
    }
    let target_px = target.iter().filter(|t| **t).count().max(1);

    if let Some(shape) = cfg.speckle_shape {
        let gamma = Gamma::new(shape, 1.0 / shape).expect("shape validated positive");
        for v in &mut sar {
            *v *= gamma.sample(&mut rng);
        }
    }
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let label =
        LabeledInstance::from_quad(class, obb_to_quad(&bbox)).expect("box is non-degenerate");
    SyntheticPair {
        id: format!(
            "{}{index:05}",
            if split == Split::Train {
                "train"
            } else {
                "test"
            }
        ),
        optical: Image::gray(size, size, clamp(optical)).expect("square image"),
        sar: Image::gray(size, size, clamp(sar)).expect("square image"),
        labels: vec![label],
        class,
        occlusion: Occlusion {
            image_fraction,
            target_fraction: hidden as f64 / target_px as f64,
        },
    }
}

pub fn generate_synthetic_pairs(cfg: &DataConfig, seed: u64, split: Split) -> Vec<SyntheticPair> {
    let n = match split {
        Split::Train => cfg.train_images,
        Split::Test => cfg.test_images,
    };
    (0..n).map(|i| generate_pair(cfg, seed, split, i)).collect()
}

/// Writes `optical/`, `sar/` and `labels/` subdirectories under `dir`.
pub fn write_dataset(dir: &Path, pairs: &[SyntheticPair]) -> Result<(), CliError> {
    for sub in ["optical", "sar", "labels"] {
        std::fs::create_dir_all(dir.join(sub))
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    for p in pairs {
        write_image(
            &dir.join("optical").join(format!("{}.pgm", p.id)),
            &p.optical,
        )?;
        write_image(&dir.join("sar").join(format!("{}.pgm", p.id)), &p.sar)?;
        let path = dir.join("labels").join(format!("{}.txt", p.id));
        std::fs::write(&path, format_label_file(&p.labels))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DataConfig {
        DataConfig {
            train_images: 40,
            test_images: 20,
            ..DataConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_pairs(&cfg(), 0, Split::Train);
        let b = generate_synthetic_pairs(&cfg(), 0, Split::Train);
        assert_eq!(a, b);
        let c = generate_synthetic_pairs(&cfg(), 1, Split::Train);
        assert_ne!(a[0].optical, c[0].optical);
        let t = generate_synthetic_pairs(&cfg(), 0, Split::Test);
        assert_ne!(a[0].optical, t[0].optical);
    }

    #[test]
    fn no_occlusion_leaves_target_visible() {
        let mut c = cfg();
        c.occlusion_rate = 0.0;
        for p in generate_synthetic_pairs(&c, 3, Split::Train) {
            assert_eq!(p.occlusion.target_fraction, 0.0);
            assert_eq!(p.occlusion.image_fraction, 0.0);
        }
    }

    #[test]
    fn classes_are_balanced_and_labels_valid() {
        let pairs = generate_synthetic_pairs(&cfg(), 2, Split::Test);
        assert_eq!(pairs.iter().filter(|p| p.class == 0).count(), 10);
        for p in &pairs {
            assert_eq!(p.labels[0].category, p.class);
            assert!(p.labels[0]
                .quad
                .flat()
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
            assert!(p
                .sar
                .data()
                .iter()
                .chain(p.optical.data())
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn wrapped_disc_covers_its_fraction() {
        for f in [0.05, 0.3, 0.6] {
            let m = wrapped_disc(64, f, 2.0, 60.0);
            let covered = m.iter().filter(|b| **b).count() as f64 / 4096.0;
            assert!((covered - f).abs() < 0.01, "{f}: {covered}");
        }
    }

    #[test]
    fn speckle_off_keeps_sar_target_flat() {
        let mut c = cfg();
        c.speckle_shape = None;
        let p = generate_pair(&c, 0, Split::Train, 1);
        let level = TARGET_LEVEL[1];
        assert!(
            p.sar
                .data()
                .iter()
                .filter(|v| (**v - level).abs() < 1e-12)
                .count()
                > 100
        );
    }
}
