use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::labels::LabeledInstance;
use crate::error::{Error, Result};
use crate::evalkit::{CATEGORY_NAMES, NUM_CATEGORIES};

/// Angle bins over `[0, π/2)`, 5° each.
pub const ANGLE_BINS: usize = 18;
/// Aspect-ratio bins `[1,2), [2,3), …, [9,10), [10,∞)`.
pub const ASPECT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_images: usize,
    pub num_instances: usize,
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
    pub instances_per_image: f64,
    pub aspect_histogram: Vec<usize>,
    pub angle_histogram: Vec<usize>,
    /// Mean `w · h` in pixels per category; `None` when the category is absent.
    pub mean_pixel_area: Vec<Option<f64>>,
}

pub fn dataset_stats(
    labels: &[Vec<LabeledInstance>],
    image_size_px: usize,
) -> Result<DatasetStats> {
    if labels.is_empty() {
        return Err(Error::Contract("statistics need at least one image".into()));
    }
    let px = image_size_px as f64;
    let mut counts = vec![0usize; NUM_CATEGORIES];
    let mut area_sum = vec![0.0; NUM_CATEGORIES];
    let mut aspect = vec![0usize; ASPECT_BINS];
    let mut angle = vec![0usize; ANGLE_BINS];
    for inst in labels.iter().flatten() {
        let b = inst.bbox;
        counts[inst.category] += 1;
        area_sum[inst.category] += b.w * b.h * px * px;
        let ratio = b.w.max(b.h) / b.w.min(b.h);
        aspect[((ratio.floor() as usize).saturating_sub(1)).min(ASPECT_BINS - 1)] += 1;
        let k = (b.theta / FRAC_PI_2 * ANGLE_BINS as f64).floor();
        angle[(k.max(0.0) as usize).min(ANGLE_BINS - 1)] += 1;
    }
    let total: usize = counts.iter().sum();
    let percentages = counts
        .iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                100.0 * c as f64 / total as f64
            }
        })
        .collect();
    let mean_pixel_area = counts
        .iter()
        .zip(&area_sum)
        .map(|(&c, &a)| (c > 0).then(|| a / c as f64))
        .collect();
    Ok(DatasetStats {
        num_images: labels.len(),
        num_instances: total,
        counts,
        percentages,
        instances_per_image: total as f64 / labels.len() as f64,
        aspect_histogram: aspect,
        angle_histogram: angle,
        mean_pixel_area,
    })
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "images {}  instances {}  instances/image {:.2}",
            self.num_images, self.num_instances, self.instances_per_image
        );
        let _ = writeln!(
            s,
            "\n{:<14} {:>8} {:>8} {:>12}",
            "category", "count", "%", "area(px)"
        );
        for k in 0..NUM_CATEGORIES {
            let area =
                self.mean_pixel_area[k].map_or_else(|| "-".to_string(), |a| format!("{a:.1}"));
            let _ = writeln!(
                s,
                "{:<14} {:>8} {:>8.2} {:>12}",
                CATEGORY_NAMES[k], self.counts[k], self.percentages[k], area
            );
        }
        let _ = writeln!(s, "\naspect ratio");
        for (i, c) in self.aspect_histogram.iter().enumerate() {
            let label = if i + 1 == ASPECT_BINS {
                format!("[{},inf)", i + 1)
            } else {
                format!("[{},{})", i + 1, i + 2)
            };
            let _ = writeln!(s, "  {label:<9} {c}");
        }
        let _ = writeln!(s, "\nangle (deg)");
        let width = 90 / ANGLE_BINS;
        for (i, c) in self.angle_histogram.iter().enumerate() {
            let _ = writeln!(s, "  [{:>2},{:>2}) {c}", i * width, (i + 1) * width);
        }
        s
    }
}
