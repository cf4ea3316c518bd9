//! COCO-style evaluation of oriented detections: greedy per-image matching by
//! rotated IoU, 101-point interpolated average precision per class, and the
//! AP50 / AP75 / mAP@[.50:.95] summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obbgeom::{rotated_iou, OrientedBox};

pub const NUM_CATEGORIES: usize = 6;

pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "bridge",
    "harbor",
    "oil tank",
    "playground",
    "airport",
    "wind turbine",
];

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Recall sample points `0, 0.01, …, 1`, spaced exactly as the COCO reference builds them.
fn recall_points() -> [f64; 101] {
    let step = 1.0 / 100.0;
    let mut r: [f64; 101] = std::array::from_fn(|i| i as f64 * step);
    r[100] = 1.0;
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub category: usize,
    pub bbox: OrientedBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub category: usize,
    pub bbox: OrientedBox,
}

/// Outcome of matching one image's detections of one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// One flag per detection, in the given (score-descending) order.
    pub true_positive: Vec<bool>,
    pub unmatched_gt: usize,
}

/// Greedy matching: each detection takes the unmatched ground truth of highest IoU
/// (lowest index on ties) if that IoU reaches `iou_thresh`.
pub fn match_detections(
    dets: &[&OrientedBox],
    gts: &[&OrientedBox],
    iou_thresh: f64,
) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let iou = rotated_iou(d, g);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        flags.push(best.is_some());
    }
    MatchResult {
        true_positive: flags,
        unmatched_gt: taken.iter().filter(|t| !**t).count(),
    }
}

/// 101-point interpolated AP of a score-ranked TP/FP list; `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let total: f64 = recall_points()
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP50 per category in percent; `None` for categories without ground truth.
    pub per_class_ap50: Vec<Option<f64>>,
    pub per_class_ap75: Vec<Option<f64>>,
    pub per_class_map: Vec<Option<f64>>,
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
    pub num_detections: usize,
    pub num_ground_truth: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>8}",
            "category", "AP50", "AP75", "mAP"
        );
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        for (k, name) in CATEGORY_NAMES.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<14} {:>8} {:>8} {:>8}",
                name,
                cell(self.per_class_ap50[k]),
                cell(self.per_class_ap75[k]),
                cell(self.per_class_map[k])
            );
        }
        let _ = writeln!(
            s,
            "{:<14} {:>8.2} {:>8.2} {:>8.2}",
            "all", self.ap50, self.ap75, self.map
        );
        s
    }
}

fn check_category(c: usize) -> Result<()> {
    if c >= NUM_CATEGORIES {
        return Err(Error::Input(format!(
            "unknown category id {c} (expected 0..{})",
            NUM_CATEGORIES - 1
        )));
    }
    Ok(())
}

/// Per-category AP (fraction) at one IoU threshold.
fn class_aps(dets: &[Detection], gts: &[GroundTruth], thresh: f64) -> Vec<Option<f64>> {
    (0..NUM_CATEGORIES)
        .map(|cat| {
            let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<&OrientedBox>)> = BTreeMap::new();
            for g in gts.iter().filter(|g| g.category == cat) {
                by_image.entry(&g.image_id).or_default().1.push(&g.bbox);
            }
            let n_gt = gts.iter().filter(|g| g.category == cat).count();
            for (i, d) in dets.iter().enumerate().filter(|(_, d)| d.category == cat) {
                by_image.entry(&d.image_id).or_default().0.push(i);
            }
            let mut scored: Vec<(f64, usize, bool)> = Vec::new();
            for (det_idx, gt_boxes) in by_image.values_mut() {
                det_idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
                let boxes: Vec<&OrientedBox> = det_idx.iter().map(|&i| &dets[i].bbox).collect();
                let m = match_detections(&boxes, gt_boxes, thresh);
                scored.extend(
                    det_idx
                        .iter()
                        .zip(m.true_positive)
                        .map(|(&i, tp)| (dets[i].score, i, tp)),
                );
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let flags: Vec<bool> = scored.iter().map(|s| s.2).collect();
            average_precision(&flags, n_gt)
        })
        .collect()
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// AP50, AP75 and mAP@[.50:.95] (percent), averaged over categories that have ground truth.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth]) -> Result<EvalReport> {
    for c in dets
        .iter()
        .map(|d| d.category)
        .chain(gts.iter().map(|g| g.category))
    {
        check_category(c)?;
    }
    let per_threshold: Vec<Vec<Option<f64>>> = iou_thresholds()
        .iter()
        .map(|&t| class_aps(dets, gts, t))
        .collect();
    let pct = |v: &[Option<f64>]| v.iter().map(|x| x.map(|a| a * 100.0)).collect::<Vec<_>>();
    let per_class_map: Vec<Option<f64>> = (0..NUM_CATEGORIES)
        .map(|c| {
            let vals: Vec<f64> = per_threshold.iter().filter_map(|t| t[c]).collect();
            (!vals.is_empty()).then(|| 100.0 * vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let map =
        per_threshold.iter().map(|t| mean_defined(t)).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalReport {
        per_class_ap50: pct(&per_threshold[0]),
        per_class_ap75: pct(&per_threshold[5]),
        per_class_map,
        ap50: 100.0 * mean_defined(&per_threshold[0]),
        ap75: 100.0 * mean_defined(&per_threshold[5]),
        map: 100.0 * map,
        num_detections: dets.len(),
        num_ground_truth: gts.len(),
    })
}

/// Greedy rotated NMS within each (image, category); keeps the highest-scoring box of any
/// overlapping group whose IoU exceeds `iou_thresh`.
pub fn rotated_nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].image_id == dets[i].image_id
                && dets[k].category == dets[i].category
                && rotated_iou(&dets[k].bbox, &dets[i].bbox) > iou_thresh
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// Parses `image_id category score cx cy w h theta` records, one per nonempty line.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let category: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid category '{}'", fields[1]),
        })?;
        let mut nums = [0.0; 6];
        for (k, f) in fields[2..].iter().enumerate() {
            nums[k] = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid number '{f}'"),
            })?;
        }
        if !(0.0..=1.0).contains(&nums[0]) {
            return Err(Error::Validation {
                line: line_no,
                message: format!("score {} outside [0, 1]", nums[0]),
            });
        }
        let bbox = OrientedBox::new(nums[1], nums[2], nums[3], nums[4], nums[5]).map_err(|e| {
            Error::Validation {
                line: line_no,
                message: e.to_string(),
            }
        })?;
        out.push(Detection {
            image_id: fields[0].to_string(),
            category,
            bbox,
            score: nums[0],
        });
    }
    Ok(out)
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.image_id, d.category, d.score, b.cx, b.cy, b.w, b.h, b.theta
        );
    }
    s
}
