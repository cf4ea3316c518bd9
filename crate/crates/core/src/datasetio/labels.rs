use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{GroundTruth, NUM_CATEGORIES};
use crate::obbgeom::{quad_to_obb, OrientedBox, Quad};

/// One annotated target: `category x1 y1 x2 y2 x3 y3 x4 y4` with normalised vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub category: usize,
    pub quad: Quad,
    pub bbox: OrientedBox,
}

impl LabeledInstance {
    pub fn from_quad(category: usize, quad: Quad) -> Result<Self> {
        Ok(Self {
            category,
            quad,
            bbox: quad_to_obb(&quad)?,
        })
    }
}

pub fn parse_label_file(text: &str) -> Result<Vec<LabeledInstance>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 9 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let category: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid category '{}'", fields[0]),
        })?;
        if category >= NUM_CATEGORIES {
            return Err(Error::Validation {
                line: line_no,
                message: format!("category {category} outside 0..{}", NUM_CATEGORIES - 1),
            });
        }
        let mut v = [0.0; 8];
        for (k, f) in fields[1..].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid coordinate '{f}'"),
            })?;
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Validation {
                    line: line_no,
                    message: format!("coordinate {x} outside [0, 1]"),
                });
            }
            v[k] = x;
        }
        let quad = Quad::new([(v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7])]);
        let inst = LabeledInstance::from_quad(category, quad).map_err(|e| Error::Validation {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

/// One line per instance, coordinates at six decimals.
pub fn format_label_file(instances: &[LabeledInstance]) -> String {
    let mut s = String::new();
    for inst in instances {
        let _ = write!(s, "{}", inst.category);
        for v in inst.quad.flat() {
            let _ = write!(s, " {v:.6}");
        }
        s.push('\n');
    }
    s
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabeledInstance>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_label_file(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation { line, message } => Error::Validation {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Every `*.txt` file of `dir`, keyed by file stem (the image id), in sorted order.
pub fn load_label_dir(dir: &Path) -> Result<BTreeMap<String, Vec<LabeledInstance>>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        out.insert(stem.to_string(), read_label_file(&path)?);
    }
    Ok(out)
}

pub fn to_ground_truth(labels: &BTreeMap<String, Vec<LabeledInstance>>) -> Vec<GroundTruth> {
    labels
        .iter()
        .flat_map(|(id, insts)| {
            insts.iter().map(move |i| GroundTruth {
                image_id: id.clone(),
                category: i.category,
                bbox: i.bbox,
            })
        })
        .collect()
}
