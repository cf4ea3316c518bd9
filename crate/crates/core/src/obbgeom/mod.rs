//! Oriented boxes: quadrilateral conversion, angle canonicalisation, exact
//! rotated IoU, Gaussian boxes with ProbIoU, and the detection losses.

mod gaussian;
mod loss;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gaussian::{bhattacharyya, obb_to_gaussian, probiou, probiou_hellinger, GaussianBox};
pub use loss::{
    bce_prob, bce_with_logits_var, dfl_targets, dfl_var, loss_terms, loss_terms_var,
    probiou_loss_var, LossTargets, LossTerms, LossVars, DFL_BINS,
};

/// Angles this close below `π/2` snap to `0` (with `w`/`h` swapped).
const ANGLE_SNAP: f64 = 1e-12;

/// Rotated rectangle in normalised image units; `theta` rotates the `w` side from the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Validated box; the angle is canonicalised to `[0, π/2)`.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            w,
            h,
            theta,
        };
        b.validate()?;
        Ok(normalize_angle(b))
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.cx, self.cy, self.w, self.h, self.theta];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Degenerate(format!(
                "box sides must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
            theta: v[4],
        }
    }

    /// Whether `(x, y)` lies inside the closed rectangle.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.w / 2.0 && v.abs() <= self.h / 2.0
    }
}

/// Four vertices; canonical quads wind counter-clockwise (positive signed area).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub pts: [(f64, f64); 4],
}

impl Quad {
    pub fn new(pts: [(f64, f64); 4]) -> Self {
        Self { pts }
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.pts)
    }

    /// Same vertices in counter-clockwise order.
    pub fn canonical(&self) -> Quad {
        if self.signed_area() < 0.0 {
            let [a, b, c, d] = self.pts;
            Quad { pts: [a, d, c, b] }
        } else {
            *self
        }
    }

    pub fn flat(&self) -> [f64; 8] {
        let p = self.pts;
        [
            p[0].0, p[0].1, p[1].0, p[1].1, p[2].0, p[2].1, p[3].0, p[3].1,
        ]
    }
}

/// Reduces `theta` to `[0, π/2)`; an odd number of quarter turns swaps `w` and `h`.
pub fn normalize_angle(b: OrientedBox) -> OrientedBox {
    let turns = (b.theta / FRAC_PI_2).floor();
    let mut theta = b.theta - turns * FRAC_PI_2;
    let mut odd = (turns as i64).rem_euclid(2) == 1;
    if theta >= FRAC_PI_2 - ANGLE_SNAP {
        theta = 0.0;
        odd = !odd;
    }
    if theta < 0.0 {
        theta = 0.0;
    }
    let (w, h) = if odd { (b.h, b.w) } else { (b.w, b.h) };
    OrientedBox { w, h, theta, ..b }
}

/// Corners of the rectangle, counter-clockwise; no clipping to the image.
pub fn obb_to_quad(b: &OrientedBox) -> Quad {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    let corner = |u: f64, v: f64| (b.cx + u * c - v * s, b.cy + u * s + v * c);
    Quad {
        pts: [
            corner(-hw, -hh),
            corner(hw, -hh),
            corner(hw, hh),
            corner(-hw, hh),
        ],
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &pt in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0
            {
                hull.pop();
            }
            hull.push(pt);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of the quad's vertices.
pub fn quad_to_obb(q: &Quad) -> Result<OrientedBox> {
    let hull = convex_hull(&q.pts);
    let scale = q
        .pts
        .iter()
        .flat_map(|p| [p.0.abs(), p.1.abs()])
        .fold(1.0f64, f64::max);
    if hull.len() < 3 || shoelace(&hull).abs() <= 1e-12 * scale * scale {
        return Err(Error::Degenerate(format!(
            "quad {:?} has collinear or duplicate vertices",
            q.pts
        )));
    }
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let phi = (b.1 - a.1).atan2(b.0 - a.0);
        let (s, c) = phi.sin_cos();
        let (mut umin, mut umax, mut vmin, mut vmax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &hull {
            let u = p.0 * c + p.1 * s;
            let v = -p.0 * s + p.1 * c;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a - 1e-15) {
            let (uc, vc) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
            let b = OrientedBox {
                cx: uc * c - vc * s,
                cy: uc * s + vc * c,
                w: umax - umin,
                h: vmax - vmin,
                theta: phi.rem_euclid(2.0 * PI),
            };
            best = Some((area, b));
        }
    }
    let (_, b) = best.expect("hull has edges");
    Ok(normalize_angle(b))
}

/// Clips convex polygon `subject` by convex counter-clockwise polygon `clip`.
fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// Area of the intersection of two oriented boxes.
pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let pa = obb_to_quad(a).canonical().pts;
    let pb = obb_to_quad(b).canonical().pts;
    let poly = clip_polygon(&pa, &pb);
    if poly.len() < 3 {
        return 0.0;
    }
    shoelace(&poly).abs()
}

/// Exact IoU of two rotated rectangles; zero-area boxes give 0.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > 0.0 && ab > 0.0) {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = aa + ab - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn same_box(a: &OrientedBox, b: &OrientedBox, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| close(*x, y, tol))
    }

    #[test]
    fn axis_aligned_quad() {
        let q = Quad::new([(0.1, 0.2), (0.3, 0.2), (0.3, 0.4), (0.1, 0.4)]);
        let b = quad_to_obb(&q).unwrap();
        assert!(
            same_box(
                &b,
                &OrientedBox::from_array([0.2, 0.3, 0.2, 0.2, 0.0]),
                1e-12
            ),
            "{b:?}"
        );
    }

    fn quarter_turn(q: &Quad, cx: f64, cy: f64) -> Quad {
        Quad::new(q.pts.map(|p| (cx - (p.1 - cy), cy + (p.0 - cx))))
    }

    #[test]
    fn quarter_turned_square_is_the_same_box() {
        let q = Quad::new([(0.1, 0.2), (0.3, 0.2), (0.3, 0.4), (0.1, 0.4)]);
        let (a, b) = (
            quad_to_obb(&q).unwrap(),
            quad_to_obb(&quarter_turn(&q, 0.2, 0.3)).unwrap(),
        );
        assert!(same_box(&a, &b, 1e-12), "{a:?} vs {b:?}");
    }

    #[test]
    fn quarter_turned_rectangle_swaps_sides() {
        let q = Quad::new([(0.1, 0.2), (0.5, 0.2), (0.5, 0.3), (0.1, 0.3)]);
        let (a, b) = (
            quad_to_obb(&q).unwrap(),
            quad_to_obb(&quarter_turn(&q, 0.3, 0.25)).unwrap(),
        );
        assert!(close(a.w, 0.4, 1e-12) && close(a.h, 0.1, 1e-12), "{a:?}");
        assert!(
            close(b.theta, 0.0, 1e-12) && close(b.w, 0.1, 1e-12) && close(b.h, 0.4, 1e-12),
            "{b:?}"
        );
    }

    #[test]
    fn degenerate_quads_rejected() {
        let line = Quad::new([(0.0, 0.0), (0.1, 0.1), (0.2, 0.2), (0.3, 0.3)]);
        assert!(matches!(quad_to_obb(&line), Err(Error::Degenerate(_))));
        let dup = Quad::new([(0.1, 0.1); 4]);
        assert!(quad_to_obb(&dup).is_err());
    }

    #[test]
    fn quad_corners() {
        let q = obb_to_quad(&OrientedBox::from_array([0.5, 0.5, 0.2, 0.2, 0.0]));
        assert_eq!(q.pts, [(0.4, 0.4), (0.6, 0.4), (0.6, 0.6), (0.4, 0.6)]);
        assert!(q.signed_area() > 0.0);
        let d = obb_to_quad(&OrientedBox::from_array([0.5, 0.5, 1.0, 1.0, FRAC_PI_4]));
        for p in d.pts {
            let (dx, dy) = (p.0 - 0.5, p.1 - 0.5);
            assert!(close(dx.hypot(dy), 1.0 / 2f64.sqrt(), 1e-12));
            assert!(close(dx.abs().min(dy.abs()), 0.0, 1e-12));
        }
        // Corners may leave the unit square.
        let big = obb_to_quad(&OrientedBox::from_array([0.05, 0.05, 0.5, 0.5, 0.3]));
        assert!(big.pts.iter().any(|p| p.0 < 0.0 || p.1 < 0.0));
    }

    #[test]
    fn angle_normalisation() {
        let b = normalize_angle(OrientedBox::from_array([0.0, 0.0, 2.0, 1.0, FRAC_PI_2]));
        assert_eq!((b.theta, b.w, b.h), (0.0, 1.0, 2.0));
        let b = normalize_angle(OrientedBox::from_array([0.0, 0.0, 2.0, 1.0, PI]));
        assert!(close(b.theta, 0.0, 1e-15) && b.w == 2.0 && b.h == 1.0);
        let b = normalize_angle(OrientedBox::from_array([0.0, 0.0, 2.0, 1.0, -0.3]));
        assert!(close(b.theta, FRAC_PI_2 - 0.3, 1e-15) && b.w == 1.0);
    }

    #[test]
    fn iou_examples() {
        let a = OrientedBox::from_array([0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(close(rotated_iou(&a, &a), 1.0, 1e-15));
        let far = OrientedBox { cx: 5.0, ..a };
        assert_eq!(rotated_iou(&a, &far), 0.0);
        let half = OrientedBox { cx: 0.5, ..a };
        assert!(close(rotated_iou(&a, &half), 1.0 / 3.0, 1e-12));
        let diamond = OrientedBox {
            theta: FRAC_PI_4,
            ..a
        };
        // Octagon overlap: 2(√2 − 1) over 2 − 2(√2 − 1).
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!(close(
            rotated_iou(&a, &diamond),
            inter / (2.0 - inter),
            1e-12
        ));
        let zero = OrientedBox { w: 0.0, ..a };
        assert_eq!(rotated_iou(&a, &zero), 0.0);
    }

    #[test]
    fn contains_matches_corners() {
        let b = OrientedBox::from_array([0.3, 0.6, 0.4, 0.2, 0.7]);
        assert!(b.contains(0.3, 0.6));
        for p in obb_to_quad(&b).pts {
            let inward = (p.0 + (0.3 - p.0) * 1e-6, p.1 + (0.6 - p.1) * 1e-6);
            assert!(b.contains(inward.0, inward.1));
            let outward = (p.0 + (p.0 - 0.3) * 1e-6, p.1 + (p.1 - 0.6) * 1e-6);
            assert!(!b.contains(outward.0, outward.1));
        }
    }
}
