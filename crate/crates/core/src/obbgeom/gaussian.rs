use serde::{Deserialize, Serialize};

use super::OrientedBox;
use crate::error::{Error, Result};

/// 2-D Gaussian with the first two moments of a uniform rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBox {
    pub mean: [f64; 2],
    /// Symmetric `[[a, c], [c, b]]`.
    pub cov: [[f64; 2]; 2],
}

impl GaussianBox {
    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }
}

/// `(a, b, c)` entries of `R diag(w²/12, h²/12) Rᵀ`.
pub(super) fn covariance_entries(w: f64, h: f64, theta: f64) -> (f64, f64, f64) {
    let (p, q) = (w * w / 12.0, h * h / 12.0);
    let (s, c) = theta.sin_cos();
    (
        p * c * c + q * s * s,
        p * s * s + q * c * c,
        (p - q) * c * s,
    )
}

pub fn obb_to_gaussian(b: &OrientedBox) -> GaussianBox {
    let (a, bb, c) = covariance_entries(b.w, b.h, b.theta);
    GaussianBox {
        mean: [b.cx, b.cy],
        cov: [[a, c], [c, bb]],
    }
}

/// Bhattacharyya distance between the Gaussians of two boxes, clamped at zero.
pub fn bhattacharyya(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    Ok(bhattacharyya_with_grad(a, b)?.0)
}

/// `(B, ∂B/∂[cx, cy, w, h, θ] of a)`.
pub(super) fn bhattacharyya_with_grad(a: &OrientedBox, b: &OrientedBox) -> Result<(f64, [f64; 5])> {
    let (a1, b1, c1) = covariance_entries(a.w, a.h, a.theta);
    let (a2, b2, c2) = covariance_entries(b.w, b.h, b.theta);
    let (ma, mb, mc) = ((a1 + a2) / 2.0, (b1 + b2) / 2.0, (c1 + c2) / 2.0);
    let det_m = ma * mb - mc * mc;
    let det1 = a1 * b1 - c1 * c1;
    let det2 = a2 * b2 - c2 * c2;
    let scale = (ma + mb).max(f64::MIN_POSITIVE);
    if !(det_m > 1e-24 * scale * scale) || !(det1 > 0.0) || !(det2 > 0.0) {
        return Err(Error::Degenerate(format!(
            "singular box covariance (det {det_m:e}) for {a:?} and {b:?}"
        )));
    }
    let (dx, dy) = (a.cx - b.cx, a.cy - b.cy);
    // M⁻¹ = [[mb, -mc], [-mc, ma]] / det_m
    let (ia, ib, ic) = (mb / det_m, ma / det_m, -mc / det_m);
    let quad = ia * dx * dx + ib * dy * dy + 2.0 * ic * dx * dy;
    let raw = quad / 8.0 + 0.5 * (det_m / (det1 * det2).sqrt()).ln();
    if raw <= 0.0 {
        return Ok((0.0, [0.0; 5]));
    }

    // ∂B/∂μ₁ = M⁻¹ d / 4
    let md = (ia * dx + ic * dy, ic * dx + ib * dy);
    let g_cx = md.0 / 4.0;
    let g_cy = md.1 / 4.0;
    // G = ∂B/∂Σ₁ = −(M⁻¹ d)(M⁻¹ d)ᵀ / 16 + (M⁻¹ − Σ₁⁻¹) / 4
    let (sa, sb, sc) = (b1 / det1, a1 / det1, -c1 / det1);
    let ga = -md.0 * md.0 / 16.0 + (ia - sa) / 4.0;
    let gb = -md.1 * md.1 / 16.0 + (ib - sb) / 4.0;
    let gc = -md.0 * md.1 / 16.0 + (ic - sc) / 4.0;
    let contract = |da: f64, db: f64, dc: f64| ga * da + gb * db + 2.0 * gc * dc;

    let (s, c) = a.theta.sin_cos();
    let (p, q) = (a.w * a.w / 12.0, a.h * a.h / 12.0);
    let g_w = contract(a.w / 6.0 * c * c, a.w / 6.0 * s * s, a.w / 6.0 * c * s);
    let g_h = contract(a.h / 6.0 * s * s, a.h / 6.0 * c * c, -a.h / 6.0 * c * s);
    let s2 = (2.0 * a.theta).sin();
    let c2 = (2.0 * a.theta).cos();
    let g_t = contract((q - p) * s2, (p - q) * s2, (p - q) * c2);
    Ok((raw, [g_cx, g_cy, g_w, g_h, g_t]))
}

/// Hellinger distance `√(1 − e^{−B})` between the two box Gaussians.
pub fn probiou_hellinger(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    Ok((1.0 - (-bhattacharyya(a, b)?).exp()).max(0.0).sqrt())
}

/// ProbIoU similarity `1 − H` in `[0, 1]`.
pub fn probiou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    Ok(1.0 - probiou_hellinger(a, b)?)
}
