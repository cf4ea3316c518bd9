use serde::{Deserialize, Serialize};

use super::gaussian::bhattacharyya_with_grad;
use super::OrientedBox;
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, softplus, CustomOp, Graph, Tensor, Var};

/// Bins per side-length distribution; normalised sides are scaled by this count.
pub const DFL_BINS: usize = 16;

/// Hellinger values below this have their gradient zeroed (the square root is not differentiable at 0).
const HELLINGER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reg: f64,
    pub dfl: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(reg: f64, dfl: f64, cls: f64) -> Self {
        Self {
            reg,
            dfl,
            cls,
            total: reg + dfl + cls,
        }
    }
}

/// Matched ground truth for each prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    pub boxes: Vec<OrientedBox>,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub reg: Var,
    pub dfl: Var,
    pub cls: Var,
    pub total: Var,
}

struct ProbIouLoss {
    grads: Vec<[f64; 5]>,
}

impl CustomOp for ProbIouLoss {
    fn name(&self) -> &'static str {
        "probiou_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let g = grad_out.data()[0];
        let data = self.grads.iter().flat_map(|r| r.map(|v| v * g)).collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("input shape")]
    }
}

/// Mean ProbIoU Hellinger distance between predicted rows `[cx, cy, w, h, θ]` and targets.
pub fn probiou_loss_var(g: &mut Graph, pred: Var, targets: &[OrientedBox]) -> Result<Var> {
    let (n, k) = g.value(pred).dims2()?;
    if k != 5 || n != targets.len() {
        return Err(Error::Contract(format!(
            "{n}x{k} box predictions for {} targets (need n x 5)",
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (i, t) in targets.iter().enumerate() {
        let row = g.value(pred).row(i);
        let p = OrientedBox::from_array([row[0], row[1], row[2], row[3], row[4]]);
        let (bd, dbd) = bhattacharyya_with_grad(&p, t)?;
        let e = (-bd).exp();
        let h = (1.0 - e).max(0.0).sqrt();
        total += h;
        let dh = if h > HELLINGER_FLOOR {
            e / (2.0 * h)
        } else {
            0.0
        };
        grads.push(dbd.map(|v| v * dh / n as f64));
    }
    let value = Tensor::scalar(total / n as f64);
    Ok(g.custom(&[pred], value, Box::new(ProbIouLoss { grads })))
}

/// Continuous bin targets `side · bins`, two per box (`w` then `h`), clamped to `[0, bins − 1]`.
pub fn dfl_targets(boxes: &[OrientedBox], bins: usize) -> Vec<f64> {
    let top = (bins - 1) as f64;
    boxes
        .iter()
        .flat_map(|b| [b.w, b.h])
        .map(|s| (s * bins as f64).clamp(0.0, top))
        .collect()
}

struct DflLoss {
    /// Softmax minus the two-hot target weights, already divided by the row count.
    grads: Vec<f64>,
}

impl CustomOp for DflLoss {
    fn name(&self) -> &'static str {
        "distribution_focal_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let g = grad_out.data()[0];
        let data = self.grads.iter().map(|v| v * g).collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("input shape")]
    }
}

/// Mean distribution focal loss of `m × bins` logits against `m` continuous targets.
pub fn dfl_var(g: &mut Graph, logits: Var, targets: &[f64]) -> Result<Var> {
    let (m, bins) = g.value(logits).dims2()?;
    if m != targets.len() || bins < 2 {
        return Err(Error::Contract(format!(
            "{m}x{bins} distribution logits for {} targets",
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m * bins);
    for (r, &y) in targets.iter().enumerate() {
        if !(0.0..=(bins - 1) as f64).contains(&y) {
            return Err(Error::Contract(format!(
                "target {y} outside [0, {}]",
                bins - 1
            )));
        }
        let row = g.value(logits).row(r);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let i = (y.floor() as usize).min(bins - 2);
        let (wl, wr) = (i as f64 + 1.0 - y, y - i as f64);
        let (lp_i, lp_j) = (row[i] - lse, row[i + 1] - lse);
        let term = |w: f64, lp: f64| if w == 0.0 { 0.0 } else { w * lp };
        total -= term(wl, lp_i) + term(wr, lp_j);
        for (k, v) in row.iter().enumerate() {
            let mut d = (v - lse).exp();
            if k == i {
                d -= wl;
            }
            if k == i + 1 {
                d -= wr;
            }
            grads.push(d / m as f64);
        }
    }
    let value = Tensor::scalar(total / m as f64);
    Ok(g.custom(&[logits], value, Box::new(DflLoss { grads })))
}

struct BceLoss {
    targets: Vec<f64>,
}

impl CustomOp for BceLoss {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let g = grad_out.data()[0] / self.targets.len() as f64;
        let data = inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(z, y)| (sigmoid(*z) - y) * g)
            .collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("input shape")]
    }
}

/// Mean `softplus(z) − y·z` over every logit.
pub fn bce_with_logits_var(g: &mut Graph, logits: Var, targets: &Tensor) -> Result<Var> {
    if g.value(logits).shape() != targets.shape() {
        return Err(Error::Contract(format!(
            "logits {:?} and targets {:?} differ in shape",
            g.value(logits).shape(),
            targets.shape()
        )));
    }
    let n = targets.len() as f64;
    let total: f64 = g
        .value(logits)
        .data()
        .iter()
        .zip(targets.data())
        .map(|(z, y)| softplus(*z) - y * z)
        .sum();
    Ok(g.custom(
        &[logits],
        Tensor::scalar(total / n),
        Box::new(BceLoss {
            targets: targets.data().to_vec(),
        }),
    ))
}

/// Binary cross-entropy on a probability.
pub fn bce_prob(p: f64, y: f64) -> f64 {
    let term = |w: f64, q: f64| if w == 0.0 { 0.0 } else { w * q.ln() };
    -(term(y, p) + term(1.0 - y, 1.0 - p))
}

fn one_hot(classes: &[usize], k: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[classes.len(), k]);
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::Contract(format!(
                "class {c} out of range for {k} logits"
            )));
        }
        t.set2(i, c, 1.0);
    }
    Ok(t)
}

/// All three terms on a graph. `boxes` is `n × 5`, `dist` is `n × 2·DFL_BINS` (the `w`
/// distribution then the `h` distribution), `logits` is `n × K`.
pub fn loss_terms_var(
    g: &mut Graph,
    boxes: Var,
    dist: Var,
    logits: Var,
    targets: &LossTargets,
) -> Result<LossVars> {
    let n = targets.boxes.len();
    if targets.classes.len() != n {
        return Err(Error::Contract(format!(
            "{} target classes for {n} target boxes",
            targets.classes.len()
        )));
    }
    let (ln, k) = g.value(logits).dims2()?;
    if ln != n {
        return Err(Error::Contract(format!("{ln} logit rows for {n} targets")));
    }
    let (dn, dw) = g.value(dist).dims2()?;
    if dn != n || dw % 2 != 0 {
        return Err(Error::Contract(format!(
            "distribution logits must be {n} x 2·bins, got {dn}x{dw}"
        )));
    }
    let bins = dw / 2;
    let reg = probiou_loss_var(g, boxes, &targets.boxes)?;
    let per_side = g.reshape(dist, &[2 * n, bins])?;
    let dfl = dfl_var(g, per_side, &dfl_targets(&targets.boxes, bins))?;
    let cls = bce_with_logits_var(g, logits, &one_hot(&targets.classes, k)?)?;
    let partial = g.add(reg, dfl)?;
    let total = g.add(partial, cls)?;
    Ok(LossVars {
        reg,
        dfl,
        cls,
        total,
    })
}

pub fn loss_terms(
    pred_boxes: &[OrientedBox],
    pred_dist: &Tensor,
    pred_logits: &Tensor,
    targets: &LossTargets,
) -> Result<LossTerms> {
    if pred_boxes.len() != targets.boxes.len() || pred_boxes.is_empty() {
        return Err(Error::Contract(format!(
            "{} predicted boxes for {} targets",
            pred_boxes.len(),
            targets.boxes.len()
        )));
    }
    let mut g = Graph::new();
    let rows: Vec<f64> = pred_boxes.iter().flat_map(|b| b.to_array()).collect();
    let b = g.constant(Tensor::new(vec![pred_boxes.len(), 5], rows)?);
    let d = g.constant(pred_dist.clone());
    let l = g.constant(pred_logits.clone());
    let v = loss_terms_var(&mut g, b, d, l, targets)?;
    let get = |var: Var| g.value(var).data()[0];
    Ok(LossTerms::new(get(v.reg), get(v.dfl), get(v.cls)))
}
