//! Area attention fusion: the grid is cut into `k` strips along one axis and
//! each strip runs bidirectional cross-attention between the two modalities.
//!
//! Within a strip, queries from one modality attend over keys of the other
//! and read the other's raw features as values. The fused feature of a cell is
//! `(attn_{O←S} + attn_{S←O} + (O + S) / 2) / 3`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{matmul, softmax_lastdim, Graph, Tensor, Var};
use crate::scanorders::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Strips of `H/k` full-width rows.
    Horizontal,
    /// Strips of `W/k` full-height columns.
    Vertical,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Horizontal => "horizontal",
            Axis::Vertical => "vertical",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "horizontal" | "h" => Ok(Axis::Horizontal),
            "vertical" | "v" => Ok(Axis::Vertical),
            _ => Err(Error::Input(format!("unknown partition axis '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaConfig {
    pub k: usize,
    pub axis: Axis,
    pub head_dim: usize,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            k: 4,
            axis: Axis::Horizontal,
            head_dim: 8,
        }
    }
}

impl AreaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.head_dim == 0 {
            return Err(Error::Contract(format!(
                "block count and head width must be positive, got k={} head_dim={}",
                self.k, self.head_dim
            )));
        }
        Ok(())
    }

    fn partitioned_len(&self, height: usize, width: usize) -> usize {
        match self.axis {
            Axis::Horizontal => height,
            Axis::Vertical => width,
        }
    }

    /// Strip length along the partition axis after zero padding to a multiple of `k`.
    pub fn strip_len(&self, height: usize, width: usize) -> usize {
        self.partitioned_len(height, width).div_ceil(self.k)
    }

    /// Row-major cell indices of every strip over the padded grid; `None` marks a padding cell.
    pub fn strips(&self, height: usize, width: usize) -> Vec<Vec<Option<usize>>> {
        let len = self.strip_len(height, width);
        (0..self.k)
            .map(|b| {
                let mut cells = Vec::new();
                match self.axis {
                    Axis::Horizontal => {
                        for r in b * len..(b + 1) * len {
                            for c in 0..width {
                                cells.push((r < height).then_some(r * width + c));
                            }
                        }
                    }
                    Axis::Vertical => {
                        for r in 0..height {
                            for c in b * len..(b + 1) * len {
                                cells.push((c < width).then_some(r * width + c));
                            }
                        }
                    }
                }
                cells
            })
            .collect()
    }
}

/// Splits `fm` into `k` strips, zero padding the partition axis to a multiple of `k`.
pub fn area_partition(fm: &FeatureMap, cfg: &AreaConfig) -> Result<Vec<FeatureMap>> {
    cfg.validate()?;
    let (h, w, ch) = (fm.height(), fm.width(), fm.channels());
    let len = cfg.strip_len(h, w);
    let (bh, bw) = match cfg.axis {
        Axis::Horizontal => (len, w),
        Axis::Vertical => (h, len),
    };
    cfg.strips(h, w)
        .into_iter()
        .map(|cells| {
            let mut data = Vec::with_capacity(cells.len() * ch);
            for cell in cells {
                match cell {
                    Some(i) => data.extend_from_slice(&fm.data()[i * ch..(i + 1) * ch]),
                    None => data.extend(std::iter::repeat_n(0.0, ch)),
                }
            }
            FeatureMap::new(fm.level(), bh, bw, ch, data)
        })
        .collect()
}

/// Reassembles strips along `axis` and crops to `height × width`.
pub fn area_merge(
    blocks: &[FeatureMap],
    axis: Axis,
    height: usize,
    width: usize,
) -> Result<FeatureMap> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Contract("no blocks to merge".into()))?;
    let ch = first.channels();
    let mut data = Vec::with_capacity(height * width * ch);
    for r in 0..height {
        for c in 0..width {
            let (b, br, bc) = match axis {
                Axis::Horizontal => (r / first.height(), r % first.height(), c),
                Axis::Vertical => (c / first.width(), r, c % first.width()),
            };
            let block = blocks.get(b).ok_or_else(|| {
                Error::Dimension(format!(
                    "{} blocks cannot cover a {height}x{width} grid",
                    blocks.len()
                ))
            })?;
            data.extend_from_slice(block.cell(br, bc));
        }
    }
    FeatureMap::new(first.level(), height, width, ch, data)
}

/// Query/key projections for both attention directions. Values are the raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfmParams {
    pub wq_o: Tensor,
    pub wk_s: Tensor,
    pub wq_s: Tensor,
    pub wk_o: Tensor,
}

impl AfmParams {
    pub fn init(channels: usize, head_dim: usize, mut sample: impl FnMut() -> f64) -> Result<Self> {
        let scale = 1.0 / (channels as f64).sqrt();
        let mut w = || {
            Tensor::new(
                vec![channels, head_dim],
                (0..channels * head_dim).map(|_| sample() * scale).collect(),
            )
        };
        Ok(Self {
            wq_o: w()?,
            wk_s: w()?,
            wq_s: w()?,
            wk_o: w()?,
        })
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.wq_o, &self.wk_s, &self.wq_s, &self.wk_o]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.wq_o,
            &mut self.wk_s,
            &mut self.wq_s,
            &mut self.wk_o,
        ]
    }

    pub fn bind(&self, g: &mut Graph) -> AfmVars {
        let [wq_o, wk_s, wq_s, wk_o] = self.tensors().map(|t| g.param(t.clone()));
        AfmVars {
            wq_o,
            wk_s,
            wq_s,
            wk_o,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AfmVars {
    pub wq_o: Var,
    pub wk_s: Var,
    pub wq_s: Var,
    pub wk_o: Var,
}

impl AfmVars {
    pub fn all(&self) -> [Var; 4] {
        [self.wq_o, self.wk_s, self.wq_s, self.wk_o]
    }
}

/// Row-stochastic `softmax(Q Kᵀ / √d)`.
pub fn attention_weights(queries: &Tensor, keys: &Tensor) -> Result<Tensor> {
    let (_, d) = queries.dims2()?;
    let scores = matmul(queries, &keys.transpose2()?)?.scale(1.0 / (d as f64).sqrt());
    softmax_lastdim(&scores)
}

fn attend(
    g: &mut Graph,
    q_src: Var,
    kv_src: Var,
    wq: Var,
    wk: Var,
    head_dim: usize,
) -> Result<Var> {
    let q = g.matmul(q_src, wq)?;
    let k = g.matmul(kv_src, wk)?;
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let scores = g.scale_const(raw, 1.0 / (head_dim as f64).sqrt());
    let att = g.softmax_lastdim(scores)?;
    g.matmul(att, kv_src)
}

/// Fused `(height·width) × C` features from the two residual-enhanced modalities.
pub fn afm_fuse_var(
    g: &mut Graph,
    o: Var,
    s: Var,
    height: usize,
    width: usize,
    params: &AfmVars,
    cfg: &AreaConfig,
) -> Result<Var> {
    cfg.validate()?;
    if g.value(o).shape() != g.value(s).shape() {
        return Err(Error::Contract(format!(
            "modalities differ in shape: {:?} vs {:?}",
            g.value(o).shape(),
            g.value(s).shape()
        )));
    }
    let (cells, ch) = g.value(o).dims2()?;
    if cells != height * width {
        return Err(Error::Dimension(format!(
            "{cells} cells do not form a {height}x{width} grid"
        )));
    }
    let head_dim = g.value(params.wq_o).shape()[1];
    let strips = cfg.strips(height, width);
    let padded = strips.iter().flatten().any(Option::is_none);
    let (o_src, s_src) = if padded {
        let zero = g.constant(Tensor::zeros(&[1, ch]));
        (g.concat_rows(&[o, zero])?, g.concat_rows(&[s, zero])?)
    } else {
        (o, s)
    };

    let mut fused_blocks = Vec::with_capacity(strips.len());
    let mut placement = vec![0usize; cells];
    let mut row = 0;
    for cells_b in &strips {
        let idx: Vec<usize> = cells_b.iter().map(|c| c.unwrap_or(cells)).collect();
        for c in cells_b {
            if let Some(i) = c {
                placement[*i] = row;
            }
            row += 1;
        }
        let ob = g.gather_rows(o_src, &idx)?;
        let sb = g.gather_rows(s_src, &idx)?;
        let o_from_s = attend(g, ob, sb, params.wq_o, params.wk_s, head_dim)?;
        let s_from_o = attend(g, sb, ob, params.wq_s, params.wk_o, head_dim)?;
        let both = g.add(ob, sb)?;
        let mean = g.scale_const(both, 0.5);
        let attended = g.add(o_from_s, s_from_o)?;
        let total = g.add(attended, mean)?;
        fused_blocks.push(g.scale_const(total, 1.0 / 3.0));
    }
    let stacked = g.concat_rows(&fused_blocks)?;
    g.gather_rows(stacked, &placement)
}

/// Evaluates [`afm_fuse_var`] on feature maps.
pub fn afm_fuse(
    o: &FeatureMap,
    s: &FeatureMap,
    params: &AfmParams,
    cfg: &AreaConfig,
) -> Result<FeatureMap> {
    if !o.same_shape(s) {
        return Err(Error::Contract(format!(
            "modalities differ in shape: {}x{}x{} vs {}x{}x{}",
            o.height(),
            o.width(),
            o.channels(),
            s.height(),
            s.width(),
            s.channels()
        )));
    }
    let mut g = Graph::new();
    let ov = g.constant(o.to_tensor());
    let sv = g.constant(s.to_tensor());
    let vars = params.bind(&mut g);
    let f = afm_fuse_var(&mut g, ov, sv, o.height(), o.width(), &vars, cfg)?;
    FeatureMap::from_tensor(o.level(), o.height(), o.width(), g.value(f))
}

/// Floating-point operations of one fusion pass, as counted on the tape.
pub fn afm_flops(height: usize, width: usize, channels: usize, cfg: &AreaConfig) -> Result<u64> {
    let params = AfmParams::init(channels, cfg.head_dim, || 0.1)?;
    let mut g = Graph::new();
    let o = g.constant(Tensor::zeros(&[height * width, channels]));
    let s = g.constant(Tensor::zeros(&[height * width, channels]));
    let vars = params.bind(&mut g);
    afm_fuse_var(&mut g, o, s, height, width, &vars, cfg)?;
    Ok(g.flops())
}
