//! Sequence construction for cross-modal scanning: row-major flattening,
//! plain concatenation, interleaved rearrangement and the four scan orders
//! (bidirectional, Z-order, zigzag, Hilbert).
//!
//! Grid cells are indexed row-major, `index = r * cols + c`. A scan order is a
//! gather permutation: position `i` of the scanned sequence holds cell
//! `order[i]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `height × width × channels` activation grid at pyramid level `j ∈ {3, 4, 5}` (stride `2^j`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    level: u8,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        level: u8,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if !(3..=5).contains(&level) {
            return Err(Error::Contract(format!(
                "pyramid level must be 3, 4 or 5, got {level}"
            )));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "feature map must be non-empty, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} feature map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            level,
            height,
            width,
            channels,
            data,
        })
    }

    /// Map for an `image_height × image_width` input at `level`, i.e. `(H/2^j) × (W/2^j)` cells.
    pub fn for_image(
        image_height: usize,
        image_width: usize,
        level: u8,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let stride = 1usize << level.min(16);
        Self::new(
            level,
            image_height / stride,
            image_width / stride,
            channels,
            data,
        )
    }

    pub fn zeros(level: u8, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(
            level,
            height,
            width,
            channels,
            vec![0.0; height * width * channels],
        )
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.level == other.level
            && self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    /// Cells as rows of a `(height·width) × channels` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height * self.width, self.channels],
            self.data.clone(),
        )
        .expect("non-empty feature map")
    }

    pub fn from_tensor(level: u8, height: usize, width: usize, t: &Tensor) -> Result<Self> {
        let (n, c) = t.dims2()?;
        if n != height * width {
            return Err(Error::Dimension(format!(
                "{n} rows cannot fill a {height}x{width} grid"
            )));
        }
        Self::new(level, height, width, c, t.data().to_vec())
    }
}

/// 1-D ordering of per-patch feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    channels: usize,
    data: Vec<f64>,
}

impl PatchSequence {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Dimension(
                "patch channel dimension must be positive".into(),
            ));
        }
        if !data.len().is_multiple_of(channels) {
            return Err(Error::Dimension(format!(
                "{} values do not split into patches of {channels} channels",
                data.len()
            )));
        }
        Ok(Self { channels, data })
    }

    pub fn empty(channels: usize) -> Self {
        Self {
            channels: channels.max(1),
            data: Vec::new(),
        }
    }

    pub fn from_entries(channels: usize, entries: &[Vec<f64>]) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.len() != channels) {
            return Err(Error::Dimension(format!(
                "entry of length {} in a sequence of {channels} channels",
                e.len()
            )));
        }
        Self::new(channels, entries.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.channels)
    }

    /// `len × channels` tensor; fails for an empty sequence.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![self.len(), self.channels], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (_, c) = t.dims2()?;
        Self::new(c, t.data().to_vec())
    }

    /// Reshapes back onto a grid, the inverse of [`flatten_row_major`].
    pub fn to_feature_map(&self, level: u8, height: usize, width: usize) -> Result<FeatureMap> {
        if self.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} patches cannot fill a {height}x{width} grid",
                self.len()
            )));
        }
        FeatureMap::new(level, height, width, self.channels, self.data.clone())
    }
}

pub fn flatten_row_major(fm: &FeatureMap) -> PatchSequence {
    PatchSequence {
        channels: fm.channels,
        data: fm.data.clone(),
    }
}

fn check_channels(x: &PatchSequence, y: &PatchSequence) -> Result<()> {
    if x.channels != y.channels {
        return Err(Error::Dimension(format!(
            "channel mismatch: {} vs {}",
            x.channels, y.channels
        )));
    }
    Ok(())
}

/// `[x1, …, xn, y1, …, ym]`.
pub fn concat_traditional(x: &PatchSequence, y: &PatchSequence) -> Result<PatchSequence> {
    check_channels(x, y)?;
    let mut data = x.data.clone();
    data.extend_from_slice(&y.data);
    PatchSequence::new(x.channels, data)
}

/// `[x1, y1, x2, y2, …, xn, yn]`: corresponding patches of the two modalities sit side by side.
pub fn interleave_iir(x: &PatchSequence, y: &PatchSequence) -> Result<PatchSequence> {
    check_channels(x, y)?;
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "interleaving needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mut data = Vec::with_capacity(x.data.len() * 2);
    for (a, b) in x.entries().zip(y.entries()) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    PatchSequence::new(x.channels, data)
}

/// Splits an interleaved sequence back into its even and odd entries.
pub fn deinterleave(z: &PatchSequence) -> Result<(PatchSequence, PatchSequence)> {
    if !z.len().is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "cannot deinterleave a sequence of odd length {}",
            z.len()
        )));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, e) in z.entries().enumerate() {
        if i % 2 == 0 {
            x.extend_from_slice(e);
        } else {
            y.extend_from_slice(e);
        }
    }
    Ok((
        PatchSequence::new(z.channels, x)?,
        PatchSequence::new(z.channels, y)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Bidirectional,
    ZOrder,
    Zigzag,
    Hilbert,
}

impl ScanKind {
    pub const ALL: [ScanKind; 4] = [
        ScanKind::Bidirectional,
        ScanKind::ZOrder,
        ScanKind::Zigzag,
        ScanKind::Hilbert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Bidirectional => "bidirectional",
            ScanKind::ZOrder => "zorder",
            ScanKind::Zigzag => "zigzag",
            ScanKind::Hilbert => "hilbert",
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "bidirectional" | "bid" | "bi" => Ok(ScanKind::Bidirectional),
            "zorder" | "z" | "morton" => Ok(ScanKind::ZOrder),
            "zigzag" | "snake" => Ok(ScanKind::Zigzag),
            "hilbert" => Ok(ScanKind::Hilbert),
            _ => Err(Error::Input(format!("unknown scan kind '{s}'"))),
        }
    }
}

/// A bijection over the cells of a `rows × cols` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPermutation {
    pub kind: ScanKind,
    pub rows: usize,
    pub cols: usize,
    pub order: Vec<usize>,
    /// The reversed pass that accompanies a bidirectional scan.
    pub paired: Option<Vec<usize>>,
}

impl ScanPermutation {
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            kind: ScanKind::Bidirectional,
            rows,
            cols,
            order: (0..rows * cols).collect(),
            paired: None,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Visited cells as `(row, col)`.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .map(|&i| (i / self.cols, i % self.cols))
            .collect()
    }

    pub fn is_bijection(&self) -> bool {
        is_permutation(&self.order, self.rows * self.cols)
            && self
                .paired
                .as_ref()
                .is_none_or(|p| is_permutation(p, self.rows * self.cols))
    }

    /// Every pass of the scan: the main order plus the paired reverse, if any.
    pub fn passes(&self) -> Vec<&[usize]> {
        let mut v = vec![self.order.as_slice()];
        if let Some(p) = &self.paired {
            v.push(p);
        }
        v
    }
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Number of symmetric variants of the Hilbert curve (rotations × reflection).
pub const HILBERT_DIRECTIONS: u8 = 8;

/// Scan order of `kind` over a `rows × cols` grid; Hilbert uses the canonical direction 0.
pub fn scan_permutation(kind: ScanKind, rows: usize, cols: usize) -> ScanPermutation {
    scan_permutation_with(kind, rows, cols, 0)
}

/// Like [`scan_permutation`] with an explicit Hilbert direction in `0..8` (ignored by other kinds).
pub fn scan_permutation_with(
    kind: ScanKind,
    rows: usize,
    cols: usize,
    direction: u8,
) -> ScanPermutation {
    let n = rows * cols;
    let (order, paired) = match kind {
        ScanKind::Bidirectional => {
            let fwd: Vec<usize> = (0..n).collect();
            let rev = fwd.iter().rev().copied().collect();
            (fwd, Some(rev))
        }
        ScanKind::Zigzag => {
            let mut o = Vec::with_capacity(n);
            for r in 0..rows {
                if r % 2 == 0 {
                    o.extend((0..cols).map(|c| r * cols + c));
                } else {
                    o.extend((0..cols).rev().map(|c| r * cols + c));
                }
            }
            (o, None)
        }
        ScanKind::ZOrder => {
            let side = rows.max(cols).max(1).next_power_of_two();
            let o = (0..side * side)
                .map(morton_decode)
                .filter(|&(r, c)| r < rows && c < cols)
                .map(|(r, c)| r * cols + c)
                .collect();
            (o, None)
        }
        ScanKind::Hilbert => {
            let side = rows.max(cols).max(1).next_power_of_two();
            let o = (0..side * side)
                .map(|d| hilbert_d2xy(side, d))
                .map(|(r, c)| hilbert_symmetry(r, c, side, direction % HILBERT_DIRECTIONS))
                .filter(|&(r, c)| r < rows && c < cols)
                .map(|(r, c)| r * cols + c)
                .collect();
            (o, None)
        }
    };
    ScanPermutation {
        kind,
        rows,
        cols,
        order,
        paired,
    }
}

/// The same scan run over the transposed grid, expressed in the original row-major indices.
pub fn vertical_scan_permutation(
    kind: ScanKind,
    rows: usize,
    cols: usize,
    direction: u8,
) -> ScanPermutation {
    let t = scan_permutation_with(kind, cols, rows, direction);
    // Transposed cell (r', c') with r' < cols, c' < rows is original cell (c', r').
    let map = |i: usize| {
        let (rt, ct) = (i / rows, i % rows);
        ct * cols + rt
    };
    ScanPermutation {
        kind,
        rows,
        cols,
        order: t.order.iter().map(|&i| map(i)).collect(),
        paired: t.paired.map(|p| p.iter().map(|&i| map(i)).collect()),
    }
}

/// Cell `(row, col)` of Morton code `code`, row in the low interleaved bit.
fn morton_decode(code: usize) -> (usize, usize) {
    let (mut r, mut c) = (0, 0);
    let mut bit = 0;
    let mut z = code;
    while z > 0 {
        r |= (z & 1) << bit;
        c |= ((z >> 1) & 1) << bit;
        z >>= 2;
        bit += 1;
    }
    (r, c)
}

/// Position `d` on the Hilbert curve filling an `n × n` grid (n a power of two), as `(row, col)`.
fn hilbert_d2xy(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// Element `k` of the square's symmetry group: rotations for `0..4`, reflected rotations for `4..8`.
fn hilbert_symmetry(r: usize, c: usize, n: usize, k: u8) -> (usize, usize) {
    let (mut r, mut c) = (r, c);
    if k >= 4 {
        c = n - 1 - c;
    }
    for _ in 0..(k % 4) {
        (r, c) = (c, n - 1 - r);
    }
    (r, c)
}

/// Gather (`out[i] = seq[order[i]]`) or, with `inverse`, scatter (`out[order[i]] = seq[i]`).
pub fn apply_permutation(
    seq: &PatchSequence,
    order: &[usize],
    inverse: bool,
) -> Result<PatchSequence> {
    if seq.len() != order.len() {
        return Err(Error::Contract(format!(
            "permutation of length {} applied to a sequence of length {}",
            order.len(),
            seq.len()
        )));
    }
    if !is_permutation(order, seq.len()) {
        return Err(Error::Contract("order is not a permutation".into()));
    }
    let c = seq.channels;
    let mut data = vec![0.0; seq.data.len()];
    for (i, &o) in order.iter().enumerate() {
        let (dst, src) = if inverse { (o, i) } else { (i, o) };
        data[dst * c..(dst + 1) * c].copy_from_slice(&seq.data[src * c..(src + 1) * c]);
    }
    PatchSequence::new(c, data)
}

/// Lifts a cell order to the interleaved sequence: cell `p` drives the pair `(2p, 2p + 1)`.
pub fn pairwise_order(cell_order: &[usize]) -> Vec<usize> {
    cell_order
        .iter()
        .flat_map(|&p| [2 * p, 2 * p + 1])
        .collect()
}

pub fn inverse_order(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(vals: &[f64]) -> PatchSequence {
        PatchSequence::new(1, vals.to_vec()).unwrap()
    }

    #[test]
    fn flatten_is_row_major() {
        let fm = FeatureMap::new(3, 2, 3, 1, (0..6).map(|v| v as f64).collect()).unwrap();
        let s = flatten_row_major(&fm);
        assert_eq!(s.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let one = FeatureMap::new(4, 1, 1, 2, vec![7.0, 8.0]).unwrap();
        assert_eq!(flatten_row_major(&one).len(), 1);
        assert_eq!(s.to_feature_map(3, 2, 3).unwrap(), fm);
    }

    #[test]
    fn feature_map_levels() {
        assert!(FeatureMap::zeros(2, 1, 1, 1).is_err());
        let fm = FeatureMap::for_image(64, 32, 3, 2, vec![0.0; 8 * 4 * 2]).unwrap();
        assert_eq!((fm.height(), fm.width()), (8, 4));
    }

    #[test]
    fn concat_examples() {
        let (a, b) = (seq(&[1.0, 2.0]), seq(&[3.0, 4.0]));
        assert_eq!(
            concat_traditional(&a, &b).unwrap().data(),
            &[1.0, 2.0, 3.0, 4.0]
        );
        let e = PatchSequence::empty(1);
        assert_eq!(concat_traditional(&e, &seq(&[3.0])).unwrap().data(), &[3.0]);
        assert_eq!(concat_traditional(&seq(&[1.0]), &e).unwrap().data(), &[1.0]);
        let two = PatchSequence::new(2, vec![0.0; 2]).unwrap();
        assert!(matches!(
            concat_traditional(&a, &two),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn interleave_examples() {
        let z = interleave_iir(&seq(&[1.0, 2.0]), &seq(&[3.0, 4.0])).unwrap();
        assert_eq!(z.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(
            interleave_iir(&seq(&[1.0]), &seq(&[2.0])).unwrap().data(),
            &[1.0, 2.0]
        );
        let same = interleave_iir(&seq(&[5.0, 6.0]), &seq(&[5.0, 6.0])).unwrap();
        for pair in same.data().chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        assert!(matches!(
            interleave_iir(&seq(&[1.0]), &seq(&[1.0, 2.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn deinterleave_examples() {
        let (x, y) = deinterleave(&seq(&[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert_eq!((x.data(), y.data()), (&[1.0, 2.0][..], &[3.0, 4.0][..]));
        let (x, y) = deinterleave(&PatchSequence::empty(1)).unwrap();
        assert!(x.is_empty() && y.is_empty());
        assert!(matches!(
            deinterleave(&seq(&[1.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zigzag_two_by_three() {
        let p = scan_permutation(ScanKind::Zigzag, 2, 3);
        assert_eq!(
            p.cells(),
            vec![(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0)]
        );
    }

    #[test]
    fn zorder_two_by_two() {
        let p = scan_permutation(ScanKind::ZOrder, 2, 2);
        assert_eq!(p.cells(), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn hilbert_two_by_two() {
        let p = scan_permutation(ScanKind::Hilbert, 2, 2);
        assert_eq!(p.cells(), vec![(0, 0), (0, 1), (1, 1), (1, 0)]);
    }

    #[test]
    fn bidirectional_pairs_forward_and_reverse() {
        let p = scan_permutation(ScanKind::Bidirectional, 2, 2);
        assert_eq!(p.order, vec![0, 1, 2, 3]);
        assert_eq!(p.paired, Some(vec![3, 2, 1, 0]));
    }

    #[test]
    fn all_hilbert_directions_are_distinct_local_bijections() {
        let mut seen = std::collections::HashSet::new();
        for d in 0..HILBERT_DIRECTIONS {
            let p = scan_permutation_with(ScanKind::Hilbert, 8, 8, d);
            assert!(p.is_bijection());
            let cells = p.cells();
            for w in cells.windows(2) {
                let dist = w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1);
                assert_eq!(dist, 1);
            }
            seen.insert(p.order);
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn vertical_scan_is_transposed() {
        let p = vertical_scan_permutation(ScanKind::Zigzag, 2, 3, 0);
        assert_eq!(
            p.cells(),
            vec![(0, 0), (1, 0), (1, 1), (0, 1), (0, 2), (1, 2)]
        );
        assert!(p.is_bijection());
    }

    #[test]
    fn permutation_gather_semantics() {
        let s = seq(&[10.0, 20.0, 30.0]);
        assert_eq!(apply_permutation(&s, &[0, 1, 2], false).unwrap(), s);
        let f = apply_permutation(&s, &[2, 0, 1], false).unwrap();
        assert_eq!(f.data(), &[30.0, 10.0, 20.0]);
        assert_eq!(apply_permutation(&f, &[2, 0, 1], true).unwrap(), s);
        assert!(matches!(
            apply_permutation(&s, &[0, 1], false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn pairwise_order_keeps_pairs_adjacent() {
        assert_eq!(pairwise_order(&[2, 0, 1]), vec![4, 5, 0, 1, 2, 3]);
        assert_eq!(inverse_order(&[2, 0, 1]), vec![1, 2, 0]);
    }

    #[test]
    fn scan_kind_parsing() {
        assert_eq!("zigzag".parse::<ScanKind>().unwrap(), ScanKind::Zigzag);
        assert_eq!("Z-Order".parse::<ScanKind>().unwrap(), ScanKind::ZOrder);
        assert_eq!("bid".parse::<ScanKind>().unwrap(), ScanKind::Bidirectional);
        assert!("peano".parse::<ScanKind>().is_err());
    }
}
