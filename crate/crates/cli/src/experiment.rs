//! Desk-scale fusion experiment: three patch-classification trunks (modality A only,
//! modality B only, and the fused FAM → CMIM → AFM trunk) trained with identical budgets
//! on the synthetic complementary-corruption data.

use std::fmt::Write as _;

use osfuse_core::areafusion::{afm_fuse_var, AfmParams, AfmVars};
use osfuse_core::filters::{apply_filter, filter_augment_var, FilterKind, Image};
use osfuse_core::numcore::{Graph, Tensor, Var};
use osfuse_core::obbgeom::bce_with_logits_var;
use osfuse_core::scanorders::ScanKind;
use osfuse_core::ssmfusion::{cmim_forward_var, CmimParams, CmimVars};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::rng::{substream, Purpose};
use crate::synth::{generate_synthetic_pairs, Split, SyntheticPair, NUM_CLASSES};
use crate::CliError;

/// Raw pixels enter the stems as `(v - INPUT_CENTER) * INPUT_GAIN`.
const INPUT_CENTER: f64 = 0.3;
const INPUT_GAIN: f64 = 8.0;
/// Fixed gain on pooled features ahead of the head.
const POOL_GAIN: f64 = 4.0;
const HEAD_INIT: f64 = 0.1;
/// Upper bound on the global norm of each batch-mean gradient.
const GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    OpticalOnly,
    SarOnly,
    Fused,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::OpticalOnly, Arm::SarOnly, Arm::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Arm::OpticalOnly => "A-only",
            Arm::SarOnly => "B-only",
            Arm::Fused => "fused",
        }
    }
}

/// One image as trunk input: raw and filtered patches, `cells × patch²` each.
#[derive(Debug, Clone)]
struct ModalityInput {
    image: Tensor,
    filtered: Tensor,
}

#[derive(Debug, Clone)]
struct Sample {
    optical: ModalityInput,
    sar: ModalityInput,
    target: Tensor,
    class: usize,
}

fn patches(img: &Image, patch: usize) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let (rows, cols) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(h * w);
    for pr in 0..rows {
        for pc in 0..cols {
            for r in 0..patch {
                let start = (pr * patch + r) * w + pc * patch;
                data.extend_from_slice(&img.data()[start..start + patch]);
            }
        }
    }
    Tensor::new(vec![rows * cols, patch * patch], data).expect("patch grid covers the image")
}

fn modality_input(img: &Image, kind: FilterKind, patch: usize) -> Result<ModalityInput, CliError> {
    Ok(ModalityInput {
        image: patches(&img.map(|v| (v - INPUT_CENTER) * INPUT_GAIN), patch),
        filtered: patches(&apply_filter(kind, img)?, patch),
    })
}

fn prepare(pairs: &[SyntheticPair], cfg: &RunConfig) -> Result<Vec<Sample>, CliError> {
    pairs
        .iter()
        .map(|p| {
            let mut target = Tensor::zeros(&[1, NUM_CLASSES]);
            target.set2(0, p.class, 1.0);
            Ok(Sample {
                optical: modality_input(&p.optical, cfg.filter, cfg.model.patch)?,
                sar: modality_input(&p.sar, cfg.filter, cfg.model.patch)?,
                target,
                class: p.class,
            })
        })
        .collect()
}

/// Filter augmentation followed by a per-cell linear patch embedding and tanh.
#[derive(Debug, Clone)]
struct Stem {
    alpha: Tensor,
    w: Tensor,
    b: Tensor,
}

impl Stem {
    fn init(patch_len: usize, channels: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (patch_len as f64).sqrt();
        Self {
            alpha: Tensor::full(&[1, 1], alpha),
            w: Tensor::new(
                vec![patch_len, channels],
                (0..patch_len * channels)
                    .map(|_| rng.random_range(-1.0..1.0) * scale)
                    .collect(),
            )
            .expect("shape matches"),
            b: Tensor::zeros(&[1, channels]),
        }
    }

    fn forward(g: &mut Graph, vars: &[Var], input: &ModalityInput) -> Result<Var, CliError> {
        let (alpha, w, b) = (vars[0], vars[1], vars[2]);
        let image = g.constant(input.image.clone());
        let filtered = g.constant(input.filtered.clone());
        let f = filter_augment_var(g, image, filtered, alpha)?;
        let z = g.matmul(f, w)?;
        let z = g.add_row(z, b)?;
        Ok(g.tanh(z))
    }
}

/// A trainable model as a flat list of tensors with a forward pass over that list.
#[derive(Debug, Clone)]
pub struct Model {
    arm: Arm,
    rows: usize,
    cols: usize,
    tensors: Vec<Tensor>,
    groups: Vec<(&'static str, usize)>,
}

impl Model {
    pub fn init(arm: Arm, cfg: &RunConfig) -> Result<Self, CliError> {
        let mut rng = substream(cfg.seed, Purpose::Init, arm as u64);
        let p = cfg.model.patch;
        let c = cfg.model.channels;
        let cells = cfg.data.image_size / p;
        let mut tensors = Vec::new();
        let mut groups = Vec::new();
        let stems = if arm == Arm::Fused { 2 } else { 1 };
        for _ in 0..stems {
            let s = Stem::init(p * p, c, cfg.alpha_init, &mut rng);
            tensors.extend([s.alpha, s.w, s.b]);
            groups.push(("stem", 3));
        }
        if arm == Arm::Fused {
            let cmim = CmimParams::init(c, cfg.state_dim, || rng.random_range(-1.0..1.0))?;
            let t: Vec<Tensor> = cmim
                .horizontal
                .tensors()
                .iter()
                .chain(cmim.vertical.tensors().iter())
                .map(|t| (*t).clone())
                .collect();
            groups.push(("cmim", t.len()));
            tensors.extend(t);
            let afm = AfmParams::init(c, cfg.head_dim, || rng.random_range(-1.0..1.0))?;
            groups.push(("afm", 4));
            tensors.extend(afm.tensors().iter().map(|t| (*t).clone()));
        }
        let head = (0..c * NUM_CLASSES)
            .map(|_| rng.random_range(-1.0..1.0) * HEAD_INIT)
            .collect();
        tensors.extend([
            Tensor::new(vec![c, NUM_CLASSES], head)?,
            Tensor::zeros(&[1, NUM_CLASSES]),
        ]);
        groups.push(("head", 2));
        Ok(Self {
            arm,
            rows: cells,
            cols: cells,
            tensors,
            groups,
        })
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    /// Scalar count per parameter group, in model order.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        let mut i = 0;
        for (name, n) in &self.groups {
            let count = self.tensors[i..i + n].iter().map(Tensor::len).sum();
            i += n;
            match out.iter_mut().find(|(k, _)| k == name) {
                Some(entry) => entry.1 += count,
                None => out.push((name.to_string(), count)),
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records the per-cell feature map (`cells × channels`) that feeds the pooling.
    fn features(
        &self,
        g: &mut Graph,
        vars: &[Var],
        s: &Sample,
        cfg: &RunConfig,
    ) -> Result<Var, CliError> {
        match self.arm {
            Arm::OpticalOnly => Stem::forward(g, &vars[0..3], &s.optical),
            Arm::SarOnly => Stem::forward(g, &vars[0..3], &s.sar),
            Arm::Fused => {
                let o = Stem::forward(g, &vars[0..3], &s.optical)?;
                let sr = Stem::forward(g, &vars[3..6], &s.sar)?;
                let cmim = CmimVars {
                    horizontal: ssm_vars(&vars[6..14]),
                    vertical: ssm_vars(&vars[14..22]),
                };
                let (o_prime, s_prime) =
                    cmim_forward_var(g, o, sr, self.rows, self.cols, &cmim, &cfg.cmim())?;
                let o_res = g.add(o_prime, o)?;
                let s_res = g.add(s_prime, sr)?;
                let afm = AfmVars {
                    wq_o: vars[22],
                    wk_s: vars[23],
                    wq_s: vars[24],
                    wk_o: vars[25],
                };
                Ok(afm_fuse_var(
                    g,
                    o_res,
                    s_res,
                    self.rows,
                    self.cols,
                    &afm,
                    &cfg.area(),
                )?)
            }
        }
    }

    /// Records the logits (`1 × classes`) of one sample; returns them with the parameter leaves.
    fn logits(
        &self,
        g: &mut Graph,
        s: &Sample,
        cfg: &RunConfig,
    ) -> Result<(Var, Vec<Var>), CliError> {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        let f = self.features(g, &vars, s, cfg)?;
        let pooled = g.mean_rows(f)?;
        let pooled = g.scale_const(pooled, POOL_GAIN);
        let n = vars.len();
        let z = g.matmul(pooled, vars[n - 2])?;
        let logits = g.add_row(z, vars[n - 1])?;
        Ok((logits, vars))
    }

    fn predict(&self, s: &Sample, cfg: &RunConfig) -> Result<usize, CliError> {
        let mut g = Graph::new();
        let (logits, _) = self.logits(&mut g, s, cfg)?;
        let row = g.value(logits).row(0);
        // Ties go to the lowest class index.
        Ok((0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best }))
    }

    fn accuracy(&self, samples: &[Sample], cfg: &RunConfig) -> Result<f64, CliError> {
        let mut correct = 0usize;
        for s in samples {
            correct += usize::from(self.predict(s, cfg)? == s.class);
        }
        Ok(100.0 * correct as f64 / samples.len() as f64)
    }
}

fn ssm_vars(v: &[Var]) -> osfuse_core::ssmfusion::SsmVars {
    osfuse_core::ssmfusion::SsmVars {
        a_log: v[0],
        w_b: v[1],
        b_b: v[2],
        w_c: v[3],
        b_c: v[4],
        w_delta: v[5],
        b_delta: v[6],
        d: v[7],
    }
}

/// Fused cell features of one image pair from the seeded, untrained fused trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFeatures {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major `rows × cols × channels`.
    pub data: Vec<f64>,
    pub flops: u64,
}

pub fn fuse_images(
    cfg: &RunConfig,
    optical: &Image,
    sar: &Image,
) -> Result<FusedFeatures, CliError> {
    cfg.validate()?;
    let size = cfg.data.image_size;
    for (name, img) in [("optical", optical), ("sar", sar)] {
        if img.height() != size || img.width() != size {
            return Err(CliError::Input(format!(
                "{name} image is {}x{}, configured image_size is {size}",
                img.height(),
                img.width()
            )));
        }
    }
    let patch = cfg.model.patch;
    let sample = Sample {
        optical: modality_input(&optical.to_gray(), cfg.filter, patch)?,
        sar: modality_input(&sar.to_gray(), cfg.filter, patch)?,
        target: Tensor::zeros(&[1, NUM_CLASSES]),
        class: 0,
    };
    let model = Model::init(Arm::Fused, cfg)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = model.tensors.iter().map(|t| g.param(t.clone())).collect();
    let f = model.features(&mut g, &vars, &sample, cfg)?;
    Ok(FusedFeatures {
        rows: model.rows,
        cols: model.cols,
        channels: cfg.model.channels,
        data: g.value(f).data().to_vec(),
        flops: g.flops(),
    })
}

/// Per-epoch record of one trained arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub parameters: usize,
    pub train_loss: Vec<f64>,
    /// Held-out accuracy (percent) before training and after every epoch.
    pub test_accuracy: Vec<f64>,
    pub final_accuracy: f64,
}

fn describe(cfg: &RunConfig, arm: Arm) -> String {
    format!(
        "arm {} (filter {}, scan {}, seed {}, occlusion {}, speckle {:?})",
        arm.name(),
        cfg.filter,
        cfg.scan,
        cfg.seed,
        cfg.data.occlusion_rate,
        cfg.data.speckle_shape
    )
}

fn train_arm(
    arm: Arm,
    cfg: &RunConfig,
    train: &[Sample],
    test: &[Sample],
) -> Result<ArmResult, CliError> {
    let mut model = Model::init(arm, cfg)?;
    let mut velocity: Vec<Tensor> = model
        .tensors
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = substream(cfg.seed, Purpose::Shuffle, arm as u64);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut test_accuracy = vec![model.accuracy(test, cfg)?];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor> = model
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for &i in batch {
                let mut g = Graph::new();
                let (logits, vars) = model.logits(&mut g, &train[i], cfg)?;
                let loss = bce_with_logits_var(&mut g, logits, &train[i].target)?;
                let value = g.value(loss).item()?;
                if !value.is_finite() {
                    return Err(CliError::Runtime(format!(
                        "loss diverged to {value} at epoch {epoch} for {}",
                        describe(cfg, arm)
                    )));
                }
                epoch_loss += value;
                let back = g.backward(loss)?;
                for (acc, v) in grads.iter_mut().zip(&vars) {
                    if let Some(gv) = back.get(*v) {
                        acc.accumulate(gv);
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let norm = grads
                .iter()
                .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt()
                * inv;
            let inv = if norm > GRAD_CLIP {
                inv * GRAD_CLIP / norm
            } else {
                inv
            };
            for ((p, v), gr) in model.tensors.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(gr.data()) {
                    *vv = cfg.momentum * *vv + gv * inv;
                    *pv -= cfg.learning_rate * *vv;
                }
            }
        }
        if model.tensors.iter().any(|t| !t.all_finite()) {
            return Err(CliError::Runtime(format!(
                "parameters became non-finite at epoch {epoch} for {}",
                describe(cfg, arm)
            )));
        }
        train_loss.push(epoch_loss / train.len() as f64);
        test_accuracy.push(model.accuracy(test, cfg)?);
    }
    Ok(ArmResult {
        arm,
        parameters: model.parameter_count(),
        final_accuracy: *test_accuracy.last().expect("initial accuracy recorded"),
        train_loss,
        test_accuracy,
    })
}

/// Result of one seed: every arm plus the fusion-minus-best-single margin (points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    pub margin: f64,
    pub mean_occluded_target_fraction: f64,
}

impl SeedRun {
    pub fn accuracy(&self, arm: Arm) -> f64 {
        self.arms
            .iter()
            .find(|a| a.arm == arm)
            .map_or(f64::NAN, |a| a.final_accuracy)
    }
}

/// Trains the given arms for `cfg.seed` on freshly generated data.
pub fn run_seed(cfg: &RunConfig, arms: &[Arm]) -> Result<SeedRun, CliError> {
    cfg.validate()?;
    let train_pairs = generate_synthetic_pairs(&cfg.data, cfg.seed, Split::Train);
    let test_pairs = generate_synthetic_pairs(&cfg.data, cfg.seed, Split::Test);
    let occluded = test_pairs
        .iter()
        .map(|p| p.occlusion.target_fraction)
        .sum::<f64>()
        / test_pairs.len() as f64;
    let train = prepare(&train_pairs, cfg)?;
    let test = prepare(&test_pairs, cfg)?;
    let results = arms
        .iter()
        .map(|&a| train_arm(a, cfg, &train, &test))
        .collect::<Result<Vec<_>, _>>()?;
    let run = SeedRun {
        seed: cfg.seed,
        arms: results,
        margin: 0.0,
        mean_occluded_target_fraction: occluded,
    };
    let best_single = run
        .accuracy(Arm::OpticalOnly)
        .max(run.accuracy(Arm::SarOnly));
    Ok(SeedRun {
        margin: run.accuracy(Arm::Fused) - best_single,
        ..run
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBreakdown {
    pub single_trunk: Vec<(String, usize)>,
    pub fused: Vec<(String, usize)>,
    pub single_total: usize,
    pub fused_total: usize,
    /// Fused total minus two single-modality trunks' stems and one head.
    pub fusion_additions: usize,
}

pub fn parameter_breakdown(cfg: &RunConfig) -> Result<ParameterBreakdown, CliError> {
    let single = Model::init(Arm::OpticalOnly, cfg)?;
    let fused = Model::init(Arm::Fused, cfg)?;
    let fb = fused.parameter_breakdown();
    let additions = fb
        .iter()
        .filter(|(k, _)| k == "cmim" || k == "afm")
        .map(|(_, n)| n)
        .sum();
    Ok(ParameterBreakdown {
        single_trunk: single.parameter_breakdown(),
        fused: fb,
        single_total: single.parameter_count(),
        fused_total: fused.parameter_count(),
        fusion_additions: additions,
    })
}

/// Seed-averaged comparison of the three arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub note: String,
    pub config: RunConfig,
    pub runs: Vec<SeedRun>,
    pub mean_accuracy: Vec<(Arm, f64)>,
    pub mean_margin: f64,
    pub parameters: ParameterBreakdown,
}

pub const MARGIN_NOTE: &str = "fusion margin on synthetic data is a qualitative analogue of a detection mAP gain, not a reproduction";

/// `toy_fusion_experiment` over `seeds` consecutive seeds starting at `cfg.seed`.
pub fn toy_fusion_experiment(
    cfg: &RunConfig,
    seeds: usize,
    label: &str,
) -> Result<ExperimentReport, CliError> {
    let mut runs = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(k);
        runs.push(run_seed(&c, &Arm::ALL)?);
    }
    let n = runs.len().max(1) as f64;
    let mean_accuracy = Arm::ALL
        .iter()
        .map(|&a| (a, runs.iter().map(|r| r.accuracy(a)).sum::<f64>() / n))
        .collect();
    Ok(ExperimentReport {
        label: label.to_string(),
        note: MARGIN_NOTE.to_string(),
        config: cfg.clone(),
        mean_margin: runs.iter().map(|r| r.margin).sum::<f64>() / n,
        runs,
        mean_accuracy,
        parameters: parameter_breakdown(cfg)?,
    })
}

impl ExperimentReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} ({} seeds)", self.label, self.runs.len());
        let _ = writeln!(
            s,
            "{:<8} {:>8} {:>8} {:>8} {:>8}",
            "seed", "A-only", "B-only", "fused", "margin"
        );
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<8} {:>8.2} {:>8.2} {:>8.2} {:>+8.2}",
                r.seed,
                r.accuracy(Arm::OpticalOnly),
                r.accuracy(Arm::SarOnly),
                r.accuracy(Arm::Fused),
                r.margin
            );
        }
        let mean = |a: Arm| {
            self.mean_accuracy
                .iter()
                .find(|(k, _)| *k == a)
                .map_or(f64::NAN, |(_, v)| *v)
        };
        let _ = writeln!(
            s,
            "{:<8} {:>8.2} {:>8.2} {:>8.2} {:>+8.2}",
            "mean",
            mean(Arm::OpticalOnly),
            mean(Arm::SarOnly),
            mean(Arm::Fused),
            self.mean_margin
        );
        let p = &self.parameters;
        let groups = |v: &[(String, usize)]| {
            v.iter()
                .map(|(k, n)| format!("{k} {n}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(
            s,
            "parameters: single trunk {} ({})",
            p.single_total,
            groups(&p.single_trunk)
        );
        let _ = writeln!(
            s,
            "parameters: fused {} ({}); CMIM+AFM add {}",
            p.fused_total,
            groups(&p.fused),
            p.fusion_additions
        );
        let _ = writeln!(s, "note: {}", self.note);
        s
    }
}

/// One fused-arm result per (filter, scan) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub filter: FilterKind,
    pub scan: ScanKind,
    pub fused_accuracy: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Trains the fused arm for every filter kind × scan kind.
pub fn ablation(cfg: &RunConfig) -> Result<AblationReport, CliError> {
    cfg.validate()?;
    let train_pairs = generate_synthetic_pairs(&cfg.data, cfg.seed, Split::Train);
    let test_pairs = generate_synthetic_pairs(&cfg.data, cfg.seed, Split::Test);
    let mut rows = Vec::new();
    for filter in FilterKind::ALL {
        let mut c = cfg.clone();
        c.filter = filter;
        let train = prepare(&train_pairs, &c)?;
        let test = prepare(&test_pairs, &c)?;
        for scan in ScanKind::ALL {
            c.scan = scan;
            let r = train_arm(Arm::Fused, &c, &train, &test)?;
            rows.push(AblationRow {
                filter,
                scan,
                fused_accuracy: r.final_accuracy,
                final_train_loss: r.train_loss.last().copied().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(AblationReport {
        seed: cfg.seed,
        rows,
    })
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "filter");
        for scan in ScanKind::ALL {
            let _ = write!(s, " {:>14}", scan.name());
        }
        s.push('\n');
        for filter in FilterKind::ALL {
            let _ = write!(s, "{:<8}", filter.name());
            for scan in ScanKind::ALL {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.filter == filter && r.scan == scan)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.fused_accuracy));
                let _ = write!(s, " {cell:>14}");
            }
            s.push('\n');
        }
        s
    }
}
