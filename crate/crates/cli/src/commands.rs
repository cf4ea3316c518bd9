//! Subcommand definitions and their handlers.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use osfuse_core::areafusion::Axis;
use osfuse_core::datasetio::{
    dataset_stats, load_label_dir, mean_pair_metrics, read_image, to_ground_truth, write_image,
};
use osfuse_core::evalkit::{evaluate, parse_detections};
use osfuse_core::filters::{apply_filter, augment_with, FilterKind, Image};
use osfuse_core::scanorders::{scan_permutation_with, vertical_scan_permutation, ScanKind};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::{ablation, fuse_images, toy_fusion_experiment, Arm, ExperimentReport};
use crate::plot::{bar_chart, line_chart};
use crate::synth::{generate_synthetic_pairs, write_dataset, Split};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "osfuse",
    version,
    about = "Optical/SAR fusion primitives, evaluation and toy experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply a handcrafted filter, or its alpha-weighted augmentation, to a PGM/PPM image.
    Filter(FilterArgs),
    /// Print the visit order of a scan over a grid as "(r,c)" lines.
    Scan(ScanArgs),
    /// Fuse an optical/SAR image pair through the seeded fusion trunk and print the cell features as JSON.
    Fuse(FuseArgs),
    /// Rotated COCO evaluation of a detection file against a label directory.
    Eval(EvalArgs),
    /// Category, aspect-ratio and angle statistics of a label directory.
    Stats(StatsArgs),
    /// Mean MSE, SSIM and mutual information between paired images.
    Metrics(MetricsArgs),
    /// Write a synthetic paired-modality dataset.
    Gen(GenArgs),
    /// Train the A-only, B-only and fused trunks on synthetic data and compare them.
    Toytrain(ToytrainArgs),
}

/// JSON configuration with per-field flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub filter: Option<FilterKind>,
    #[arg(long)]
    pub scan: Option<ScanKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub occlusion_rate: Option<f64>,
    #[arg(long)]
    pub area_k: Option<usize>,
    #[arg(long)]
    pub area_axis: Option<Axis>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.filter {
            cfg.filter = v;
        }
        if let Some(v) = self.scan {
            cfg.scan = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.occlusion_rate {
            cfg.data.occlusion_rate = v;
        }
        if let Some(v) = self.area_k {
            cfg.area_k = v;
        }
        if let Some(v) = self.area_axis {
            cfg.area_axis = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub kind: FilterKind,
    /// Write `input + alpha · filter` instead of the bare filter response.
    #[arg(long)]
    pub alpha: Option<f64>,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub kind: ScanKind,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Hilbert direction, 0 to 7.
    #[arg(long, default_value_t = 0)]
    pub direction: u8,
    #[arg(long, value_enum, default_value_t = ScanAxis::Horizontal)]
    pub axis: ScanAxis,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    pub optical: PathBuf,
    pub sar: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of label files, one per image id.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection records `image_id category score cx cy w h theta`.
    #[arg(long)]
    pub det: PathBuf,
    /// Print the text table instead of JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Image side in pixels used for pixel areas.
    #[arg(long, default_value_t = 1024)]
    pub image_size: usize,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// An image, or a directory of images paired with `--sar` by file stem.
    #[arg(long)]
    pub optical: PathBuf,
    #[arg(long)]
    pub sar: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Both)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ToytrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Consecutive seeds starting at the configured seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Also run the uncorrupted control condition.
    #[arg(long)]
    pub control: bool,
    /// Also train the fused trunk for every filter and scan kind.
    #[arg(long)]
    pub ablation: bool,
    /// Directory for JSON reports and SVG charts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of text tables.
    #[arg(long)]
    pub json: bool,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Filter(a) => filter(a),
        Command::Scan(a) => scan(a, out),
        Command::Fuse(a) => fuse(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Stats(a) => stats(a, out),
        Command::Metrics(a) => metrics(a, out),
        Command::Gen(a) => gen(a, out),
        Command::Toytrain(a) => toytrain(a, out),
    }
}

fn filter(a: FilterArgs) -> Result<(), CliError> {
    let img = read_image(&a.input)?;
    let result = match a.alpha {
        Some(alpha) => {
            if !alpha.is_finite() {
                return Err(CliError::Input(format!(
                    "alpha must be finite, got {alpha}"
                )));
            }
            let gray = img.to_gray();
            augment_with(&gray, &apply_filter(a.kind, &gray)?, alpha)?
        }
        None => apply_filter(a.kind, &img)?,
    };
    // The raster format stores [0, 1]; augmentation may leave it.
    write_image(&a.output, &result.map(|v| v.clamp(0.0, 1.0)))?;
    Ok(())
}

fn scan(a: ScanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.rows == 0 || a.cols == 0 {
        return Err(CliError::Input("rows and cols must be positive".into()));
    }
    if a.direction >= osfuse_core::scanorders::HILBERT_DIRECTIONS {
        return Err(CliError::Input(format!(
            "direction must be below {}",
            osfuse_core::scanorders::HILBERT_DIRECTIONS
        )));
    }
    let perm = match a.axis {
        ScanAxis::Horizontal => scan_permutation_with(a.kind, a.rows, a.cols, a.direction),
        ScanAxis::Vertical => vertical_scan_permutation(a.kind, a.rows, a.cols, a.direction),
    };
    let text: String = perm
        .cells()
        .iter()
        .map(|(r, c)| format!("({r},{c})\n"))
        .collect();
    emit(out, &text)
}

fn fuse(a: FuseArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    let fused = fuse_images(&cfg, &read_image(&a.optical)?, &read_image(&a.sar)?)?;
    let json = to_json(&fused)?;
    match a.output {
        Some(p) => write_file(&p, &json),
        None => emit(out, &json),
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let gts = to_ground_truth(&load_label_dir(&a.gt)?);
    let text = std::fs::read_to_string(&a.det).map_err(|e| io_err(&a.det, e))?;
    let dets = parse_detections(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.det.display())))?;
    let report = evaluate(&dets, &gts)?;
    emit(
        out,
        &if a.table {
            report.to_table()
        } else {
            to_json(&report)?
        },
    )
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let labels: Vec<_> = load_label_dir(&a.labels)?.into_values().collect();
    let s = dataset_stats(&labels, a.image_size)?;
    emit(out, &if a.table { s.to_table() } else { to_json(&s)? })
}

fn image_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.push((stem.to_string(), path.clone()));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn metrics(a: MetricsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pairs: Vec<(Image, Image)> = if a.optical.is_dir() && a.sar.is_dir() {
        let sar: std::collections::BTreeMap<_, _> = image_files(&a.sar)?.into_iter().collect();
        let mut pairs = Vec::new();
        for (stem, path) in image_files(&a.optical)? {
            if let Some(sp) = sar.get(&stem) {
                pairs.push((read_image(&path)?, read_image(sp)?));
            }
        }
        if pairs.is_empty() {
            return Err(CliError::Input(format!(
                "no image stems shared by {} and {}",
                a.optical.display(),
                a.sar.display()
            )));
        }
        pairs
    } else if a.optical.is_file() && a.sar.is_file() {
        vec![(read_image(&a.optical)?, read_image(&a.sar)?)]
    } else {
        return Err(CliError::Input(
            "--optical and --sar must both be files or both be directories".into(),
        ));
    };
    emit(out, &to_json(&mean_pair_metrics(&pairs)?)?)
}

#[derive(Debug, Serialize)]
struct GenSummary {
    split: &'static str,
    images: usize,
    mean_occluded_target_fraction: f64,
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    let splits: &[(Split, &'static str)] = match a.split {
        SplitArg::Train => &[(Split::Train, "train")],
        SplitArg::Test => &[(Split::Test, "test")],
        SplitArg::Both => &[(Split::Train, "train"), (Split::Test, "test")],
    };
    let mut summary = Vec::new();
    for &(split, name) in splits {
        let pairs = generate_synthetic_pairs(&cfg.data, cfg.seed, split);
        write_dataset(&a.out.join(name), &pairs)?;
        summary.push(GenSummary {
            split: name,
            images: pairs.len(),
            mean_occluded_target_fraction: pairs
                .iter()
                .map(|p| p.occlusion.target_fraction)
                .sum::<f64>()
                / pairs.len() as f64,
        });
    }
    write_file(&a.out.join("config.json"), &to_json(&cfg)?)?;
    emit(out, &to_json(&summary)?)
}

fn accuracy_chart(report: &ExperimentReport) -> String {
    let series: Vec<(String, Vec<f64>)> = Arm::ALL
        .iter()
        .map(|&arm| {
            let curves: Vec<&Vec<f64>> = report
                .runs
                .iter()
                .flat_map(|r| {
                    r.arms
                        .iter()
                        .filter(move |a| a.arm == arm)
                        .map(|a| &a.test_accuracy)
                })
                .collect();
            let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
            let mean = (0..len)
                .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
                .collect();
            (arm.name().to_string(), mean)
        })
        .collect();
    line_chart(
        &format!("{}: held-out accuracy", report.label),
        "epoch",
        "accuracy (%)",
        &series,
    )
}

fn toytrain(a: ToytrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    if a.seeds == 0 {
        return Err(CliError::Input("--seeds must be positive".into()));
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut reports = vec![toy_fusion_experiment(&cfg, a.seeds, "default")?];
    if a.control {
        reports.push(toy_fusion_experiment(&cfg.control(), a.seeds, "control")?);
    }
    let abl = if a.ablation {
        Some(ablation(&cfg)?)
    } else {
        None
    };

    if let Some(dir) = &a.out {
        for r in &reports {
            write_file(&dir.join(format!("{}.json", r.label)), &to_json(r)?)?;
            write_file(
                &dir.join(format!("{}_accuracy.svg", r.label)),
                &accuracy_chart(r),
            )?;
        }
        if let Some(abl) = &abl {
            write_file(&dir.join("ablation.json"), &to_json(abl)?)?;
            for filter in FilterKind::ALL {
                let bars: Vec<(String, f64)> = abl
                    .rows
                    .iter()
                    .filter(|r| r.filter == filter)
                    .map(|r| (r.scan.name().to_string(), r.fused_accuracy))
                    .collect();
                let title = format!("fused accuracy by scan, filter {filter}");
                write_file(
                    &dir.join(format!("ablation_{filter}.svg")),
                    &bar_chart(&title, "accuracy (%)", &bars),
                )?;
            }
            let by_filter: Vec<(String, f64)> = FilterKind::ALL
                .iter()
                .map(|&f| {
                    let accs: Vec<f64> = abl
                        .rows
                        .iter()
                        .filter(|r| r.filter == f)
                        .map(|r| r.fused_accuracy)
                        .collect();
                    (
                        f.name().to_string(),
                        accs.iter().sum::<f64>() / accs.len().max(1) as f64,
                    )
                })
                .collect();
            write_file(
                &dir.join("ablation_filters.svg"),
                &bar_chart(
                    "fused accuracy by filter (mean over scans)",
                    "accuracy (%)",
                    &by_filter,
                ),
            )?;
        }
    }

    if a.json {
        #[derive(Serialize)]
        struct All<'a> {
            reports: &'a [ExperimentReport],
            ablation: Option<&'a crate::experiment::AblationReport>,
        }
        emit(
            out,
            &to_json(&All {
                reports: &reports,
                ablation: abl.as_ref(),
            })?,
        )
    } else {
        let mut text: String = reports.iter().map(|r| r.to_table() + "\n").collect();
        if let Some(abl) = &abl {
            text.push_str(&format!(
                "fused accuracy by filter and scan (seed {})\n",
                abl.seed
            ));
            text.push_str(&abl.to_table());
        }
        emit(out, &text)
    }
}
