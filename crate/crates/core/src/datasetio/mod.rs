//! Label files, PNM rasters, dataset statistics and cross-modal pair metrics.

mod labels;
mod metrics;
mod pnm;
mod stats;

pub use labels::{
    format_label_file, load_label_dir, parse_label_file, read_label_file, to_ground_truth,
    LabeledInstance,
};
pub use metrics::{
    entropy_bits, mean_pair_metrics, mutual_information, pair_metrics, ssim, PairMetrics, MI_BINS,
};
pub use pnm::{decode_pnm, encode_pnm, read_image, write_image};
pub use stats::{dataset_stats, DatasetStats, ANGLE_BINS, ASPECT_BINS};
