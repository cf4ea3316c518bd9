use std::path::Path;

use osfuse_core::areafusion::{AreaConfig, Axis};
use osfuse_core::filters::FilterKind;
use osfuse_core::scanorders::{ScanKind, HILBERT_DIRECTIONS};
use osfuse_core::ssmfusion::CmimConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of a run. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub filter: FilterKind,
    pub alpha_init: f64,
    pub scan: ScanKind,
    pub hilbert_direction: u8,
    pub state_dim: usize,
    pub area_k: usize,
    pub area_axis: Axis,
    pub head_dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
}

/// Synthetic paired-modality dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub image_size: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Mean fraction of modality A hidden by the opaque blob; each blob covers `U(0, 2·rate)`.
    pub occlusion_rate: f64,
    /// Gamma shape of the multiplicative noise on modality B; `None` disables it.
    pub speckle_shape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch: usize,
    pub channels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            filter: FilterKind::Grad,
            alpha_init: 0.0,
            scan: ScanKind::Hilbert,
            hilbert_direction: 0,
            state_dim: 4,
            area_k: 4,
            area_axis: Axis::Horizontal,
            head_dim: 8,
            seed: 0,
            epochs: 20,
            learning_rate: 0.01,
            momentum: 0.937,
            batch_size: 8,
            data: DataConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            train_images: 480,
            test_images: 320,
            occlusion_rate: 0.3,
            speckle_shape: Some(1.0),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            channels: 8,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The control condition: no occlusion and no speckle.
    pub fn control(&self) -> Self {
        let mut c = self.clone();
        c.data.occlusion_rate = 0.0;
        c.data.speckle_shape = None;
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if !self.alpha_init.is_finite() {
            return bad(format!(
                "alpha_init must be finite, got {}",
                self.alpha_init
            ));
        }
        if self.hilbert_direction >= HILBERT_DIRECTIONS {
            return bad(format!(
                "hilbert_direction must be below {HILBERT_DIRECTIONS}"
            ));
        }
        if self.state_dim == 0 || self.area_k == 0 || self.head_dim == 0 || self.batch_size == 0 {
            return bad("state_dim, area_k, head_dim and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        let d = &self.data;
        if !(0.0..=0.5).contains(&d.occlusion_rate) {
            return bad(format!(
                "occlusion_rate must lie in [0, 0.5], got {}",
                d.occlusion_rate
            ));
        }
        if let Some(k) = d.speckle_shape {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("speckle_shape must be positive, got {k}"));
            }
        }
        let m = &self.model;
        if m.patch == 0
            || m.channels == 0
            || !d.image_size.is_multiple_of(m.patch)
            || d.image_size < 2 * m.patch
        {
            return bad(format!(
                "image_size {} must be a multiple of patch {} spanning at least two patches",
                d.image_size, m.patch
            ));
        }
        if d.image_size < 16 {
            return bad(format!(
                "image_size must be at least 16, got {}",
                d.image_size
            ));
        }
        if d.train_images < 2 || d.test_images < 2 {
            return bad("train_images and test_images must be at least 2".into());
        }
        Ok(())
    }

    pub fn cmim(&self) -> CmimConfig {
        CmimConfig {
            scan: self.scan,
            hilbert_direction: self.hilbert_direction,
            state_dim: self.state_dim,
            ..CmimConfig::default()
        }
    }

    pub fn area(&self) -> AreaConfig {
        AreaConfig {
            k: self.area_k,
            axis: self.area_axis,
            head_dim: self.head_dim,
        }
    }
}
