//! Run configuration: one TOML file, every field defaulted, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cafm_core::media::DEFAULT_TEST_STRIDE;
use cafm_core::nn::{Arch, BackboneConfig};
use cafm_core::train::{TrainConfig, TrainMode};

use crate::codec::Codec;
use crate::error::{CliError, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workdir: Option<PathBuf>,
    pub media: MediaConfig,
    pub backbone: BackboneSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub codec: CodecSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediaConfig {
    pub scale: usize,
    pub chunks: usize,
    pub test_stride: usize,
    pub frame_limit: Option<usize>,
    /// Frame rate used for image-directory inputs and codec runs.
    pub fps: f64,
}

impl Default for MediaConfig {
    fn default() -> Self {
        Self { scale: 2, chunks: 2, test_stride: DEFAULT_TEST_STRIDE, frame_limit: None, fps: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 8 channels, 2 residual blocks.
    #[default]
    Tiny,
    /// 64 channels, 16 residual blocks.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    pub arch: Arch,
    pub profile: Profile,
    pub channels: Option<usize>,
    pub n_resblocks: Option<usize>,
    pub residual_scaling: Option<f32>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self { arch: Arch::EdsrM, profile: Profile::Tiny, channels: None, n_resblocks: None, residual_scaling: None }
    }
}

impl BackboneSection {
    pub fn resolve(&self, scale: usize) -> Result<BackboneConfig> {
        let mut c = match self.profile {
            Profile::Tiny => BackboneConfig::tiny(self.arch, scale),
            Profile::Full => BackboneConfig::new(self.arch, scale),
        };
        if let Some(v) = self.channels {
            c.channels = v;
        }
        if let Some(v) = self.n_resblocks {
            c.n_resblocks = v;
        }
        if let Some(v) = self.residual_scaling {
            c.residual_scaling = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    /// Steps of one per-chunk model; whole-video and joint runs get `n` times as many.
    pub iterations: usize,
    pub batch: usize,
    pub lr: f32,
    pub adam_betas: (f32, f32),
    pub adam_eps: f32,
    pub lr_decay: Option<Vec<(usize, f32)>>,
    pub patch_lr: usize,
    pub kernel: usize,
    pub log_interval: usize,
    /// Image folder for `external` training.
    pub external_dir: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            iterations: t.iterations,
            batch: t.batch,
            lr: t.lr,
            adam_betas: t.adam_betas,
            adam_eps: t.adam_eps,
            lr_decay: None,
            patch_lr: t.patch_lr,
            kernel: t.kernel,
            log_interval: t.log_interval,
            external_dir: None,
        }
    }
}

impl TrainSection {
    /// Trainer settings for `mode` over `n` chunks.
    pub fn resolve(&self, mode: TrainMode, n: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            iterations: mode.step_budget(n, self.iterations),
            batch: self.batch,
            lr: self.lr,
            adam_betas: self.adam_betas,
            adam_eps: self.adam_eps,
            lr_decay: self.lr_decay.clone(),
            seed,
            patch_lr: self.patch_lr,
            kernel: self.kernel,
            log_interval: self.log_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub y_channel: bool,
    /// Probe image for feature analysis; defaults to the first test frame.
    pub probe: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub codec: Codec,
    pub preset: String,
    /// Byte budget; defaults to the joint run's total delivery size.
    pub budget_bytes: Option<u64>,
    pub max_probes: usize,
    pub ffmpeg: Option<PathBuf>,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { codec: Codec::H264, preset: String::from("medium"), budget_bytes: None, max_probes: 8, ffmpeg: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn backbone_config(&self) -> Result<BackboneConfig> {
        self.backbone.resolve(self.media.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("[train]\nlearning_rate = 1.0\n"), Err(CliError::Usage(_))));
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn step_budget_follows_mode() {
        let t = TrainSection { iterations: 10, ..TrainSection::default() };
        assert_eq!(t.resolve(TrainMode::Joint, 3, 0).iterations, 30);
        assert_eq!(t.resolve(TrainMode::Separate, 3, 0).iterations, 10);
    }
}
