//! Backbone descriptions: configuration, layer manifest and the op program
//! the network interpreter runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ops::Activation;
use crate::error::{Error, Result};
use crate::media::check_scale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Srcnn,
    Espcn,
    Vdsr,
    EdsrM,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Srcnn, Arch::Espcn, Arch::Vdsr, Arch::EdsrM];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Srcnn => "srcnn",
            Arch::Espcn => "espcn",
            Arch::Vdsr => "vdsr",
            Arch::EdsrM => "edsr_m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }

    /// Whether the network consumes a bicubically pre-upscaled input.
    pub fn pre_upsampled(self) -> bool {
        matches!(self, Arch::Srcnn | Arch::Vdsr)
    }
}

/// Number of convolutions in the VDSR trunk.
pub const VDSR_DEPTH: usize = 20;
pub const EDSR_M_RESBLOCKS: usize = 16;
/// Per-channel RGB mean EDSR subtracts from its input and adds back to its output.
pub const EDSR_RGB_MEAN: [f32; 3] = [0.4488, 0.4371, 0.4040];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub arch: Arch,
    pub scale: usize,
    /// Feature width. SRCNN and ESPCN use `C` then `C / 2`.
    pub channels: usize,
    /// EDSR only.
    pub n_resblocks: usize,
    /// EDSR only.
    pub residual_scaling: f32,
}

impl BackboneConfig {
    /// Reference configuration: 64 channels; EDSR-M with 16 residual blocks and scaling 1.0.
    pub fn new(arch: Arch, scale: usize) -> Self {
        Self { arch, scale, channels: 64, n_resblocks: EDSR_M_RESBLOCKS, residual_scaling: 1.0 }
    }

    /// Desk-scale profile: 8 channels, 2 residual blocks.
    pub fn tiny(arch: Arch, scale: usize) -> Self {
        Self { arch, scale, channels: 8, n_resblocks: 2, residual_scaling: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale).map_err(|_| Error::Config(format!("unsupported scale {}", self.scale)))?;
        if self.channels < 2 {
            return Err(Error::Config(format!("channels must be at least 2, got {}", self.channels)));
        }
        if self.arch == Arch::EdsrM {
            if self.n_resblocks == 0 {
                return Err(Error::Config(String::from("edsr_m needs at least one residual block")));
            }
            if !self.residual_scaling.is_finite() {
                return Err(Error::Config(String::from("residual scaling must be finite")));
            }
        }
        Ok(())
    }
}

/// One convolution of the backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: Option<Activation>,
    /// Receives a modulation entry.
    pub modulated: bool,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    /// Convolution `layer`, then its modulation entry (if any), then its activation.
    Conv(usize),
    /// Stores the current value in `slot`.
    Save(usize),
    /// `x = slot + scale · x`.
    AddSaved { slot: usize, scale: f32 },
    Shuffle(usize),
    /// Adds a fixed per-channel offset.
    Shift([f32; 3]),
}

/// Layer manifest plus the op program for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: BackboneConfig,
    pub layers: Vec<LayerSpec>,
    pub(crate) ops: Vec<Op>,
    pub(crate) slots: usize,
    /// `modulation_slot[l]` is the index of layer `l`'s entry in a modulation set.
    pub(crate) modulation_slot: Vec<Option<usize>>,
}

fn conv(name: impl Into<String>, cin: usize, cout: usize, k: usize, act: Option<Activation>, modulated: bool) -> LayerSpec {
    LayerSpec { name: name.into(), in_channels: cin, out_channels: cout, kernel: k, activation: act, modulated }
}

impl Architecture {
    pub fn build(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let s = config.scale;
        let relu = Some(Activation::Relu);
        let mut layers = Vec::new();
        let mut ops = Vec::new();
        let mut slots = 0;
        match config.arch {
            Arch::Srcnn => {
                layers.push(conv("conv1", 3, c, 9, relu, true));
                layers.push(conv("conv2", c, c / 2, 1, relu, true));
                layers.push(conv("conv3", c / 2, 3, 5, None, false));
                ops.extend((0..3).map(Op::Conv));
            }
            Arch::Espcn => {
                let tanh = Some(Activation::Tanh);
                layers.push(conv("conv1", 3, c, 5, tanh, true));
                layers.push(conv("conv2", c, c / 2, 3, tanh, true));
                layers.push(conv("conv3", c / 2, 3 * s * s, 3, None, false));
                ops.extend((0..3).map(Op::Conv));
                ops.push(Op::Shuffle(s));
            }
            Arch::Vdsr => {
                slots = 1;
                ops.push(Op::Save(0));
                layers.push(conv("input", 3, c, 3, relu, true));
                for i in 0..VDSR_DEPTH - 2 {
                    layers.push(conv(format!("body.{i}"), c, c, 3, relu, true));
                }
                layers.push(conv("output", c, 3, 3, None, false));
                ops.extend((0..VDSR_DEPTH).map(Op::Conv));
                ops.push(Op::AddSaved { slot: 0, scale: 1.0 });
            }
            Arch::EdsrM => {
                slots = 2;
                ops.push(Op::Shift(EDSR_RGB_MEAN.map(|m| -m)));
                layers.push(conv("head", 3, c, 3, None, true));
                ops.push(Op::Conv(0));
                ops.push(Op::Save(0));
                for b in 0..config.n_resblocks {
                    ops.push(Op::Save(1));
                    layers.push(conv(format!("body.{b}.conv1"), c, c, 3, relu, true));
                    ops.push(Op::Conv(layers.len() - 1));
                    layers.push(conv(format!("body.{b}.conv2"), c, c, 3, None, true));
                    ops.push(Op::Conv(layers.len() - 1));
                    ops.push(Op::AddSaved { slot: 1, scale: config.residual_scaling });
                }
                layers.push(conv("body.end", c, c, 3, None, true));
                ops.push(Op::Conv(layers.len() - 1));
                ops.push(Op::AddSaved { slot: 0, scale: 1.0 });
                let stages: Vec<usize> = if s == 4 { vec![2, 2] } else { vec![s] };
                for (i, r) in stages.into_iter().enumerate() {
                    layers.push(conv(format!("upsampler.{i}"), c, c * r * r, 3, None, true));
                    ops.push(Op::Conv(layers.len() - 1));
                    ops.push(Op::Shuffle(r));
                }
                layers.push(conv("recon", c, 3, 3, None, false));
                ops.push(Op::Conv(layers.len() - 1));
                ops.push(Op::Shift(EDSR_RGB_MEAN));
            }
        }
        let mut next = 0;
        let modulation_slot = layers
            .iter()
            .map(|l| {
                l.modulated.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Ok(Self { config: *config, layers, ops, slots, modulation_slot })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn modulated_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.modulated)
    }

    /// Smallest LR side the network accepts.
    pub fn min_input_side(&self) -> usize {
        1
    }

    /// Serializable description: layer names, kinds and tensor shapes.
    pub fn manifest(&self) -> ArchManifest {
        ArchManifest {
            config: self.config,
            param_count: self.param_count(),
            layers: self
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    name: l.name.clone(),
                    kind: String::from("conv2d"),
                    kernel: l.kernel,
                    activation: l.activation,
                    modulated: l.modulated,
                    tensors: vec![
                        ManifestTensor { name: format!("{}.weight", l.name), shape: l.weight_shape().to_vec() },
                        ManifestTensor { name: format!("{}.bias", l.name), shape: vec![l.out_channels] },
                    ],
                })
                .collect(),
        }
    }
}

/// `arch.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchManifest {
    pub config: BackboneConfig,
    pub param_count: usize,
    pub layers: Vec<ManifestLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub kind: String,
    pub kernel: usize,
    pub activation: Option<Activation>,
    pub modulated: bool,
    pub tensors: Vec<ManifestTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTensor {
    pub name: String,
    pub shape: Vec<usize>,
}
