//! Content-aware feature modulation.
//!
//! Every modulated convolution output `x` gets a per-channel affine map
//! `a_j * x_j + b_j`. With a kernel size `k > 1` the scale becomes a
//! depth-wise `k×k` convolution (zero padding `k / 2`), so channels are never
//! mixed and spatial size is preserved. A [`CafmSet`] holds one such entry per
//! modulated layer and is the only thing that differs between chunks.
//!
//! The modulation sits after the convolution and before its activation. The
//! final reconstruction convolution (3-channel output) is never modulated.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::FeatureMap;
use crate::nn::arch::{Architecture, BackboneConfig};
use crate::nn::ops::depthwise;

pub const KERNELS: [usize; 4] = [1, 3, 5, 7];

pub fn check_kernel(k: usize) -> Result<()> {
    if KERNELS.contains(&k) {
        Ok(())
    } else {
        Err(Error::Config(format!("modulation kernel must be 1, 3, 5 or 7, got {k}")))
    }
}

/// Modulation parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CafmEntry {
    pub layer: String,
    pub channels: usize,
    /// `[C][k][k]`
    pub scale: Vec<f32>,
    /// `[C]`
    pub bias: Vec<f32>,
}

/// The private parameters of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct CafmSet {
    pub chunk_index: usize,
    pub kernel: usize,
    /// One entry per modulated layer, in network order.
    pub entries: Vec<CafmEntry>,
}

/// Layers that receive modulation, in network order.
pub fn attach_points(config: &BackboneConfig) -> Result<Vec<String>> {
    let arch = Architecture::build(config)?;
    Ok(arch.modulated_layers().map(|(_, l)| l.name.clone()).collect())
}

/// Identity modulation: centre tap 1, everything else and the bias 0.
pub fn make_identity_cafm(config: &BackboneConfig, k: usize) -> Result<CafmSet> {
    check_kernel(k)?;
    let arch = Architecture::build(config)?;
    Ok(identity_for(&arch, k, 0))
}

pub(crate) fn identity_for(arch: &Architecture, k: usize, chunk_index: usize) -> CafmSet {
    let centre = (k / 2) * k + k / 2;
    let entries = arch
        .modulated_layers()
        .map(|(_, l)| {
            let c = l.out_channels;
            let mut scale = vec![0.0; c * k * k];
            for j in 0..c {
                scale[j * k * k + centre] = 1.0;
            }
            CafmEntry { layer: l.name.clone(), channels: c, scale, bias: vec![0.0; c] }
        })
        .collect();
    CafmSet { chunk_index, kernel: k, entries }
}

/// Modulation parameter count for `config` at kernel `k`.
pub fn cafm_param_count(config: &BackboneConfig, k: usize) -> Result<usize> {
    check_kernel(k)?;
    let arch = Architecture::build(config)?;
    Ok(arch.modulated_layers().map(|(_, l)| l.out_channels * (k * k + 1)).sum())
}

/// Per-chunk modulation parameters divided by backbone parameters.
pub fn overhead_ratio(config: &BackboneConfig, k: usize) -> Result<f64> {
    let arch = Architecture::build(config)?;
    Ok(cafm_param_count(config, k)? as f64 / arch.param_count() as f64)
}

/// Modulates one feature map. The kernel size is inferred from `a.len() / C`.
pub fn apply_cafm(x: &FeatureMap, a: &[f32], b: &[f32]) -> Result<FeatureMap> {
    let c = x.tensor.channels;
    if b.len() != c || c == 0 || a.len() % c != 0 {
        return Err(Error::Shape(format!(
            "modulation for {} channels applied to a {c}-channel feature map",
            b.len()
        )));
    }
    let kk = a.len() / c;
    let k = libm::sqrt(kk as f64) as usize;
    if k * k != kk || k % 2 == 0 {
        return Err(Error::Shape(format!("{kk} taps per channel is not an odd square kernel")));
    }
    Ok(FeatureMap {
        model_index: x.model_index,
        layer_index: x.layer_index,
        tensor: depthwise(&x.tensor, a, b, k),
    })
}

impl CafmSet {
    pub fn identity(config: &BackboneConfig, k: usize, chunk_index: usize) -> Result<Self> {
        let mut set = make_identity_cafm(config, k)?;
        set.chunk_index = chunk_index;
        Ok(set)
    }

    /// Checks entry names, order and shapes against `arch`.
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        check_kernel(self.kernel)?;
        let expected: Vec<_> = arch.modulated_layers().map(|(_, l)| l).collect();
        if expected.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "modulation set has {} entries, backbone has {} modulated layers",
                self.entries.len(),
                expected.len()
            )));
        }
        let kk = self.kernel * self.kernel;
        for (e, l) in self.entries.iter().zip(expected) {
            if e.layer != l.name
                || e.channels != l.out_channels
                || e.scale.len() != e.channels * kk
                || e.bias.len() != e.channels
            {
                return Err(Error::Shape(format!("modulation entry `{}` does not fit layer `{}`", e.layer, l.name)));
            }
            if !e.scale.iter().chain(&e.bias).all(|v| v.is_finite()) {
                return Err(Error::Shape(format!("modulation entry `{}` has non-finite values", e.layer)));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.scale.len() + e.bias.len()).sum()
    }

    pub fn entry(&self, layer: &str) -> Option<&CafmEntry> {
        self.entries.iter().find(|e| e.layer == layer)
    }

    pub fn bitwise_eq(&self, other: &CafmSet) -> bool {
        self.kernel == other.kernel
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.layer == b.layer
                    && a.scale.len() == b.scale.len()
                    && a.scale.iter().zip(&b.scale).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias.iter().zip(&b.bias).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradient buffers shaped like a [`CafmSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct CafmGrads {
    pub entries: Vec<(Vec<f32>, Vec<f32>)>,
}

impl CafmGrads {
    pub fn zeros_like(set: &CafmSet) -> Self {
        Self { entries: set.entries.iter().map(|e| (vec![0.0; e.scale.len()], vec![0.0; e.bias.len()])).collect() }
    }

    pub fn scale(&mut self, f: f32) {
        for (a, b) in &mut self.entries {
            for v in a.iter_mut().chain(b.iter_mut()) {
                *v *= f;
            }
        }
    }

    pub fn clear(&mut self) {
        self.scale(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Tensor;
    use crate::nn::arch::Arch;

    fn fmap(c: usize, h: usize, w: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap { model_index: 0, layer_index: 0, tensor: Tensor::from_vec(c, h, w, data).unwrap() }
    }

    #[test]
    fn affine_example() {
        let x = fmap(1, 1, 2, vec![2.0, -1.0]);
        let y = apply_cafm(&x, &[0.5], &[1.0]).unwrap();
        assert_eq!(y.tensor.data, vec![2.0, 0.5]);
    }

    #[test]
    fn identity_kernels() {
        let cfg = BackboneConfig::tiny(Arch::EdsrM, 2);
        let k1 = make_identity_cafm(&cfg, 1).unwrap();
        assert!(k1.entries.iter().all(|e| e.scale.iter().all(|&v| v == 1.0) && e.bias.iter().all(|&v| v == 0.0)));
        let k3 = make_identity_cafm(&cfg, 3).unwrap();
        for e in &k3.entries {
            for j in 0..e.channels {
                let kern = &e.scale[j * 9..(j + 1) * 9];
                assert_eq!(kern, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
            }
        }
        assert!(make_identity_cafm(&cfg, 2).is_err());
        assert!(make_identity_cafm(&cfg, 9).is_err());
    }

    #[test]
    fn identity_is_exact_on_features() {
        for k in KERNELS {
            let c = 3;
            let x = fmap(c, 4, 5, (0..60).map(|i| (i as f32 * 0.37).sin()).collect());
            let mut a = vec![0.0; c * k * k];
            for j in 0..c {
                a[j * k * k + (k / 2) * k + k / 2] = 1.0;
            }
            let y = apply_cafm(&x, &a, &[0.0; 3]).unwrap();
            assert!(y.tensor.data.iter().zip(&x.tensor.data).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn constant_channel_hand_convolution() {
        // 5x5 constant c, 3x3 kernel with taps summing to w: interior is c*w + b.
        let c = 0.8f32;
        let kern = [0.1f32, 0.2, 0.0, -0.3, 0.5, 0.1, 0.0, 0.2, 0.4];
        let w: f32 = kern.iter().sum();
        let y = apply_cafm(&fmap(1, 5, 5, vec![c; 25]), &kern, &[0.25]).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((y.tensor.data[yy * 5 + xx] - (c * w + 0.25)).abs() < 1e-6);
            }
        }
        // Corner (0, 0) only sees taps (1..3, 1..3).
        let corner: f32 = [kern[4], kern[5], kern[7], kern[8]].iter().sum::<f32>() * c + 0.25;
        assert!((y.tensor.data[0] - corner).abs() < 1e-6);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = fmap(2, 1, 1, vec![1.0, 2.0]);
        assert!(matches!(apply_cafm(&x, &[1.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(apply_cafm(&x, &[1.0; 8], &[0.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn attach_point_counts() {
        assert_eq!(attach_points(&BackboneConfig::new(Arch::Srcnn, 2)).unwrap(), vec!["conv1", "conv2"]);
        let tiny = attach_points(&BackboneConfig::tiny(Arch::EdsrM, 2)).unwrap();
        assert_eq!(tiny.len(), 2 + 2 * 2 + 1 - 1 + 1);
        assert_eq!(tiny.first().unwrap(), "head");
        assert_eq!(tiny.last().unwrap(), "upsampler.0");
        let tiny4 = attach_points(&BackboneConfig::tiny(Arch::EdsrM, 4)).unwrap();
        assert_eq!(tiny4.len(), 1 + 2 * 2 + 1 + 2);
        let full = attach_points(&BackboneConfig::new(Arch::EdsrM, 2)).unwrap();
        assert_eq!(full.len(), 1 + 32 + 1 + 1);
        assert!(!full.iter().any(|n| n == "recon"));
        assert_eq!(attach_points(&BackboneConfig::new(Arch::Vdsr, 2)).unwrap().len(), 19);
        assert_eq!(attach_points(&BackboneConfig::new(Arch::Espcn, 3)).unwrap().len(), 2);
    }

    #[test]
    fn overhead_grows_less_than_ninefold() {
        for arch in Arch::ALL {
            for s in 2..=4 {
                let cfg = BackboneConfig::new(arch, s);
                let r1 = overhead_ratio(&cfg, 1).unwrap();
                let r3 = overhead_ratio(&cfg, 3).unwrap();
                assert!(r3 > r1 && r3 < 9.0 * r1);
            }
        }
    }

    #[test]
    fn edsr_overhead_is_exact() {
        // head 64 + 32 block convs * 64 + body end 64 + upsampler 256 channels, 2 values each.
        let cfg = BackboneConfig::new(Arch::EdsrM, 2);
        assert_eq!(cafm_param_count(&cfg, 1).unwrap(), 2 * (64 + 32 * 64 + 64 + 256));
        let r = overhead_ratio(&cfg, 1).unwrap();
        assert!((r - 4864.0 / 1_369_859.0).abs() < 1e-15);
    }
}
