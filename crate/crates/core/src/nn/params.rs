use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::arch::{Architecture, BackboneConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Weights and biases of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[out][in][k][k]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// A named view of one stored tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NamedTensor<'a> {
    pub layer: &'a str,
    pub suffix: &'static str,
    pub shape: [usize; 4],
    pub ndim: usize,
    pub data: &'a [f32],
}

impl NamedTensor<'_> {
    pub fn name(&self) -> String {
        format!("{}.{}", self.layer, self.suffix)
    }

    pub fn dims(&self) -> &[usize] {
        &self.shape[..self.ndim]
    }
}

/// The shared backbone weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    arch: Architecture,
    pub(crate) layers: Vec<ConvParams>,
}

/// Kaiming-uniform fan-in weights with the leaky-ReLU slope `sqrt(5)` used by
/// common conv defaults (bound `1 / sqrt(fan_in)`) and zero biases,
/// deterministic in `seed`.
pub fn build_backbone(config: &BackboneConfig, seed: u64) -> Result<BackboneParams> {
    let arch = Architecture::build(config)?;
    let layers = arch
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let fan_in = (l.in_channels * l.kernel * l.kernel) as f32;
            let bound = libm::sqrtf(1.0 / fan_in);
            let mut rng = rng_from(derive_seed(seed, &[i as u64]));
            let n = l.out_channels * l.in_channels * l.kernel * l.kernel;
            ConvParams {
                weight: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                bias: vec![0.0; l.out_channels],
            }
        })
        .collect();
    Ok(BackboneParams { arch, layers })
}

/// Exact number of trainable values.
pub fn count_params(params: &BackboneParams) -> usize {
    params.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
}

impl BackboneParams {
    /// All-zero parameters with the right shapes.
    pub fn zeros(config: &BackboneConfig) -> Result<Self> {
        let arch = Architecture::build(config)?;
        let layers = arch
            .layers
            .iter()
            .map(|l| ConvParams {
                weight: vec![0.0; l.out_channels * l.in_channels * l.kernel * l.kernel],
                bias: vec![0.0; l.out_channels],
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[ConvParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.arch.layers.iter().position(|l| l.name == name)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (spec, p) in self.arch.layers.iter().zip(&self.layers) {
            out.push(NamedTensor { layer: &spec.name, suffix: "weight", shape: spec.weight_shape(), ndim: 4, data: &p.weight });
            out.push(NamedTensor {
                layer: &spec.name,
                suffix: "bias",
                shape: [spec.out_channels, 0, 0, 0],
                ndim: 1,
                data: &p.bias,
            });
        }
        out
    }

    /// Replaces one tensor by name, checking its shape against the manifest.
    pub fn set_tensor(&mut self, name: &str, dims: &[usize], data: Vec<f32>) -> Result<()> {
        let (layer, suffix) = name
            .rsplit_once('.')
            .ok_or_else(|| Error::Shape(format!("tensor name `{name}` has no suffix")))?;
        let idx = self.layer_index(layer).ok_or_else(|| Error::Shape(format!("unknown layer `{layer}`")))?;
        let spec = &self.arch.layers[idx];
        let (expected, slot): (Vec<usize>, &mut Vec<f32>) = match suffix {
            "weight" => (spec.weight_shape().to_vec(), &mut self.layers[idx].weight),
            "bias" => (vec![spec.out_channels], &mut self.layers[idx].bias),
            _ => return Err(Error::Shape(format!("unknown tensor `{name}`"))),
        };
        if expected != dims || data.len() != slot.len() {
            return Err(Error::Shape(format!("tensor `{name}` has shape {dims:?}, expected {expected:?}")));
        }
        *slot = data;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// FNV-1a over the bit patterns of every value, in manifest order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Gradient buffers shaped like a [`BackboneParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<ConvParams>,
}

impl ParamGrads {
    pub fn zeros_like(params: &BackboneParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| ConvParams { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn scale(&mut self, f: f32) {
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
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
    use crate::nn::arch::Arch;

    /// Shape-walk oracle: parameter count straight from the layer recipe.
    fn recipe_count(layers: &[(usize, usize, usize)]) -> usize {
        layers.iter().map(|&(cin, cout, k)| cin * cout * k * k + cout).sum()
    }

    #[test]
    fn srcnn_count_is_20099() {
        let p = build_backbone(&BackboneConfig::new(Arch::Srcnn, 2), 0).unwrap();
        assert_eq!(count_params(&p), 20_099);
        assert_eq!(count_params(&p), recipe_count(&[(3, 64, 9), (64, 32, 1), (32, 3, 5)]));
    }

    #[test]
    fn edsr_m_count_matches_shape_walk() {
        let p = build_backbone(&BackboneConfig::new(Arch::EdsrM, 2), 0).unwrap();
        let mut recipe = vec![(3, 64, 3)];
        recipe.extend(core::iter::repeat((64, 64, 3)).take(33));
        recipe.push((64, 256, 3));
        recipe.push((64, 3, 3));
        assert_eq!(count_params(&p), recipe_count(&recipe));
        assert_eq!(count_params(&p), 1_369_859);
        assert_eq!(count_params(&p), p.architecture().param_count());
        let walked: usize = p.named_tensors().iter().map(|t| t.dims().iter().product::<usize>()).sum();
        assert_eq!(walked, 1_369_859);
    }

    #[test]
    fn empty_recipe_counts_zero() {
        assert_eq!(recipe_count(&[]), 0);
        let g = ParamGrads { layers: vec![] };
        assert_eq!(g.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>(), 0);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = BackboneConfig::new(Arch::EdsrM, 4);
        let a = build_backbone(&cfg, 0).unwrap();
        let b = build_backbone(&cfg, 0).unwrap();
        assert!(a.layers.iter().zip(&b.layers).all(|(x, y)| {
            x.weight.iter().zip(&y.weight).all(|(u, v)| u.to_bits() == v.to_bits())
        }));
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), build_backbone(&cfg, 1).unwrap().fingerprint());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn set_tensor_checks_shape() {
        let mut p = build_backbone(&BackboneConfig::tiny(Arch::Srcnn, 2), 0).unwrap();
        assert!(p.set_tensor("conv3.bias", &[3], vec![1.0; 3]).is_ok());
        assert!(p.set_tensor("conv3.bias", &[4], vec![1.0; 4]).is_err());
        assert!(p.set_tensor("nope.bias", &[3], vec![1.0; 3]).is_err());
    }
}
