//! Cross-model feature comparison.
//!
//! For two models fed the same probe image, entry `(j1, j2)` of a distance
//! matrix is the cosine distance between channel `j1` of the first model and
//! channel `j2` of the second at the same layer. Models trained on different
//! content from a common starting point keep a small diagonal: the same
//! channel plays the same role in both.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::cafm::CafmSet;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::{extract_features, BackboneParams};

/// `1 − u·v / (‖u‖‖v‖)`. A zero vector is at distance 1.0 from everything.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("feature lengths differ: {} vs {}", u.len(), v.len())));
    }
    Ok(distance_of(u, v, norm(u), norm(v)))
}

fn norm(u: &[f32]) -> f64 {
    libm::sqrt(u.iter().map(|&x| x as f64 * x as f64).sum())
}

fn distance_of(u: &[f32], v: &[f32], nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// A model as seen by the analysis: backbone plus optional modulation.
#[derive(Debug, Clone, Copy)]
pub struct Probed<'a> {
    pub params: &'a BackboneParams,
    pub cafm: Option<&'a CafmSet>,
}

impl<'a> From<&'a BackboneParams> for Probed<'a> {
    fn from(params: &'a BackboneParams) -> Self {
        Self { params, cafm: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub pair: (usize, usize),
    pub layer: usize,
    pub layer_name: String,
    pub channels: usize,
    /// Row-major, `channels × channels`.
    pub values: Vec<f64>,
    /// Entries that involved an all-zero channel.
    pub zero_entries: usize,
}

impl DistanceMatrix {
    pub fn get(&self, j1: usize, j2: usize) -> f64 {
        self.values[j1 * self.channels + j2]
    }

    pub fn transpose(&self) -> Self {
        let c = self.channels;
        let values = (0..c * c).map(|i| self.values[(i % c) * c + i / c]).collect();
        Self { pair: (self.pair.1, self.pair.0), values, ..self.clone() }
    }

    pub fn diag_mean(&self) -> f64 {
        (0..self.channels).map(|j| self.get(j, j)).sum::<f64>() / self.channels as f64
    }

    /// Mean of the off-diagonal entries; 0 for a single channel.
    pub fn offdiag_mean(&self) -> f64 {
        let c = self.channels;
        if c < 2 {
            return 0.0;
        }
        let total: f64 = self.values.iter().sum();
        let diag: f64 = (0..c).map(|j| self.get(j, j)).sum();
        (total - diag) / (c * c - c) as f64
    }

    pub fn max_asymmetry(&self, other: &DistanceMatrix) -> f64 {
        let t = other.transpose();
        self.values.iter().zip(&t.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn check_same_arch(models: &[Probed<'_>]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::Analysis(format!("need at least two models, got {}", models.len())));
    }
    let first = models[0].params.config();
    if let Some(i) = models.iter().position(|m| m.params.config() != first) {
        return Err(Error::Analysis(format!("model {i} has a different architecture than model 0")));
    }
    Ok(())
}

/// One matrix per unordered model pair `(i1 < i2)` for each requested layer.
pub fn distance_matrices(models: &[Probed<'_>], probe: &Frame, layers: &[usize]) -> Result<Vec<DistanceMatrix>> {
    check_same_arch(models)?;
    let feats = models
        .iter()
        .map(|m| extract_features(m.params, m.cafm, probe, layers))
        .collect::<Result<Vec<_>>>()?;
    let arch = models[0].params.architecture();
    let mut out = Vec::new();
    for (li, &layer) in layers.iter().enumerate() {
        for i1 in 0..models.len() {
            for i2 in i1 + 1..models.len() {
                let (a, b) = (&feats[i1][li].tensor, &feats[i2][li].tensor);
                let c = a.channels;
                let na: Vec<f64> = (0..c).map(|j| norm(a.channel(j))).collect();
                let nb: Vec<f64> = (0..c).map(|j| norm(b.channel(j))).collect();
                let mut values = Vec::with_capacity(c * c);
                let mut zero_entries = 0;
                for j1 in 0..c {
                    for j2 in 0..c {
                        if na[j1] == 0.0 || nb[j2] == 0.0 {
                            zero_entries += 1;
                        }
                        values.push(distance_of(a.channel(j1), b.channel(j2), na[j1], nb[j2]));
                    }
                }
                out.push(DistanceMatrix {
                    pair: (i1, i2),
                    layer,
                    layer_name: arch.layers[layer].name.clone(),
                    channels: c,
                    values,
                    zero_entries,
                });
            }
        }
    }
    Ok(out)
}

/// Matrices for a single layer.
pub fn distance_matrix(models: &[Probed<'_>], probe: &Frame, layer: usize) -> Result<Vec<DistanceMatrix>> {
    distance_matrices(models, probe, &[layer])
}

/// Diagonal and off-diagonal means over all modulated layers and model pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSummary {
    pub diag_mean: f64,
    pub offdiag_mean: f64,
    pub matrices: Vec<DistanceMatrix>,
}

impl DistanceSummary {
    pub fn zero_entries(&self) -> usize {
        self.matrices.iter().map(|m| m.zero_entries).sum()
    }
}

pub fn summarize(models: &[Probed<'_>], probe: &Frame) -> Result<DistanceSummary> {
    check_same_arch(models)?;
    let layers: Vec<usize> = models[0].params.architecture().modulated_layers().map(|(i, _)| i).collect();
    let matrices = distance_matrices(models, probe, &layers)?;
    let n = matrices.len() as f64;
    let diag_mean = matrices.iter().map(DistanceMatrix::diag_mean).sum::<f64>() / n;
    let offdiag_mean = matrices.iter().map(DistanceMatrix::offdiag_mean).sum::<f64>() / n;
    Ok(DistanceSummary { diag_mean, offdiag_mean, matrices })
}

/// Mean diagonal distance over all modulated layers and model pairs.
pub fn average_diagonal(models: &[Probed<'_>], probe: &Frame) -> Result<f64> {
    Ok(summarize(models, probe)?.diag_mean)
}
