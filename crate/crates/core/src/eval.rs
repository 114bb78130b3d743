//! Per-chunk and per-video quality reports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bundle::{reconstruct_chunk, ModelBundle, StorageReport};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::media::{bicubic_upscale, ChunkDataset};
use crate::metrics::{psnr, psnr_y};
use crate::train::TrainedModel;

/// Anything that can super-resolve the frames of a given chunk.
pub trait ChunkModel {
    fn scale(&self) -> usize;
    fn super_resolve(&self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>>;
}

impl ChunkModel for TrainedModel {
    fn scale(&self) -> usize {
        self.shared.config().scale
    }

    fn super_resolve(&self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        TrainedModel::super_resolve(self, chunk, lr)
    }
}

/// One independent model per chunk; model `i` serves chunk `i`.
impl ChunkModel for [TrainedModel] {
    fn scale(&self) -> usize {
        self.first().map_or(0, |m| m.shared.config().scale)
    }

    fn super_resolve(&self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        let model = self.get(chunk).ok_or(Error::ChunkRange { index: chunk, count: self.len() })?;
        model.super_resolve(0, lr)
    }
}

impl ChunkModel for ModelBundle {
    fn scale(&self) -> usize {
        self.manifest.scale
    }

    fn super_resolve(&self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        reconstruct_chunk(self, chunk, lr)
    }
}

/// Plain bicubic upscaling, the floor every learned model must beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bicubic(pub usize);

impl ChunkModel for Bicubic {
    fn scale(&self) -> usize {
        self.0
    }

    fn super_resolve(&self, _chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        lr.iter().map(|f| bicubic_upscale(f, self.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Rgb,
    /// BT.601 luma.
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub chunk: usize,
    pub frame_indices: Vec<usize>,
    pub frame_psnr: Vec<f64>,
    /// Mean over this chunk's frames.
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub scale: usize,
    pub chunks: Vec<ChunkScore>,
    /// Mean over every evaluated frame of every chunk.
    pub video_psnr: f64,
    pub storage: Option<StorageReport>,
}

/// Differences of one report against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub per_chunk: Vec<f64>,
    pub video: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl EvalReport {
    /// Builds a report from per-frame scores grouped by chunk.
    pub fn from_scores(label: impl Into<String>, scale: usize, chunks: Vec<ChunkScore>) -> Result<Self> {
        let all: Vec<f64> = chunks.iter().flat_map(|c| c.frame_psnr.iter().copied()).collect();
        if all.is_empty() {
            return Err(Error::EmptyInput(String::from("no frames evaluated")));
        }
        Ok(Self { label: label.into(), scale, video_psnr: mean(&all), chunks, storage: None })
    }

    pub fn with_storage(mut self, storage: StorageReport) -> Self {
        self.storage = Some(storage);
        self
    }

    pub fn frame_count(&self) -> usize {
        self.chunks.iter().map(|c| c.frame_psnr.len()).sum()
    }

    /// `self − baseline`, chunk by chunk and for the whole video.
    pub fn margin_over(&self, baseline: &EvalReport) -> Result<Margin> {
        if self.chunks.len() != baseline.chunks.len() {
            return Err(Error::Eval(format!(
                "reports cover {} and {} chunks",
                self.chunks.len(),
                baseline.chunks.len()
            )));
        }
        Ok(Margin {
            per_chunk: self.chunks.iter().zip(&baseline.chunks).map(|(a, b)| a.psnr - b.psnr).collect(),
            video: self.video_psnr - baseline.video_psnr,
        })
    }
}

/// Scores `model` on every test dataset; chunk `i` is reconstructed with the
/// modulation of the dataset's chunk index.
pub fn evaluate<M: ChunkModel + ?Sized>(
    label: impl Into<String>,
    model: &M,
    test: &[ChunkDataset],
    color: ColorSpace,
) -> Result<EvalReport> {
    let scale = model.scale();
    let mut chunks = Vec::with_capacity(test.len());
    for ds in test {
        if ds.scale != scale {
            return Err(Error::Eval(format!("dataset scale {} does not match model scale {scale}", ds.scale)));
        }
        let lr: Vec<Frame> = ds.pairs().iter().map(|p| p.lr.clone()).collect();
        let sr = model.super_resolve(ds.chunk_index, &lr)?;
        let frame_psnr = sr
            .iter()
            .zip(ds.pairs())
            .map(|(s, p)| match color {
                ColorSpace::Rgb => psnr(&p.hr, s),
                ColorSpace::Y => psnr_y(&p.hr, s),
            })
            .collect::<Result<Vec<_>>>()?;
        chunks.push(ChunkScore {
            chunk: ds.chunk_index,
            frame_indices: ds.pairs().iter().map(|p| p.frame_index).collect(),
            psnr: mean(&frame_psnr),
            frame_psnr,
        });
    }
    EvalReport::from_scores(label, scale, chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{build_datasets, split_chunks, VideoAsset};
    use alloc::vec;

    fn clip() -> VideoAsset {
        let frames = (0..6)
            .map(|t| {
                Frame::from_fn(8, 8, |y, x| {
                    let v = ((x + 2 * y + t) % 7) as f32 / 6.0;
                    [v, v * 0.5, 1.0 - v]
                })
                .unwrap()
            })
            .collect();
        VideoAsset::new(frames, 30.0, "t").unwrap()
    }

    #[test]
    fn video_mean_is_over_frames() {
        let chunks = vec![
            ChunkScore { chunk: 0, frame_indices: vec![0], frame_psnr: vec![30.0], psnr: 30.0 },
            ChunkScore { chunk: 1, frame_indices: vec![1, 2, 3], frame_psnr: vec![40.0, 40.0, 40.0], psnr: 40.0 },
        ];
        let r = EvalReport::from_scores("x", 2, chunks).unwrap();
        assert_eq!(r.video_psnr, 37.5);
        assert_eq!(r.frame_count(), 4);
    }

    #[test]
    fn bicubic_row_is_deterministic() {
        let v = clip();
        let (_, test) = build_datasets(&v, &split_chunks(6, 2).unwrap(), 2, 1).unwrap();
        let a = evaluate("bicubic", &Bicubic(2), &test, ColorSpace::Rgb).unwrap();
        let b = evaluate("bicubic", &Bicubic(2), &test, ColorSpace::Rgb).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chunks.len(), 2);
        let m = a.margin_over(&b).unwrap();
        assert!(m.per_chunk.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn scale_mismatch_is_an_eval_error() {
        let v = clip();
        let (_, test) = build_datasets(&v, &split_chunks(6, 2).unwrap(), 2, 1).unwrap();
        assert!(matches!(evaluate("b", &Bicubic(4), &test, ColorSpace::Rgb), Err(Error::Eval(_))));
    }
}
