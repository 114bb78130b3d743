//! On-disk layout of a run directory.
//!
//! ```text
//! hr/%06d.png            original frames (cropped to a multiple of the scale)
//! lrx{s}/%06d.png        bicubic LR frames, the delivered video
//! chunks.json            chunk ranges and test stride
//! arch.json              backbone layer manifest
//! runs/<mode>/ckpt_<iter>.bundle, ckpt_<iter>.optim, train_log.csv
//! runs/separate/chunk_<i>/...   one run per chunk
//! delivery/<mode>.bundle       packed deliveries
//! config.toml            settings the workdir was prepared with
//! report.csv, plots/, distances.csv, heatmaps/, sr/<mode>/
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cafm_core::bundle::{pack, unpack, ModelBundle};
use cafm_core::media::{build_datasets, validate_chunks, ChunkDataset, ChunkSpec, VideoAsset};
use cafm_core::nn::ArchManifest;
use cafm_core::train::{TrainMode, TrainRecord, TrainedModel};
use cafm_core::Frame;

use crate::error::{CliError, IoContext, Result};
use crate::frames::{image_files, load_dir, load_png};

/// `chunks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkManifest {
    pub n: usize,
    pub scale: usize,
    pub test_stride: usize,
    pub fps: f64,
    pub source: String,
    /// Half-open `[start, end)` frame ranges.
    pub ranges: Vec<[usize; 2]>,
}

impl ChunkManifest {
    pub fn new(chunks: &[ChunkSpec], scale: usize, test_stride: usize, fps: f64, source: String) -> Self {
        let ranges = chunks.iter().map(|c| [c.start, c.end]).collect();
        Self { n: chunks.len(), scale, test_stride, fps, source, ranges }
    }

    pub fn frame_count(&self) -> usize {
        self.ranges.last().map_or(0, |r| r[1])
    }

    pub fn specs(&self) -> Vec<ChunkSpec> {
        self.ranges.iter().enumerate().map(|(index, r)| ChunkSpec { index, start: r[0], end: r[1] }).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&text)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    fs::write(path, text).at(path)
}

/// Checkpoint file stem for a step count.
pub fn checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration}")
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hr_dir(&self) -> PathBuf {
        self.root.join("hr")
    }

    pub fn lr_dir(&self, scale: usize) -> PathBuf {
        self.root.join(format!("lrx{scale}"))
    }

    pub fn chunks_path(&self) -> PathBuf {
        self.root.join("chunks.json")
    }

    pub fn arch_path(&self) -> PathBuf {
        self.root.join("arch.json")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, mode: TrainMode) -> PathBuf {
        self.runs_dir().join(mode.name())
    }

    pub fn chunk_run_dir(&self, chunk: usize) -> PathBuf {
        self.run_dir(TrainMode::Separate).join(format!("chunk_{chunk}"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn distances_path(&self) -> PathBuf {
        self.root.join("distances.csv")
    }

    pub fn heatmaps_dir(&self) -> PathBuf {
        self.root.join("heatmaps")
    }

    pub fn sr_dir(&self, label: &str) -> PathBuf {
        self.root.join("sr").join(label)
    }

    pub fn delivery_dir(&self) -> PathBuf {
        self.root.join("delivery")
    }

    /// `delivery/<mode>.bundle`; separate runs use `delivery/separate/chunk_<i>.bundle`.
    pub fn delivery_path(&self, mode: TrainMode, chunk: Option<usize>) -> PathBuf {
        match chunk {
            Some(i) => self.delivery_dir().join(mode.name()).join(format!("chunk_{i}.bundle")),
            None => self.delivery_dir().join(format!("{}.bundle", mode.name())),
        }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn codec_dir(&self) -> PathBuf {
        self.runs_dir().join("codec")
    }

    pub fn is_prepared(&self) -> bool {
        self.chunks_path().is_file()
    }

    pub fn chunks(&self) -> Result<ChunkManifest> {
        if !self.is_prepared() {
            return Err(CliError::Usage(format!(
                "{} is not a prepared workdir (run `cafm prepare` first)",
                self.root.display()
            )));
        }
        let m: ChunkManifest = read_json(&self.chunks_path())?;
        validate_chunks(&m.specs(), m.frame_count())?;
        if m.n != m.ranges.len() {
            return Err(CliError::Data(format!("chunks.json lists {} ranges for n = {}", m.ranges.len(), m.n)));
        }
        Ok(m)
    }

    pub fn write_chunks(&self, m: &ChunkManifest) -> Result<()> {
        write_json(&self.chunks_path(), m)
    }

    pub fn write_arch(&self, m: &ArchManifest) -> Result<()> {
        write_json(&self.arch_path(), m)
    }

    pub fn arch(&self) -> Result<ArchManifest> {
        read_json(&self.arch_path())
    }

    pub fn video(&self) -> Result<VideoAsset> {
        let m = self.chunks()?;
        let frames = load_dir(&self.hr_dir(), None)?;
        if frames.len() != m.frame_count() {
            return Err(CliError::Data(format!(
                "{} holds {} frames, chunks.json covers {}",
                self.hr_dir().display(),
                frames.len(),
                m.frame_count()
            )));
        }
        Ok(VideoAsset::new(frames, m.fps, m.source.clone())?)
    }

    /// Train and test sets rebuilt from the cached HR frames.
    pub fn datasets(&self) -> Result<(Vec<ChunkDataset>, Vec<ChunkDataset>)> {
        let m = self.chunks()?;
        Ok(build_datasets(&self.video()?, &m.specs(), m.scale, m.test_stride)?)
    }

    pub fn lr_frames(&self) -> Result<Vec<Frame>> {
        let m = self.chunks()?;
        load_dir(&self.lr_dir(m.scale), None)
    }

    pub fn lr_video_bytes(&self) -> Result<u64> {
        let m = self.chunks()?;
        image_files(&self.lr_dir(m.scale))?.iter().map(|p| Ok(fs::metadata(p).at(p)?.len())).sum()
    }

    /// First test frame (HR and LR) of chunk 0.
    pub fn default_probe(&self) -> Result<Frame> {
        let (_, test) = self.datasets()?;
        Ok(test[0].pairs()[0].lr.clone())
    }

    pub fn probe(&self, path: Option<&Path>) -> Result<Frame> {
        match path {
            Some(p) => load_png(p),
            None => self.default_probe(),
        }
    }
}

/// Writes `ckpt_<iter>.bundle`, `ckpt_<iter>.optim` and `train_log.csv`.
pub fn save_run(dir: &Path, model: &TrainedModel, chunks: Vec<ChunkSpec>, iteration: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let bundle = ModelBundle::from_model(model, chunks)?;
    let stem = checkpoint_name(iteration);
    let path = dir.join(format!("{stem}.bundle"));
    fs::write(&path, pack(&bundle)?).at(&path)?;
    let optim = dir.join(format!("{stem}.optim"));
    fs::write(&optim, &model.optimizer).at(&optim)?;
    write_log(&dir.join("train_log.csv"), &model.history)?;
    Ok(path)
}

pub fn write_log(path: &Path, history: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "loss", "psnr_mean"])?;
    for r in history {
        w.write_record([r.iteration.to_string(), format!("{:.6}", r.loss), format!("{:.4}", r.psnr)])?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Newest `ckpt_<iter>.bundle` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let iter: usize = name.strip_prefix("ckpt_")?.strip_suffix(".bundle")?.parse().ok()?;
            Some((iter, p))
        })
        .max_by_key(|(i, _)| *i)
        .map(|(_, p)| p)
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(unpack(&fs::read(path).at(path)?)?)
}

/// Bundle of a finished run, or a usage error naming the missing run.
pub fn run_bundle(dir: &Path) -> Result<(PathBuf, ModelBundle)> {
    let path = latest_checkpoint(dir)
        .ok_or_else(|| CliError::Usage(format!("no checkpoint in {} (train that mode first)", dir.display())))?;
    let b = load_bundle(&path)?;
    Ok((path, b))
}

/// Rebuilds a trained model from its final bundle (history and optimizer state are not kept).
pub fn model_from_bundle(mode: TrainMode, bundle: ModelBundle) -> TrainedModel {
    TrainedModel { mode, shared: bundle.shared, cafms: bundle.cafms, history: Vec::new(), optimizer: Vec::new() }
}

/// The per-chunk models of a separate run, in chunk order.
pub fn separate_bundles(wd: &Workdir, n: usize) -> Result<Vec<(PathBuf, ModelBundle)>> {
    (0..n).map(|i| run_bundle(&wd.chunk_run_dir(i))).collect()
}
