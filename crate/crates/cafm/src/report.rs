//! `report.csv` and the PSNR plots.

use std::fs;
use std::path::{Path, PathBuf};

use cafm_core::bundle::StorageReport;
use cafm_core::eval::{evaluate, Bicubic, ChunkScore, ColorSpace, EvalReport};
use cafm_core::media::ChunkDataset;
use cafm_core::metrics::capped;
use cafm_core::train::TrainMode;

use crate::codec::{Codec, CodecResult};
use crate::delivery::{storage_report, storage_report_separate};
use crate::error::{CliError, IoContext, Result};
use crate::plot::{scatter, Series};
use crate::workdir::{latest_checkpoint, load_bundle, Workdir};

pub const BICUBIC: &str = "bicubic";

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub mode: String,
    pub chunk: usize,
    pub test_frames: usize,
    pub psnr_db: f64,
    pub video_psnr_db: f64,
    pub margin_vs_separate_db: Option<f64>,
    pub lr_video_bytes: u64,
    pub shared_bytes: u64,
    pub chunk_model_bytes: u64,
    pub total_bytes: u64,
}

pub const HEADER: [&str; 10] = [
    "mode",
    "chunk",
    "test_frames",
    "psnr_db",
    "video_psnr_db",
    "margin_vs_separate_db",
    "lr_video_bytes",
    "shared_bytes",
    "chunk_model_bytes",
    "total_bytes",
];

/// Codec result file written by `codec-compare`.
pub fn codec_result_path(wd: &Workdir, codec: Codec) -> PathBuf {
    wd.codec_dir().join(format!("{}.json", codec.name()))
}

fn lr_files(wd: &Workdir, scale: usize) -> Result<Vec<PathBuf>> {
    crate::frames::image_files(&wd.lr_dir(scale))
}

fn codec_report(result: &CodecResult, test: &[ChunkDataset], scale: usize) -> Result<EvalReport> {
    let mut chunks = Vec::with_capacity(test.len());
    for ds in test {
        let frame_indices: Vec<usize> = ds.pairs().iter().map(|p| p.frame_index).collect();
        let frame_psnr = frame_indices
            .iter()
            .map(|&i| {
                result.frame_psnr.get(i).copied().ok_or_else(|| {
                    CliError::Data(format!("{} result covers {} frames", result.codec.name(), result.frame_psnr.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let psnr = frame_psnr.iter().sum::<f64>() / frame_psnr.len() as f64;
        chunks.push(ChunkScore { chunk: ds.chunk_index, frame_indices, frame_psnr, psnr });
    }
    let storage = StorageReport::new(result.bytes, 0, Vec::new());
    Ok(EvalReport::from_scores(result.codec.name(), scale, chunks)?.with_storage(storage))
}

/// Evaluates every trained mode present in the workdir, the bicubic floor and
/// any codec results, in a fixed order.
pub fn evaluate_workdir(wd: &Workdir, color: ColorSpace) -> Result<Vec<EvalReport>> {
    let m = wd.chunks()?;
    let (_, test) = wd.datasets()?;
    let lr = lr_files(wd, m.scale)?;
    let lr_bytes = wd.lr_video_bytes()?;
    let mut out = vec![evaluate(BICUBIC, &Bicubic(m.scale), &test, color)?
        .with_storage(StorageReport::new(lr_bytes, 0, Vec::new()))];
    for mode in TrainMode::ALL {
        if mode == TrainMode::Separate {
            let paths: Option<Vec<PathBuf>> = (0..m.n).map(|i| latest_checkpoint(&wd.chunk_run_dir(i))).collect();
            let Some(paths) = paths else { continue };
            let models = paths.iter().map(|p| load_bundle(p)).collect::<Result<Vec<_>>>()?;
            let trained: Vec<_> =
                models.into_iter().map(|b| crate::workdir::model_from_bundle(mode, b)).collect();
            let report = evaluate(mode.name(), trained.as_slice(), &test, color)?;
            out.push(report.with_storage(storage_report_separate(&paths, &lr)?));
        } else if let Some(path) = latest_checkpoint(&wd.run_dir(mode)) {
            let bundle = load_bundle(&path)?;
            let report = evaluate(mode.name(), &bundle, &test, color)?;
            out.push(report.with_storage(storage_report(&path, &lr)?));
        }
    }
    for codec in [Codec::H264, Codec::H265] {
        let path = codec_result_path(wd, codec);
        if path.is_file() {
            let result: CodecResult = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
            out.push(codec_report(&result, &test, m.scale)?);
        }
    }
    Ok(out)
}

/// One row per (report, chunk).
pub fn rows(reports: &[EvalReport]) -> Result<Vec<Row>> {
    let separate = reports.iter().find(|r| r.label == TrainMode::Separate.name());
    let mut out = Vec::new();
    for r in reports {
        let margin = separate.map(|s| r.margin_over(s)).transpose()?;
        let storage = r.storage.clone().unwrap_or_else(|| StorageReport::new(0, 0, Vec::new()));
        for (i, c) in r.chunks.iter().enumerate() {
            out.push(Row {
                mode: r.label.clone(),
                chunk: c.chunk,
                test_frames: c.frame_psnr.len(),
                psnr_db: c.psnr,
                video_psnr_db: r.video_psnr,
                margin_vs_separate_db: margin.as_ref().map(|m| m.per_chunk[i]),
                lr_video_bytes: storage.lr_video_bytes,
                shared_bytes: storage.shared_bytes,
                chunk_model_bytes: storage.per_chunk_cafm_bytes.get(c.chunk).copied().unwrap_or(0),
                total_bytes: storage.total_bytes,
            });
        }
    }
    Ok(out)
}

fn db(v: f64) -> String {
    format!("{:.4}", capped(v))
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            r.chunk.to_string(),
            r.test_frames.to_string(),
            db(r.psnr_db),
            db(r.video_psnr_db),
            r.margin_vs_separate_db.map(|m| format!("{m:.4}")).unwrap_or_default(),
            r.lr_video_bytes.to_string(),
            r.shared_bytes.to_string(),
            r.chunk_model_bytes.to_string(),
            r.total_bytes.to_string(),
        ])?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// `psnr_vs_storage.png` and `psnr_per_chunk.png`.
pub fn write_plots(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let storage: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            label: r.label.clone(),
            points: vec![(r.storage.as_ref().map_or(0, |s| s.total_bytes) as f64 / 1024.0, capped(r.video_psnr))],
        })
        .collect();
    scatter(&storage, "TOTAL KB", "PSNR DB", &dir.join("psnr_vs_storage.png"))?;
    let per_chunk: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            label: r.label.clone(),
            points: r.chunks.iter().map(|c| (c.chunk as f64, capped(c.psnr))).collect(),
        })
        .collect();
    scatter(&per_chunk, "CHUNK", "PSNR DB", &dir.join("psnr_per_chunk.png"))
}

/// Evaluates the workdir and writes `report.csv` and the plots.
pub fn run(wd: &Workdir, color: ColorSpace) -> Result<Vec<Row>> {
    let reports = evaluate_workdir(wd, color)?;
    let rows = rows(&reports)?;
    write_csv(&wd.report_path(), &rows)?;
    write_plots(&wd.plots_dir(), &reports)?;
    Ok(rows)
}
