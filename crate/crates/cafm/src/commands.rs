//! The pipeline steps behind each subcommand. Every step reads and writes the
//! workdir only, so the CLI and the tests drive the same code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cafm_core::analysis::{summarize, DistanceSummary, Probed};
use cafm_core::bundle::{pack as pack_bundle, table};
use cafm_core::eval::{evaluate, ColorSpace};
use cafm_core::media::{
    bicubic_downscale, center_crop_to_multiple, check_scale, split_chunks, ChunkDataset, Role, SamplePair,
};
use cafm_core::nn::Architecture;
use cafm_core::rate::RateSearch;
use cafm_core::train::{finetune_cafm, train_external, train_joint, train_m0, train_separate, TrainMode};
use cafm_core::Frame;

use crate::codec::{codec_baseline, Codec, CodecResult, Encoder};
use crate::config::RunConfig;
use crate::delivery::{open_reader, storage_report};
use crate::error::{CliError, IoContext, Result};
use crate::frames::{decode_frames, image_files, load_dir, save_png, save_sequence};
use crate::plot::heatmap;
use crate::report::{self, codec_result_path, Row};
use crate::synthetic::two_clip_video;
use crate::workdir::{
    latest_checkpoint, model_from_bundle, run_bundle, save_run, separate_bundles, write_json, ChunkManifest, Workdir,
};

/// Settings for one invocation: the merged config, the workdir, and which
/// media settings were given explicitly on the command line.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: RunConfig,
    pub workdir: Workdir,
    pub scale_flag: Option<usize>,
    pub chunks_flag: Option<usize>,
}

impl Session {
    pub fn new(config: RunConfig, workdir: impl Into<PathBuf>) -> Self {
        Self { config, workdir: Workdir::new(workdir), scale_flag: None, chunks_flag: None }
    }

    fn color(&self) -> ColorSpace {
        if self.config.eval.y_channel {
            ColorSpace::Y
        } else {
            ColorSpace::Rgb
        }
    }

    /// The prepared chunk manifest; explicit `--scale`/`--chunks` must agree with it.
    fn manifest(&self) -> Result<ChunkManifest> {
        let m = self.workdir.chunks()?;
        if let Some(s) = self.scale_flag.filter(|&s| s != m.scale) {
            return Err(CliError::Usage(format!("workdir was prepared at x{}, not x{s}", m.scale)));
        }
        if let Some(n) = self.chunks_flag.filter(|&n| n != m.n) {
            return Err(CliError::Usage(format!("workdir was prepared with {} chunks, not {n}", m.n)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    /// Video file or frame directory.
    Path(PathBuf),
    /// Two distinct generated clips of `frames_per_clip` frames, `size` pixels square.
    Synthetic { frames_per_clip: usize, size: usize },
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).at(dir)?;
    }
    fs::create_dir_all(dir).at(dir)
}

/// Decodes the input, caches HR and bicubic LR frames and writes `chunks.json`,
/// `arch.json` and `config.toml`.
pub fn prepare(s: &Session, input: &Input) -> Result<ChunkManifest> {
    let media = &s.config.media;
    check_scale(media.scale)?;
    let video = match input {
        Input::Path(p) => decode_frames(p, media.frame_limit, media.fps)?,
        Input::Synthetic { frames_per_clip, size } => {
            let v = two_clip_video(*frames_per_clip, *size);
            match media.frame_limit {
                Some(n) => cafm_core::media::VideoAsset::new(v.frames()[..n.min(v.len())].to_vec(), v.fps, v.source_id)?,
                None => v,
            }
        }
    };
    let chunks = split_chunks(video.len(), media.chunks)?;
    let hr = video
        .frames()
        .iter()
        .map(|f| center_crop_to_multiple(f, media.scale))
        .collect::<cafm_core::Result<Vec<_>>>()?;
    let lr = hr.iter().map(|f| bicubic_downscale(f, media.scale)).collect::<cafm_core::Result<Vec<_>>>()?;
    let wd = &s.workdir;
    fs::create_dir_all(wd.root()).at(wd.root())?;
    reset_dir(&wd.hr_dir())?;
    reset_dir(&wd.lr_dir(media.scale))?;
    save_sequence(&wd.hr_dir(), &hr)?;
    save_sequence(&wd.lr_dir(media.scale), &lr)?;
    let manifest = ChunkManifest::new(&chunks, media.scale, media.test_stride, video.fps, video.source_id.clone());
    wd.write_chunks(&manifest)?;
    let backbone = s.config.backbone.resolve(media.scale)?;
    wd.write_arch(&Architecture::build(&backbone)?.manifest())?;
    fs::write(wd.config_path(), s.config.to_toml()).at(&wd.config_path())?;
    log::info!("prepared {} frames in {} chunks at x{}", hr.len(), chunks.len(), media.scale);
    Ok(manifest)
}

/// Outcome of one `train` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: TrainMode,
    pub iterations: usize,
    pub checkpoints: Vec<PathBuf>,
    /// Mean PSNR over the test frames of every chunk.
    pub test_psnr: f64,
}

fn external_dataset(dir: &Path, scale: usize) -> Result<ChunkDataset> {
    let frames = load_dir(dir, None)?;
    if frames.is_empty() {
        return Err(CliError::Usage(format!("no images in {}", dir.display())));
    }
    let pairs = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let hr = center_crop_to_multiple(f, scale)?;
            let lr = bicubic_downscale(&hr, scale)?;
            Ok(SamplePair { frame_index: i, lr, hr })
        })
        .collect::<cafm_core::Result<Vec<_>>>()?;
    Ok(ChunkDataset::new(0, scale, Role::Train, pairs)?)
}

/// Trains one regime and writes its checkpoint(s) under `runs/`.
pub fn train(s: &Session, mode: TrainMode) -> Result<TrainSummary> {
    let wd = &s.workdir;
    let m = s.manifest()?;
    let backbone = s.config.backbone.resolve(m.scale)?;
    let cfg = s.config.train.resolve(mode, m.n, s.config.seed);
    cfg.validate()?;
    let (train_sets, test) = wd.datasets()?;
    wd.write_arch(&Architecture::build(&backbone)?.manifest())?;
    log::info!("training {} for {} steps", mode.name(), cfg.iterations);
    let (checkpoints, test_psnr) = match mode {
        TrainMode::Separate => {
            let models = train_separate(&train_sets, &cfg, &backbone)?;
            let mut paths = Vec::with_capacity(models.len());
            for (i, model) in models.iter().enumerate() {
                paths.push(save_run(&wd.chunk_run_dir(i), model, Vec::new(), cfg.iterations)?);
            }
            (paths, evaluate(mode.name(), models.as_slice(), &test, s.color())?.video_psnr)
        }
        _ => {
            let model = match mode {
                TrainMode::M0 => train_m0(&train_sets, &cfg, &backbone)?,
                TrainMode::Joint => train_joint(&train_sets, &cfg, &backbone)?,
                TrainMode::Ft => {
                    let (path, bundle) = run_bundle(&wd.run_dir(TrainMode::M0))?;
                    if bundle.shared.config() != &backbone {
                        return Err(CliError::Usage(format!(
                            "{} was trained with a different backbone than the current config",
                            path.display()
                        )));
                    }
                    finetune_cafm(&model_from_bundle(TrainMode::M0, bundle), &train_sets, &cfg)?
                }
                TrainMode::External => {
                    let dir = s.config.train.external_dir.as_ref().ok_or_else(|| {
                        CliError::Usage(String::from("external training needs train.external_dir in the config"))
                    })?;
                    train_external(&external_dataset(dir, m.scale)?, &cfg, &backbone)?
                }
                TrainMode::Separate => unreachable!(),
            };
            let path = save_run(&wd.run_dir(mode), &model, m.specs(), cfg.iterations)?;
            (vec![path], evaluate(mode.name(), &model, &test, s.color())?.video_psnr)
        }
    };
    log::info!("{}: test PSNR {test_psnr:.3} dB", mode.name());
    Ok(TrainSummary { mode, iterations: cfg.iterations, checkpoints, test_psnr })
}

/// Copies the newest checkpoint of `mode` into `delivery/`.
pub fn pack(s: &Session, mode: TrainMode) -> Result<Vec<PathBuf>> {
    let wd = &s.workdir;
    let m = s.manifest()?;
    let sources: Vec<(Option<usize>, PathBuf)> = if mode == TrainMode::Separate {
        separate_bundles(wd, m.n)?.into_iter().enumerate().map(|(i, (p, _))| (Some(i), p)).collect()
    } else {
        vec![(None, run_bundle(&wd.run_dir(mode))?.0)]
    };
    let mut out = Vec::with_capacity(sources.len());
    for (chunk, src) in sources {
        let bundle = crate::workdir::load_bundle(&src)?;
        let dest = wd.delivery_path(mode, chunk);
        if let Some(dir) = dest.parent() {
            fs::create_dir_all(dir).at(dir)?;
        }
        fs::write(&dest, pack_bundle(&bundle)?).at(&dest)?;
        out.push(dest);
    }
    Ok(out)
}

/// Human-readable summary of a bundle file; with `tensors` the full table follows.
pub fn inspect(path: &Path, tensors: bool) -> Result<String> {
    let bytes = fs::read(path).at(path)?;
    let (manifest, table) = table(&bytes)?;
    let (shared, per_chunk) = cafm_core::bundle::section_sizes(&bytes)?;
    let b = &manifest.backbone;
    let mut out = format!(
        "{}: {} bytes, format v{}\nbackbone {} x{} channels {} resblocks {}\nmodulation sets {} kernel {}\nshared bytes {shared}\n",
        path.display(),
        bytes.len(),
        manifest.format_version,
        b.arch.name(),
        manifest.scale,
        b.channels,
        b.n_resblocks,
        manifest.n,
        manifest.kernel.map_or_else(|| String::from("-"), |k| k.to_string()),
    );
    for (i, c) in manifest.chunks.iter().enumerate() {
        let bytes = per_chunk.get(i).map_or_else(|| String::from("-"), |b| b.to_string());
        out.push_str(&format!("chunk {i} frames [{}, {}) bytes {bytes}\n", c.start, c.end));
    }
    if tensors {
        out.push_str("section offset bytes name dims\n");
        for t in &table {
            let dims: Vec<String> = t.dims.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{} {} {} {} [{}]\n", t.section, t.offset, t.bytes, t.name, dims.join(",")));
        }
    }
    Ok(out)
}

/// Super-resolves the delivered LR frames into `sr/<label>/`, reading each
/// chunk's modulation from the bundle file on demand.
pub fn reconstruct(s: &Session, mode: TrainMode, bundle: Option<&Path>, chunk: Option<usize>) -> Result<PathBuf> {
    let wd = &s.workdir;
    let m = s.manifest()?;
    let lr = load_dir(&wd.lr_dir(m.scale), None)?;
    if lr.len() != m.frame_count() {
        return Err(CliError::Data(format!("{} LR frames, chunks.json covers {}", lr.len(), m.frame_count())));
    }
    let specs = m.specs();
    if let Some(c) = chunk.filter(|&c| c >= m.n) {
        return Err(CliError::Usage(format!("chunk {c} out of range for {} chunks", m.n)));
    }
    let label = match bundle {
        Some(p) => p.file_stem().and_then(|s| s.to_str()).unwrap_or("bundle").to_string(),
        None => mode.name().to_string(),
    };
    let per_chunk = bundle.is_none() && mode == TrainMode::Separate;
    let path_for = |i: usize| match bundle {
        Some(p) => p.to_path_buf(),
        None => wd.delivery_path(mode, per_chunk.then_some(i)),
    };
    let out = wd.sr_dir(&label);
    fs::create_dir_all(&out).at(&out)?;
    let mut reader = None;
    for c in specs.iter().filter(|c| chunk.is_none_or(|i| i == c.index)) {
        let path = path_for(c.index);
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "{} is missing (run `cafm pack --mode {}` first)",
                path.display(),
                mode.name()
            )));
        }
        if per_chunk || reader.is_none() {
            let r = open_reader(&path)?;
            if r.manifest().scale != m.scale {
                return Err(CliError::Usage(format!(
                    "{} is a x{} model, the workdir is x{}",
                    path.display(),
                    r.manifest().scale,
                    m.scale
                )));
            }
            reader = Some(r);
        }
        let r = reader.as_mut().expect("reader opened");
        let index = if per_chunk { 0 } else { c.index };
        let frames = r.reconstruct_chunk(index, &lr[c.start..c.end])?;
        for (k, f) in frames.iter().enumerate() {
            save_png(&out.join(format!("{:06}.png", c.start + k)), f)?;
        }
    }
    Ok(out)
}

/// Writes `report.csv` and the plots.
pub fn report(s: &Session) -> Result<Vec<Row>> {
    s.manifest()?;
    report::run(&s.workdir, s.color())
}

/// Which trained models the feature analysis compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum AnalysisSource {
    /// The per-chunk models of a separate run.
    #[default]
    Separate,
    /// The joint backbone under each chunk's modulation.
    Joint,
}

impl AnalysisSource {
    pub fn name(self) -> &'static str {
        match self {
            AnalysisSource::Separate => "separate",
            AnalysisSource::Joint => "joint",
        }
    }
}

/// Channel distance matrices between models on one probe frame: writes
/// `distances.csv` and one heatmap per matrix.
pub fn analyze(s: &Session, source: AnalysisSource, probe: Option<&Path>) -> Result<DistanceSummary> {
    let wd = &s.workdir;
    let m = s.manifest()?;
    let probe: Frame = wd.probe(probe.or(s.config.eval.probe.as_deref()))?;
    let summary = match source {
        AnalysisSource::Separate => {
            let bundles = separate_bundles(wd, m.n)?;
            let models: Vec<Probed> = bundles.iter().map(|(_, b)| Probed::from(&b.shared)).collect();
            summarize(&models, &probe)?
        }
        AnalysisSource::Joint => {
            let (_, b) = run_bundle(&wd.run_dir(TrainMode::Joint))?;
            let models: Vec<Probed> = b.cafms.iter().map(|c| Probed { params: &b.shared, cafm: Some(c) }).collect();
            summarize(&models, &probe)?
        }
    };
    let path = wd.distances_path();
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["source", "pair", "layer", "layer_name", "diag_mean", "offdiag_mean", "zero_entries"])?;
    let dir = wd.heatmaps_dir();
    reset_dir(&dir)?;
    for mx in &summary.matrices {
        let pair = format!("{}-{}", mx.pair.0, mx.pair.1);
        w.write_record([
            source.name().to_string(),
            pair.clone(),
            mx.layer.to_string(),
            mx.layer_name.clone(),
            format!("{:.6}", mx.diag_mean()),
            format!("{:.6}", mx.offdiag_mean()),
            mx.zero_entries.to_string(),
        ])?;
        heatmap(&mx.values, mx.channels, &dir.join(format!("{}_{pair}_{}.png", source.name(), mx.layer_name)))?;
    }
    w.flush().at(&path)?;
    log::info!(
        "{}: diagonal mean {:.4}, off-diagonal mean {:.4}",
        source.name(),
        summary.diag_mean,
        summary.offdiag_mean
    );
    Ok(summary)
}

/// Encodes the HR video with a classical codec at the same byte budget as the
/// joint delivery (or an explicit one) and stores the scored result.
pub fn codec_compare(s: &Session, codec: Codec, budget: Option<u64>) -> Result<CodecResult> {
    let wd = &s.workdir;
    let m = s.manifest()?;
    let budget = match budget.or(s.config.codec.budget_bytes) {
        Some(b) => b,
        None => {
            let path = latest_checkpoint(&wd.run_dir(TrainMode::Joint)).ok_or_else(|| {
                CliError::Usage(String::from("no joint run to size the budget from; train it or pass --budget"))
            })?;
            storage_report(&path, &image_files(&wd.lr_dir(m.scale))?)?.total_bytes
        }
    };
    let video = wd.video()?;
    let c = &s.config.codec;
    let encoder = Encoder::new(c.ffmpeg.as_deref(), codec, &c.preset, video.frames(), video.fps)?;
    let mut search = RateSearch::new(budget);
    search.max_probes = c.max_probes;
    let dir = wd.codec_dir();
    fs::create_dir_all(&dir).at(&dir)?;
    let out = dir.join(format!("{}.{}", codec.name(), codec.extension()));
    let result = codec_baseline(&encoder, video.frames(), &search, &out)?;
    write_json(&codec_result_path(wd, codec), &result)?;
    Ok(result)
}
