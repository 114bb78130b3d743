//! Training regimes.
//!
//! * `m0`: one backbone for the whole video.
//! * `separate`: one backbone per chunk.
//! * `ft`: freeze an `m0` backbone, fit one modulation set per chunk.
//! * `joint`: shared backbone and all modulation sets trained together. Every
//!   sample updates the backbone; a sample of chunk `i` only updates set `i`.
//!
//! All randomness is derived from [`TrainConfig::seed`].

mod adam;
mod loss;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use loss::{chunk_loss, chunk_loss_grad, total_loss};

use crate::cafm::{check_kernel, identity_for, CafmGrads, CafmSet};
use crate::error::{Error, Result};
use crate::frame::{Frame, Tensor};
use crate::media::{sample_patch_batch, ChunkDataset};
use crate::metrics::psnr;
use crate::nn::{backward, build_backbone, forward, forward_train, BackboneConfig, BackboneParams, ParamGrads};
use crate::rng::{derive_seed, rng_from};

const INIT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const CHUNK_PICK_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    M0,
    Separate,
    Ft,
    Joint,
    /// Whole-model training on an image set disjoint from the video.
    External,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] =
        [TrainMode::M0, TrainMode::Separate, TrainMode::Ft, TrainMode::Joint, TrainMode::External];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::M0 => "m0",
            TrainMode::Separate => "separate",
            TrainMode::Ft => "ft",
            TrainMode::Joint => "joint",
            TrainMode::External => "external",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode `{s}`")))
    }

    /// Optimizer steps for one run of this mode over `n` chunks when a single
    /// per-chunk model gets `per_chunk` steps. Joint and whole-video training
    /// get the summed budget of the per-chunk models.
    pub fn step_budget(self, n: usize, per_chunk: usize) -> usize {
        match self {
            TrainMode::M0 | TrainMode::Joint | TrainMode::External => n * per_chunk,
            TrainMode::Separate | TrainMode::Ft => per_chunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f32,
    pub adam_betas: (f32, f32),
    pub adam_eps: f32,
    /// `(iteration, factor)` milestones; `None` halves the rate at 50% and 75%.
    pub lr_decay: Option<Vec<(usize, f32)>>,
    pub seed: u64,
    pub patch_lr: usize,
    pub kernel: usize,
    /// History is recorded every `log_interval` iterations and at the end.
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            iterations: 2000,
            batch: 16,
            lr: 1e-4,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            lr_decay: None,
            seed: 0,
            patch_lr: 48,
            kernel: 1,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config(String::from("batch must be at least 1")));
        }
        if self.patch_lr == 0 {
            return Err(Error::Config(String::from("patch size must be at least 1")));
        }
        check_kernel(self.kernel)
    }

    pub fn decay_schedule(&self) -> Vec<(usize, f32)> {
        match &self.lr_decay {
            Some(s) => s.clone(),
            None => vec![(self.iterations / 2, 0.5), (self.iterations * 3 / 4, 0.5)],
        }
    }

    /// Learning rate in effect at 0-based iteration `iter`.
    pub fn lr_at(&self, iter: usize) -> f32 {
        self.decay_schedule()
            .iter()
            .filter(|(at, _)| iter >= *at)
            .fold(self.lr, |lr, (_, f)| lr * f)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_betas.0, beta2: self.adam_betas.1, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Chunk being fitted, for regimes that train chunks one after another.
    pub chunk: Option<usize>,
    pub loss: f64,
    /// Mean PSNR of the clamped outputs of the batch, dB.
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mode: TrainMode,
    pub shared: BackboneParams,
    /// One set per chunk for `ft` and `joint`; empty otherwise.
    pub cafms: Vec<CafmSet>,
    pub history: Vec<TrainRecord>,
    /// Serialized optimizer state at the end of training.
    pub optimizer: Vec<u8>,
}

impl TrainedModel {
    /// Modulation used for `chunk`, if this model has any.
    pub fn cafm_for(&self, chunk: usize) -> Result<Option<&CafmSet>> {
        if self.cafms.is_empty() {
            return Ok(None);
        }
        self.cafms
            .get(chunk)
            .map(Some)
            .ok_or(Error::ChunkRange { index: chunk, count: self.cafms.len() })
    }

    pub fn super_resolve(&self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        forward(&self.shared, self.cafm_for(chunk)?, lr)
    }
}

/// One training sample; `chunk` selects the modulation set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub chunk: usize,
    pub lr: Tensor,
    pub hr: Tensor,
}

/// Gradients of the summed chunk losses for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub chunk_losses: Vec<(usize, f64)>,
    pub psnr: f64,
    pub shared: Option<ParamGrads>,
    /// Indexed by chunk; `None` for chunks absent from the batch.
    pub cafms: Vec<Option<CafmGrads>>,
}

/// Parameters, optimizer state and gradient routing for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub shared: BackboneParams,
    pub cafms: Vec<CafmSet>,
    train_shared: bool,
    shared_opt: Adam,
    cafm_opts: Vec<Adam>,
}

fn flat_params(p: &mut BackboneParams) -> impl Iterator<Item = &mut [f32]> {
    p.layers_mut().iter_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
}

fn flat_grads(g: &ParamGrads) -> impl Iterator<Item = &[f32]> {
    g.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
}

impl Trainer {
    /// `cafms` may be empty (plain backbone). When `train_shared` is false the
    /// backbone is frozen and only the modulation sets move.
    pub fn new(shared: BackboneParams, cafms: Vec<CafmSet>, train_shared: bool, adam: AdamConfig) -> Result<Self> {
        for set in &cafms {
            set.validate(shared.architecture())?;
        }
        if !train_shared && cafms.is_empty() {
            return Err(Error::Config(String::from("nothing to train: backbone frozen and no modulation")));
        }
        let shared_opt = Adam::new(adam, if train_shared { crate::nn::count_params(&shared) } else { 0 });
        let cafm_opts = cafms.iter().map(|s| Adam::new(adam, s.param_count())).collect();
        Ok(Self { shared, cafms, train_shared, shared_opt, cafm_opts })
    }

    fn modulation(&self, chunk: usize) -> Result<Option<&CafmSet>> {
        if self.cafms.is_empty() {
            return Ok(None);
        }
        self.cafms.get(chunk).map(Some).ok_or(Error::ChunkRange { index: chunk, count: self.cafms.len() })
    }

    fn group(batch: &[TrainSample]) -> Vec<(usize, Vec<&TrainSample>)> {
        let mut groups: Vec<(usize, Vec<&TrainSample>)> = Vec::new();
        for s in batch {
            match groups.iter_mut().find(|(c, _)| *c == s.chunk) {
                Some((_, v)) => v.push(s),
                None => groups.push((s.chunk, vec![s])),
            }
        }
        groups.sort_by_key(|(c, _)| *c);
        groups
    }

    /// Summed per-chunk losses of `batch` without touching gradients.
    pub fn batch_loss(&self, batch: &[TrainSample]) -> Result<f64> {
        let mut losses = Vec::new();
        for (chunk, samples) in Self::group(batch) {
            let cafm = self.modulation(chunk)?;
            let mut sr = Vec::with_capacity(samples.len());
            let mut hr = Vec::with_capacity(samples.len());
            for s in samples {
                sr.push(crate::nn::forward_tensor(&self.shared, cafm, &s.lr)?);
                hr.push(s.hr.clone());
            }
            losses.push(chunk_loss(&sr, &hr)?);
        }
        total_loss(&losses)
    }

    pub fn gradients(&self, batch: &[TrainSample]) -> Result<Gradients> {
        let mut shared = self.train_shared.then(|| ParamGrads::zeros_like(&self.shared));
        let mut cafms: Vec<Option<CafmGrads>> = vec![None; self.cafms.len()];
        let mut chunk_losses = Vec::new();
        let mut psnr_sum = 0.0;
        for (chunk, samples) in Self::group(batch) {
            let cafm = self.modulation(chunk)?;
            let mut cg = cafm.map(CafmGrads::zeros_like);
            let mut outs = Vec::with_capacity(samples.len());
            let mut tapes = Vec::with_capacity(samples.len());
            let mut targets = Vec::with_capacity(samples.len());
            for s in &samples {
                let (y, tape) = forward_train(&self.shared, cafm, &s.lr)?;
                outs.push(y);
                tapes.push(tape);
                targets.push(s.hr.clone());
            }
            chunk_losses.push((chunk, chunk_loss(&outs, &targets)?));
            for (y, h) in outs.iter().zip(&targets) {
                psnr_sum += clamped_psnr(y, h);
            }
            let grads = chunk_loss_grad(&outs, &targets)?;
            for (g, tape) in grads.into_iter().zip(&tapes) {
                backward(&self.shared, cafm, tape, g, shared.as_mut(), cg.as_mut())?;
            }
            if let Some(cg) = cg {
                cafms[chunk] = Some(cg);
            }
        }
        let loss = total_loss(&chunk_losses.iter().map(|(_, l)| *l).collect::<Vec<_>>())?;
        Ok(Gradients { loss, chunk_losses, psnr: psnr_sum / batch.len() as f64, shared, cafms })
    }

    /// One optimizer step. Modulation sets of chunks absent from the batch
    /// are left untouched, including their optimizer state.
    pub fn step(&mut self, batch: &[TrainSample], lr: f32, iteration: usize) -> Result<Gradients> {
        let grads = self.gradients(batch)?;
        if !grads.loss.is_finite() {
            return Err(Error::Divergence { iteration, loss: grads.loss as f32 });
        }
        if let Some(g) = &grads.shared {
            self.shared_opt.step(flat_params(&mut self.shared), flat_grads(g), lr);
        }
        for (i, g) in grads.cafms.iter().enumerate() {
            if let Some(g) = g {
                let set = &mut self.cafms[i];
                let params = set.entries.iter_mut().flat_map(|e| [e.scale.as_mut_slice(), e.bias.as_mut_slice()]);
                let gs = g.entries.iter().flat_map(|(a, b)| [a.as_slice(), b.as_slice()]);
                self.cafm_opts[i].step(params, gs, lr);
            }
        }
        Ok(grads)
    }

    pub fn shared_optimizer(&self) -> &Adam {
        &self.shared_opt
    }

    pub fn cafm_optimizers(&self) -> &[Adam] {
        &self.cafm_opts
    }

    /// Concatenated optimizer states (backbone first, then each set).
    pub fn optimizer_state(&self) -> Vec<u8> {
        let mut out = self.shared_opt.to_bytes();
        for o in &self.cafm_opts {
            out.extend_from_slice(&o.to_bytes());
        }
        out
    }
}

fn clamped_psnr(sr: &Tensor, hr: &Tensor) -> f64 {
    let mse: f64 = sr
        .data
        .iter()
        .zip(&hr.data)
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / sr.data.len() as f64;
    crate::metrics::psnr_from_mse(mse)
}

/// Seed for the patches of `chunk` at `iteration`.
pub fn sample_seed(seed: u64, chunk: usize, iteration: usize) -> u64 {
    derive_seed(seed, &[SAMPLE_STREAM, chunk as u64, iteration as u64])
}

/// Seed of the backbone initialization; shared by every regime so that
/// models trained on different chunks start from the same weights.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, &[INIT_STREAM])
}

fn draw(dataset: &ChunkDataset, chunk: usize, count: usize, config: &TrainConfig, seed: u64) -> Result<Vec<TrainSample>> {
    Ok(sample_patch_batch(dataset, count, config.patch_lr, seed)?
        .into_iter()
        .map(|p| TrainSample { chunk, lr: p.lr.to_tensor(), hr: p.hr.to_tensor() })
        .collect())
}

/// Samples of one joint-training batch: each element picks its chunk
/// uniformly at random, then patches are drawn per chunk.
pub fn joint_batch(datasets: &[ChunkDataset], config: &TrainConfig, iteration: usize) -> Result<Vec<TrainSample>> {
    let n = datasets.len();
    let mut counts = vec![0usize; n];
    let mut rng = rng_from(derive_seed(config.seed, &[CHUNK_PICK_STREAM, iteration as u64]));
    for _ in 0..config.batch {
        counts[if n == 1 { 0 } else { rng.gen_range(0..n) }] += 1;
    }
    let mut batch = Vec::with_capacity(config.batch);
    for (i, (ds, &count)) in datasets.iter().zip(&counts).enumerate() {
        if count > 0 {
            batch.extend(draw(ds, i, count, config, sample_seed(config.seed, i, iteration))?);
        }
    }
    Ok(batch)
}

fn run_loop(
    trainer: &mut Trainer,
    config: &TrainConfig,
    chunk_label: Option<usize>,
    mut batch_for: impl FnMut(usize) -> Result<Vec<TrainSample>>,
) -> Result<Vec<TrainRecord>> {
    let mut history = Vec::new();
    let interval = config.log_interval.max(1);
    for it in 0..config.iterations {
        let batch = batch_for(it)?;
        let g = trainer.step(&batch, config.lr_at(it), it)?;
        if (it + 1) % interval == 0 || it + 1 == config.iterations {
            history.push(TrainRecord { iteration: it + 1, chunk: chunk_label, loss: g.loss, psnr: g.psnr });
        }
    }
    Ok(history)
}

fn check_datasets(datasets: &[ChunkDataset], backbone: &BackboneConfig) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::EmptyInput(String::from("no chunk datasets")));
    }
    if let Some(d) = datasets.iter().find(|d| d.scale != backbone.scale) {
        return Err(Error::Config(format!("dataset scale {} does not match backbone scale {}", d.scale, backbone.scale)));
    }
    Ok(())
}

fn train_whole(
    dataset: &ChunkDataset,
    stream: usize,
    config: &TrainConfig,
    backbone: &BackboneConfig,
    mode: TrainMode,
) -> Result<TrainedModel> {
    let shared = build_backbone(backbone, init_seed(config.seed))?;
    let mut trainer = Trainer::new(shared, Vec::new(), true, config.adam())?;
    let history = run_loop(&mut trainer, config, None, |it| {
        draw(dataset, 0, config.batch, config, sample_seed(config.seed, stream, it))
    })?;
    let optimizer = trainer.optimizer_state();
    Ok(TrainedModel { mode, shared: trainer.shared, cafms: Vec::new(), history, optimizer })
}

/// One backbone over the union of all chunks.
pub fn train_m0(datasets: &[ChunkDataset], config: &TrainConfig, backbone: &BackboneConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_datasets(datasets, backbone)?;
    let merged = ChunkDataset::merge(datasets)?;
    train_whole(&merged, 0, config, backbone, TrainMode::M0)
}

/// Whole-model training on an image set unrelated to the video.
pub fn train_external(images: &ChunkDataset, config: &TrainConfig, backbone: &BackboneConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_datasets(core::slice::from_ref(images), backbone)?;
    train_whole(images, 0, config, backbone, TrainMode::External)
}

/// One backbone per chunk. All start from the same initialization; chunk `i`
/// draws its patches from stream `i`.
pub fn train_separate(
    datasets: &[ChunkDataset],
    config: &TrainConfig,
    backbone: &BackboneConfig,
) -> Result<Vec<TrainedModel>> {
    config.validate()?;
    check_datasets(datasets, backbone)?;
    datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| train_whole(ds, i, config, backbone, TrainMode::Separate))
        .collect()
}

/// Freezes `m0`'s backbone and fits one identity-initialized modulation set per
/// chunk, `config.iterations` steps each.
pub fn finetune_cafm(m0: &TrainedModel, datasets: &[ChunkDataset], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_datasets(datasets, m0.shared.config())?;
    let mut cafms = Vec::with_capacity(datasets.len());
    let mut history = Vec::new();
    let mut optimizer = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let set = identity_for(m0.shared.architecture(), config.kernel, i);
        let mut trainer = Trainer::new(m0.shared.clone(), vec![set], false, config.adam())?;
        history.extend(run_loop(&mut trainer, config, Some(i), |it| {
            draw(ds, 0, config.batch, config, sample_seed(config.seed, i, it))
        })?);
        optimizer.extend_from_slice(&trainer.optimizer_state());
        let mut set = trainer.cafms.pop().expect("one set");
        set.chunk_index = i;
        cafms.push(set);
    }
    Ok(TrainedModel { mode: TrainMode::Ft, shared: m0.shared.clone(), cafms, history, optimizer })
}

/// Joint training from scratch: fresh backbone, identity modulation per chunk.
pub fn train_joint(datasets: &[ChunkDataset], config: &TrainConfig, backbone: &BackboneConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_datasets(datasets, backbone)?;
    let shared = build_backbone(backbone, init_seed(config.seed))?;
    let cafms = (0..datasets.len()).map(|i| identity_for(shared.architecture(), config.kernel, i)).collect();
    let mut trainer = Trainer::new(shared, cafms, true, config.adam())?;
    let history = run_loop(&mut trainer, config, None, |it| joint_batch(datasets, config, it))?;
    let optimizer = trainer.optimizer_state();
    Ok(TrainedModel { mode: TrainMode::Joint, shared: trainer.shared, cafms: trainer.cafms, history, optimizer })
}

/// Mean clamped PSNR of `model` on every sample of `datasets` (chunk `i` uses set `i`).
pub fn mean_psnr(model: &TrainedModel, datasets: &[ChunkDataset]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for ds in datasets {
        let lr: Vec<Frame> = ds.pairs().iter().map(|p| p.lr.clone()).collect();
        let sr = model.super_resolve(ds.chunk_index, &lr)?;
        for (s, p) in sr.iter().zip(ds.pairs()) {
            acc += psnr(&p.hr, s)?;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}
