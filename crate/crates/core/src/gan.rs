//! Training: the supervised first discriminator and the adversarial
//! generator / second-discriminator pair.
//!
//! Both discriminators read images scaled from `{0, 1}` to `{-1, 1}`, the
//! generator's tanh range. Targets are 1 for normal (real) images and 0 for
//! attack or generated images, so a low output means "anomalous".

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::KeyValues;
use crate::encoder::{CanImage, EncoderConfig, EncodingMode};
use crate::eval::roc_auc;
use crate::nn::{
    adam_step, bce_loss, bce_with_logit, load_weights, save_weights, AdamConfig, AdamState, GeneratorSpec,
    KernelInit, ModelWeights, NnError, OutputGrad, WeightsError,
};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Refinement fakes in one batch come from this many snapshot draws.
const SNAPSHOTS_PER_BATCH: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("images have inconsistent shapes: {0}")]
    ShapeMismatch(String),
    #[error("discriminator collapsed: mean D(real) below 0.1 for {0} consecutive epochs")]
    DivergenceDetected(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which GAN checkpoint to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckpointRule {
    /// Best separation of held-out normal images from generated ones.
    BestSeparation,
    #[default]
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d_optimizer: AdamConfig,
    pub g_optimizer: AdamConfig,
    pub d_steps_per_g_step: usize,
    /// Real-image targets become `1 - label_smoothing`.
    pub label_smoothing: f64,
    pub d_hidden: Vec<usize>,
    pub noise_dim: usize,
    pub seed_channels: usize,
    pub deconv_channels: Vec<usize>,
    pub kernel_init: KernelInit,
    /// Share of normal images held out for checkpoint selection.
    pub validation_fraction: f64,
    pub checkpoint: CheckpointRule,
    /// Discriminator-only epochs run after the adversarial phase, against
    /// generator snapshots taken every `snapshot_every` epochs.
    pub refine_epochs: usize,
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            d_optimizer: AdamConfig::default(),
            g_optimizer: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            d_steps_per_g_step: 1,
            label_smoothing: 0.1,
            d_hidden: vec![1024, 512],
            noise_dim: 100,
            seed_channels: 128,
            deconv_channels: vec![64, 32, 16, 1],
            kernel_init: KernelInit::He,
            validation_fraction: 0.1,
            checkpoint: CheckpointRule::Last,
            refine_epochs: 12,
            snapshot_every: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps_per_g_step == 0 || self.snapshot_every == 0 {
            return bad("epochs, batch_size, d_steps_per_g_step and snapshot_every must be at least 1".into());
        }
        if let KernelInit::Normal(std) = self.kernel_init {
            if !(std.is_finite() && std > 0.0) {
                return bad(format!("kernel init std {std} must be positive"));
            }
        }
        if !(0.0..=0.3).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 0.3]", self.label_smoothing));
        }
        if !(0.0..0.9).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 0.9)", self.validation_fraction));
        }
        if self.noise_dim == 0 || self.d_hidden.contains(&0) || self.deconv_channels.is_empty() {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    fn generator_spec(&self, rows: usize, cols: usize) -> GeneratorSpec {
        GeneratorSpec {
            noise_dim: self.noise_dim,
            seed_channels: self.seed_channels,
            deconv_channels: self.deconv_channels.clone(),
            output_hw: [rows, cols],
            kernel_init: self.kernel_init,
        }
    }

    /// Overrides fields from `epochs`, `batch_size`, `seed`, `lr`, `d_lr`, `g_lr`,
    /// `beta1`, `beta2`, `d_steps`, `label_smoothing`, `d_hidden`, `noise_dim`,
    /// `g_init` (`he` or `normal:<std>`), `validation_fraction`, `checkpoint`,
    /// `refine_epochs` and `snapshot_every` keys.
    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<(), TrainError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
            v.parse().map_err(|_| TrainError::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        for (key, v) in kv.iter() {
            match key {
                "epochs" => self.epochs = num(key, v)?,
                "batch_size" => self.batch_size = num(key, v)?,
                "seed" => self.seed = num(key, v)?,
                "lr" => {
                    let lr = num(key, v)?;
                    self.d_optimizer.learning_rate = lr;
                    self.g_optimizer.learning_rate = lr;
                }
                "d_lr" => self.d_optimizer.learning_rate = num(key, v)?,
                "g_lr" => self.g_optimizer.learning_rate = num(key, v)?,
                "beta1" => {
                    let b = num(key, v)?;
                    self.d_optimizer.beta1 = b;
                    self.g_optimizer.beta1 = b;
                }
                "beta2" => {
                    let b = num(key, v)?;
                    self.d_optimizer.beta2 = b;
                    self.g_optimizer.beta2 = b;
                }
                "d_steps" => self.d_steps_per_g_step = num(key, v)?,
                "label_smoothing" => self.label_smoothing = num(key, v)?,
                "noise_dim" => self.noise_dim = num(key, v)?,
                "validation_fraction" => self.validation_fraction = num(key, v)?,
                "refine_epochs" => self.refine_epochs = num(key, v)?,
                "snapshot_every" => self.snapshot_every = num(key, v)?,
                "g_init" => {
                    self.kernel_init = match v.split_once(':') {
                        None if v == "he" => KernelInit::He,
                        Some(("normal", std)) => KernelInit::Normal(num(key, std)?),
                        _ => return Err(TrainError::InvalidConfig(format!("bad g_init {v:?}"))),
                    }
                }
                "d_hidden" => {
                    self.d_hidden = v.split(',').map(|w| num(key, w.trim())).collect::<Result<_, _>>()?;
                }
                "checkpoint" => {
                    self.checkpoint = match v {
                        "best" => CheckpointRule::BestSeparation,
                        "last" => CheckpointRule::Last,
                        _ => return Err(TrainError::InvalidConfig(format!("bad checkpoint rule {v:?}"))),
                    }
                }
                _ => {}
            }
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("d_lr", self.d_optimizer.learning_rate);
        kv.set("g_lr", self.g_optimizer.learning_rate);
        kv.set("beta1", self.d_optimizer.beta1);
        kv.set("beta2", self.d_optimizer.beta2);
        kv.set("d_steps", self.d_steps_per_g_step);
        kv.set("label_smoothing", self.label_smoothing);
        kv.set("noise_dim", self.noise_dim);
        kv.set("validation_fraction", self.validation_fraction);
        kv.set("refine_epochs", self.refine_epochs);
        kv.set("snapshot_every", self.snapshot_every);
        kv.set(
            "g_init",
            match self.kernel_init {
                KernelInit::He => "he".to_string(),
                KernelInit::Normal(std) => format!("normal:{std}"),
            },
        );
        kv.set("d_hidden", self.d_hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        kv.set(
            "checkpoint",
            match self.checkpoint {
                CheckpointRule::BestSeparation => "best",
                CheckpointRule::Last => "last",
            },
        );
        kv
    }
}

/// Stacks images into a `[n, rows*cols]` matrix of `{-1, 1}` pixels.
pub fn signed_matrix(images: &[CanImage]) -> Array2<f32> {
    let width = images.first().map_or(0, |i| i.pixels().len());
    let mut m = Array2::zeros((images.len(), width));
    for (mut row, img) in m.rows_mut().into_iter().zip(images) {
        img.write_signed(row.as_slice_mut().expect("standard layout"));
    }
    m
}

fn common_shape(sets: &[&[CanImage]]) -> Result<(usize, usize), TrainError> {
    let first = sets.iter().flat_map(|s| s.iter()).next().ok_or(TrainError::EmptyDataset("no images"))?;
    let shape = (first.rows(), first.cols());
    for img in sets.iter().flat_map(|s| s.iter()) {
        if (img.rows(), img.cols()) != shape {
            return Err(TrainError::ShapeMismatch(format!(
                "{}x{} and {}x{}",
                shape.0,
                shape.1,
                img.rows(),
                img.cols()
            )));
        }
    }
    Ok(shape)
}

fn gather_rows(data: &Array2<f32>, idx: &[usize]) -> Array2<f32> {
    data.select(Axis(0), idx)
}

/// Discriminator output (probability of "normal") for every row.
pub fn discriminator_scores(d: &ModelWeights<f32>, data: ArrayView2<f32>) -> Result<Vec<f32>, NnError> {
    const CHUNK: usize = 256;
    let mut scores = Vec::with_capacity(data.nrows());
    let mut start = 0;
    while start < data.nrows() {
        let end = (start + CHUNK).min(data.nrows());
        scores.extend(d.predict(data.slice(s![start..end, ..]))?.iter().copied());
        start = end;
    }
    Ok(scores)
}

/// One supervised or adversarial discriminator update on a labelled batch.
/// Returns the mean loss and the discriminator outputs.
fn discriminator_step(
    d: &mut ModelWeights<f32>,
    opt: &mut AdamState<f32>,
    batch: ArrayView2<f32>,
    targets: &[f64],
) -> Result<(f64, Vec<f32>), TrainError> {
    let n = batch.nrows();
    let cache = d.forward(batch)?;
    let logits = cache.output_pre();
    let mut grad = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let b = bce_with_logit(f64::from(logits[[i, 0]]), t);
        loss += b.loss;
        grad[[i, 0]] = (b.grad / n as f64) as f32;
    }
    let scores = cache.output().iter().copied().collect();
    let grads = d.backward(&cache, OutputGrad::PreActivation(grad), true, false)?.params.expect("requested");
    adam_step(&mut d.param_blocks_mut(), &grads, opt)?;
    Ok((loss / n as f64, scores))
}

/// Result of supervised training.
#[derive(Debug, Clone)]
pub struct SupervisedRun {
    pub model: ModelWeights<f32>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the first discriminator on normal (target 1) and attack (target 0) images.
pub fn train_first_discriminator(
    normal: &[CanImage],
    attack: &[CanImage],
    cfg: &TrainConfig,
) -> Result<SupervisedRun, TrainError> {
    cfg.validate()?;
    if normal.is_empty() {
        return Err(TrainError::EmptyDataset("no normal images"));
    }
    if attack.is_empty() {
        return Err(TrainError::EmptyDataset("no attack images"));
    }
    let (rows, cols) = common_shape(&[normal, attack])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut d = ModelWeights::discriminator(rows, cols, &cfg.d_hidden, &mut rng)?;
    let mut opt = AdamState::new(cfg.d_optimizer, &d.param_blocks());
    let data = concatenate(Axis(0), &[signed_matrix(normal).view(), signed_matrix(attack).view()])
        .expect("same width");
    let targets: Vec<f64> = (0..data.nrows()).map(|i| if i < normal.len() { 1.0 } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = gather_rows(&data, idx);
            let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, _) = discriminator_step(&mut d, &mut opt, batch.view(), &t)?;
            total += loss * idx.len() as f64;
        }
        epoch_losses.push(total / data.nrows() as f64);
    }
    Ok(SupervisedRun { model: d, epoch_losses })
}

/// Per-epoch GAN statistics. Epoch 0 is measured before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    /// Held-out normal versus generated AUC used for checkpoint selection.
    pub validation_separation: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,d_loss,g_loss,d_real_mean,d_fake_mean\n");
    for h in history {
        writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", h.epoch, h.d_loss, h.g_loss, h.d_real_mean, h.d_fake_mean).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: ModelWeights<f32>,
    pub discriminator: ModelWeights<f32>,
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub selected_epoch: usize,
}

fn noise(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f32> {
    Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal))
}

/// `n` generator outputs for standard-normal noise drawn from `seed`, one image per row.
pub fn generate_samples(g: &ModelWeights<f32>, n: usize, seed: u64) -> Result<Array2<f32>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.predict(noise(&mut rng, n, g.input_len()).view())
}

const DIVERGENCE_FLOOR: f64 = 0.1;
const DIVERGENCE_PATIENCE: usize = 5;

fn mean(v: &[f32]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
    }
}

/// AUC of D telling held-out normal images (positive) from fresh generator samples.
fn separation(d: &ModelWeights<f32>, g: &ModelWeights<f32>, valid: &Array2<f32>, seed: u64) -> Result<f64, NnError> {
    if valid.nrows() == 0 {
        return Ok(0.5);
    }
    let fakes = generate_samples(g, valid.nrows().max(64), seed)?;
    let mut scores = discriminator_scores(d, valid.view())?;
    scores.extend(discriminator_scores(d, fakes.view())?);
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < valid.nrows()).collect();
    let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
    Ok(roc_auc(&scores, &labels).unwrap_or(0.5))
}

/// Adversarial training on normal images only.
///
/// Each iteration takes `d_steps_per_g_step` discriminator steps (real batch
/// against a fresh generated batch), then one non-saturating generator step
/// that pushes `D(G(z))` toward 1 through the just-updated discriminator.
///
/// After `epochs` adversarial epochs the checkpoint is chosen by
/// `cfg.checkpoint`. Its discriminator then trains alone for `refine_epochs`
/// more epochs, each batch faced with samples from a generator snapshot drawn
/// at random, so it ends up rejecting everything the generator produced along
/// the way. Refinement epochs are numbered after the adversarial ones in the
/// history; their `g_loss` is the generator loss on the sampled fakes.
pub fn train_gan(normal: &[CanImage], cfg: &TrainConfig) -> Result<GanRun, TrainError> {
    train_gan_observed(normal, cfg, |_, _, _| {})
}

/// [`train_gan`] with a callback after every epoch, given the stats and the
/// current generator and discriminator.
pub fn train_gan_observed(
    normal: &[CanImage],
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochStats, &ModelWeights<f32>, &ModelWeights<f32>),
) -> Result<GanRun, TrainError> {
    cfg.validate()?;
    if normal.is_empty() {
        return Err(TrainError::EmptyDataset("no normal images"));
    }
    let (rows, cols) = common_shape(&[normal])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut d = ModelWeights::discriminator(rows, cols, &cfg.d_hidden, &mut rng)?;
    let mut g = ModelWeights::generator(&cfg.generator_spec(rows, cols), &mut rng)?;
    let mut d_opt = AdamState::new(cfg.d_optimizer, &d.param_blocks());
    let mut g_opt = AdamState::new(cfg.g_optimizer, &g.param_blocks());

    let all = signed_matrix(normal);
    let mut order: Vec<usize> = (0..all.nrows()).collect();
    order.shuffle(&mut rng);
    let n_valid = if all.nrows() >= 2 { ((all.nrows() as f64) * cfg.validation_fraction) as usize } else { 0 };
    let valid = gather_rows(&all, &order[..n_valid]);
    let train = gather_rows(&all, &order[n_valid..]);
    let validation_seed: u64 = rng.gen();

    let real_target = 1.0 - cfg.label_smoothing;
    let batch = cfg.batch_size.min(train.nrows());
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    // Epoch 0: the untrained pair.
    {
        let probe = train.slice(s![..batch, ..]);
        let fake = generate_samples(&g, batch, validation_seed)?;
        let real_scores = discriminator_scores(&d, probe)?;
        let fake_scores = discriminator_scores(&d, fake.view())?;
        let d_loss = real_scores.iter().map(|&p| bce_loss(f64::from(p), real_target).loss).sum::<f64>()
            / batch as f64
            + fake_scores.iter().map(|&p| bce_loss(f64::from(p), 0.0).loss).sum::<f64>() / batch as f64;
        let g_loss =
            fake_scores.iter().map(|&p| bce_loss(f64::from(p), 1.0).loss).sum::<f64>() / batch as f64;
        history.push(EpochStats {
            epoch: 0,
            d_loss,
            g_loss,
            d_real_mean: mean(&real_scores),
            d_fake_mean: mean(&fake_scores),
            validation_separation: separation(&d, &g, &valid, validation_seed)?,
        });
    }

    let mut best: Option<(f64, usize, ModelWeights<f32>, ModelWeights<f32>)> = None;
    let mut snapshots = Vec::new();
    let mut collapsed_epochs = 0;
    let mut train_order: Vec<usize> = (0..train.nrows()).collect();
    for epoch in 1..=cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut batches = train_order.chunks_exact(batch);
        let (mut d_loss, mut g_loss, mut real_sum, mut fake_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut d_steps, mut g_steps) = (0usize, 0usize);
        'epoch: loop {
            let mut last_fake = None;
            for _ in 0..cfg.d_steps_per_g_step {
                let Some(idx) = batches.next() else { break 'epoch };
                let real = gather_rows(&train, idx);
                let z = noise(&mut rng, batch, cfg.noise_dim);
                let g_cache = g.forward(z.view())?;
                let both = concatenate(Axis(0), &[real.view(), g_cache.output().view()]).expect("same width");
                let targets: Vec<f64> = (0..2 * batch).map(|i| if i < batch { real_target } else { 0.0 }).collect();
                // Each half is averaged separately: loss = mean_real + mean_fake.
                let (loss, scores) = discriminator_step(&mut d, &mut d_opt, both.view(), &targets)?;
                d_loss += 2.0 * loss;
                real_sum += mean(&scores[..batch]);
                fake_sum += mean(&scores[batch..]);
                d_steps += 1;
                last_fake = Some(g_cache);
            }
            // The generator has not moved since this batch was drawn.
            let g_cache = last_fake.expect("at least one discriminator step");
            let d_cache = d.forward(g_cache.output().view())?;
            let logits = d_cache.output_pre();
            let mut grad = Array2::zeros((batch, 1));
            let mut loss = 0.0;
            for i in 0..batch {
                let b = bce_with_logit(f64::from(logits[[i, 0]]), 1.0);
                loss += b.loss;
                grad[[i, 0]] = (b.grad / batch as f64) as f32;
            }
            let into_g = d.backward(&d_cache, OutputGrad::PreActivation(grad), false, true)?.input.expect("requested");
            let g_grads = g.backward(&g_cache, OutputGrad::Output(into_g), true, false)?.params.expect("requested");
            adam_step(&mut g.param_blocks_mut(), &g_grads, &mut g_opt)?;
            g_loss += loss / batch as f64;
            g_steps += 1;
        }
        let d_steps = d_steps.max(1) as f64;
        let stats = EpochStats {
            epoch,
            d_loss: d_loss / d_steps,
            g_loss: g_loss / g_steps.max(1) as f64,
            d_real_mean: real_sum / d_steps,
            d_fake_mean: fake_sum / d_steps,
            validation_separation: separation(&d, &g, &valid, validation_seed)?,
        };
        history.push(stats);
        observe(&stats, &g, &d);

        collapsed_epochs = if stats.d_real_mean < DIVERGENCE_FLOOR { collapsed_epochs + 1 } else { 0 };
        if collapsed_epochs >= DIVERGENCE_PATIENCE {
            return Err(TrainError::DivergenceDetected(collapsed_epochs));
        }
        if cfg.refine_epochs > 0 && epoch % cfg.snapshot_every == 0 {
            snapshots.push(g.clone());
        }
        if cfg.checkpoint == CheckpointRule::BestSeparation
            && best.as_ref().is_none_or(|(score, ..)| stats.validation_separation >= *score)
        {
            best = Some((stats.validation_separation, epoch, g.clone(), d.clone()));
        }
    }

    let (selected_epoch, generator, mut discriminator) = match best {
        Some((_, e, g_best, d_best)) => (e, g_best, d_best),
        None => (cfg.epochs, g, d),
    };

    if cfg.refine_epochs > 0 {
        snapshots.push(generator.clone());
        let mut opt = AdamState::new(cfg.d_optimizer, &discriminator.param_blocks());
        let targets: Vec<f64> = (0..2 * batch).map(|i| if i < batch { real_target } else { 0.0 }).collect();
        for r in 1..=cfg.refine_epochs {
            train_order.shuffle(&mut rng);
            let (mut d_loss, mut g_loss, mut real_sum, mut fake_sum, mut steps) = (0.0, 0.0, 0.0, 0.0, 0usize);
            for idx in train_order.chunks_exact(batch) {
                let mut parts = vec![gather_rows(&train, idx)];
                let per = batch.div_ceil(SNAPSHOTS_PER_BATCH);
                let mut drawn = 0;
                while drawn < batch {
                    let n = per.min(batch - drawn);
                    let snapshot = &snapshots[rng.gen_range(0..snapshots.len())];
                    parts.push(snapshot.predict(noise(&mut rng, n, cfg.noise_dim).view())?);
                    drawn += n;
                }
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                let both = concatenate(Axis(0), &views).expect("same width");
                let (loss, scores) = discriminator_step(&mut discriminator, &mut opt, both.view(), &targets)?;
                d_loss += 2.0 * loss;
                g_loss += scores[batch..].iter().map(|&p| bce_loss(f64::from(p), 1.0).loss).sum::<f64>() / batch as f64;
                real_sum += mean(&scores[..batch]);
                fake_sum += mean(&scores[batch..]);
                steps += 1;
            }
            let steps = steps.max(1) as f64;
            let stats = EpochStats {
                epoch: cfg.epochs + r,
                d_loss: d_loss / steps,
                g_loss: g_loss / steps,
                d_real_mean: real_sum / steps,
                d_fake_mean: fake_sum / steps,
                validation_separation: separation(&discriminator, &generator, &valid, validation_seed)?,
            };
            history.push(stats);
            observe(&stats, &generator, &discriminator);
        }
    }
    Ok(GanRun { generator, discriminator, history, selected_epoch })
}

/// Everything the detector needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGids {
    pub d1: Option<ModelWeights<f32>>,
    pub d2: ModelWeights<f32>,
    pub g: Option<ModelWeights<f32>>,
    pub encoder: EncoderConfig,
    pub detection_threshold: f64,
    /// Overrides the shared threshold for the second stage.
    pub d2_threshold: Option<f64>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Weights { path: String, source: WeightsError },
    #[error("bundle: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.display().to_string(), source }
}

pub fn read_weights_file(path: &Path) -> Result<ModelWeights<f32>, BundleError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    load_weights(&bytes).map_err(|source| BundleError::Weights { path: path.display().to_string(), source })
}

pub fn write_weights_file(path: &Path, model: &ModelWeights<f32>) -> Result<(), BundleError> {
    fs::write(path, save_weights(model)).map_err(io_err(path))
}

impl TrainedGids {
    /// D2-only cascade whose encoder is inferred from the discriminator's input shape.
    pub fn from_d2(d2: ModelWeights<f32>, threshold: f64) -> Result<Self, BundleError> {
        let [rows, cols] = d2.input_shape();
        let mode = EncodingMode::from_columns(cols)
            .ok_or_else(|| BundleError::Invalid(format!("discriminator input {rows}x{cols} is not a CAN image")))?;
        let gids = TrainedGids {
            d1: None,
            d2,
            g: None,
            encoder: EncoderConfig::grouped(rows, mode),
            detection_threshold: threshold,
            d2_threshold: None,
        };
        gids.validate()?;
        Ok(gids)
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let image = [self.encoder.input_size, self.encoder.columns()];
        let bad = |m: String| Err(BundleError::Invalid(m));
        if self.d2.input_shape() != image {
            return bad(format!("second discriminator expects {:?}, encoder yields {image:?}", self.d2.input_shape()));
        }
        if let Some(d1) = &self.d1 {
            if d1.input_shape() != image {
                return bad(format!("first discriminator expects {:?}, encoder yields {image:?}", d1.input_shape()));
            }
        }
        if let Some(g) = &self.g {
            if g.output_shape() != self.d2.input_shape() {
                return bad(format!("generator emits {:?}, second discriminator reads {image:?}", g.output_shape()));
            }
        }
        for t in std::iter::once(self.detection_threshold).chain(self.d2_threshold) {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("threshold {t} outside (0, 1)"));
            }
        }
        if let Err(e) = self.encoder.validate() {
            return bad(e.to_string());
        }
        Ok(())
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.detection_threshold, self.d2_threshold.unwrap_or(self.detection_threshold))
    }

    /// Writes `d2.gidsw`, optional `d1.gidsw` / `g.gidsw` and `gids.conf` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BundleError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_weights_file(&dir.join("d2.gidsw"), &self.d2)?;
        if let Some(d1) = &self.d1 {
            write_weights_file(&dir.join("d1.gidsw"), d1)?;
        }
        if let Some(g) = &self.g {
            write_weights_file(&dir.join("g.gidsw"), g)?;
        }
        let mut kv = KeyValues::default();
        kv.set("input_size", self.encoder.input_size);
        kv.set("stride", self.encoder.stride);
        kv.set("mode", self.encoder.mode);
        kv.set("threshold", self.detection_threshold);
        if let Some(t) = self.d2_threshold {
            kv.set("d2_threshold", t);
        }
        let path = dir.join("gids.conf");
        fs::write(&path, kv.to_string()).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let conf_path = dir.join("gids.conf");
        let text = fs::read_to_string(&conf_path).map_err(io_err(&conf_path))?;
        let kv = KeyValues::parse(&text).map_err(|e| BundleError::Invalid(e.to_string()))?;
        let get = |k: &str| kv.get(k).ok_or_else(|| BundleError::Invalid(format!("gids.conf lacks `{k}`")));
        let parse_err = |k: &str| BundleError::Invalid(format!("gids.conf has a bad `{k}`"));
        let input_size: usize = get("input_size")?.parse().map_err(|_| parse_err("input_size"))?;
        let stride: usize = get("stride")?.parse().map_err(|_| parse_err("stride"))?;
        let mode: EncodingMode = get("mode")?.parse().map_err(|_| parse_err("mode"))?;
        let threshold: f64 = get("threshold")?.parse().map_err(|_| parse_err("threshold"))?;
        let d2_threshold =
            kv.get("d2_threshold").map(|v| v.parse::<f64>().map_err(|_| parse_err("d2_threshold"))).transpose()?;
        let optional = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                read_weights_file(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let gids = TrainedGids {
            d1: optional("d1.gidsw")?,
            d2: read_weights_file(&dir.join("d2.gidsw"))?,
            g: optional("g.gidsw")?,
            encoder: EncoderConfig { input_size, stride, mode },
            detection_threshold: threshold,
            d2_threshold,
        };
        gids.validate()?;
        Ok(gids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ImageLabel;

    fn flat(rows: usize, cols: usize, value: u8, label: ImageLabel) -> CanImage {
        CanImage::from_pixels(rows, cols, vec![value; rows * cols], label).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            seed: 5,
            d_hidden: vec![16, 8],
            noise_dim: 8,
            seed_channels: 4,
            deconv_channels: vec![4, 2, 2, 1],
            d_optimizer: AdamConfig { learning_rate: 1e-3, ..Default::default() },
            g_optimizer: AdamConfig { learning_rate: 1e-3, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_sets() {
        let normal: Vec<_> = (0..20).map(|_| flat(16, 3, 0, ImageLabel::Normal)).collect();
        let attack: Vec<_> = (0..20).map(|_| flat(16, 3, 1, ImageLabel::Abnormal)).collect();
        let run = train_first_discriminator(&normal, &attack, &tiny_cfg()).unwrap();
        let s_normal = discriminator_scores(&run.model, signed_matrix(&normal).view()).unwrap();
        let s_attack = discriminator_scores(&run.model, signed_matrix(&attack).view()).unwrap();
        assert!(s_normal.iter().all(|&s| s > 0.5));
        assert!(s_attack.iter().all(|&s| s < 0.5));
        assert!(run.epoch_losses.last() < run.epoch_losses.first());
    }

    #[test]
    fn supervised_errors() {
        let a = vec![flat(16, 3, 0, ImageLabel::Normal)];
        let b = vec![flat(8, 3, 0, ImageLabel::Abnormal)];
        assert!(matches!(train_first_discriminator(&[], &a, &tiny_cfg()), Err(TrainError::EmptyDataset(_))));
        assert!(matches!(train_first_discriminator(&a, &[], &tiny_cfg()), Err(TrainError::EmptyDataset(_))));
        assert!(matches!(train_first_discriminator(&a, &b, &tiny_cfg()), Err(TrainError::ShapeMismatch(_))));
        assert!(matches!(train_gan(&[], &tiny_cfg()), Err(TrainError::EmptyDataset(_))));
        let bad = TrainConfig { label_smoothing: 0.5, ..tiny_cfg() };
        assert!(matches!(train_gan(&a, &bad), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn gan_is_deterministic_and_bounded() {
        let normal: Vec<_> =
            (0..24).map(|i| flat(16, 16, (i % 2) as u8, ImageLabel::Normal)).collect();
        let cfg = TrainConfig { epochs: 3, refine_epochs: 2, snapshot_every: 2, ..tiny_cfg() };
        let a = train_gan(&normal, &cfg).unwrap();
        let b = train_gan(&normal, &cfg).unwrap();
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.discriminator, b.discriminator);
        assert_eq!(a.history, b.history);
        let epochs: Vec<usize> = a.history.iter().map(|h| h.epoch).collect();
        assert_eq!(epochs, [0, 1, 2, 3, 4, 5]);
        assert!((a.history[0].d_real_mean - 0.5).abs() < 1e-6);
        assert!((a.history[0].d_fake_mean - 0.5).abs() < 1e-6);
        let samples = generate_samples(&a.generator, 10, 1).unwrap();
        assert!(samples.iter().all(|v| (-1.0..=1.0).contains(v)));
        let scores = discriminator_scores(&a.discriminator, samples.view()).unwrap();
        assert!(scores.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn untrained_generator_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ModelWeights::<f32>::generator(&GeneratorSpec::for_image(64, 48), &mut rng).unwrap();
        let batch = generate_samples(&g, 100, 4).unwrap();
        assert_eq!(batch.dim(), (100, 64 * 48));
        let mean = batch.mean().unwrap();
        assert!(mean.abs() < 0.1, "pixel mean {mean}");
        assert_eq!(generate_samples(&g, 1, 9).unwrap(), generate_samples(&g, 1, 9).unwrap());
        let ten = generate_samples(&g, 10, 9).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                assert_ne!(ten.row(i), ten.row(j));
            }
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = TrainConfig::default();
        let kv = KeyValues::parse("epochs=7\nlr=0.001\nd_hidden=32,16\ncheckpoint=best\ng_init=normal:0.02").unwrap();
        cfg.apply_kv(&kv).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.d_hidden, [32, 16]);
        assert_eq!(cfg.g_optimizer.learning_rate, 1e-3);
        assert_eq!(cfg.checkpoint, CheckpointRule::BestSeparation);
        assert_eq!(cfg.kernel_init, KernelInit::Normal(0.02));
        let mut again = TrainConfig::default();
        again.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(again, cfg);
        assert!(TrainConfig::default().apply_kv(&KeyValues::parse("epochs=0").unwrap()).is_err());
        assert!(TrainConfig::default().apply_kv(&KeyValues::parse("g_init=xavier").unwrap()).is_err());
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[EpochStats {
            epoch: 0,
            d_loss: 1.0,
            g_loss: 0.5,
            d_real_mean: 0.5,
            d_fake_mean: 0.25,
            validation_separation: 0.5,
        }]);
        assert_eq!(csv, "epoch,d_loss,g_loss,d_real_mean,d_fake_mean\n0,1.000000,0.500000,0.500000,0.250000\n");
    }
}
