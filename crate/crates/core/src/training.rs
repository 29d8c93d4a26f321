//! Loss composition, the optimization schedule, early stopping and the
//! training loop.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{AttentionMode, ForwardOptions, Model};
use crate::config::{EarlyStopOn, TrainingConfig};
use crate::error::{KidError, Result};
use crate::eval::auc;
use crate::graph::{Graph, Var};
use crate::localization::coarse_patch_labels;
use crate::optimizer::AdamW;
use crate::params::{ParamId, TrainMode};
use crate::regularization::{activation_node, contrast_node, suppression_node};
use crate::synthesis::augment::augment;
use crate::synthesis::blend::self_blend_retrying;
use crate::synthesis::dataset::split_by_group;
use crate::synthesis::{sample_rng, ImageSample, Label};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub dice: f64,
    pub suppression: f64,
    pub contrast: f64,
    pub total: f64,
}

/// Unweighted sum of the four terms; faults on the first non-finite one.
pub fn total_loss(ce: f64, dice: f64, suppression: f64, contrast: f64) -> Result<LossBreakdown> {
    for (name, v) in [("ce", ce), ("dice", dice), ("suppression", suppression), ("contrast", contrast)] {
        if !v.is_finite() {
            return Err(KidError::NonFiniteLoss(name));
        }
    }
    Ok(LossBreakdown { ce, dice, suppression, contrast, total: ce + dice + suppression + contrast })
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.ce += other.ce;
        self.dice += other.dice;
        self.suppression += other.suppression;
        self.contrast += other.contrast;
        self.total += other.total;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            ce: self.ce * s,
            dice: self.dice * s,
            suppression: self.suppression * s,
            contrast: self.contrast * s,
            total: self.total * s,
        }
    }
}

/// Cosine annealing from `lr_init` at step 0 to `lr_min` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainingConfig) -> f64 {
    if total_steps == 0 {
        return cfg.lr_min;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Loss, gradients and activations of one (real, fake) pair.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub loss: LossBreakdown,
    pub grads: BTreeMap<ParamId, Mat>,
    pub activation_real: Vec<f64>,
    pub activation_fake: Vec<f64>,
    /// Fake probabilities of the real and the fake image.
    pub scores: [f64; 2],
}

struct PairGraph {
    g: Graph,
    total: Var,
    parts: [Option<Var>; 4],
    act: [Vec<Var>; 2],
    logits: [Var; 2],
}

fn build_pair(model: &Model, cfg: &TrainingConfig, real: &ImageSample, fake: &ImageSample) -> Result<PairGraph> {
    if real.label != Label::Real || fake.label != Label::Fake {
        return Err(KidError::InvalidArgument("pairs must be (real, fake)".into()));
    }
    let opts = ForwardOptions { injected: cfg.injected(), localization: cfg.uses_localization() };
    let mut g = Graph::new();
    let mut ce = Vec::with_capacity(2);
    let mut dice = Vec::with_capacity(2);
    let mut act: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    let mut logits = Vec::with_capacity(2);
    for (k, s) in [real, fake].into_iter().enumerate() {
        let trace = model.build(&mut g, &s.pixels, opts)?;
        ce.push(g.cross_entropy(trace.logits, s.label.class_index()));
        logits.push(trace.logits);
        if let Some(scores) = trace.loc_scores {
            let labels = coarse_patch_labels(&s.outer_face_mask, cfg.backbone.patch_size, cfg.gamma0, cfg.gamma1)?;
            dice.push(g.dice(scores, labels.as_column(), cfg.dice_smooth));
        }
        if cfg.injected() {
            act[k] = trace.corr.iter().map(|heads| activation_node(&mut g, heads)).collect();
        }
    }
    let ce = g.mean(&ce);
    let dice = (!dice.is_empty()).then(|| g.mean(&dice));
    let (sup, con) = if cfg.uses_regularizers() {
        let s = suppression_node(&mut g, &[&act[0], &act[1]], &cfg.regularizer);
        let c = contrast_node(&mut g, &[(&act[0], &act[1])], &cfg.regularizer);
        (Some(s), Some(c))
    } else {
        (None, None)
    };
    let parts = [Some(ce), dice, sup, con];
    let present: Vec<Var> = parts.iter().flatten().copied().collect();
    let total = g.sum(&present);
    Ok(PairGraph { g, total, parts, act, logits: [logits[0], logits[1]] })
}

fn read_pair(pg: &PairGraph) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>, [f64; 2])> {
    let v = |x: Option<Var>| x.map_or(0.0, |x| pg.g.value(x).item());
    let loss = total_loss(v(pg.parts[0]), v(pg.parts[1]), v(pg.parts[2]), v(pg.parts[3]))?;
    let total = pg.g.value(pg.total).item();
    if !total.is_finite() {
        return Err(KidError::NonFiniteLoss("total"));
    }
    let acts = |k: usize| pg.act[k].iter().map(|&a| pg.g.value(a).item()).collect::<Vec<f64>>();
    let score = |k: usize| {
        let l = pg.g.value(pg.logits[k]);
        crate::graph::sigmoid(l[(0, 1)] - l[(0, 0)])
    };
    Ok((loss, acts(0), acts(1), [score(0), score(1)]))
}

/// Forward and backward pass of one pair. CE and dice are averaged over the
/// two images; the suppression term is averaged over both and the contrast
/// term counts the single pair.
pub fn pair_step(model: &Model, cfg: &TrainingConfig, real: &ImageSample, fake: &ImageSample) -> Result<PairResult> {
    let pg = build_pair(model, cfg, real, fake)?;
    let (loss, activation_real, activation_fake, scores) = read_pair(&pg)?;
    let grads = pg.g.backward(pg.total).into_params();
    Ok(PairResult { loss, grads, activation_real, activation_fake, scores })
}

/// Loss of one pair without gradients.
pub fn pair_loss(model: &Model, cfg: &TrainingConfig, real: &ImageSample, fake: &ImageSample) -> Result<LossBreakdown> {
    let pg = build_pair(model, cfg, real, fake)?;
    Ok(read_pair(&pg)?.0)
}

/// Tracks the best epoch loss; `observe` answers whether to stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, stale_epochs: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        self.stale_epochs >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Diverged(String),
}

/// Drives `epoch_fn` (returning the monitored loss) until the stopper fires or
/// `max_epochs` is reached. Returns the number of epochs run and why it ended.
pub fn run_epochs(
    max_epochs: usize,
    stopper: &mut EarlyStopping,
    mut epoch_fn: impl FnMut(usize) -> Result<f64>,
) -> Result<(usize, StopReason)> {
    for epoch in 0..max_epochs {
        let loss = epoch_fn(epoch)?;
        if stopper.observe(loss) {
            return Ok((epoch + 1, StopReason::EarlyStop));
        }
    }
    Ok((max_epochs, StopReason::MaxEpochs))
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed by the end of this epoch.
    pub step: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    pub val_auc: Option<f64>,
    /// Mean `A_l` per layer over the epoch's real and fake training images.
    pub activation_real: Vec<f64>,
    pub activation_fake: Vec<f64>,
    pub wall_clock_s: f64,
}

/// Training reals plus a fixed validation set of held-out reals and their fakes.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Vec<ImageSample>,
    pub val_pairs: Vec<(ImageSample, ImageSample)>,
}

const VAL_STREAM: u64 = 0x7A1_0000;
const FAKE_STREAM: u64 = 0xFA4E_0000;
const AUG_STREAM: u64 = 0xA06_0000;
const SHUFFLE_STREAM: u64 = 0x5F1_0000;

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = sample_rng(seed ^ a, b);
    rand::RngCore::next_u64(&mut rng)
}

/// Fixed fakes for a set of reals; ids continue after `first_id`.
pub fn synthesize_pairs(reals: &[ImageSample], seed: u64, first_id: usize) -> Result<Vec<(ImageSample, ImageSample)>> {
    reals
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (fake, _) = self_blend_retrying(r, mix(seed, VAL_STREAM, r.id as u64), first_id + i)?;
            Ok((r.clone(), fake))
        })
        .collect()
}

impl TrainingData {
    /// Holds out `val_fraction` of the source groups before any synthesis.
    pub fn split(reals: Vec<ImageSample>, cfg: &TrainingConfig) -> Result<Self> {
        if reals.iter().any(|s| s.label != Label::Real) {
            return Err(KidError::InvalidArgument("training sources must be real".into()));
        }
        let next_id = reals.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
        let (train, val) = split_by_group(reals, cfg.val_fraction, cfg.seed);
        if train.is_empty() {
            return Err(KidError::InvalidArgument("no training sources left after the split".into()));
        }
        let val_pairs = synthesize_pairs(&val, cfg.seed, next_id)?;
        Ok(Self { train, val_pairs })
    }
}

/// Fake-class probabilities for a list of samples.
pub fn score_samples(model: &Model, mode: TrainMode, samples: &[&ImageSample]) -> Result<Vec<f64>> {
    let attn = if mode == TrainMode::Baseline { AttentionMode::Baseline } else { AttentionMode::Injected };
    samples.iter().map(|s| Ok(model.forward(&s.pixels, attn)?.fake_probability())).collect()
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainingConfig,
    pub model: Model,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub step: usize,
    pub stopper: EarlyStopping,
    pub log: Vec<EpochRecord>,
    trainable: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: AdamW,
    pub log: Vec<EpochRecord>,
    pub epochs: usize,
    pub stop: StopReason,
}

impl Trainer {
    pub fn new(cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.backbone.clone(), cfg.seed)?;
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: TrainingConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        if model.config() != &cfg.backbone {
            return Err(KidError::Config("model and training config disagree on the backbone".into()));
        }
        let trainable = model.parameter_partition(cfg.mode)?.trainable_ids(model.params());
        Ok(Self {
            optimizer: AdamW::new(cfg.weight_decay),
            stopper: EarlyStopping::new(cfg.patience),
            cfg,
            model,
            epoch: 0,
            step: 0,
            log: Vec::new(),
            trainable,
        })
    }

    pub fn trainable(&self) -> &[ParamId] {
        &self.trainable
    }

    fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.cfg.batch_size)
    }

    /// Fresh fakes and augmentations for every epoch, replayable from the seed.
    fn epoch_pairs(&self, data: &TrainingData) -> Result<Vec<(ImageSample, ImageSample)>> {
        let seed = self.cfg.seed;
        let mut order: Vec<&ImageSample> = data.train.iter().collect();
        order.shuffle(&mut sample_rng(seed ^ SHUFFLE_STREAM, self.epoch as u64));
        let next_id = data.train.iter().map(|s| s.id).max().unwrap_or(0) + 1;
        order
            .into_iter()
            .enumerate()
            .map(|(i, real)| {
                let key = (self.epoch as u64) << 32 | real.id as u64;
                let source = if self.cfg.augment {
                    augment(real, &mut sample_rng(seed ^ AUG_STREAM, key))?
                } else {
                    real.clone()
                };
                let (fake, _) = self_blend_retrying(&source, mix(seed, FAKE_STREAM, key), next_id + i)?;
                Ok((source, fake))
            })
            .collect()
    }

    fn validate_epoch(&self, data: &TrainingData) -> Result<(Option<LossBreakdown>, Option<f64>)> {
        if data.val_pairs.is_empty() {
            return Ok((None, None));
        }
        let mut sum = LossBreakdown::default();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let samples: Vec<&ImageSample> = data.val_pairs.iter().flat_map(|(r, f)| [r, f]).collect();
        if self.cfg.early_stop_on == EarlyStopOn::ValLoss {
            for (r, f) in &data.val_pairs {
                sum.accumulate(&pair_loss(&self.model, &self.cfg, r, f)?);
            }
        }
        scores.extend(score_samples(&self.model, self.cfg.mode, &samples)?);
        labels.extend(samples.iter().map(|s| s.label as u8));
        let val = (self.cfg.early_stop_on == EarlyStopOn::ValLoss).then(|| sum.scaled(1.0 / data.val_pairs.len() as f64));
        Ok((val, Some(auc(&scores, &labels)?)))
    }

    /// Runs one epoch. On a non-finite loss the model is left as it was at the
    /// start of the offending step and the error is returned.
    pub fn train_epoch(&mut self, data: &TrainingData) -> Result<EpochRecord> {
        let started = Instant::now();
        let total_steps = self.cfg.max_epochs * self.steps_per_epoch(data.train.len());
        let pairs = self.epoch_pairs(data)?;
        let layers = self.cfg.backbone.num_layers;
        let mut epoch_loss = LossBreakdown::default();
        let mut act_real = vec![0.0; layers];
        let mut act_fake = vec![0.0; layers];
        let mut lr = self.cfg.lr_init;
        for batch in pairs.chunks(self.cfg.batch_size) {
            let mut grads: BTreeMap<ParamId, Mat> = BTreeMap::new();
            let mut batch_loss = LossBreakdown::default();
            for (real, fake) in batch {
                let r = pair_step(&self.model, &self.cfg, real, fake)?;
                batch_loss.accumulate(&r.loss);
                for (id, g) in r.grads {
                    match grads.get_mut(&id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            grads.insert(id, g);
                        }
                    }
                }
                for l in 0..r.activation_real.len() {
                    act_real[l] += r.activation_real[l];
                    act_fake[l] += r.activation_fake[l];
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                *g = g.scale(inv);
            }
            if grads.values().any(|g| !g.is_finite()) {
                return Err(KidError::NonFiniteLoss("gradient"));
            }
            lr = lr_at(self.step, total_steps, &self.cfg);
            self.optimizer.step(self.model.params_mut(), &grads, &self.trainable, lr);
            self.step += 1;
            epoch_loss.accumulate(&batch_loss);
        }
        let n = pairs.len() as f64;
        let (val, val_auc) = self.validate_epoch(data)?;
        let record = EpochRecord {
            epoch: self.epoch,
            step: self.step,
            lr,
            train: epoch_loss.scaled(1.0 / n),
            val,
            val_auc,
            activation_real: act_real.iter().map(|a| a / n).collect(),
            activation_fake: act_fake.iter().map(|a| a / n).collect(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.log.push(record.clone());
        Ok(record)
    }

    /// Trains until early stopping, `max_epochs`, or divergence. After a
    /// divergence the model of the last completed epoch is returned.
    pub fn run(mut self, data: &TrainingData, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        let mut last_good = (self.model.clone(), self.optimizer.clone());
        let mut stop = StopReason::MaxEpochs;
        while self.epoch < self.cfg.max_epochs {
            match self.train_epoch(data) {
                Ok(rec) => {
                    on_epoch(&rec);
                    last_good = (self.model.clone(), self.optimizer.clone());
                    let monitored = match (self.cfg.early_stop_on, &rec.val) {
                        (EarlyStopOn::ValLoss, Some(v)) => v.total,
                        _ => rec.train.total,
                    };
                    if self.stopper.observe(monitored) {
                        stop = StopReason::EarlyStop;
                        break;
                    }
                }
                Err(e @ (KidError::NonFiniteLoss(_) | KidError::NonFinite { .. })) => {
                    (self.model, self.optimizer) = last_good;
                    return Ok(TrainOutcome {
                        model: self.model,
                        optimizer: self.optimizer,
                        epochs: self.epoch,
                        log: self.log,
                        stop: StopReason::Diverged(e.to_string()),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(TrainOutcome { model: self.model, optimizer: self.optimizer, epochs: self.epoch, log: self.log, stop })
    }
}

/// Splits `reals`, builds a model from the config seed and trains it.
pub fn train(cfg: &TrainingConfig, reals: Vec<ImageSample>, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let data = TrainingData::split(reals, cfg)?;
    Trainer::new(cfg.clone())?.run(&data, on_epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Convergence {
    Reached { steps_injected: usize, steps_full: usize, ratio: f64 },
    Unreachable { injected_reached: bool, full_reached: bool },
}

/// Training-loss level at which convergence speed is compared: the
/// cross-entropy of a detector that always answers one half.
pub const CONVERGENCE_LOSS: f64 = std::f64::consts::LN_2;

/// Optimizer steps at the end of the first epoch whose training loss is at or
/// below `threshold`.
pub fn steps_to_threshold(log: &[EpochRecord], threshold: f64) -> Option<usize> {
    log.iter().find(|r| r.train.total <= threshold).map(|r| r.step)
}

/// `steps_full / steps_injected`; unreachable if either run never gets there.
pub fn convergence_report(injected: &[EpochRecord], full: &[EpochRecord], threshold: f64) -> Convergence {
    match (steps_to_threshold(injected, threshold), steps_to_threshold(full, threshold)) {
        (Some(i), Some(f)) => Convergence::Reached { steps_injected: i, steps_full: f, ratio: f as f64 / i as f64 },
        (i, f) => Convergence::Unreachable { injected_reached: i.is_some(), full_reached: f.is_some() },
    }
}
