//! Backbone pretraining on real faces only, a stand-in for large-scale
//! pretrained weights at a size where none exist.
//!
//! The backbone regresses the generator attributes of procedural faces (colors,
//! lighting, geometry) from its final class token through a throwaway linear
//! head. No forgery is ever shown; the detector starts from this backbone.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{ForwardOptions, Model};
use crate::error::{KidError, Result};
use crate::graph::Graph;
use crate::img::Image;
use crate::optimizer::AdamW;
use crate::params::{ParamId, ParamStore, TrainMode};
use crate::synthesis::{draw_face_with_attributes, sample_rng};
use crate::tensor::Mat;

/// Stream offset keeping pretraining faces disjoint from detector data.
const CORPUS_STREAM: u64 = 0x9_7E7A_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub corpus_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.corpus_size == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(KidError::Config("pretraining needs a corpus, a positive batch size and learning rate".into()));
        }
        Ok(())
    }
}

/// Procedural faces with standardized attribute targets.
pub struct AttributeCorpus {
    pub images: Vec<Image>,
    /// `n × k`, each column zero-mean and unit-variance.
    pub targets: Mat,
}

impl AttributeCorpus {
    pub fn procedural(n: usize, size: usize, seed: u64) -> Self {
        let faces: Vec<_> = (0..n)
            .map(|i| draw_face_with_attributes(size, &mut sample_rng(seed ^ CORPUS_STREAM, i as u64)))
            .collect();
        let k = faces[0].attributes.len();
        let mut targets = Mat::from_fn(n, k, |i, j| faces[i].attributes[j]);
        for j in 0..k {
            let mean = (0..n).map(|i| targets[(i, j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (targets[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt().max(1e-12);
            for i in 0..n {
                targets[(i, j)] = (targets[(i, j)] - mean) / std;
            }
        }
        Self { images: faces.into_iter().map(|f| f.image).collect(), targets }
    }
}

fn readout(model: &Model, outputs: usize, seed: u64) -> ParamStore {
    let d = model.config().embed_dim;
    let mut rng = sample_rng(seed, 0xDEC0);
    let std = (1.0 / d as f64).sqrt();
    let mut store = ParamStore::new();
    store.insert("readout.weight", Mat::from_fn(d, outputs, |_, _| rng.gen_range(-std..std)));
    store.insert("readout.bias", Mat::zeros(1, outputs));
    store
}

/// Mean absolute attribute error of one image, with backbone and readout gradients.
fn image_step(
    model: &Model,
    head: &ParamStore,
    image: &Image,
    target: Mat,
) -> Result<(f64, BTreeMap<ParamId, Mat>, BTreeMap<ParamId, Mat>)> {
    let mut g = Graph::new();
    let trace = model.build(&mut g, image, ForwardOptions::BASELINE)?;
    let cls = g.rows(trace.final_tokens, 0, 1);
    let w = g.constant(head.get(ParamId(0)).clone());
    let b = g.constant(head.get(ParamId(1)).clone());
    let pred = g.matmul(cls, w);
    let pred = g.add_row(pred, b);
    let target = g.constant(target);
    let diff = g.sub(pred, target);
    let loss = g.mean_abs(diff);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(KidError::NonFiniteLoss("attribute regression"));
    }
    let grads = g.backward(loss);
    let mut head_grads = BTreeMap::new();
    head_grads.insert(ParamId(0), grads.wrt(w).cloned().expect("readout weight feeds the loss"));
    head_grads.insert(ParamId(1), grads.wrt(b).cloned().expect("readout bias feeds the loss"));
    Ok((value, grads.into_params(), head_grads))
}

fn accumulate(acc: &mut BTreeMap<ParamId, Mat>, grads: BTreeMap<ParamId, Mat>) {
    for (id, g) in grads {
        match acc.get_mut(&id) {
            Some(a) => a.add_assign(&g),
            None => {
                acc.insert(id, g);
            }
        }
    }
}

/// Trains the classification path (everything a baseline run would update)
/// on attribute regression. Returns the mean loss of each epoch.
pub fn pretrain_backbone(model: &mut Model, corpus: &AttributeCorpus, cfg: &PretrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = corpus.images.len();
    if n == 0 || corpus.targets.rows() != n {
        return Err(KidError::InvalidArgument("pretraining corpus is empty or mislabelled".into()));
    }
    let trainable = model.parameter_partition(TrainMode::Baseline)?.trainable_ids(model.params());
    let mut head = readout(model, corpus.targets.cols(), cfg.seed);
    let head_ids: Vec<ParamId> = head.ids().collect();
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut head_opt = AdamW::new(cfg.weight_decay);
    let total_steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = sample_rng(cfg.seed ^ CORPUS_STREAM, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = BTreeMap::new();
            let mut head_grads = BTreeMap::new();
            for &i in batch {
                let target = Mat::row_vector(corpus.targets.row(i).to_vec());
                let (loss, g, hg) = image_step(model, &head, &corpus.images[i], target)?;
                epoch_loss += loss;
                accumulate(&mut grads, g);
                accumulate(&mut head_grads, hg);
            }
            let inv = 1.0 / batch.len() as f64;
            grads.values_mut().chain(head_grads.values_mut()).for_each(|g| *g = g.scale(inv));
            let t = step as f64 / total_steps.max(1) as f64;
            let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * t).cos());
            opt.step(model.params_mut(), &grads, &trainable, lr);
            head_opt.step(&mut head, &head_grads, &head_ids, lr);
            step += 1;
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(history)
}

/// Fresh randomly initialized backbone for `backbone`, pretrained under `cfg`.
pub fn pretrained_model(backbone: &crate::config::BackboneConfig, cfg: &PretrainConfig) -> Result<(Model, Vec<f64>)> {
    let mut model = Model::new(backbone.clone(), cfg.seed)?;
    let corpus = AttributeCorpus::procedural(cfg.corpus_size, backbone.image_size, cfg.seed);
    let history = pretrain_backbone(&mut model, &corpus, cfg)?;
    Ok((model, history))
}
