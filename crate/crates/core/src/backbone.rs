//! ViT-style backbone with I-MSA blocks and the optional localization stream.
//!
//! Layout: non-overlapping patch projection, class token, learned positional
//! embedding, `L` pre-norm transformer blocks, final norm, linear head on the
//! class token. The localization stream shares each layer's correlation but
//! nothing else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{imsa_node, AttentionVars, AuthenticityCorrelation, InjectionWeights};
use crate::config::BackboneConfig;
use crate::error::{KidError, Result};
use crate::graph::{Graph, Var};
use crate::img::Image;
use crate::localization::{self, HeadVars, LocalizationFeatures, UpdateVars};
use crate::params::{ParamId, ParamStore, ParameterPartition, TrainMode};
use crate::tensor::Mat;

/// Token features entering (or leaving) a layer: class token first, then patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub tokens: Mat,
    pub layer_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Baseline,
    Injected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub injected: bool,
    pub localization: bool,
}

impl ForwardOptions {
    pub const BASELINE: Self = Self { injected: false, localization: false };
    pub const INJECTED: Self = Self { injected: true, localization: false };
    pub const TRAINING: Self = Self { injected: true, localization: true };
}

/// Graph handles produced by [`Model::build`].
pub struct ForwardTrace {
    pub logits: Var,
    /// `[layer][head]` correlation nodes; empty in baseline mode.
    pub corr: Vec<Vec<Var>>,
    /// Final normalized tokens, `(1+N) × D`.
    pub final_tokens: Var,
    /// Per-patch localization scores, `N × 1`.
    pub loc_scores: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: [f64; 2],
    pub per_layer_corr: Vec<AuthenticityCorrelation>,
    pub final_patch_features: PatchFeatures,
}

impl ForwardOutput {
    /// Softmax probability of the fake class.
    pub fn fake_probability(&self) -> f64 {
        let [a, b] = self.logits;
        crate::graph::sigmoid(b - a)
    }

    /// Final-layer class token feature.
    pub fn class_feature(&self) -> &[f64] {
        self.final_patch_features.tokens.row(0)
    }
}

#[derive(Debug, Clone)]
struct BlockIds {
    norm1: (ParamId, ParamId),
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    w_qbar: ParamId,
    w_kbar: ParamId,
    norm2: (ParamId, ParamId),
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
    loc_norm: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct ModelIds {
    patch_w: ParamId,
    patch_b: ParamId,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<BlockIds>,
    final_norm: (ParamId, ParamId),
    head_w: ParamId,
    head_b: ParamId,
    loc_patch_w: ParamId,
    loc_patch_b: ParamId,
    loc_w1: ParamId,
    loc_b1: ParamId,
    loc_w2: ParamId,
    loc_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: BackboneConfig,
    params: ParamStore,
    ids: ModelIds,
    position_encoding: Mat,
}

/// Pixel normalization applied before patch embedding: `[0, 1]` maps to `[-1, 1]`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.5;

/// Patches of `image` in the normalized range the embeddings consume.
pub fn embedding_input(image: &Image, patch_size: usize) -> Result<Mat> {
    Ok(patchify(image, patch_size)?.map(|v| (v - PIXEL_MEAN) / PIXEL_STD))
}

/// Splits an image into row-major non-overlapping patches, one flattened patch per row.
pub fn patchify(image: &Image, patch_size: usize) -> Result<Mat> {
    if patch_size == 0 || image.width() % patch_size != 0 || image.height() % patch_size != 0 {
        return Err(KidError::Shape(format!(
            "{}x{} image is not divisible into {patch_size}px patches",
            image.width(),
            image.height()
        )));
    }
    let (gw, gh) = (image.width() / patch_size, image.height() / patch_size);
    let dim = patch_size * patch_size * 3;
    let mut out = Mat::zeros(gw * gh, dim);
    for py in 0..gh {
        for px in 0..gw {
            let row = out.row_mut(py * gw + px);
            let mut i = 0;
            for y in py * patch_size..(py + 1) * patch_size {
                for x in px * patch_size..(px + 1) * patch_size {
                    row[i..i + 3].copy_from_slice(&image.get(x, y));
                    i += 3;
                }
            }
        }
    }
    Ok(out)
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("positive std");
    Mat::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl Model {
    /// Randomly initialized backbone with zero knowledge-query weights.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let hidden = config.mlp_hidden();
        let pd = config.patch_dim();
        let t = config.num_tokens();
        let lecun = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut p = ParamStore::new();

        let patch_w = p.insert("cls.patch_embed.weight", normal(&mut rng, pd, d, lecun(pd)));
        let patch_b = p.insert("cls.patch_embed.bias", Mat::zeros(1, d));
        let cls_token = p.insert("cls.token", normal(&mut rng, 1, d, 0.02));
        let pos_embed = p.insert("cls.pos_embed", normal(&mut rng, t, d, 0.02));

        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut ins = |name: &str, m: Mat| p.insert(format!("blocks.{l}.{name}"), m);
            let norm1 = (ins("norm1.gain", Mat::filled(1, d, 1.0)), ins("norm1.bias", Mat::zeros(1, d)));
            let w_q = ins("attn.w_q", normal(&mut rng, d, d, lecun(d)));
            let b_q = ins("attn.b_q", Mat::zeros(1, d));
            let w_k = ins("attn.w_k", normal(&mut rng, d, d, lecun(d)));
            let b_k = ins("attn.b_k", Mat::zeros(1, d));
            let w_v = ins("attn.w_v", normal(&mut rng, d, d, lecun(d)));
            let b_v = ins("attn.b_v", Mat::zeros(1, d));
            let w_o = ins("attn.w_o", normal(&mut rng, d, d, lecun(d)));
            let b_o = ins("attn.b_o", Mat::zeros(1, d));
            let w_qbar = ins("attn.w_qbar", Mat::zeros(d, d));
            let w_kbar = ins("attn.w_kbar", normal(&mut rng, d, d, lecun(d)));
            let norm2 = (ins("norm2.gain", Mat::filled(1, d, 1.0)), ins("norm2.bias", Mat::zeros(1, d)));
            let mlp_w1 = ins("mlp.w1", normal(&mut rng, d, hidden, lecun(d)));
            let mlp_b1 = ins("mlp.b1", Mat::zeros(1, hidden));
            let mlp_w2 = ins("mlp.w2", normal(&mut rng, hidden, d, lecun(hidden)));
            let mlp_b2 = ins("mlp.b2", Mat::zeros(1, d));
            let loc_norm = (ins("loc_norm.gain", Mat::filled(1, d, 1.0)), ins("loc_norm.bias", Mat::zeros(1, d)));
            blocks.push(BlockIds {
                norm1, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, w_qbar, w_kbar, norm2, mlp_w1, mlp_b1, mlp_w2, mlp_b2, loc_norm,
            });
        }

        let final_norm = (p.insert("final_norm.gain", Mat::filled(1, d, 1.0)), p.insert("final_norm.bias", Mat::zeros(1, d)));
        let head_w = p.insert("head.weight", normal(&mut rng, d, 2, 0.02));
        let head_b = p.insert("head.bias", Mat::zeros(1, 2));
        let loc_patch_w = p.insert("loc.patch_embed.weight", normal(&mut rng, pd, d, lecun(pd)));
        let loc_patch_b = p.insert("loc.patch_embed.bias", Mat::zeros(1, d));
        let loc_w1 = p.insert("loc.head.w1", normal(&mut rng, d, d, lecun(d)));
        let loc_b1 = p.insert("loc.head.b1", Mat::zeros(1, d));
        let loc_w2 = p.insert("loc.head.w2", normal(&mut rng, d, 1, lecun(d)));
        let loc_b2 = p.insert("loc.head.b2", Mat::zeros(1, 1));

        let ids = ModelIds {
            patch_w, patch_b, cls_token, pos_embed, blocks, final_norm, head_w, head_b,
            loc_patch_w, loc_patch_b, loc_w1, loc_b1, loc_w2, loc_b2,
        };
        let position_encoding = localization::sinusoidal_position_encoding(config.grid_side(), d);
        Ok(Self { config, params: p, ids, position_encoding })
    }

    /// Rebuilds a model around loaded parameters; every expected name must be present
    /// with the shape the configuration implies.
    pub fn from_params(config: BackboneConfig, loaded: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if loaded.len() != model.params.len() {
            return Err(KidError::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                loaded.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let value = loaded.by_name(&name).map_err(|_| KidError::Checkpoint(format!("missing tensor `{name}`")))?;
            let target = model.params.get_mut(id);
            if target.shape() != value.shape() {
                return Err(KidError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config expects {:?}",
                    value.shape(),
                    target.shape()
                )));
            }
            *target = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn position_encoding(&self) -> &Mat {
        &self.position_encoding
    }

    pub fn parameter_partition(&self, mode: TrainMode) -> Result<ParameterPartition> {
        ParameterPartition::for_mode(&self.params, mode)
    }

    /// Resets every `W_Q̄` to zero, making injected mode equal to baseline mode.
    pub fn zero_injection(&mut self) {
        for b in &self.ids.blocks {
            let w = self.params.get_mut(b.w_qbar);
            *w = Mat::zeros(w.rows(), w.cols());
        }
    }

    /// `(W_Q, W_Q̄)` ids of a layer.
    pub fn query_param_ids(&self, layer: usize) -> (ParamId, ParamId) {
        let b = &self.ids.blocks[layer];
        (b.w_q, b.w_qbar)
    }

    pub fn injection_weights(&self, layer: usize) -> InjectionWeights<'_> {
        let b = &self.ids.blocks[layer];
        InjectionWeights { w_qbar: self.params.get(b.w_qbar), w_kbar: self.params.get(b.w_kbar) }
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.config.image_size;
        if image.width() != s || image.height() != s {
            return Err(KidError::Shape(format!(
                "model expects {s}x{s} images, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    /// Layer-0 token features: projected patches, class token prepended, positions added.
    pub fn patch_embed(&self, image: &Image) -> Result<PatchFeatures> {
        self.check_image(image)?;
        let patches = embedding_input(image, self.config.patch_size)?;
        let emb = patches.matmul(self.params.get(self.ids.patch_w)).add_row(self.params.get(self.ids.patch_b));
        let tokens = Mat::concat_rows(&[self.params.get(self.ids.cls_token), &emb]).add(self.params.get(self.ids.pos_embed));
        Ok(PatchFeatures { tokens, layer_index: 0 })
    }

    /// Initial localization features from the branch's own patch projection.
    pub fn init_localization_features(&self, image: &Image) -> Result<LocalizationFeatures> {
        self.check_image(image)?;
        let patches = embedding_input(image, self.config.patch_size)?;
        let tokens = patches.matmul(self.params.get(self.ids.loc_patch_w)).add_row(self.params.get(self.ids.loc_patch_b));
        Ok(LocalizationFeatures { tokens, layer_index: 0 })
    }

    pub fn loc_head_weights(&self) -> localization::HeadWeights<'_> {
        localization::HeadWeights {
            w1: self.params.get(self.ids.loc_w1),
            b1: self.params.get(self.ids.loc_b1),
            w2: self.params.get(self.ids.loc_w2),
            b2: self.params.get(self.ids.loc_b2),
        }
    }

    pub fn loc_norm_weights(&self, layer: usize) -> (&Mat, &Mat) {
        let (g, b) = self.ids.blocks[layer].loc_norm;
        (self.params.get(g), self.params.get(b))
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(id, self.params.get(id).clone())
    }

    /// Records the forward pass of one image on `g`.
    pub fn build(&self, g: &mut Graph, image: &Image, opts: ForwardOptions) -> Result<ForwardTrace> {
        self.check_image(image)?;
        if opts.localization && !opts.injected {
            return Err(KidError::InvalidArgument("the localization branch needs the injection pathway".into()));
        }
        let cfg = &self.config;
        let patches = g.constant(embedding_input(image, cfg.patch_size)?);

        let w = self.p(g, self.ids.patch_w);
        let b = self.p(g, self.ids.patch_b);
        let emb = g.matmul(patches, w);
        let emb = g.add_row(emb, b);
        let cls = self.p(g, self.ids.cls_token);
        let tokens = g.concat_rows(&[cls, emb]);
        let pos = self.p(g, self.ids.pos_embed);
        let mut x = g.add(tokens, pos);

        let mut loc = None;
        let mut pe = None;
        if opts.localization {
            let w = self.p(g, self.ids.loc_patch_w);
            let b = self.p(g, self.ids.loc_patch_b);
            let l0 = g.matmul(patches, w);
            loc = Some(g.add_row(l0, b));
            pe = Some(g.constant(self.position_encoding.clone()));
        }

        let mut corr = Vec::with_capacity(cfg.num_layers);
        for (layer, ids) in self.ids.blocks.iter().enumerate() {
            let g1 = self.p(g, ids.norm1.0);
            let b1 = self.p(g, ids.norm1.1);
            let n1 = g.layer_norm(x, g1, b1);
            let vars = AttentionVars {
                w_q: self.p(g, ids.w_q),
                b_q: self.p(g, ids.b_q),
                w_k: self.p(g, ids.w_k),
                b_k: self.p(g, ids.b_k),
                w_v: self.p(g, ids.w_v),
                b_v: self.p(g, ids.b_v),
                w_o: self.p(g, ids.w_o),
                b_o: self.p(g, ids.b_o),
                w_qbar: if opts.injected { Some(self.p(g, ids.w_qbar)) } else { None },
            };
            let attn = imsa_node(g, n1, &vars, cfg.num_heads);
            if !g.value(attn.out).is_finite() {
                return Err(KidError::NonFinite { layer, stage: "attention" });
            }
            x = g.add(x, attn.out);

            let g2 = self.p(g, ids.norm2.0);
            let b2 = self.p(g, ids.norm2.1);
            let n2 = g.layer_norm(x, g2, b2);
            let w1 = self.p(g, ids.mlp_w1);
            let bb1 = self.p(g, ids.mlp_b1);
            let w2 = self.p(g, ids.mlp_w2);
            let bb2 = self.p(g, ids.mlp_b2);
            let h = g.matmul(n2, w1);
            let h = g.add_row(h, bb1);
            let h = g.gelu(h);
            let h = g.matmul(h, w2);
            let h = g.add_row(h, bb2);
            x = g.add(x, h);
            if !g.value(x).is_finite() {
                return Err(KidError::NonFinite { layer, stage: "mlp" });
            }

            if let (Some(l), Some(pe)) = (loc, pe) {
                let vars = UpdateVars {
                    norm_gain: self.p(g, ids.loc_norm.0),
                    norm_bias: self.p(g, ids.loc_norm.1),
                    w_kbar: self.p(g, ids.w_kbar),
                };
                let next = localization::update_node(g, l, &attn.corr, pe, &vars);
                if !g.value(next).is_finite() {
                    return Err(KidError::NonFinite { layer, stage: "localization" });
                }
                loc = Some(next);
            }
            corr.push(attn.corr);
        }

        let fg = self.p(g, self.ids.final_norm.0);
        let fb = self.p(g, self.ids.final_norm.1);
        let final_tokens = g.layer_norm(x, fg, fb);
        let cls = g.rows(final_tokens, 0, 1);
        let hw = self.p(g, self.ids.head_w);
        let hb = self.p(g, self.ids.head_b);
        let logits = g.matmul(cls, hw);
        let logits = g.add_row(logits, hb);

        let loc_scores = loc.map(|l| {
            let vars = HeadVars {
                w1: self.p(g, self.ids.loc_w1),
                b1: self.p(g, self.ids.loc_b1),
                w2: self.p(g, self.ids.loc_w2),
                b2: self.p(g, self.ids.loc_b2),
            };
            localization::head_node(g, l, &vars)
        });

        Ok(ForwardTrace { logits, corr, final_tokens, loc_scores })
    }

    /// Inference pass (classification path only).
    pub fn forward(&self, image: &Image, mode: AttentionMode) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let opts = ForwardOptions { injected: mode == AttentionMode::Injected, localization: false };
        let trace = self.build(&mut g, image, opts)?;
        let l = g.value(trace.logits);
        let per_layer_corr = trace
            .corr
            .iter()
            .enumerate()
            .filter(|(_, heads)| !heads.is_empty())
            .map(|(layer, heads)| AuthenticityCorrelation {
                layer_index: layer,
                heads: heads.iter().map(|&h| g.value(h).clone()).collect(),
            })
            .collect();
        Ok(ForwardOutput {
            logits: [l[(0, 0)], l[(0, 1)]],
            per_layer_corr,
            final_patch_features: PatchFeatures { tokens: g.value(trace.final_tokens).clone(), layer_index: self.config.num_layers },
        })
    }
}
