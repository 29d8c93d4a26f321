//! Named parameter storage and the trainable/frozen split.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{KidError, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).copied().ok_or_else(|| KidError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Mat> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Mat> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}

/// Which optimizer regime a training run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Knowledge injection: frozen attention, trainable injection pathway.
    Injected,
    /// Same objective as `Injected`, every parameter updated.
    FullFinetune,
    /// Vanilla ViT classifier, every backbone parameter updated.
    Baseline,
}

impl std::str::FromStr for TrainMode {
    type Err = KidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injected" => Ok(Self::Injected),
            "full_finetune" => Ok(Self::FullFinetune),
            "baseline" => Ok(Self::Baseline),
            other => Err(KidError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// What a parameter name refers to inside the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Patch projection, positional embedding, attention QKV/output and MLP weights.
    BackboneWeight,
    ClassToken,
    Norm,
    ClassifierHead,
    KnowledgeQuery,
    KnowledgeKey,
    LocalizationEmbed,
    LocalizationHead,
}

impl ParamKind {
    /// Classifies a parameter name. Unknown names are an error so that every
    /// new parameter must be placed on one side of the freezing policy.
    pub fn classify(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.split('.').collect();
        let kind = match parts.as_slice() {
            ["cls", "patch_embed", "weight" | "bias"] | ["cls", "pos_embed"] => Self::BackboneWeight,
            ["cls", "token"] => Self::ClassToken,
            ["final_norm", "gain" | "bias"] => Self::Norm,
            ["head", "weight" | "bias"] => Self::ClassifierHead,
            ["loc", "patch_embed", "weight" | "bias"] => Self::LocalizationEmbed,
            ["loc", "head", "w1" | "b1" | "w2" | "b2"] => Self::LocalizationHead,
            ["blocks", layer, rest @ ..] if layer.parse::<usize>().is_ok() => match rest {
                ["norm1" | "norm2" | "loc_norm", "gain" | "bias"] => Self::Norm,
                ["attn", "w_q" | "b_q" | "w_k" | "b_k" | "w_v" | "b_v" | "w_o" | "b_o"] => Self::BackboneWeight,
                ["mlp", "w1" | "b1" | "w2" | "b2"] => Self::BackboneWeight,
                ["attn", "w_qbar"] => Self::KnowledgeQuery,
                ["attn", "w_kbar"] => Self::KnowledgeKey,
                _ => return Err(KidError::UnknownParameter(name.to_string())),
            },
            _ => return Err(KidError::UnknownParameter(name.to_string())),
        };
        Ok(kind)
    }

    /// Whether the knowledge-injection regime updates this kind.
    pub fn trainable_under_injection(self) -> bool {
        !matches!(self, Self::BackboneWeight)
    }

    /// Parameters that exist only for the injection pathway or the localization branch.
    pub fn is_injection_only(self) -> bool {
        matches!(self, Self::KnowledgeQuery | Self::KnowledgeKey | Self::LocalizationEmbed | Self::LocalizationHead)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterPartition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

impl ParameterPartition {
    /// Splits every stored parameter according to `mode`.
    pub fn for_mode(store: &ParamStore, mode: TrainMode) -> Result<Self> {
        let mut trainable = BTreeSet::new();
        let mut frozen = BTreeSet::new();
        for (_, name, _) in store.iter() {
            let kind = ParamKind::classify(name)?;
            let train = match mode {
                TrainMode::Injected => kind.trainable_under_injection(),
                TrainMode::FullFinetune => true,
                // loc_norm is a localization-branch norm; unused by the vanilla classifier.
                TrainMode::Baseline => !kind.is_injection_only() && !name.contains(".loc_norm."),
            };
            if train {
                trainable.insert(name.to_string());
            } else {
                frozen.insert(name.to_string());
            }
        }
        Ok(Self { trainable, frozen })
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    /// Trainable ids in store order.
    pub fn trainable_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.iter().filter(|(_, n, _)| self.trainable.contains(*n)).map(|(id, _, _)| id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_rejects_unknown_names() {
        assert!(ParamKind::classify("blocks.0.attn.w_extra").is_err());
        assert!(ParamKind::classify("blocks.x.attn.w_q").is_err());
        assert!(ParamKind::classify("adapter.weight").is_err());
    }

    #[test]
    fn classify_known_names() {
        assert_eq!(ParamKind::classify("blocks.3.attn.w_qbar").unwrap(), ParamKind::KnowledgeQuery);
        assert_eq!(ParamKind::classify("blocks.3.attn.w_q").unwrap(), ParamKind::BackboneWeight);
        assert_eq!(ParamKind::classify("blocks.0.norm2.bias").unwrap(), ParamKind::Norm);
        assert_eq!(ParamKind::classify("cls.pos_embed").unwrap(), ParamKind::BackboneWeight);
        assert_eq!(ParamKind::classify("cls.token").unwrap(), ParamKind::ClassToken);
    }

    #[test]
    fn partition_fails_on_unknown_parameter() {
        let mut store = ParamStore::new();
        store.insert("cls.token", Mat::zeros(1, 2));
        store.insert("mystery", Mat::zeros(1, 2));
        assert!(matches!(
            ParameterPartition::for_mode(&store, TrainMode::Injected),
            Err(KidError::UnknownParameter(n)) if n == "mystery"
        ));
    }
}
