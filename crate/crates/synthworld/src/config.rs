use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use spurfinder_core::{split_sentences, LabelHierarchy, LabelId, LabelNode};

use crate::error::WorldError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentSpec {
    pub label: LabelId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: LabelId,
    pub name: String,
    pub parent: LabelId,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// The sentence the captioner emits for this attribute.
    pub phrase: String,
    pub vector: Vec<f64>,
    /// Per-class presence probability; classes not listed use `default_prior`.
    #[serde(default)]
    pub prior: BTreeMap<LabelId, f64>,
    #[serde(default)]
    pub default_prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLink {
    pub attribute: String,
    pub target: LabelId,
    pub weight: f64,
}

/// How the shipped bias weight was fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub label: LabelId,
    pub target: LabelId,
    pub attribute: String,
    pub policy: String,
    pub wanted_ratio: f64,
    pub oracle_ratio: f64,
    pub draws: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dim: usize,
    pub parents: Vec<ParentSpec>,
    pub classes: Vec<ClassSpec>,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub bias_links: Vec<BiasLink>,
    pub noise_sigma: f64,
    pub caption_drop_prob: f64,
    pub generator_wrong_label_prob: f64,
    /// Gaussian noise added to embeddings.
    #[serde(default)]
    pub embed_noise_sigma: f64,
    #[serde(default = "default_fid_dim")]
    pub fid_dim: usize,
    /// Salt mixed into classifier noise; a twin classifier uses another.
    #[serde(default)]
    pub noise_salt: u64,
    /// Reject prompts naming sentences that are not attribute phrases.
    #[serde(default)]
    pub strict_prompts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

fn default_fid_dim() -> usize {
    8
}

fn check_prob(what: &str, p: f64) -> Result<(), WorldError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(WorldError::Config(format!("{what} = {p} is not a probability")));
    }
    Ok(())
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let cfg: WorldConfig = serde_json::from_str(text).map_err(|e| WorldError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorldError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.classes.is_empty() || self.classes.len() > 255 {
            return Err(WorldError::Config("need between 1 and 255 classes".into()));
        }
        if self.attributes.len() > 32 {
            return Err(WorldError::Config("at most 32 attributes".into()));
        }
        for c in &self.classes {
            if c.vector.len() != self.dim {
                return Err(WorldError::Config(format!("class `{}` vector has wrong dimension", c.label)));
            }
        }
        let mut phrases = BTreeSet::new();
        for a in &self.attributes {
            if a.vector.len() != self.dim {
                return Err(WorldError::Config(format!("attribute `{}` vector has wrong dimension", a.name)));
            }
            let norm = split_sentences(&a.phrase);
            if norm.len() != 1 || norm[0] != a.phrase {
                return Err(WorldError::Config(format!(
                    "attribute phrase `{}` must be one normalized sentence",
                    a.phrase
                )));
            }
            if !phrases.insert(a.phrase.clone()) {
                return Err(WorldError::Config(format!("duplicate phrase `{}`", a.phrase)));
            }
            check_prob("default prior", a.default_prior)?;
            for (label, p) in &a.prior {
                self.class_index(label)?;
                check_prob("prior", *p)?;
            }
        }
        for link in &self.bias_links {
            self.attribute_index(&link.attribute)?;
            self.class_index(&link.target)?;
            if !link.weight.is_finite() {
                return Err(WorldError::Config("bias weight must be finite".into()));
            }
        }
        check_prob("caption-drop-prob", self.caption_drop_prob)?;
        check_prob("generator-wrong-label-prob", self.generator_wrong_label_prob)?;
        if !(self.noise_sigma >= 0.0 && self.embed_noise_sigma >= 0.0) {
            return Err(WorldError::Config("noise must be non-negative".into()));
        }
        if self.fid_dim == 0 {
            return Err(WorldError::Config("fid-dim must be positive".into()));
        }
        self.hierarchy()?;
        Ok(())
    }

    /// Parents as roots, classes as their children.
    pub fn hierarchy(&self) -> Result<LabelHierarchy, WorldError> {
        let nodes = self
            .parents
            .iter()
            .map(|p| {
                (
                    p.label.clone(),
                    LabelNode {
                        name: p.name.clone(),
                        parent: None,
                    },
                )
            })
            .chain(self.classes.iter().map(|c| {
                (
                    c.label.clone(),
                    LabelNode {
                        name: c.name.clone(),
                        parent: Some(c.parent.clone()),
                    },
                )
            }));
        LabelHierarchy::from_nodes(nodes.collect::<Vec<_>>()).map_err(|e| WorldError::Config(e.to_string()))
    }

    pub fn class_index(&self, label: &LabelId) -> Result<usize, WorldError> {
        self.classes
            .iter()
            .position(|c| &c.label == label)
            .ok_or_else(|| WorldError::UnknownClass(label.to_string()))
    }

    pub fn class_by_name(&self, name: &str) -> Result<usize, WorldError> {
        let wanted = name.trim().to_lowercase();
        self.classes
            .iter()
            .position(|c| c.name.to_lowercase() == wanted)
            .ok_or_else(|| WorldError::UnknownClass(name.to_string()))
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize, WorldError> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| WorldError::UnknownAttribute(name.to_string()))
    }

    pub fn phrase_index(&self, phrase: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.phrase == phrase)
    }

    pub fn prior(&self, attr: usize, class: usize) -> f64 {
        let a = &self.attributes[attr];
        a.prior
            .get(&self.classes[class].label)
            .copied()
            .unwrap_or(a.default_prior)
    }

    pub fn bias_weight(&self, attribute: &str, target: &LabelId) -> Option<f64> {
        self.bias_links
            .iter()
            .find(|l| l.attribute == attribute && &l.target == target)
            .map(|l| l.weight)
    }

    pub fn set_bias_weight(&mut self, attribute: &str, target: &LabelId, weight: f64) {
        match self
            .bias_links
            .iter_mut()
            .find(|l| l.attribute == attribute && &l.target == target)
        {
            Some(l) => l.weight = weight,
            None => self.bias_links.push(BiasLink {
                attribute: attribute.to_string(),
                target: target.clone(),
                weight,
            }),
        }
    }

    /// The same world seen by a classifier with independent noise.
    pub fn twin(&self, salt: u64) -> WorldConfig {
        let mut c = self.clone();
        c.noise_salt = salt;
        c
    }
}
