use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spurfinder_core::{Caption, ContentHash, LabelHierarchy, LabelId};

use crate::config::WorldConfig;
use crate::error::WorldError;
use crate::image::{decode, render, Latent};

/// Stand-in for log(0) when a caption claims an absent attribute.
pub const LOG_FLOOR: f64 = -1e9;

pub const CLUSTER_SPACE: &str = "cluster";
pub const FID_SPACE: &str = "fid";

fn keyed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    ChaCha8Rng::from_seed(*ContentHash::of(&buf).as_bytes())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ln_or_floor(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_FLOOR
    }
}

/// A prompt resolved against the world: the class and the attributes its
/// sentences force on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub class: usize,
    pub forced: u32,
    pub unknown: Vec<String>,
}

/// The synthetic model triad. Every method is a pure function of its
/// inputs and the immutable config.
#[derive(Debug, Clone)]
pub struct World {
    cfg: WorldConfig,
    hierarchy: LabelHierarchy,
    fid_projection: Vec<Vec<f64>>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        cfg.validate()?;
        let hierarchy = cfg.hierarchy()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0xF1D);
        let scale = 1.0 / (cfg.dim as f64).sqrt();
        let fid_projection = (0..cfg.fid_dim)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect()
            })
            .collect();
        Ok(World {
            cfg,
            hierarchy,
            fid_projection,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hierarchy
    }

    pub fn label(&self, class: usize) -> &LabelId {
        &self.cfg.classes[class].label
    }

    pub fn parse_prompt(&self, prompt: &str) -> Result<ParsedPrompt, WorldError> {
        let caption = Caption::parse(prompt).map_err(|e| WorldError::Prompt(e.to_string()))?;
        let (name, _) = caption.base_parts().map_err(|e| WorldError::Prompt(e.to_string()))?;
        let class = self.cfg.class_by_name(&name)?;
        let mut forced = 0u32;
        let mut unknown = Vec::new();
        for s in caption.sentences() {
            match self.cfg.phrase_index(s) {
                Some(i) => forced |= 1 << i,
                None if self.cfg.strict_prompts => return Err(WorldError::UnknownPhrase(s.clone())),
                None => {
                    tracing::warn!(sentence = %s, "ignoring unknown attribute phrase");
                    unknown.push(s.clone());
                }
            }
        }
        Ok(ParsedPrompt { class, forced, unknown })
    }

    /// Draws the latent of image `index` for a parsed prompt.
    pub fn sample_latent(&self, parsed: &ParsedPrompt, prompt: &str, seed: u64, index: u32) -> Latent {
        let mut rng = keyed_rng(&[b"generate", prompt.as_bytes(), &seed.to_le_bytes(), &index.to_le_bytes()]);
        let mut attributes = 0u32;
        for a in 0..self.cfg.attributes.len() {
            let u: f64 = rng.random();
            if parsed.forced >> a & 1 == 1 || u < self.cfg.prior(a, parsed.class) {
                attributes |= 1 << a;
            }
        }
        let mut class = parsed.class;
        let u: f64 = rng.random();
        if u < self.cfg.generator_wrong_label_prob {
            class = rng.random_range(0..self.cfg.classes.len());
        }
        Latent {
            class: class as u8,
            attributes,
            noise_seed: rng.next_u64(),
        }
    }

    pub fn generate(&self, prompt: &str, n: u32, seed: u64) -> Result<Vec<(Latent, Vec<u8>)>, WorldError> {
        let parsed = self.parse_prompt(prompt)?;
        Ok((0..n)
            .map(|i| {
                let l = self.sample_latent(&parsed, prompt, seed, i);
                (l, render(l))
            })
            .collect())
    }

    pub fn decode(&self, png: &[u8]) -> Result<Latent, WorldError> {
        let l = decode(png)?;
        let n_attr = self.cfg.attributes.len();
        let stray = if n_attr >= 32 { 0 } else { l.attributes >> n_attr };
        if l.class as usize >= self.cfg.classes.len() || stray != 0 {
            return Err(WorldError::Undecodable("latent outside this world".into()));
        }
        Ok(l)
    }

    /// c_true plus the vectors of every present attribute.
    fn content_vector(&self, l: &Latent) -> Vec<f64> {
        let mut v = self.cfg.classes[l.class as usize].vector.clone();
        for (i, a) in self.cfg.attributes.iter().enumerate() {
            if l.has(i) {
                for (x, y) in v.iter_mut().zip(&a.vector) {
                    *x += y;
                }
            }
        }
        v
    }

    /// Unsorted class scores for an image.
    pub fn class_scores(&self, hash: &ContentHash, l: &Latent) -> Vec<f64> {
        let content = self.content_vector(l);
        self.cfg
            .classes
            .iter()
            .enumerate()
            .map(|(y, c)| {
                let mut s = dot(&c.vector, &content);
                for link in &self.cfg.bias_links {
                    if link.target == c.label {
                        let a = self.cfg.attribute_index(&link.attribute).expect("validated link");
                        if l.has(a) {
                            s += link.weight;
                        }
                    }
                }
                if self.cfg.noise_sigma > 0.0 {
                    let mut rng = keyed_rng(&[
                        b"classify",
                        hash.as_bytes(),
                        &(y as u64).to_le_bytes(),
                        &self.cfg.noise_salt.to_le_bytes(),
                    ]);
                    s += self.cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                }
                s
            })
            .collect()
    }

    pub fn classify(&self, png: &[u8], k: usize) -> Result<Vec<(LabelId, f64)>, WorldError> {
        let n = self.cfg.classes.len();
        if k == 0 || k > n {
            return Err(WorldError::TooManyLabels { k, classes: n });
        }
        let l = self.decode(png)?;
        let scores = self.class_scores(&ContentHash::of(png), &l);
        let mut ranked: Vec<(LabelId, f64)> = self.cfg.classes.iter().map(|c| c.label.clone()).zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Prefix plus the phrases of present attributes, each dropped with
    /// caption-drop-prob, in attribute order, at most `max_sentences`.
    pub fn caption(&self, png: &[u8], prefix: &str, max_sentences: usize) -> Result<String, WorldError> {
        let l = self.decode(png)?;
        let hash = ContentHash::of(png);
        let mut out = prefix.to_string();
        let mut kept = 0;
        for (i, a) in self.cfg.attributes.iter().enumerate() {
            if kept == max_sentences {
                break;
            }
            if !l.has(i) {
                continue;
            }
            let mut rng = keyed_rng(&[b"caption", hash.as_bytes(), &(i as u64).to_le_bytes()]);
            let u: f64 = rng.random();
            if u < self.cfg.caption_drop_prob {
                continue;
            }
            out.push(' ');
            out.push_str(&a.phrase);
            kept += 1;
        }
        Ok(out)
    }

    /// Log-likelihood of the caption's sentence set under the drop model.
    pub fn score(&self, png: &[u8], caption: &str) -> Result<f64, WorldError> {
        let l = self.decode(png)?;
        let parsed = Caption::parse(caption).map_err(|e| WorldError::Prompt(e.to_string()))?;
        let mut mentioned = 0u32;
        let mut ll = 0.0;
        let mut seen = std::collections::BTreeSet::new();
        for s in parsed.sentences() {
            if !seen.insert(s.as_str()) {
                continue;
            }
            match self.cfg.phrase_index(s) {
                Some(i) if l.has(i) => mentioned |= 1 << i,
                _ => ll += LOG_FLOOR,
            }
        }
        let d = self.cfg.caption_drop_prob;
        for i in 0..self.cfg.attributes.len() {
            if l.has(i) {
                ll += if mentioned >> i & 1 == 1 {
                    ln_or_floor(1.0 - d)
                } else {
                    ln_or_floor(d)
                };
            }
        }
        Ok(ll)
    }

    pub fn embed(&self, png: &[u8], space: &str) -> Result<Vec<f64>, WorldError> {
        let l = self.decode(png)?;
        let content = self.content_vector(&l);
        let mut v = match space {
            CLUSTER_SPACE => content,
            FID_SPACE => self.fid_projection.iter().map(|row| dot(row, &content)).collect(),
            other => return Err(WorldError::UnknownSpace(other.to_string())),
        };
        if self.cfg.embed_noise_sigma > 0.0 {
            let hash = ContentHash::of(png);
            let mut rng = keyed_rng(&[b"embed", hash.as_bytes(), space.as_bytes()]);
            for x in v.iter_mut() {
                *x += self.cfg.embed_noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(v)
    }

    pub fn embedding_dim(&self, space: &str) -> Option<usize> {
        match space {
            CLUSTER_SPACE => Some(self.cfg.dim),
            FID_SPACE => Some(self.cfg.fid_dim),
            _ => None,
        }
    }
}
