//! Synthetic scenes whose captions only describe part of the image.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{StubTextEncoder, StubVisionEncoder, TextEncoder, TextEncoding, VisionEncoder, VisionEncoding};
use crate::ot::Matrix;
use crate::rng::{mix, stream, tags};

/// Token id reserved for the sentence-level CLS position.
pub const CLS_TOKEN: u32 = 0;

/// Standard deviation of the per-patch noise around its concept vector.
pub const PATCH_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of concept vectors.
    pub concepts: usize,
    /// Number of training scenes (the held-out split has the same size).
    pub scenes: usize,
    /// Patches per scene.
    pub patches: usize,
    /// Fraction of each scene's concepts named by its caption.
    pub coverage_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            concepts: 16,
            scenes: 64,
            patches: 4,
            coverage_ratio: 0.5,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 4 {
            return Err(Error::invalid(format!("concepts must be >= 4, got {}", self.concepts)));
        }
        if self.scenes < 8 {
            return Err(Error::invalid(format!("scenes must be >= 8, got {}", self.scenes)));
        }
        if self.patches < 2 {
            return Err(Error::invalid(format!("patches must be >= 2, got {}", self.patches)));
        }
        if !(self.coverage_ratio > 0.0 && self.coverage_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "coverage_ratio must lie in (0, 1], got {}",
                self.coverage_ratio
            )));
        }
        Ok(())
    }

    /// Concepts named per caption: `ceil(ratio * patches)`.
    pub fn covered(&self) -> usize {
        ((self.coverage_ratio * self.patches as f64).ceil() as usize).clamp(1, self.patches)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `patches x latent_dim`.
    pub patches: Matrix,
    /// Concept id behind each patch (a multiset).
    pub concepts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    /// `[CLS, concept + 1, ...]`.
    pub tokens: Vec<u32>,
    /// Concept ids named by the caption, in token order.
    pub covered: Vec<usize>,
}

/// Caption `i` describes scene `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: DataConfig,
    /// `concepts x latent_dim`, unit rows.
    pub concepts: Matrix,
    pub scenes: Vec<Scene>,
    pub captions: Vec<Caption>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.concepts.cols()
    }

    /// Number of distinct token ids, CLS included.
    pub fn vocab_size(&self) -> usize {
        self.concepts.rows() + 1
    }
}

/// Training split for `seed`.
pub fn generate_synthetic_dataset(cfg: &DataConfig, latent_dim: usize, seed: u64) -> Result<SyntheticDataset> {
    generate_split(cfg, latent_dim, seed, 0)
}

/// Held-out split: same concept vectors as the training split of `seed`,
/// freshly drawn scenes and captions.
pub fn generate_heldout_dataset(cfg: &DataConfig, latent_dim: usize, seed: u64) -> Result<SyntheticDataset> {
    generate_split(cfg, latent_dim, seed, 1)
}

fn generate_split(cfg: &DataConfig, latent_dim: usize, seed: u64, split: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    if latent_dim == 0 {
        return Err(Error::invalid("latent dimension must be >= 1"));
    }
    let concepts = concept_vectors(cfg.concepts, latent_dim, seed);
    let mut rng = stream(mix(seed, split), tags::DATA);
    let noise = Normal::new(0.0, PATCH_NOISE).expect("positive sigma");
    let covered = cfg.covered();
    let mut scenes = Vec::with_capacity(cfg.scenes);
    let mut captions = Vec::with_capacity(cfg.scenes);
    for _ in 0..cfg.scenes {
        let ids: Vec<usize> = (0..cfg.patches).map(|_| rng.gen_range(0..cfg.concepts)).collect();
        let mut patches = Matrix::zeros(cfg.patches, latent_dim);
        for (p, &c) in ids.iter().enumerate() {
            for (dst, &src) in patches.row_mut(p).iter_mut().zip(concepts.row(c)) {
                *dst = src + noise.sample(&mut rng);
            }
        }
        let chosen: Vec<usize> = sample(&mut rng, cfg.patches, covered).into_iter().map(|p| ids[p]).collect();
        let mut tokens = vec![CLS_TOKEN];
        tokens.extend(chosen.iter().map(|&c| c as u32 + 1));
        scenes.push(Scene { patches, concepts: ids });
        captions.push(Caption { tokens, covered: chosen });
    }
    Ok(SyntheticDataset {
        config: *cfg,
        concepts,
        scenes,
        captions,
    })
}

fn concept_vectors(count: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, tags::CONCEPTS);
    let mut m = Matrix::zeros(count, dim);
    for i in 0..count {
        loop {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                m.row_mut(i).iter_mut().zip(&row).for_each(|(d, v)| *d = v / norm);
                break;
            }
        }
    }
    m
}

/// Frozen encoder outputs for every caption and scene, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSplit {
    pub texts: Vec<TextEncoding>,
    pub images: Vec<VisionEncoding>,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// The stub encoder pair used by the harness.
#[derive(Debug, Clone)]
pub struct Encoders {
    pub text: StubTextEncoder,
    pub vision: StubVisionEncoder,
}

impl Encoders {
    pub fn new(layers: usize, d_h: usize, latent_dim: usize, d_v: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            text: StubTextEncoder::new(layers, d_h, seed)?,
            vision: StubVisionEncoder::new(latent_dim, d_v, seed)?,
        })
    }

    pub fn encode(&self, data: &SyntheticDataset) -> Result<EncodedSplit> {
        Ok(EncodedSplit {
            texts: data
                .captions
                .iter()
                .map(|c| self.text.encode(&c.tokens))
                .collect::<Result<_>>()?,
            images: data
                .scenes
                .iter()
                .map(|s| self.vision.encode(&s.patches))
                .collect::<Result<_>>()?,
        })
    }
}
