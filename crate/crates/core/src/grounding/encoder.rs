//! Frozen encoder interfaces and deterministic stand-ins for them.
//!
//! The stubs only need to behave like contextual encoders: deterministic in
//! their inputs and seed, bounded, and sensitive to token order.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ot::Matrix;
use crate::rng::{stream, tags};

/// Hidden states of every encoder layer for one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    layers: usize,
    tokens: usize,
    dim: usize,
    /// Layer-major: `data[(l * tokens + i) * dim + k]`.
    data: Vec<f64>,
}

impl TextEncoding {
    pub fn new(layers: usize, tokens: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || tokens == 0 || dim == 0 {
            return Err(Error::invalid("text encoding needs L, n, d_h >= 1"));
        }
        if data.len() != layers * tokens * dim {
            return Err(Error::invalid(format!(
                "text encoding {layers}x{tokens}x{dim} needs {} values, got {}",
                layers * tokens * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("text encoding has non-finite values"));
        }
        Ok(Self {
            layers,
            tokens,
            dim,
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Hidden state of token `token` at 1-based layer `layer`.
    pub fn hidden(&self, layer: usize, token: usize) -> &[f64] {
        let start = ((layer - 1) * self.tokens + token) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Final-layer states, one row per token.
    pub fn final_layer(&self) -> Matrix {
        let start = (self.layers - 1) * self.tokens * self.dim;
        Matrix::new(
            self.tokens,
            self.dim,
            self.data[start..start + self.tokens * self.dim].to_vec(),
        )
        .expect("shape")
    }
}

/// Global feature vector plus one feature row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionEncoding {
    global: Vec<f64>,
    patches: Matrix,
}

impl VisionEncoding {
    pub fn new(global: Vec<f64>, patches: Matrix) -> Result<Self> {
        if patches.rows() == 0 || global.len() != patches.cols() || global.is_empty() {
            return Err(Error::invalid(format!(
                "vision encoding needs >= 1 patch and matching dims (global {}, patches {}x{})",
                global.len(),
                patches.rows(),
                patches.cols()
            )));
        }
        if !patches.is_finite() || global.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vision encoding has non-finite values"));
        }
        Ok(Self { global, patches })
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn patches(&self) -> &Matrix {
        &self.patches
    }

    pub fn dim(&self) -> usize {
        self.global.len()
    }
}

pub trait TextEncoder {
    fn encode(&self, token_ids: &[u32]) -> Result<TextEncoding>;
}

pub trait VisionEncoder {
    fn encode(&self, patch_latents: &Matrix) -> Result<VisionEncoding>;
}

fn uniform_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

/// Neighbor-mixing contextual encoder stand-in.
#[derive(Debug, Clone)]
pub struct StubTextEncoder {
    layers: usize,
    dim: usize,
    seed: u64,
    /// Per layer: `dim x dim` map (row-major, output-major) and offset.
    maps: Vec<(Vec<f64>, Vec<f64>)>,
}

impl StubTextEncoder {
    pub fn new(layers: usize, dim: usize, seed: u64) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::invalid("stub text encoder needs L >= 1 and d_h >= 1"));
        }
        let maps = (0..layers)
            .map(|l| {
                let mut rng = stream(seed, tags::TEXT_LAYER + l as u64);
                let scale = 0.5 / (dim as f64).sqrt();
                let mut w = uniform_vec(&mut rng, dim * dim, scale);
                for k in 0..dim {
                    w[k * dim + k] += 1.0;
                }
                let c = uniform_vec(&mut rng, dim, 0.1);
                (w, c)
            })
            .collect();
        Ok(Self {
            layers,
            dim,
            seed,
            maps,
        })
    }

    fn token_vector(&self, id: u32) -> Vec<f64> {
        let mut rng = stream(self.seed, tags::TEXT_TOKEN ^ ((id as u64) << 32));
        uniform_vec(&mut rng, self.dim, 1.0)
    }

    fn position_vector(&self, pos: usize) -> Vec<f64> {
        let mut rng = stream(self.seed, tags::TEXT_POSITION ^ ((pos as u64) << 32));
        uniform_vec(&mut rng, self.dim, 0.3)
    }
}

impl TextEncoder for StubTextEncoder {
    fn encode(&self, token_ids: &[u32]) -> Result<TextEncoding> {
        if token_ids.is_empty() {
            return Err(Error::invalid("token sequence is empty"));
        }
        let n = token_ids.len();
        let d = self.dim;
        let mut current: Vec<Vec<f64>> = token_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let pos = self.position_vector(i);
                self.token_vector(id)
                    .iter()
                    .zip(&pos)
                    .map(|(t, p)| t + p)
                    .collect()
            })
            .collect();

        let mut data = Vec::with_capacity(self.layers * n * d);
        for (w, c) in &self.maps {
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let mut own = 0.5;
                let mut mixed = vec![0.0; d];
                for nb in [i.wrapping_sub(1), i + 1] {
                    if nb < n {
                        mixed.iter_mut().zip(&current[nb]).for_each(|(m, x)| *m += 0.25 * x);
                    } else {
                        own += 0.25;
                    }
                }
                mixed.iter_mut().zip(&current[i]).for_each(|(m, x)| *m += own * x);
                let out: Vec<f64> = (0..d)
                    .map(|r| {
                        let z: f64 = w[r * d..(r + 1) * d].iter().zip(&mixed).map(|(a, b)| a * b).sum();
                        (z + c[r]).tanh()
                    })
                    .collect();
                next.push(out);
            }
            for row in &next {
                data.extend_from_slice(row);
            }
            current = next;
        }
        TextEncoding::new(self.layers, n, d, data)
    }
}

/// Seeded affine patch encoder with a pooled global vector.
#[derive(Debug, Clone)]
pub struct StubVisionEncoder {
    latent_dim: usize,
    out_dim: usize,
    patch_map: (Vec<f64>, Vec<f64>),
    global_map: (Vec<f64>, Vec<f64>),
}

impl StubVisionEncoder {
    pub fn new(latent_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("stub vision encoder needs positive dims"));
        }
        let mut rng = stream(seed, tags::VISION_PATCH);
        let patch_map = (
            uniform_vec(&mut rng, out_dim * latent_dim, 1.0 / (latent_dim as f64).sqrt()),
            uniform_vec(&mut rng, out_dim, 0.1),
        );
        let mut rng = stream(seed, tags::VISION_GLOBAL);
        let global_map = (
            uniform_vec(&mut rng, out_dim * out_dim, 1.0 / (out_dim as f64).sqrt()),
            uniform_vec(&mut rng, out_dim, 0.1),
        );
        Ok(Self {
            latent_dim,
            out_dim,
            patch_map,
            global_map,
        })
    }

    fn apply(map: &(Vec<f64>, Vec<f64>), x: &[f64]) -> Vec<f64> {
        let (w, c) = map;
        let cols = x.len();
        c.iter()
            .enumerate()
            .map(|(r, off)| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + off)
            .collect()
    }
}

impl VisionEncoder for StubVisionEncoder {
    fn encode(&self, patch_latents: &Matrix) -> Result<VisionEncoding> {
        if patch_latents.rows() == 0 {
            return Err(Error::invalid("image has no patches"));
        }
        if patch_latents.cols() != self.latent_dim {
            return Err(Error::invalid(format!(
                "patch latents have dim {}, encoder expects {}",
                patch_latents.cols(),
                self.latent_dim
            )));
        }
        let m = patch_latents.rows();
        let mut patches = Matrix::zeros(m, self.out_dim);
        for i in 0..m {
            let out = Self::apply(&self.patch_map, patch_latents.row(i));
            patches.row_mut(i).copy_from_slice(&out);
        }
        let mean: Vec<f64> = patches.col_sums().iter().map(|s| s / m as f64).collect();
        let global = Self::apply(&self.global_map, &mean);
        VisionEncoding::new(global, patches)
    }
}

/// Encodes `token_ids` with a freshly built [`StubTextEncoder`].
pub fn stub_text_encoder(token_ids: &[u32], layers: usize, dim: usize, seed: u64) -> Result<TextEncoding> {
    StubTextEncoder::new(layers, dim, seed)?.encode(token_ids)
}

/// Encodes `patch_latents` with a freshly built [`StubVisionEncoder`].
pub fn stub_visual_encoder(patch_latents: &Matrix, out_dim: usize, seed: u64) -> Result<VisionEncoding> {
    StubVisionEncoder::new(patch_latents.cols(), out_dim, seed)?.encode(patch_latents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linf(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn text_stub_is_deterministic_and_bounded() {
        let a = stub_text_encoder(&[3, 1, 4, 1, 5], 6, 8, 11).unwrap();
        let b = stub_text_encoder(&[3, 1, 4, 1, 5], 6, 8, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 3.0));
        assert_eq!((a.layers(), a.tokens(), a.dim()), (6, 5, 8));
    }

    #[test]
    fn text_stub_distinguishes_ids() {
        let a = stub_text_encoder(&[7], 6, 8, 1).unwrap();
        let b = stub_text_encoder(&[9], 6, 8, 1).unwrap();
        assert!(linf(a.hidden(6, 0), b.hidden(6, 0)) > 0.0);
    }

    #[test]
    fn text_stub_is_order_sensitive() {
        let a = stub_text_encoder(&[7, 9], 6, 8, 1).unwrap();
        let b = stub_text_encoder(&[9, 7], 6, 8, 1).unwrap();
        assert!(linf(a.hidden(6, 0), b.hidden(6, 1)) > 1e-3);
    }

    #[test]
    fn text_stub_rejects_empty() {
        assert!(matches!(stub_text_encoder(&[], 2, 2, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vision_stub_properties() {
        let latents = Matrix::from_rows(&[vec![0.2, -0.4, 1.0], vec![0.2, -0.4, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let enc = stub_visual_encoder(&latents, 5, 3).unwrap();
        assert_eq!(enc.patches().row(0), enc.patches().row(1));
        assert_eq!(enc.dim(), 5);

        let single = Matrix::from_rows(&[vec![0.5, 0.5, -1.0]]).unwrap();
        let encoder = StubVisionEncoder::new(3, 5, 3).unwrap();
        let out = encoder.encode(&single).unwrap();
        let expected = StubVisionEncoder::apply(&encoder.global_map, out.patches().row(0));
        assert_eq!(out.global(), expected.as_slice());

        let other = stub_visual_encoder(&latents, 5, 4).unwrap();
        assert_ne!(enc, other);
        assert!(stub_visual_encoder(&Matrix::zeros(0, 3), 5, 3).is_err());
    }
}
