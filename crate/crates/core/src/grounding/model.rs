use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::Matrix;
use crate::rng::{stream, tags};

use super::encoder::{TextEncoding, VisionEncoding};
use super::mlp::MlpParams;

/// What the projected patches are compared against in the transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTarget {
    /// Ground embeddings `g_j` (same width as the projected patches).
    #[default]
    Ground,
    /// Visual-textual embeddings `[h_j ; g_j]`; patches are zero-padded in front.
    VisualTextual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Text hidden width.
    pub d_h: usize,
    /// Visual feature width.
    pub d_v: usize,
    /// Ground embedding width (also the projection width).
    pub d_g: usize,
    /// Number of final encoder layers concatenated per token.
    pub k: usize,
    /// Encoder depth.
    #[serde(rename = "L")]
    pub layers: usize,
    /// MLP hidden width as a multiple of the MLP input width.
    pub hidden_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_h: 16,
            d_v: 16,
            d_g: 8,
            k: 4,
            layers: 6,
            hidden_scale: 2.0,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.d_v == 0 || self.d_g == 0 || self.k == 0 || self.layers == 0 {
            return Err(Error::invalid("model dims must all be >= 1"));
        }
        if self.k > self.layers {
            return Err(Error::invalid(format!(
                "k = {} exceeds encoder depth L = {}",
                self.k, self.layers
            )));
        }
        if !(self.hidden_scale.is_finite() && self.hidden_scale > 0.0) {
            return Err(Error::invalid("hidden_scale must be > 0"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, input: usize) -> usize {
        ((input as f64 * self.hidden_scale).round() as usize).max(1)
    }

    /// Length of the matching-head weight vector.
    pub fn head_len(&self) -> usize {
        self.d_g + self.d_h + self.d_g
    }
}

/// Trainable parameters: grounding MLP, image projection MLP, matching head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingModel {
    pub dims: ModelDims,
    pub vg: MlpParams,
    pub prj: MlpParams,
    pub head: Vec<f64>,
    pub head_bias: f64,
}

/// One gradient tensor per model tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub vg: MlpParams,
    pub prj: MlpParams,
    pub head: Vec<f64>,
    pub head_bias: f64,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "vg.w1", "vg.b1", "vg.w2", "vg.b2", "prj.w1", "prj.b1", "prj.w2", "prj.b2", "head.w", "head.b",
];

macro_rules! tensor_views {
    ($s:expr, $slice:path) => {
        [
            &$s.vg.w1[..],
            &$s.vg.b1[..],
            &$s.vg.w2[..],
            &$s.vg.b2[..],
            &$s.prj.w1[..],
            &$s.prj.b1[..],
            &$s.prj.w2[..],
            &$s.prj.b2[..],
            &$s.head[..],
            $slice(&$s.head_bias),
        ]
    };
}

macro_rules! tensor_views_mut {
    ($s:expr) => {
        [
            &mut $s.vg.w1[..],
            &mut $s.vg.b1[..],
            &mut $s.vg.w2[..],
            &mut $s.vg.b2[..],
            &mut $s.prj.w1[..],
            &mut $s.prj.b1[..],
            &mut $s.prj.w2[..],
            &mut $s.prj.b2[..],
            &mut $s.head[..],
            std::slice::from_mut(&mut $s.head_bias),
        ]
    };
}

impl GroundingModel {
    /// Seeded initialization: uniform weights scaled by fan-in, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = stream(seed, tags::INIT);
        let vg_in = dims.k * dims.d_h;
        let vg = MlpParams::init(vg_in, dims.hidden_for(vg_in), dims.d_g, &mut rng);
        let prj = MlpParams::init(dims.d_v, dims.hidden_for(dims.d_v), dims.d_g, &mut rng);
        let bound = 1.0 / (dims.head_len() as f64).sqrt();
        let head = (0..dims.head_len())
            .map(|_| rand::Rng::gen_range(&mut rng, -bound..=bound))
            .collect();
        Ok(Self {
            dims,
            vg,
            prj,
            head,
            head_bias: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.vg.validate()?;
        self.prj.validate()?;
        let d = &self.dims;
        if self.vg.input != d.k * d.d_h || self.vg.output != d.d_g {
            return Err(Error::invalid("grounding MLP shape does not match dims"));
        }
        if self.prj.input != d.d_v || self.prj.output != d.d_g {
            return Err(Error::invalid("projection MLP shape does not match dims"));
        }
        if self.head.len() != self.prj.output + d.d_h + self.vg.output {
            return Err(Error::invalid("head length does not match dims"));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("model has non-finite parameters"));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&[f64]; 10] {
        tensor_views!(self, std::slice::from_ref)
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        tensor_views_mut!(self)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> GradientSet {
        GradientSet {
            vg: MlpParams::zeros(self.vg.input, self.vg.hidden, self.vg.output),
            prj: MlpParams::zeros(self.prj.input, self.prj.hidden, self.prj.output),
            head: vec![0.0; self.head.len()],
            head_bias: 0.0,
        }
    }
}

impl GradientSet {
    pub fn tensors(&self) -> [&[f64]; 10] {
        tensor_views!(self, std::slice::from_ref)
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        tensor_views_mut!(self)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Concatenates the last `k` hidden states of token `token`.
pub(crate) fn stacked_hidden(text: &TextEncoding, k: usize, token: usize) -> Vec<f64> {
    let top = text.layers();
    let mut out = Vec::with_capacity(k * text.dim());
    for layer in top + 1 - k..=top {
        out.extend_from_slice(text.hidden(layer, token));
    }
    out
}

/// Ground embedding of every token, `n x d_g`.
pub fn ground_embed(model: &GroundingModel, text: &TextEncoding) -> Result<Matrix> {
    let k = model.dims.k;
    if k > text.layers() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available encoder layers",
            text.layers()
        )));
    }
    if text.dim() * k != model.vg.input {
        return Err(Error::invalid(format!(
            "text hidden width {} does not match the grounding MLP input {}",
            text.dim(),
            model.vg.input
        )));
    }
    let mut out = Matrix::zeros(text.tokens(), model.vg.output);
    for i in 0..text.tokens() {
        let g = model.vg.forward(&stacked_hidden(text, k, i))?;
        out.row_mut(i).copy_from_slice(&g);
    }
    Ok(out)
}

/// Row-wise `[h_i ; g_i]`.
pub fn visual_textual_embed(hidden_final: &Matrix, ground: &Matrix) -> Result<Matrix> {
    if hidden_final.rows() != ground.rows() {
        return Err(Error::invalid(format!(
            "row mismatch: {} hidden rows vs {} ground rows",
            hidden_final.rows(),
            ground.rows()
        )));
    }
    let width = hidden_final.cols() + ground.cols();
    let mut out = Matrix::zeros(hidden_final.rows(), width);
    for i in 0..hidden_final.rows() {
        let row = out.row_mut(i);
        row[..hidden_final.cols()].copy_from_slice(hidden_final.row(i));
        row[hidden_final.cols()..].copy_from_slice(ground.row(i));
    }
    Ok(out)
}

/// Projects the global vector and every patch through the projection MLP.
pub fn project_image(model: &GroundingModel, vision: &VisionEncoding) -> Result<(Vec<f64>, Matrix)> {
    if vision.dim() != model.prj.input {
        return Err(Error::invalid(format!(
            "visual width {} does not match the projection input {}",
            vision.dim(),
            model.prj.input
        )));
    }
    let global = model.prj.forward(vision.global())?;
    let patches = vision.patches();
    let mut out = Matrix::zeros(patches.rows(), model.prj.output);
    for i in 0..patches.rows() {
        out.row_mut(i).copy_from_slice(&model.prj.forward(patches.row(i))?);
    }
    Ok((global, out))
}
