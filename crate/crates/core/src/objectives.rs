//! Image-sentence matching, transport alignment loss, and negative sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{
    self, ground_embed, project_image, GroundingModel, TextEncoding, VisionEncoding,
};
use crate::grounding::AlignTarget;
use crate::ot::{
    cosine_cost_matrix, solve, uniform_weights, EmbeddingMatrix, Matrix, SolverConfig,
    TransportMode,
};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which objectives contribute to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "cls")]
    Cls,
    #[serde(rename = "ot")]
    Ot,
    #[serde(rename = "pot")]
    Pot,
    #[serde(rename = "cls+ot")]
    ClsOt,
    #[serde(rename = "cls+pot")]
    ClsPot,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Cls,
        Strategy::Ot,
        Strategy::Pot,
        Strategy::ClsOt,
        Strategy::ClsPot,
    ];

    pub fn uses_cls(self) -> bool {
        matches!(self, Strategy::Cls | Strategy::ClsOt | Strategy::ClsPot)
    }

    pub fn align_mode(self) -> Option<TransportMode> {
        match self {
            Strategy::Cls => None,
            Strategy::Ot | Strategy::ClsOt => Some(TransportMode::Ot),
            Strategy::Pot | Strategy::ClsPot => Some(TransportMode::Pot),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cls => "cls",
            Strategy::Ot => "ot",
            Strategy::Pot => "pot",
            Strategy::ClsOt => "cls+ot",
            Strategy::ClsPot => "cls+pot",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

/// Everything that shapes the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub strategy: Strategy,
    pub w_cls: f64,
    pub w_align: f64,
    /// When set, each item contributes `max(0, margin + D+ - D-)` instead of `D+ - D-`.
    pub hinge_margin: Option<f64>,
    pub solver: SolverConfig,
    pub align_target: AlignTarget,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::ClsPot,
            w_cls: 1.0,
            w_align: 1.0,
            hinge_margin: None,
            solver: SolverConfig::default(),
            align_target: AlignTarget::Ground,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_cls >= 0.0 && self.w_align >= 0.0) || !self.w_cls.is_finite() || !self.w_align.is_finite() {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        if let Some(m) = self.hinge_margin {
            if !m.is_finite() {
                return Err(Error::invalid("hinge margin must be finite"));
            }
        }
        self.solver.validate()
    }
}

/// One (sentence, matching image, non-matching image) triple.
#[derive(Debug, Clone, Copy)]
pub struct PairItem<'a> {
    pub text: &'a TextEncoding,
    pub positive: &'a VisionEncoding,
    pub negative: &'a VisionEncoding,
    pub positive_index: usize,
    pub negative_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PairBatch<'a> {
    pub items: Vec<PairItem<'a>>,
}

impl<'a> PairBatch<'a> {
    pub fn new(items: Vec<PairItem<'a>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("batch must contain at least one item"));
        }
        if let Some(i) = items.iter().position(|it| it.positive_index == it.negative_index) {
            return Err(Error::invalid(format!(
                "item {i}: negative image index equals the positive index"
            )));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The same batch with every item's positive and negative images swapped.
    pub fn swapped(&self) -> Self {
        Self {
            items: self
                .items
                .iter()
                .map(|it| PairItem {
                    text: it.text,
                    positive: it.negative,
                    negative: it.positive,
                    positive_index: it.negative_index,
                    negative_index: it.positive_index,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls_loss: f64,
    pub align_loss: f64,
    pub total: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(head . [v_cls ; t_cls] + bias)`.
pub fn match_predict(v_cls: &[f64], t_cls: &[f64], head: &[f64], bias: f64) -> Result<f64> {
    if head.len() != v_cls.len() + t_cls.len() {
        return Err(Error::invalid(format!(
            "head has length {}, inputs have {} + {}",
            head.len(),
            v_cls.len(),
            t_cls.len()
        )));
    }
    let logit = head.iter().zip(v_cls.iter().chain(t_cls)).map(|(w, x)| w * x).sum::<f64>() + bias;
    Ok(sigmoid(logit))
}

/// Binary cross-entropy with the clamp contract.
pub fn bce_loss(prob: f64, label: f64) -> Result<f64> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
    }
    if prob.is_nan() {
        return Err(Error::numeric("bce", "prediction is NaN"));
    }
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if label == 1.0 { -p.ln() } else { -(1.0 - p).ln() })
}

/// Uniform draw from `0..dataset_size` excluding `pos_index`.
pub fn sample_negative(pos_index: usize, dataset_size: usize, rng: &mut impl Rng) -> Result<usize> {
    if dataset_size < 2 {
        return Err(Error::invalid(format!(
            "negative sampling needs at least 2 images, got {dataset_size}"
        )));
    }
    if pos_index >= dataset_size {
        return Err(Error::invalid(format!(
            "positive index {pos_index} out of range for {dataset_size} images"
        )));
    }
    let draw = rng.gen_range(0..dataset_size - 1);
    Ok(if draw >= pos_index { draw + 1 } else { draw })
}

/// Cost matrix between projected patches (rows) and the alignment targets of
/// the sentence (cols).
pub(crate) fn alignment_cost_inputs(
    patches: &Matrix,
    ground: &Matrix,
    hidden_final: &Matrix,
    target: AlignTarget,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    match target {
        AlignTarget::Ground => Ok((
            EmbeddingMatrix::new(patches.rows(), patches.cols(), patches.data().to_vec())?,
            EmbeddingMatrix::new(ground.rows(), ground.cols(), ground.data().to_vec())?,
        )),
        AlignTarget::VisualTextual => {
            let pad = hidden_final.cols();
            let width = pad + patches.cols();
            let mut padded = Matrix::zeros(patches.rows(), width);
            for i in 0..patches.rows() {
                padded.row_mut(i)[pad..].copy_from_slice(patches.row(i));
            }
            let t = grounding::visual_textual_embed(hidden_final, ground)?;
            Ok((
                EmbeddingMatrix::new(padded.rows(), width, padded.into_data())?,
                EmbeddingMatrix::new(t.rows(), t.cols(), t.into_data())?,
            ))
        }
    }
}

/// Transport distance between one image and one sentence under `model`.
pub fn transport_distance(
    model: &GroundingModel,
    text: &TextEncoding,
    vision: &VisionEncoding,
    mode: TransportMode,
    solver: &SolverConfig,
    target: AlignTarget,
) -> Result<f64> {
    let ground = ground_embed(model, text)?;
    let (_, patches) = project_image(model, vision)?;
    let (src, tgt) = alignment_cost_inputs(&patches, &ground, &text.final_layer(), target)?;
    let cost = cosine_cost_matrix(&src, &tgt)?;
    let a = uniform_weights(cost.rows())?;
    let b = uniform_weights(cost.cols())?;
    Ok(solve(mode, &cost, &a, &b, solver)?.distance)
}

/// Matching probability for one (image, sentence) pair.
pub fn match_probability(model: &GroundingModel, text: &TextEncoding, vision: &VisionEncoding) -> Result<f64> {
    let ground = ground_embed(model, text)?;
    let (v_cls, _) = project_image(model, vision)?;
    let t_cls = grounding::visual_textual_embed(&text.final_layer(), &ground)?;
    match_predict(&v_cls, t_cls.row(0), &model.head, model.head_bias)
}

/// Mean over items of `D(v+, t) - D(v-, t)`; the classification part is zero.
pub fn alignment_loss(
    batch: &PairBatch<'_>,
    model: &GroundingModel,
    solver: &SolverConfig,
    mode: TransportMode,
    target: AlignTarget,
) -> Result<LossReport> {
    let cfg = ObjectiveConfig {
        strategy: match mode {
            TransportMode::Ot => Strategy::Ot,
            TransportMode::Pot => Strategy::Pot,
        },
        w_cls: 0.0,
        w_align: 1.0,
        hinge_margin: None,
        solver: *solver,
        align_target: target,
    };
    combined_loss(batch, model, &cfg)
}

/// Weighted sum of the objectives selected by `cfg.strategy`.
pub fn combined_loss(batch: &PairBatch<'_>, model: &GroundingModel, cfg: &ObjectiveConfig) -> Result<LossReport> {
    Ok(grounding::run_graph(model, batch, cfg, grounding::PlanSource::Solve, false)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn predict_examples() {
        assert_eq!(match_predict(&[1.0], &[2.0], &[0.0, 0.0], 0.0).unwrap(), 0.5);
        let p = match_predict(&[1.0], &[2.0], &[0.0, 0.0], 30.0).unwrap();
        assert!(p > 1.0 - 1e-12 && p.is_finite());
        assert_eq!(match_predict(&[1.0], &[-1.0], &[1.0, 1.0], 0.0).unwrap(), 0.5);
        assert!(match_predict(&[1.0], &[-1.0], &[1.0], 0.0).is_err());
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5, 1.0).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0).unwrap() - ln2).abs() < 1e-15);
        let tiny = bce_loss(1.0 - 1e-12, 1.0).unwrap();
        assert!(tiny.is_finite() && (tiny - 1e-12).abs() < 1e-15);
        assert!((bce_loss(0.9, 0.0).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(bce_loss(1.0, 0.0).unwrap().is_finite());
        assert!(matches!(bce_loss(0.5, 0.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn negative_sampling_forced_and_reproducible() {
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            assert_eq!(sample_negative(0, 2, &mut rng).unwrap(), 1);
        }
        let draw = |seed| {
            let mut rng = stream(seed, 1);
            (0..20).map(|i| sample_negative(i % 10, 10, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert!(draw(5).iter().enumerate().all(|(i, &n)| n != i % 10));
        assert!(sample_negative(0, 1, &mut rng).is_err());
        assert!(sample_negative(4, 3, &mut rng).is_err());
    }

    #[test]
    fn negative_sampling_is_uniform() {
        let mut rng = stream(11, 2);
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_negative(2, 5, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        for (i, &c) in counts.iter().enumerate().filter(|(i, _)| *i != 2) {
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.01, "index {i}: {f}");
        }
        // chi-square with 3 dof; 16.27 is the 0.999 quantile
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn strategy_parsing() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("cls+sinkhorn".parse::<Strategy>().is_err());
        assert!(Strategy::ClsPot.uses_cls());
        assert_eq!(Strategy::Ot.align_mode(), Some(TransportMode::Ot));
        assert_eq!(Strategy::Cls.align_mode(), None);
    }
}
