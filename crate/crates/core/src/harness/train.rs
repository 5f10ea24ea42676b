//! Training loop, held-out evaluation, and the strategy grid.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{ground_embed, project_image, run_graph, GroundingModel, ModelDims, PlanSource};
use crate::objectives::{
    alignment_cost_inputs, match_probability, sample_negative, ObjectiveConfig, PairBatch, PairItem, Strategy,
};
use crate::ot::{cosine_cost_matrix, solve, uniform_weights, TransportMode};
use crate::rng::{stream, tags};

use super::data::EncodedSplit;
use super::optim::{adamw_step, AdamWHyper, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            init: 1,
            train: 2,
        }
    }
}

impl Seeds {
    /// All three streams derived from one seed.
    pub fn from_global(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: ModelDims,
    pub objective: ObjectiveConfig,
    pub optimizer: AdamWHyper,
    pub epochs: usize,
    pub batch_size: usize,
    /// Transport mode used for evaluation distances.
    pub eval_mode: TransportMode,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelDims::default(),
            objective: ObjectiveConfig::default(),
            optimizer: AdamWHyper::default(),
            epochs: 200,
            batch_size: 16,
            eval_mode: TransportMode::Pot,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Transport mode for evaluation: the training mode when the strategy
    /// has one, otherwise `eval_mode`.
    pub fn effective_eval_mode(&self) -> TransportMode {
        self.objective.strategy.align_mode().unwrap_or(self.eval_mode)
    }
}

/// Training-batch statistics averaged over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub cls_loss: f64,
    pub align_loss: f64,
    /// Absent when the strategy has no alignment term.
    pub mean_d_pos: Option<f64>,
    pub mean_d_neg: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Matching accuracy at threshold 0.5 over balanced positive/negative pairs.
    pub accuracy: f64,
    /// Caption-to-image retrieval by smallest transport distance.
    pub recall_at_1: f64,
    pub mean_d_pos: f64,
    pub mean_d_neg: f64,
    /// `mean_d_neg - mean_d_pos`.
    pub gap: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GroundingModel,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
}

/// Called after every epoch with the updated state.
pub type EpochHook<'h> = dyn FnMut(&EpochRecord, &GroundingModel, &OptimizerState) -> Result<()> + 'h;

/// Trains a freshly initialized model on the cached encodings of `data`.
pub fn train(cfg: &TrainConfig, data: &EncodedSplit, hook: Option<&mut EpochHook<'_>>) -> Result<TrainOutcome> {
    let model = GroundingModel::init(cfg.model, cfg.seeds.init)?;
    train_from(cfg, data, model, hook)
}

/// Trains `model` starting from a fresh optimizer state.
pub fn train_from(
    cfg: &TrainConfig,
    data: &EncodedSplit,
    mut model: GroundingModel,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.len();
    if n < 2 || data.images.len() != n {
        return Err(Error::invalid(format!(
            "training needs >= 2 paired captions and images, got {} and {}",
            n,
            data.images.len()
        )));
    }
    let mut optimizer = OptimizerState::new(&model);
    let mut shuffle_rng = stream(cfg.seeds.train, tags::SHUFFLE);
    let mut negative_rng = stream(cfg.seeds.train, tags::NEGATIVE);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);
        let (mut loss, mut cls, mut align) = (0.0, 0.0, 0.0);
        let (mut d_pos, mut d_neg) = (Vec::new(), Vec::new());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items = chunk
                .iter()
                .map(|&i| {
                    let j = sample_negative(i, n, &mut negative_rng)?;
                    Ok(PairItem {
                        text: &data.texts[i],
                        positive: &data.images[i],
                        negative: &data.images[j],
                        positive_index: i,
                        negative_index: j,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = PairBatch::new(items)?;
            let context = format!("epoch {epoch} batch {b}");
            let out = run_graph(&model, &batch, &cfg.objective, PlanSource::Solve, true)
                .map_err(|e| e.with_context(&context))?;
            let grads = out.grads.expect("requested");
            adamw_step(&mut model, &grads, &mut optimizer, &cfg.optimizer).map_err(|e| e.with_context(&context))?;
            let w = chunk.len() as f64;
            loss += out.report.total * w;
            cls += out.report.cls_loss * w;
            align += out.report.align_loss * w;
            d_pos.extend(out.report.d_pos);
            d_neg.extend(out.report.d_neg);
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let (mp, mn) = (mean(&d_pos), mean(&d_neg));
        let record = EpochRecord {
            epoch,
            loss: loss / n as f64,
            cls_loss: cls / n as f64,
            align_loss: align / n as f64,
            mean_d_pos: mp,
            mean_d_neg: mn,
            gap: mp.zip(mn).map(|(p, q)| q - p),
        };
        if let Some(h) = hook.as_mut() {
            h(&record, &model, &optimizer)?;
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}

/// Held-out metrics. Caption `i` is paired with image `i` (positive) and
/// one seeded negative image; recall ranks every image per caption.
pub fn evaluate(
    model: &GroundingModel,
    data: &EncodedSplit,
    objective: &ObjectiveConfig,
    mode: TransportMode,
    seed: u64,
) -> Result<Metrics> {
    let n = data.len();
    if n < 2 || data.images.len() != n {
        return Err(Error::invalid("evaluation needs >= 2 paired captions and images"));
    }
    let distances = distance_matrix(model, data, objective, mode)?;
    let mut rng = stream(seed, tags::EVAL);
    let (mut correct, mut hits) = (0usize, 0usize);
    let (mut sum_pos, mut sum_neg) = (0.0, 0.0);
    for i in 0..n {
        let j = sample_negative(i, n, &mut rng)?;
        if match_probability(model, &data.texts[i], &data.images[i])? >= 0.5 {
            correct += 1;
        }
        if match_probability(model, &data.texts[i], &data.images[j])? < 0.5 {
            correct += 1;
        }
        sum_pos += distances[i][i];
        sum_neg += distances[i][j];
        if argmin_lowest(&distances[i]) == i {
            hits += 1;
        }
    }
    let (mean_d_pos, mean_d_neg) = (sum_pos / n as f64, sum_neg / n as f64);
    Ok(Metrics {
        accuracy: correct as f64 / (2 * n) as f64,
        recall_at_1: hits as f64 / n as f64,
        mean_d_pos,
        mean_d_neg,
        gap: mean_d_neg - mean_d_pos,
        pairs: 2 * n,
    })
}

/// `D[caption][image]` for every pair in the split.
pub fn distance_matrix(
    model: &GroundingModel,
    data: &EncodedSplit,
    objective: &ObjectiveConfig,
    mode: TransportMode,
) -> Result<Vec<Vec<f64>>> {
    let patches = data
        .images
        .iter()
        .map(|im| Ok(project_image(model, im)?.1))
        .collect::<Result<Vec<_>>>()?;
    data.texts
        .iter()
        .map(|text| {
            let ground = ground_embed(model, text)?;
            let hidden = text.final_layer();
            patches
                .iter()
                .map(|p| {
                    let (src, tgt) = alignment_cost_inputs(p, &ground, &hidden, objective.align_target)?;
                    let cost = cosine_cost_matrix(&src, &tgt)?;
                    let a = uniform_weights(cost.rows())?;
                    let b = uniform_weights(cost.cols())?;
                    Ok(solve(mode, &cost, &a, &b, &objective.solver)?.distance)
                })
                .collect()
        })
        .collect()
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub strategy: Strategy,
    /// Last-epoch mean training loss; absent when no epoch ran.
    pub final_loss: Option<f64>,
    pub metrics: Metrics,
}

/// Trains and evaluates one strategy with the shared seeds of `base`.
pub fn grid_row(base: &TrainConfig, strategy: Strategy, train_data: &EncodedSplit, eval_data: &EncodedSplit) -> Result<GridRow> {
    let mut cfg = *base;
    cfg.objective.strategy = strategy;
    let out = train(&cfg, train_data, None)?;
    let metrics = evaluate(&out.model, eval_data, &cfg.objective, cfg.effective_eval_mode(), cfg.seeds.train)?;
    Ok(GridRow {
        strategy,
        final_loss: out.history.last().map(|r| r.loss),
        metrics,
    })
}

/// One row per strategy, each trained from the same initialization and data.
pub fn strategy_grid(base: &TrainConfig, train_data: &EncodedSplit, eval_data: &EncodedSplit) -> Result<Vec<GridRow>> {
    Strategy::ALL
        .iter()
        .map(|&s| grid_row(base, s, train_data, eval_data))
        .collect()
}

pub const GRID_HEADER: &str = "strategy\taccuracy\trecall_at_1\tmean_d_pos\tmean_d_neg\tgap\tfinal_loss";

/// Tab-separated table with a header line.
pub fn grid_tsv(rows: &[GridRow]) -> String {
    let mut out = String::from(GRID_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let loss = r.final_loss.map_or_else(|| "NA".to_string(), |l| format!("{l:.6}"));
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            r.strategy, m.accuracy, m.recall_at_1, m.mean_d_pos, m.mean_d_neg, m.gap, loss
        ));
    }
    out
}
