//! Central finite-difference checks of [`backprop`](super::backprop).

use rand::Rng;

use crate::error::Result;
use crate::objectives::{ObjectiveConfig, PairBatch, PairItem};
use crate::ot::{Matrix, TransportPlan};
use crate::rng::{stream, tags};

use super::backprop::{min_preactivation, run_graph, PlanSource};
use super::encoder::{StubTextEncoder, StubVisionEncoder, TextEncoder, TextEncoding, VisionEncoder, VisionEncoding};
use super::model::{GroundingModel, ModelDims, TENSOR_NAMES};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Test points whose pre-activations come closer than this to the relu kink
/// are resampled. A step of `eps` on a first-layer weight moves a
/// pre-activation by up to `eps * |x|`, and tiny activations produce
/// gradients below the finite-difference noise floor.
pub const KINK_MARGIN: f64 = 1e-3;

/// Iteration count for re-solved checks. At `beta = 0.05` the proximal
/// scheme needs this many sweeps to settle on an LP vertex; before that the
/// plan still moves with the cost and the envelope gradient does not apply.
pub const RESOLVE_ITERS: usize = 2000;

/// Plan entries above this count as support.
pub const SUPPORT_TOL: f64 = 1e-6;

/// `|fd - bp| / max(1e-8, |fd| + |bp|)`.
pub fn relative_error(fd: f64, bp: f64) -> f64 {
    (fd - bp).abs() / (fd.abs() + bp.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanHandling {
    /// Hold every transport plan at its unperturbed value.
    Frozen,
    /// Re-solve the plans at every perturbed point.
    Resolve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Compares every analytic gradient entry with a central difference.
pub fn check_gradients(
    model: &GroundingModel,
    batch: &PairBatch<'_>,
    cfg: &ObjectiveConfig,
    eps: f64,
    handling: PlanHandling,
) -> Result<GradCheckReport> {
    let base = run_graph(model, batch, cfg, PlanSource::Solve, true)?;
    let grads = base.grads.expect("requested");
    let plans = base.plans;
    let source = match handling {
        PlanHandling::Frozen => PlanSource::Frozen(&plans),
        PlanHandling::Resolve => PlanSource::Solve,
    };
    let eval = |m: &GroundingModel| -> Result<f64> { Ok(run_graph(m, batch, cfg, source, false)?.report.total) };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = model.clone();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        for i in 0..model.tensors()[t].len() {
            let orig = model.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + eps;
            let up = eval(&probe)?;
            probe.tensors_mut()[t][i] = orig - eps;
            let down = eval(&probe)?;
            probe.tensors_mut()[t][i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = relative_error(fd, grads.tensors()[t][i]);
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// True when the plan is basic: its support has at most `m + n - 1` cells.
pub fn is_vertex_plan(plan: &TransportPlan) -> bool {
    let support = plan.data().iter().filter(|&&v| v > SUPPORT_TOL).count();
    support + 1 <= plan.rows() + plan.cols()
}

/// An instance is non-degenerate under `cfg` when every plan it solves is a
/// vertex: the optimum is then unique and locally linear in the costs.
pub fn is_nondegenerate(model: &GroundingModel, batch: &PairBatch<'_>, cfg: &ObjectiveConfig) -> Result<bool> {
    if cfg.strategy.align_mode().is_none() {
        return Ok(true);
    }
    let out = run_graph(model, batch, cfg, PlanSource::Solve, false)?;
    Ok(out.plans.iter().all(|(p, n)| is_vertex_plan(p) && is_vertex_plan(n)))
}

/// A tiny seeded model with frozen encodings, away from relu kinks.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub model: GroundingModel,
    pub texts: Vec<TextEncoding>,
    pub images: Vec<VisionEncoding>,
    /// `(text, positive image, negative image)`.
    pub triples: Vec<(usize, usize, usize)>,
}

impl GradCheckInstance {
    pub const DIMS: ModelDims = ModelDims {
        d_h: 4,
        d_v: 4,
        d_g: 3,
        k: 2,
        layers: 3,
        hidden_scale: 2.0,
    };
    pub const TOKENS: usize = 3;
    pub const PATCHES: usize = 4;

    pub fn generate(seed: u64) -> Result<Self> {
        for attempt in 0u64.. {
            let inst = Self::sample(crate::rng::mix(seed, attempt))?;
            if min_preactivation(&inst.model, &inst.batch())? >= KINK_MARGIN {
                return Ok(inst);
            }
        }
        unreachable!()
    }

    fn sample(seed: u64) -> Result<Self> {
        let dims = Self::DIMS;
        let mut rng = stream(seed, tags::GRADCHECK);
        let mut model = GroundingModel::init(dims, seed)?;
        for t in model.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let text_enc = StubTextEncoder::new(dims.layers, dims.d_h, seed)?;
        let vision_enc = StubVisionEncoder::new(dims.d_v, dims.d_v, seed)?;
        let texts = (0..2)
            .map(|_| {
                let ids: Vec<u32> = (0..Self::TOKENS).map(|_| rng.gen_range(0..20)).collect();
                text_enc.encode(&ids)
            })
            .collect::<Result<Vec<_>>>()?;
        let images = (0..3)
            .map(|_| {
                let latents: Vec<f64> = (0..Self::PATCHES * dims.d_v).map(|_| rng.gen_range(-1.0..1.0)).collect();
                vision_enc.encode(&Matrix::new(Self::PATCHES, dims.d_v, latents)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            texts,
            images,
            triples: vec![(0, 0, 1), (1, 2, 0)],
        })
    }

    pub fn batch(&self) -> PairBatch<'_> {
        PairBatch::new(
            self.triples
                .iter()
                .map(|&(t, p, n)| PairItem {
                    text: &self.texts[t],
                    positive: &self.images[p],
                    negative: &self.images[n],
                    positive_index: p,
                    negative_index: n,
                })
                .collect(),
        )
        .expect("distinct indices")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 0.5) - 0.5 / 1.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn instances_avoid_kinks() {
        let inst = GradCheckInstance::generate(3).unwrap();
        assert!(min_preactivation(&inst.model, &inst.batch()).unwrap() >= KINK_MARGIN);
        inst.model.validate().unwrap();
    }

    #[test]
    fn vertex_support() {
        let basic = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(is_vertex_plan(&TransportPlan::new(basic)));
        let spread = Matrix::from_rows(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        assert!(!is_vertex_plan(&TransportPlan::new(spread)));
    }
}
