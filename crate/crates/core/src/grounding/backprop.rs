//! Forward trace and reverse pass over the fixed per-item computation graph.
//!
//! Transport plans are constants of the forward pass: the gradient of
//! `<C, T>` with respect to `C` is taken to be `T`.

use crate::error::{Error, Result};
use crate::objectives::{
    alignment_cost_inputs, bce_loss, sigmoid, LossReport, ObjectiveConfig, PairBatch, PROB_CLAMP,
};
use crate::ot::{cosine_cost_matrix, solve, uniform_weights, Matrix, TransportMode, TransportPlan};

use super::encoder::{TextEncoding, VisionEncoding};
use super::mlp::MlpTrace;
use super::model::{stacked_hidden, AlignTarget, GradientSet, GroundingModel};

/// Where the alignment plans come from.
#[derive(Debug, Clone, Copy)]
pub enum PlanSource<'a> {
    /// Solve a fresh plan per item and image.
    Solve,
    /// Reuse plans from an earlier evaluation, `(positive, negative)` per item.
    Frozen(&'a [(TransportPlan, TransportPlan)]),
}

#[derive(Debug, Clone)]
pub struct GraphOutput {
    pub report: LossReport,
    /// `(positive, negative)` plans per item; empty when no alignment term is active.
    pub plans: Vec<(TransportPlan, TransportPlan)>,
    pub grads: Option<GradientSet>,
}

struct TextTrace {
    stacked: Vec<Vec<f64>>,
    vg: Vec<MlpTrace>,
    ground: Matrix,
    hidden_final: Matrix,
}

struct ImageTrace<'a> {
    vision: &'a VisionEncoding,
    global: MlpTrace,
    patches: Vec<MlpTrace>,
    projected: Matrix,
}

fn trace_text(model: &GroundingModel, text: &TextEncoding) -> Result<TextTrace> {
    let k = model.dims.k;
    if k > text.layers() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available encoder layers",
            text.layers()
        )));
    }
    let stacked: Vec<Vec<f64>> = (0..text.tokens()).map(|i| stacked_hidden(text, k, i)).collect();
    let vg = stacked.iter().map(|x| model.vg.trace(x)).collect::<Result<Vec<_>>>()?;
    let mut ground = Matrix::zeros(text.tokens(), model.vg.output);
    for (i, t) in vg.iter().enumerate() {
        ground.row_mut(i).copy_from_slice(&t.out);
    }
    Ok(TextTrace {
        stacked,
        vg,
        ground,
        hidden_final: text.final_layer(),
    })
}

fn trace_image<'a>(model: &GroundingModel, vision: &'a VisionEncoding) -> Result<ImageTrace<'a>> {
    let global = model.prj.trace(vision.global())?;
    let patches = (0..vision.patches().rows())
        .map(|i| model.prj.trace(vision.patches().row(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut projected = Matrix::zeros(patches.len(), model.prj.output);
    for (i, t) in patches.iter().enumerate() {
        projected.row_mut(i).copy_from_slice(&t.out);
    }
    Ok(ImageTrace {
        vision,
        global,
        patches,
        projected,
    })
}

fn check_finite(v: f64, node: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(node(), format!("value is {v}")))
    }
}

/// Gradient of `sum_ij dc[i][j] * (1 - cos(u_i, w_j))` with respect to the rows of `u` and `w`.
fn cosine_cost_backward(u: &Matrix, w: &Matrix, d_cost: &Matrix) -> (Matrix, Matrix) {
    let mut du = Matrix::zeros(u.rows(), u.cols());
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let un: Vec<f64> = (0..u.rows()).map(|i| crate::ot::norm(u.row(i))).collect();
    let wn: Vec<f64> = (0..w.rows()).map(|j| crate::ot::norm(w.row(j))).collect();
    for i in 0..u.rows() {
        for j in 0..w.rows() {
            let g = d_cost.get(i, j);
            if g == 0.0 {
                continue;
            }
            let (ui, wj) = (u.row(i), w.row(j));
            let inv = 1.0 / (un[i] * wn[j]);
            let cos = crate::ot::dot(ui, wj) * inv;
            let (su, sw) = (cos / (un[i] * un[i]), cos / (wn[j] * wn[j]));
            for (k, (&a, &b)) in ui.iter().zip(wj).enumerate() {
                // d(1 - cos)/du = -(w / (|u||w|) - cos * u / |u|^2)
                du.data_mut()[i * u.cols() + k] -= g * (b * inv - su * a);
                dw.data_mut()[j * w.cols() + k] -= g * (a * inv - sw * b);
            }
        }
    }
    (du, dw)
}

struct AlignPiece {
    distance: f64,
    plan: TransportPlan,
    sources: Matrix,
    targets: Matrix,
}

fn align_forward(
    image: &ImageTrace<'_>,
    text: &TextTrace,
    mode: TransportMode,
    cfg: &ObjectiveConfig,
    frozen: Option<&TransportPlan>,
) -> Result<AlignPiece> {
    let (src, tgt) = alignment_cost_inputs(&image.projected, &text.ground, &text.hidden_final, cfg.align_target)?;
    let cost = cosine_cost_matrix(&src, &tgt)?;
    let plan = match frozen {
        Some(p) => {
            if (p.rows(), p.cols()) != (cost.rows(), cost.cols()) {
                return Err(Error::invalid("frozen plan shape does not match the cost matrix"));
            }
            p.clone()
        }
        None => {
            let a = uniform_weights(cost.rows())?;
            let b = uniform_weights(cost.cols())?;
            solve(mode, &cost, &a, &b, &cfg.solver)?.plan
        }
    };
    let distance = cost.frobenius_dot(&plan);
    Ok(AlignPiece {
        distance,
        plan,
        sources: src.into_matrix(),
        targets: tgt.into_matrix(),
    })
}

/// Pushes `scale * T` back through the cosine costs into the projected
/// patches (`d_patches`) and ground embeddings (`d_ground`).
fn align_backward(piece: &AlignPiece, scale: f64, target: AlignTarget, d_patches: &mut Matrix, d_ground: &mut Matrix) {
    let mut d_cost = piece.plan.matrix().clone();
    d_cost.data_mut().iter_mut().for_each(|v| *v *= scale);
    let (du, dw) = cosine_cost_backward(&piece.sources, &piece.targets, &d_cost);
    let dg = d_ground.cols();
    let offset = match target {
        AlignTarget::Ground => 0,
        AlignTarget::VisualTextual => piece.targets.cols() - dg,
    };
    for i in 0..d_patches.rows() {
        let src = &du.row(i)[offset..];
        d_patches.row_mut(i).iter_mut().zip(src).for_each(|(d, s)| *d += s);
    }
    for j in 0..d_ground.rows() {
        let src = &dw.row(j)[offset..];
        d_ground.row_mut(j).iter_mut().zip(src).for_each(|(d, s)| *d += s);
    }
}

/// Evaluates the objectives of `cfg` on `batch`, optionally with gradients.
pub fn run_graph(
    model: &GroundingModel,
    batch: &PairBatch<'_>,
    cfg: &ObjectiveConfig,
    plans: PlanSource<'_>,
    with_grads: bool,
) -> Result<GraphOutput> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let bsz = batch.len() as f64;
    let use_cls = cfg.strategy.uses_cls();
    let mode = cfg.strategy.align_mode();
    if let PlanSource::Frozen(p) = plans {
        if mode.is_some() && p.len() != batch.len() {
            return Err(Error::invalid("frozen plans do not match the batch size"));
        }
    }
    let (dg_len, dh_len) = (model.vg.output, model.dims.d_h);

    let mut grads = with_grads.then(|| model.zero_grads());
    let mut cls_sum = 0.0;
    let mut align_sum = 0.0;
    let mut d_pos = Vec::new();
    let mut d_neg = Vec::new();
    let mut out_plans = Vec::new();

    for (idx, item) in batch.items.iter().enumerate() {
        let at = |node: &str| format!("item {idx}: {node}");
        let text = trace_text(model, item.text).map_err(|e| e.with_context(at("text")))?;
        let images = [
            trace_image(model, item.positive)?,
            trace_image(model, item.negative)?,
        ];
        let mut d_ground = Matrix::zeros(text.ground.rows(), dg_len);
        let mut d_images: Vec<(Vec<f64>, Matrix)> = images
            .iter()
            .map(|im| (vec![0.0; dg_len], Matrix::zeros(im.projected.rows(), dg_len)))
            .collect();

        if use_cls {
            let mut t_cls = text.hidden_final.row(0).to_vec();
            t_cls.extend_from_slice(text.ground.row(0));
            for (side, (image, label)) in images.iter().zip([1.0, 0.0]).enumerate() {
                let input: Vec<f64> = image.global.out.iter().chain(&t_cls).copied().collect();
                let logit = model.head.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + model.head_bias;
                let logit = check_finite(logit, || at(if side == 0 { "logit+" } else { "logit-" }))?;
                let prob = sigmoid(logit);
                cls_sum += bce_loss(prob, label)?;
                if let Some(g) = grads.as_mut() {
                    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&prob);
                    let d_logit = if clamped { 0.0 } else { cfg.w_cls / (2.0 * bsz) * (prob - label) };
                    g.head.iter_mut().zip(&input).for_each(|(h, x)| *h += d_logit * x);
                    g.head_bias += d_logit;
                    let (head_v, rest) = model.head.split_at(dg_len);
                    d_images[side].0.iter_mut().zip(head_v).for_each(|(d, w)| *d += d_logit * w);
                    d_ground.row_mut(0).iter_mut().zip(&rest[dh_len..]).for_each(|(d, w)| *d += d_logit * w);
                }
            }
        }

        if let Some(mode) = mode {
            let frozen = match plans {
                PlanSource::Frozen(p) => Some(&p[idx]),
                PlanSource::Solve => None,
            };
            let pos = align_forward(&images[0], &text, mode, cfg, frozen.map(|p| &p.0))
                .map_err(|e| e.with_context(at("transport+")))?;
            let neg = align_forward(&images[1], &text, mode, cfg, frozen.map(|p| &p.1))
                .map_err(|e| e.with_context(at("transport-")))?;
            check_finite(pos.distance, || at("D+"))?;
            check_finite(neg.distance, || at("D-"))?;
            let raw = pos.distance - neg.distance;
            let (contrib, gate) = match cfg.hinge_margin {
                None => (raw, 1.0),
                Some(m) if m + raw > 0.0 => (m + raw, 1.0),
                Some(_) => (0.0, 0.0),
            };
            align_sum += contrib;
            d_pos.push(pos.distance);
            d_neg.push(neg.distance);
            if grads.is_some() && gate != 0.0 {
                let scale = cfg.w_align / bsz * gate;
                let (d_img_pos, rest) = d_images.split_at_mut(1);
                align_backward(&pos, scale, cfg.align_target, &mut d_img_pos[0].1, &mut d_ground);
                align_backward(&neg, -scale, cfg.align_target, &mut rest[0].1, &mut d_ground);
            }
            out_plans.push((pos.plan, neg.plan));
        }

        if let Some(g) = grads.as_mut() {
            for (j, (x, tr)) in text.stacked.iter().zip(&text.vg).enumerate() {
                model.vg.backward(x, tr, d_ground.row(j), &mut g.vg);
            }
            for (image, (d_global, d_patches)) in images.iter().zip(&d_images) {
                model.prj.backward(image.vision.global(), &image.global, d_global, &mut g.prj);
                for (p, tr) in image.patches.iter().enumerate() {
                    model.prj.backward(image.vision.patches().row(p), tr, d_patches.row(p), &mut g.prj);
                }
            }
        }
    }

    let cls_loss = if use_cls { cls_sum / (2.0 * bsz) } else { 0.0 };
    let align_loss = if mode.is_some() { align_sum / bsz } else { 0.0 };
    let total = cfg.w_cls * cls_loss + cfg.w_align * align_loss;
    check_finite(total, || "total loss".to_string())?;

    if let Some(g) = &grads {
        for (name, t) in super::model::TENSOR_NAMES.iter().zip(g.tensors()) {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("grad {name}[{i}]"), "non-finite gradient"));
            }
        }
    }

    Ok(GraphOutput {
        report: LossReport {
            cls_loss,
            align_loss,
            total,
            d_pos,
            d_neg,
        },
        plans: out_plans,
        grads,
    })
}

/// Total loss and its gradient with respect to every model tensor.
pub fn backprop(model: &GroundingModel, batch: &PairBatch<'_>, cfg: &ObjectiveConfig) -> Result<(f64, GradientSet)> {
    let out = run_graph(model, batch, cfg, PlanSource::Solve, true)?;
    Ok((out.report.total, out.grads.expect("requested")))
}

/// Smallest `|pre-activation|` over every MLP evaluation the batch triggers.
pub fn min_preactivation(model: &GroundingModel, batch: &PairBatch<'_>) -> Result<f64> {
    let mut min = f64::INFINITY;
    let mut visit = |t: &MlpTrace| {
        for p in &t.pre {
            min = min.min(p.abs());
        }
    };
    for item in &batch.items {
        trace_text(model, item.text)?.vg.iter().for_each(&mut visit);
        for vision in [item.positive, item.negative] {
            let im = trace_image(model, vision)?;
            visit(&im.global);
            im.patches.iter().for_each(&mut visit);
        }
    }
    Ok(min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_backward_matches_central_differences() {
        let u = Matrix::from_rows(&[vec![0.3, -1.2, 0.5], vec![1.0, 0.2, -0.4]]).unwrap();
        let w = Matrix::from_rows(&[vec![-0.7, 0.1, 0.9], vec![0.4, 0.4, 0.4], vec![2.0, -1.0, 0.0]]).unwrap();
        let dc = Matrix::from_rows(&[vec![0.2, -0.5, 1.0], vec![0.7, 0.1, -0.3]]).unwrap();
        let f = |u: &Matrix, w: &Matrix| -> f64 {
            let mut s = 0.0;
            for i in 0..u.rows() {
                for j in 0..w.rows() {
                    let c = 1.0 - crate::ot::dot(u.row(i), w.row(j)) / (crate::ot::norm(u.row(i)) * crate::ot::norm(w.row(j)));
                    s += dc.get(i, j) * c;
                }
            }
            s
        };
        let (du, dw) = cosine_cost_backward(&u, &w, &dc);
        let eps = 1e-6;
        for idx in 0..u.data().len() {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up.data_mut()[idx] += eps;
            dn.data_mut()[idx] -= eps;
            let fd = (f(&up, &w) - f(&dn, &w)) / (2.0 * eps);
            assert!((fd - du.data()[idx]).abs() < 1e-8, "u[{idx}]");
        }
        for idx in 0..w.data().len() {
            let (mut up, mut dn) = (w.clone(), w.clone());
            up.data_mut()[idx] += eps;
            dn.data_mut()[idx] -= eps;
            let fd = (f(&u, &up) - f(&u, &dn)) / (2.0 * eps);
            assert!((fd - dw.data()[idx]).abs() < 1e-8, "w[{idx}]");
        }
    }
}
