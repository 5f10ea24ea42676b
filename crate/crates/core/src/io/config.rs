//! JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{AlignTarget, ModelDims};
use crate::harness::{AdamWHyper, DataConfig, Seeds, TrainConfig};
use crate::objectives::{ObjectiveConfig, Strategy};
use crate::ot::{SolverConfig, TransportMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub beta: f64,
    pub iters: usize,
    pub mass_fraction: f64,
    /// Evaluation mode; training follows the strategy when it names one.
    pub mode: TransportMode,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            beta: s.beta,
            iters: s.iters,
            mass_fraction: s.mass_fraction,
            mode: TransportMode::Pot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_h: usize,
    pub d_v: usize,
    pub d_g: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub hidden_scale: f64,
    pub align_target: AlignTarget,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::default();
        Self {
            d_h: d.d_h,
            d_v: d.d_v,
            d_g: d.d_g,
            k: d.k,
            layers: d.layers,
            hidden_scale: d.hidden_scale,
            align_target: AlignTarget::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub w_cls: f64,
    pub w_align: f64,
    pub hinge_margin: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.optimizer.lr,
            weight_decay: t.optimizer.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            strategy: t.objective.strategy,
            w_cls: t.objective.w_cls,
            w_align: t.objective.w_align,
            hinge_margin: t.objective.hinge_margin,
        }
    }
}

/// Every knob of a run. Missing sections and fields take desk defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub solver: SolverSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataConfig,
    pub seeds: Seeds,
}

fn check(ok: bool, field: &str, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, detail()))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Enforces every constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        check(s.beta.is_finite() && s.beta > 0.0, "solver.beta", || format!("must be > 0, got {}", s.beta))?;
        check(s.iters >= 1, "solver.iters", || "must be >= 1".into())?;
        check(
            s.mass_fraction.is_finite() && s.mass_fraction > 0.0 && s.mass_fraction <= 1.0,
            "solver.mass_fraction",
            || format!("must lie in (0, 1], got {}", s.mass_fraction),
        )?;

        let m = &self.model;
        for (name, v) in [("d_h", m.d_h), ("d_v", m.d_v), ("d_g", m.d_g), ("k", m.k), ("L", m.layers)] {
            check(v >= 1, &format!("model.{name}"), || "must be >= 1".into())?;
        }
        check(m.k <= m.layers, "model.k", || format!("must be <= model.L = {}, got {}", m.layers, m.k))?;
        check(m.hidden_scale.is_finite() && m.hidden_scale > 0.0, "model.hidden_scale", || {
            format!("must be > 0, got {}", m.hidden_scale)
        })?;

        let t = &self.train;
        check(t.lr.is_finite() && t.lr >= 0.0, "train.lr", || format!("must be >= 0, got {}", t.lr))?;
        check(t.weight_decay.is_finite() && t.weight_decay >= 0.0, "train.weight_decay", || {
            format!("must be >= 0, got {}", t.weight_decay)
        })?;
        check(t.batch_size >= 1, "train.batch_size", || "must be >= 1".into())?;
        check(t.w_cls.is_finite() && t.w_cls >= 0.0, "train.w_cls", || format!("must be >= 0, got {}", t.w_cls))?;
        check(t.w_align.is_finite() && t.w_align >= 0.0, "train.w_align", || {
            format!("must be >= 0, got {}", t.w_align)
        })?;
        if let Some(h) = t.hinge_margin {
            check(h.is_finite(), "train.hinge_margin", || format!("must be finite, got {h}"))?;
        }

        let d = &self.data;
        check(d.concepts >= 4, "data.concepts", || format!("must be >= 4, got {}", d.concepts))?;
        check(d.scenes >= 8, "data.scenes", || format!("must be >= 8, got {}", d.scenes))?;
        check(d.patches >= 2, "data.patches", || format!("must be >= 2, got {}", d.patches))?;
        check(d.coverage_ratio > 0.0 && d.coverage_ratio <= 1.0, "data.coverage_ratio", || {
            format!("must lie in (0, 1], got {}", d.coverage_ratio)
        })?;
        check(t.batch_size <= d.scenes, "train.batch_size", || {
            format!("must be <= data.scenes = {}, got {}", d.scenes, t.batch_size)
        })?;
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            beta: self.solver.beta,
            iters: self.solver.iters,
            mass_fraction: self.solver.mass_fraction,
        }
    }

    pub fn dims(&self) -> ModelDims {
        let m = &self.model;
        ModelDims {
            d_h: m.d_h,
            d_v: m.d_v,
            d_g: m.d_g,
            k: m.k,
            layers: m.layers,
            hidden_scale: m.hidden_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            model: self.dims(),
            objective: ObjectiveConfig {
                strategy: t.strategy,
                w_cls: t.w_cls,
                w_align: t.w_align,
                hinge_margin: t.hinge_margin,
                solver: self.solver_config(),
                align_target: self.model.align_target,
            },
            optimizer: AdamWHyper {
                lr: t.lr,
                weight_decay: t.weight_decay,
                ..AdamWHyper::default()
            },
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval_mode: self.solver.mode,
            seeds: self.seeds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_desk_default() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let t = cfg.train_config();
        assert_eq!(t.objective.strategy, Strategy::ClsPot);
        assert_eq!(t.epochs, 200);
        assert_eq!(t.batch_size, 16);
        assert_eq!(t.model.d_g, 8);
        assert_eq!(cfg.data.scenes, 64);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_json(r#"{"train": {"lr": 0.1, "momentum": 0.9}}"#).unwrap_err();
        match err {
            Error::Config { field, detail } => {
                assert_eq!(field, "train.momentum");
                assert!(detail.contains("unknown field"), "{detail}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn type_errors_name_their_path() {
        let err = RunConfig::from_json(r#"{"solver": {"mode": "sinkhorn"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "solver.mode"), "{err}");
        let err = RunConfig::from_json(r#"{"train": {"strategy": "cls+sot"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "train.strategy"), "{err}");
    }

    #[test]
    fn constraint_violations_name_their_path() {
        for (doc, field) in [
            (r#"{"solver": {"beta": 0}}"#, "solver.beta"),
            (r#"{"solver": {"mass_fraction": 1.5}}"#, "solver.mass_fraction"),
            (r#"{"model": {"k": 7}}"#, "model.k"),
            (r#"{"model": {"L": 0}}"#, "model.L"),
            (r#"{"train": {"lr": -1}}"#, "train.lr"),
            (r#"{"data": {"coverage_ratio": 0}}"#, "data.coverage_ratio"),
            (r#"{"data": {"scenes": 4}}"#, "data.scenes"),
        ] {
            match RunConfig::from_json(doc).unwrap_err() {
                Error::Config { field: f, .. } => assert_eq!(f, field, "{doc}"),
                other => panic!("{doc}: {other}"),
            }
        }
    }
}
