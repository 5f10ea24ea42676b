//! Transport solvers.
//!
//! [`solve_ot`] runs the proximal-point scheme: every outer iteration
//! multiplies the Gibbs kernel into the current plan and performs one
//! row/column scaling sweep, so the plan sharpens toward the unregularized
//! optimum as the iteration count grows. [`solve_pot`] scales an entropic
//! kernel under inequality marginals and renormalizes to a fixed total mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::{CostMatrix, DiscreteDistribution, Matrix, TransportPlan};

/// Floor applied to every denominator in the scaling updates.
///
/// Kept at the smallest normal `f64`: Gibbs kernels at `beta = 0.01` on
/// cosine costs legitimately reach `exp(-200)`, far below `1e-30`.
pub const DENOM_FLOOR: f64 = f64::MIN_POSITIVE;

/// Tolerance on `sum(a) == sum(b)` for the balanced problem.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Entropic temperature.
    pub beta: f64,
    /// Outer iteration count.
    pub iters: usize,
    /// Total mass moved by the partial solver.
    pub mass_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            iters: 200,
            mass_fraction: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn new(beta: f64, iters: usize, mass_fraction: f64) -> Result<Self> {
        let cfg = Self {
            beta,
            iters,
            mass_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters must be >= 1"));
        }
        if !(self.mass_fraction.is_finite() && self.mass_fraction > 0.0) {
            return Err(Error::invalid(format!(
                "mass_fraction must be > 0, got {}",
                self.mass_fraction
            )));
        }
        Ok(())
    }
}

/// Which solver turns a cost matrix into a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Ot,
    Pot,
}

impl std::fmt::Display for TransportMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportMode::Ot => "ot",
            TransportMode::Pot => "pot",
        })
    }
}

impl std::str::FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(TransportMode::Ot),
            "pot" => Ok(TransportMode::Pot),
            other => Err(Error::invalid(format!("unknown transport mode `{other}`"))),
        }
    }
}

/// Result of one solve: the plan and `<C, T>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transport {
    pub plan: TransportPlan,
    pub distance: f64,
}

/// Dispatches to [`solve_ot`] or [`solve_pot`].
pub fn solve(
    mode: TransportMode,
    cost: &CostMatrix,
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cfg: &SolverConfig,
) -> Result<Transport> {
    match mode {
        TransportMode::Ot => solve_ot(cost, a, b, cfg),
        TransportMode::Pot => solve_pot(cost, a, b, cfg),
    }
}

fn check_dims(cost: &CostMatrix, a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<()> {
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(Error::invalid(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn kernel(cost: &CostMatrix, beta: f64) -> Matrix {
    let data = cost.data().iter().map(|c| (-c / beta).exp()).collect();
    Matrix::new(cost.rows(), cost.cols(), data).expect("same shape")
}

fn ensure_finite(values: &[f64], what: &str, iteration: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numeric(
            format!("iteration {iteration}"),
            format!("{what}[{i}] is {}", values[i]),
        )),
    }
}

/// Balanced transport by proximal-point scaling.
pub fn solve_ot(
    cost: &CostMatrix,
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cfg: &SolverConfig,
) -> Result<Transport> {
    cfg.validate()?;
    check_dims(cost, a, b)?;
    let (mass_a, mass_b) = (a.mass(), b.mass());
    if (mass_a - mass_b).abs() > BALANCE_TOL {
        return Err(Error::invalid(format!(
            "unbalanced marginals: sum(a) = {mass_a}, sum(b) = {mass_b}"
        )));
    }
    let (m, n) = (cost.rows(), cost.cols());
    let (a, b) = (a.weights(), b.weights());
    let gibbs = kernel(cost, cfg.beta);

    let mut sigma = vec![1.0 / n as f64; n];
    let mut delta = vec![0.0; m];
    let mut plan = Matrix::new(m, n, vec![1.0; m * n]).expect("shape");
    let mut q = Matrix::zeros(m, n);

    for it in 1..=cfg.iters {
        for ((qv, kv), tv) in q.data_mut().iter_mut().zip(gibbs.data()).zip(plan.data()) {
            *qv = kv * tv;
        }
        for i in 0..m {
            let q_sigma: f64 = q.row(i).iter().zip(&sigma).map(|(x, s)| x * s).sum();
            if q_sigma <= 0.0 && a[i] > 0.0 {
                return Err(Error::numeric(
                    format!("iteration {it}"),
                    format!("row {i} of the scaled kernel underflowed to zero (beta too small for the cost scale)"),
                ));
            }
            delta[i] = a[i] / q_sigma.max(DENOM_FLOOR);
        }
        ensure_finite(&delta, "delta", it)?;
        let mut qt_delta = vec![0.0; n];
        for i in 0..m {
            for (acc, x) in qt_delta.iter_mut().zip(q.row(i)) {
                *acc += x * delta[i];
            }
        }
        for j in 0..n {
            sigma[j] = b[j] / qt_delta[j].max(DENOM_FLOOR);
        }
        ensure_finite(&sigma, "sigma", it)?;
        for i in 0..m {
            let d = delta[i];
            for ((t, x), s) in plan.row_mut(i).iter_mut().zip(q.row(i)).zip(&sigma) {
                *t = d * x * s;
            }
        }
        ensure_finite(plan.data(), "plan", it)?;
    }

    let plan = TransportPlan::new(plan);
    let distance = cost.frobenius_dot(&plan);
    Ok(Transport { plan, distance })
}

/// Partial transport of exactly `cfg.mass_fraction` units of mass with
/// `T 1 <= a` and `T^T 1 <= b`.
pub fn solve_pot(
    cost: &CostMatrix,
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cfg: &SolverConfig,
) -> Result<Transport> {
    cfg.validate()?;
    check_dims(cost, a, b)?;
    let s = cfg.mass_fraction;
    let cap = a.mass().min(b.mass());
    if s > cap * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "mass_fraction {s} exceeds min(sum(a), sum(b)) = {cap}"
        )));
    }
    let (m, n) = (cost.rows(), cost.cols());
    let (a, b) = (a.weights(), b.weights());

    let mut plan = kernel(cost, cfg.beta);
    rescale_to_mass(&mut plan, s, 0)?;

    for it in 1..=cfg.iters {
        let rows = plan.row_sums();
        for i in 0..m {
            let kappa = (a[i] / rows[i].max(DENOM_FLOOR)).min(1.0);
            plan.row_mut(i).iter_mut().for_each(|t| *t *= kappa);
        }
        let cols = plan.col_sums();
        let kappa_b: Vec<f64> = (0..n).map(|j| (b[j] / cols[j].max(DENOM_FLOOR)).min(1.0)).collect();
        for i in 0..m {
            plan.row_mut(i).iter_mut().zip(&kappa_b).for_each(|(t, k)| *t *= k);
        }
        rescale_to_mass(&mut plan, s, it)?;
    }

    let plan = TransportPlan::new(plan);
    let distance = cost.frobenius_dot(&plan);
    Ok(Transport { plan, distance })
}

fn rescale_to_mass(plan: &mut Matrix, s: f64, iteration: usize) -> Result<()> {
    let total = plan.total();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::numeric(
            format!("iteration {iteration}"),
            format!("plan mass is {total} (kernel underflow; beta too small for the cost scale)"),
        ));
    }
    let factor = s / total;
    plan.data_mut().iter_mut().for_each(|t| *t *= factor);
    ensure_finite(plan.data(), "plan", iteration)
}
