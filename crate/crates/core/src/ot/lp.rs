//! Exact transport distances for tiny instances, used as a test oracle.
//!
//! Dense two-phase simplex with Bland's pivoting rule on the standard-form
//! linear program. Only meant for `m * n <= 25`.

use crate::error::{Error, Result};

use super::matrix::{CostMatrix, DiscreteDistribution};
use super::solver::BALANCE_TOL;

/// Largest `m * n` the oracle accepts.
pub const MAX_ORACLE_CELLS: usize = 25;

const EPS: f64 = 1e-11;

/// Constraint family for [`exact_lp_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginals {
    /// `T 1 = a`, `T^T 1 = b`.
    Balanced,
    /// `T 1 <= a`, `T^T 1 <= b`, `1^T T 1 = mass`.
    Partial { mass: f64 },
}

pub fn exact_lp_oracle(
    cost: &CostMatrix,
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    marginals: Marginals,
) -> Result<f64> {
    let (m, n) = (cost.rows(), cost.cols());
    if m * n > MAX_ORACLE_CELLS {
        return Err(Error::UnsupportedSize(format!(
            "{m}x{n} instance exceeds the oracle limit of {MAX_ORACLE_CELLS} cells"
        )));
    }
    if a.len() != m || b.len() != n {
        return Err(Error::invalid("marginal lengths do not match the cost matrix"));
    }
    let cells = m * n;
    let (num_vars, mut rows) = match marginals {
        Marginals::Balanced => {
            if (a.mass() - b.mass()).abs() > BALANCE_TOL {
                return Err(Error::invalid("unbalanced marginals"));
            }
            (cells, Vec::with_capacity(m + n))
        }
        Marginals::Partial { mass } => {
            if !(mass > 0.0 && mass <= a.mass().min(b.mass()) * (1.0 + 1e-12)) {
                return Err(Error::invalid(format!("mass {mass} out of bounds")));
            }
            (cells + m + n, Vec::with_capacity(m + n + 1))
        }
    };

    for i in 0..m {
        let mut row = vec![0.0; num_vars];
        row[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = 1.0);
        if num_vars > cells {
            row[cells + i] = 1.0;
        }
        rows.push((row, a.weights()[i]));
    }
    for j in 0..n {
        let mut row = vec![0.0; num_vars];
        for i in 0..m {
            row[i * n + j] = 1.0;
        }
        if num_vars > cells {
            row[cells + m + j] = 1.0;
        }
        rows.push((row, b.weights()[j]));
    }
    if let Marginals::Partial { mass } = marginals {
        let mut row = vec![0.0; num_vars];
        row[..cells].iter_mut().for_each(|x| *x = 1.0);
        rows.push((row, mass));
    }

    let mut objective = vec![0.0; num_vars];
    objective[..cells].copy_from_slice(cost.data());
    simplex_min(&objective, &rows)
}

/// Minimizes `c^T x` subject to `A x = b`, `x >= 0`, with `b >= 0`.
fn simplex_min(objective: &[f64], constraints: &[(Vec<f64>, f64)]) -> Result<f64> {
    let rows = constraints.len();
    let vars = objective.len();
    // Columns: structural vars, one artificial per row, then rhs.
    let width = vars + rows + 1;
    let rhs = width - 1;
    let mut tab: Vec<Vec<f64>> = constraints
        .iter()
        .enumerate()
        .map(|(r, (coef, b))| {
            let mut line = vec![0.0; width];
            line[..vars].copy_from_slice(coef);
            line[vars + r] = 1.0;
            line[rhs] = *b;
            line
        })
        .collect();
    let mut basis: Vec<usize> = (vars..vars + rows).collect();

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; vars + rows];
    phase1[vars..].iter_mut().for_each(|x| *x = 1.0);
    let allowed_all: Vec<bool> = vec![true; vars + rows];
    run_simplex(&mut tab, &mut basis, &phase1, &allowed_all)?;
    let infeasibility: f64 = basis
        .iter()
        .zip(&tab)
        .filter(|(&bv, _)| bv >= vars)
        .map(|(_, line)| line[rhs])
        .sum();
    if infeasibility > 1e-9 {
        return Err(Error::invalid("transport LP is infeasible"));
    }

    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut r = 0;
    while r < tab.len() {
        if basis[r] >= vars {
            match (0..vars).find(|&c| tab[r][c].abs() > EPS) {
                Some(c) => pivot(&mut tab, &mut basis, r, c),
                None => {
                    tab.remove(r);
                    basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase 2 over structural columns only.
    let mut phase2 = objective.to_vec();
    phase2.extend(std::iter::repeat(0.0).take(rows));
    let mut allowed = vec![true; vars];
    allowed.extend(std::iter::repeat(false).take(rows));
    run_simplex(&mut tab, &mut basis, &phase2, &allowed)?;

    Ok(basis
        .iter()
        .zip(&tab)
        .map(|(&bv, line)| phase2[bv] * line[rhs])
        .sum())
}

fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    allowed: &[bool],
) -> Result<()> {
    let rhs = tab.first().map_or(0, |l| l.len() - 1);
    for _ in 0..10_000 {
        // Bland: first column with negative reduced cost.
        let entering = (0..cost.len()).filter(|&c| allowed[c]).find(|&c| {
            let reduced = cost[c]
                - basis
                    .iter()
                    .zip(tab.iter())
                    .map(|(&bv, line)| cost[bv] * line[c])
                    .sum::<f64>();
            reduced < -EPS
        });
        let Some(col) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for (r, line) in tab.iter().enumerate() {
            if line[col] > EPS {
                let ratio = line[rhs] / line[col];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - EPS || (ratio <= best + EPS && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::invalid("transport LP is unbounded"));
        };
        pivot(tab, basis, row, col);
    }
    Err(Error::numeric("simplex", "iteration limit reached"))
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = tab[row][col];
    tab[row].iter_mut().for_each(|x| *x /= p);
    let pivot_line = tab[row].clone();
    for (r, line) in tab.iter_mut().enumerate() {
        if r != row {
            let f = line[col];
            if f != 0.0 {
                line.iter_mut().zip(&pivot_line).for_each(|(x, p)| *x -= f * p);
            }
        }
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> DiscreteDistribution {
        DiscreteDistribution::new(vec![0.5, 0.5]).unwrap()
    }

    fn cost(rows: &[Vec<f64>]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn balanced_examples() {
        let d = exact_lp_oracle(&cost(&[vec![0.0, 1.0], vec![1.0, 0.0]]), &half(), &half(), Marginals::Balanced).unwrap();
        assert!(d.abs() < 1e-12);
        let d = exact_lp_oracle(&cost(&[vec![1.0, 1.0], vec![1.0, 1.0]]), &half(), &half(), Marginals::Balanced).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_matches_vertex_enumeration() {
        // Vertices of the 2x2 polytope with half marginals: 0.5*I and 0.5*antidiag.
        let c = cost(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let diag: f64 = 0.5 * (0.0 + 1.0);
        let anti = 0.5 * (2.0 + 3.0);
        let d = exact_lp_oracle(&c, &half(), &half(), Marginals::Balanced).unwrap();
        assert!((d - diag.min(anti)).abs() < 1e-12);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_picks_cheapest_cells() {
        let c = cost(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let d = exact_lp_oracle(&c, &half(), &half(), Marginals::Partial { mass: 0.5 }).unwrap();
        assert!(d.abs() < 1e-12);
        let d = exact_lp_oracle(&c, &half(), &half(), Marginals::Partial { mass: 0.75 }).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
        let d = exact_lp_oracle(&c, &half(), &half(), Marginals::Partial { mass: 1.0 }).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_large_instances() {
        let c = CostMatrix::new(super::super::Matrix::zeros(5, 6)).unwrap();
        let a = DiscreteDistribution::uniform(5).unwrap();
        let b = DiscreteDistribution::uniform(6).unwrap();
        assert!(matches!(
            exact_lp_oracle(&c, &a, &b, Marginals::Balanced),
            Err(Error::UnsupportedSize(_))
        ));
    }
}
