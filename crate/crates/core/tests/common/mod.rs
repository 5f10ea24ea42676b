#![allow(dead_code)]

use otground::ot::{cosine_cost_matrix, uniform_weights, CostMatrix, DiscreteDistribution, EmbeddingMatrix};
use otground::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

pub const INSTANCE_TAG: u64 = 0x7465_7374;

pub fn gaussian_embeddings(rng: &mut impl Rng, count: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingMatrix::new(count, dim, data).unwrap()
}

/// Cosine costs between seeded Gaussian point clouds with uniform marginals.
pub fn cosine_instance(seed: u64, m: usize, n: usize) -> (CostMatrix, DiscreteDistribution, DiscreteDistribution) {
    let mut rng = stream(seed, INSTANCE_TAG);
    let v = gaussian_embeddings(&mut rng, m, 8);
    let t = gaussian_embeddings(&mut rng, n, 8);
    (
        cosine_cost_matrix(&v, &t).unwrap(),
        uniform_weights(m).unwrap(),
        uniform_weights(n).unwrap(),
    )
}

/// Like [`cosine_instance`] with `m, n` drawn from `1..=4`.
pub fn small_instance(seed: u64) -> (CostMatrix, DiscreteDistribution, DiscreteDistribution) {
    let mut rng = stream(seed, INSTANCE_TAG ^ 1);
    let m = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=4);
    cosine_instance(seed, m, n)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..k {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..k).map(|i| b[i] / a[i][i]).collect())
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exact LP optimum by enumerating every basis of the standard-form
/// program. Balanced: `T1 = a, T^T 1 = b` (one redundant row dropped).
/// Partial: `T1 + p = a, T^T 1 + q = b, 1^T T 1 = s` with slacks `p, q`.
pub fn vertex_enumeration(cost: &CostMatrix, a: &[f64], b: &[f64], mass: Option<f64>) -> f64 {
    let (m, n) = (cost.rows(), cost.cols());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let nvars = match mass {
        None => m * n,
        Some(_) => m * n + m + n,
    };
    for i in 0..m {
        let mut r = vec![0.0; nvars];
        (0..n).for_each(|j| r[i * n + j] = 1.0);
        if mass.is_some() {
            r[m * n + i] = 1.0;
        }
        rows.push(r);
        rhs.push(a[i]);
    }
    let col_rows = if mass.is_none() { n - 1 } else { n };
    for j in 0..col_rows {
        let mut r = vec![0.0; nvars];
        (0..m).for_each(|i| r[i * n + j] = 1.0);
        if mass.is_some() {
            r[m * n + m + j] = 1.0;
        }
        rows.push(r);
        rhs.push(b[j]);
    }
    if let Some(s) = mass {
        let mut r = vec![0.0; nvars];
        (0..m * n).for_each(|k| r[k] = 1.0);
        rows.push(r);
        rhs.push(s);
    }
    let k = rows.len();
    let obj = |k: usize| if k < m * n { cost.data()[k] } else { 0.0 };
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let sub: Vec<Vec<f64>> = rows.iter().map(|r| idx.iter().map(|&c| r[c]).collect()).collect();
        if let Some(x) = solve_square(sub, rhs.clone()) {
            if x.iter().all(|&v| v >= -1e-12) {
                let val: f64 = idx.iter().zip(&x).map(|(&c, &v)| obj(c) * v).sum();
                best = best.min(val);
            }
        }
        if !next_combination(&mut idx, nvars) {
            break;
        }
    }
    best
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
