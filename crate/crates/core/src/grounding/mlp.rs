use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-hidden-layer perceptron with relu: `W2^T relu(W1^T x + b1) + b2`.
///
/// `w1` is `input x hidden` and `w2` is `hidden x output`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![0.0; input * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * output],
            b2: vec![0.0; output],
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        let b1 = 1.0 / (input as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.gen_range(-b1..=b1));
        let b2 = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.gen_range(-b2..=b2));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.len() == self.input * self.hidden
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden * self.output
            && self.b2.len() == self.output;
        if !ok {
            return Err(Error::invalid("MLP parameter shapes are inconsistent"));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<MlpTrace> {
        if x.len() != self.input {
            return Err(Error::invalid(format!(
                "MLP expects input of length {}, got {}",
                self.input,
                x.len()
            )));
        }
        let mut pre = self.b1.clone();
        for (xi, row) in x.iter().zip(self.w1.chunks_exact(self.hidden)) {
            pre.iter_mut().zip(row).for_each(|(p, w)| *p += xi * w);
        }
        let act: Vec<f64> = pre.iter().map(|&p| if p > 0.0 { p } else { 0.0 }).collect();
        let mut out = self.b2.clone();
        for (aj, row) in act.iter().zip(self.w2.chunks_exact(self.output)) {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += aj * w);
        }
        Ok(MlpTrace { pre, act, out })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.out)
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into `grads`.
    /// The input is a frozen encoder output, so no input gradient is produced.
    pub fn backward(&self, x: &[f64], trace: &MlpTrace, d_out: &[f64], grads: &mut MlpParams) {
        grads.b2.iter_mut().zip(d_out).for_each(|(g, d)| *g += d);
        let mut d_pre = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let row = j * self.output..(j + 1) * self.output;
            let aj = trace.act[j];
            grads.w2[row.clone()].iter_mut().zip(d_out).for_each(|(g, d)| *g += aj * d);
            if trace.pre[j] > 0.0 {
                d_pre[j] = self.w2[row].iter().zip(d_out).map(|(w, d)| w * d).sum();
            }
        }
        grads.b1.iter_mut().zip(&d_pre).for_each(|(g, d)| *g += d);
        for (xi, row) in x.iter().zip(grads.w1.chunks_exact_mut(self.hidden)) {
            row.iter_mut().zip(&d_pre).for_each(|(g, d)| *g += xi * d);
        }
    }
}

/// Free-function form of [`MlpParams::forward`].
pub fn mlp_forward(p: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    p.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_params_give_zero() {
        let p = MlpParams::zeros(3, 4, 2);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_relu_gates_negative() {
        let mut p = MlpParams::zeros(2, 2, 2);
        p.w1 = vec![1.0, 0.0, 0.0, 1.0];
        p.w2 = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(p.forward(&[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = MlpParams::zeros(3, 4, 2);
        assert!(matches!(p.forward(&[1.0]), Err(Error::InvalidArgument(_))));
    }

    // Plain triple-loop reimplementation, written independently of `trace`.
    fn reference(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; p.hidden];
        for j in 0..p.hidden {
            let mut z = p.b1[j];
            for i in 0..p.input {
                z += p.w1[i * p.hidden + j] * x[i];
            }
            h[j] = z.max(0.0);
        }
        (0..p.output)
            .map(|k| {
                let mut z = p.b2[k];
                for j in 0..p.hidden {
                    z += p.w2[j * p.output + k] * h[j];
                }
                z
            })
            .collect()
    }

    #[test]
    fn matches_reference_implementation() {
        let mut rng = stream(42, 0);
        let mut p = MlpParams::init(5, 7, 3, &mut rng);
        p.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        p.b2.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = p.forward(&x).unwrap();
        let want = reference(&p, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
