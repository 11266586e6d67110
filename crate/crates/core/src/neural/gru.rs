use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, NeuralError, Parameterized, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit with gate rows ordered reset, update, candidate:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn_lin: Vec<f64>,
    pub output: Vec<f64>,
}

impl GruCell {
    /// Uniform initialisation in `±1/√hidden`.
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("shape")
        };
        Self {
            w_ih: t(vec![3 * hidden, input]),
            w_hh: t(vec![3 * hidden, hidden]),
            b_ih: t(vec![3 * hidden]),
            b_hh: t(vec![3 * hidden]),
        }
    }

    pub fn zeroed(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[3 * hidden, input]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn forward(&self, x: &[f64], h: &[f64]) -> Result<GruCache, NeuralError> {
        let n = self.hidden_dim();
        check_len("GRU input", self.input_dim(), x.len())?;
        check_len("GRU hidden state", n, h.len())?;
        let mut gi = self.w_ih.matvec(x);
        let mut gh = self.w_hh.matvec(h);
        for (g, b) in gi.iter_mut().zip(self.b_ih.data()) {
            *g += b;
        }
        for (g, b) in gh.iter_mut().zip(self.b_hh.data()) {
            *g += b;
        }
        let r: Vec<f64> = (0..n).map(|i| sigmoid(gi[i] + gh[i])).collect();
        let z: Vec<f64> = (0..n).map(|i| sigmoid(gi[n + i] + gh[n + i])).collect();
        let hn_lin = gh[2 * n..].to_vec();
        let cand: Vec<f64> = (0..n).map(|i| (gi[2 * n + i] + r[i] * hn_lin[i]).tanh()).collect();
        let output: Vec<f64> = (0..n).map(|i| (1.0 - z[i]) * cand[i] + z[i] * h[i]).collect();
        if !output.iter().all(|v| v.is_finite()) {
            return Err(NeuralError::NonFinite("GRU cell"));
        }
        Ok(GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            r,
            z,
            n: cand,
            hn_lin,
            output,
        })
    }

    /// Returns `(dx, dh)`; accumulates `[dW_ih, dW_hh, db_ih, db_hh]` into
    /// `grads`.
    pub fn backward(&self, c: &GruCache, grad_out: &[f64], grads: &mut [Tensor]) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden_dim();
        let mut a_i = vec![0.0; 3 * n];
        let mut a_h = vec![0.0; 3 * n];
        let mut dh = vec![0.0; n];
        for i in 0..n {
            let g = grad_out[i];
            let dn = g * (1.0 - c.z[i]);
            let dz = g * (c.h[i] - c.n[i]);
            dh[i] = g * c.z[i];
            let dn_pre = dn * (1.0 - c.n[i] * c.n[i]);
            let dr = dn_pre * c.hn_lin[i];
            let dr_pre = dr * c.r[i] * (1.0 - c.r[i]);
            let dz_pre = dz * c.z[i] * (1.0 - c.z[i]);
            a_i[i] = dr_pre;
            a_i[n + i] = dz_pre;
            a_i[2 * n + i] = dn_pre;
            a_h[i] = dr_pre;
            a_h[n + i] = dz_pre;
            a_h[2 * n + i] = dn_pre * c.r[i];
        }
        grads[0].add_outer(&a_i, &c.x);
        grads[1].add_outer(&a_h, &c.h);
        for (b, g) in grads[2].data_mut().iter_mut().zip(&a_i) {
            *b += g;
        }
        for (b, g) in grads[3].data_mut().iter_mut().zip(&a_h) {
            *b += g;
        }
        let dx = self.w_ih.matvec_t(&a_i);
        for (d, v) in dh.iter_mut().zip(self.w_hh.matvec_t(&a_h)) {
            *d += v;
        }
        (dx, dh)
    }
}

impl Parameterized for GruCell {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn zero_cell_halves_the_state() {
        let cell = GruCell::zeroed(3, 4);
        let h = [0.8, -0.4, 0.2, 1.0];
        let out = cell.forward(&[1.0, 2.0, 3.0], &h).unwrap().output;
        for (o, h) in out.iter().zip(h) {
            assert!((o - h / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn output_is_bounded_for_huge_inputs() {
        let mut rng = seed::rng(9);
        let cell = GruCell::new(5, 4, &mut rng);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let out = cell.forward(&x, &h).unwrap().output;
            assert!(out.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn shapes_are_checked() {
        let cell = GruCell::zeroed(3, 4);
        assert!(cell.forward(&[0.0; 2], &[0.0; 4]).is_err());
        assert!(cell.forward(&[0.0; 3], &[0.0; 5]).is_err());
    }
}
