#[cfg(test)]
use super::Activation;
use super::{GruCell, Mlp, Mode, Parameterized, Tensor};

/// A model with a fixed smooth scalar objective of an input vector, used to
/// compare analytic gradients with finite differences. Quantizers are
/// evaluated in [`Mode::Smooth`], so straight-through units are checked
/// against their surrogate.
pub trait Differentiable: Parameterized {
    fn objective(&self, x: &[f64]) -> f64;
    /// Gradients with respect to the parameters (in parameter order) and the
    /// input.
    fn gradient(&self, x: &[f64]) -> (Vec<Tensor>, Vec<f64>);
}

/// `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Largest relative error between analytic gradients and central
/// differences with step `eps`, over every parameter and input coordinate.
pub fn grad_check<M: Differentiable>(model: &mut M, x: &[f64], eps: f64) -> f64 {
    assert!((1e-7..=1e-3).contains(&eps), "eps must lie in [1e-7, 1e-3]");
    let (grads, gx) = model.gradient(x);
    let mut worst: f64 = 0.0;
    let n_params = model.params().len();
    for p in 0..n_params {
        for i in 0..grads[p].len() {
            let orig = model.params()[p].data()[i];
            model.params_mut()[p].data_mut()[i] = orig + eps;
            let up = model.objective(x);
            model.params_mut()[p].data_mut()[i] = orig - eps;
            let down = model.objective(x);
            model.params_mut()[p].data_mut()[i] = orig;
            worst = worst.max(relative_error(grads[p].data()[i], (up - down) / (2.0 * eps)));
        }
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let up = model.objective(&xp);
        xp[i] = x[i] - eps;
        let down = model.objective(&xp);
        xp[i] = x[i];
        worst = worst.max(relative_error(gx[i], (up - down) / (2.0 * eps)));
    }
    worst
}

/// Weights of the linear part of the probe objective `Σ c_i y_i + ½ y_i²`.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / (i as f64 + 1.0) - 0.3).collect()
}

pub(crate) fn probe(y: &[f64]) -> f64 {
    y.iter().zip(probe_weights(y.len())).map(|(y, c)| c * y + 0.5 * y * y).sum()
}

pub(crate) fn probe_grad(y: &[f64]) -> Vec<f64> {
    y.iter().zip(probe_weights(y.len())).map(|(y, c)| c + y).collect()
}

impl Differentiable for Mlp {
    fn objective(&self, x: &[f64]) -> f64 {
        probe(&self.output(x, Mode::Smooth).expect("input width"))
    }

    fn gradient(&self, x: &[f64]) -> (Vec<Tensor>, Vec<f64>) {
        let cache = self.forward(x, Mode::Smooth).expect("input width");
        let mut grads = self.zero_grads();
        let gx = self.backward(&cache, &probe_grad(cache.output()), &mut grads);
        (grads, gx)
    }
}

/// The input is the concatenation of the cell input and the hidden state.
impl Differentiable for GruCell {
    fn objective(&self, xh: &[f64]) -> f64 {
        let (x, h) = xh.split_at(self.input_dim());
        probe(&self.forward(x, h).expect("shapes").output)
    }

    fn gradient(&self, xh: &[f64]) -> (Vec<Tensor>, Vec<f64>) {
        let (x, h) = xh.split_at(self.input_dim());
        let cache = self.forward(x, h).expect("shapes");
        let mut grads = self.zero_grads();
        let (mut dx, dh) = self.backward(&cache, &probe_grad(&cache.output), &mut grads);
        dx.extend(dh);
        (grads, dx)
    }
}

/// Activations whose gradient is exact everywhere except isolated kinks.
#[cfg(test)]
pub(crate) const SMOOTH_ACTIVATIONS: [Activation; 5] = [
    Activation::Identity,
    Activation::Tanh,
    Activation::Elu,
    Activation::Relu6,
    Activation::TernaryTanh,
];
