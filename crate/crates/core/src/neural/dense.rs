use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, Activation, Mode, NeuralError, Parameterized, Tensor};

/// `y = act(W x + b)` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl Dense {
    /// Uniform initialisation in `±1/√in`.
    pub fn new<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut sample = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        Self {
            weight: Tensor::new(vec![output, input], sample(output * input)).expect("shape"),
            bias: Tensor::vector(sample(output)),
            activation,
        }
    }

    pub fn zeroed(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Pre-activation `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        check_len("dense input", self.input_dim(), x.len())?;
        let mut z = self.weight.matvec(x);
        for (z, b) in z.iter_mut().zip(self.bias.data()) {
            *z += b;
        }
        Ok(z)
    }

    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<DenseCache, NeuralError> {
        let pre = self.pre_activation(x)?;
        let output = pre.iter().map(|&z| self.activation.apply(z, mode)).collect();
        Ok(DenseCache {
            input: x.to_vec(),
            pre,
            output,
        })
    }

    /// Gradient of the pre-activation given the gradient of the output.
    pub fn pre_grad(&self, cache: &DenseCache, grad_out: &[f64]) -> Vec<f64> {
        grad_out
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(g, (&z, &y))| g * self.activation.derivative(z, y))
            .collect()
    }

    /// Returns the input gradient and accumulates `[dW, db]` into `grads`.
    pub fn backward(&self, cache: &DenseCache, grad_out: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
        let gz = self.pre_grad(cache, grad_out);
        grads[0].add_outer(&gz, &cache.input);
        for (b, g) in grads[1].data_mut().iter_mut().zip(&gz) {
            *b += g;
        }
        self.weight.matvec_t(&gz)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub layers: Vec<DenseCache>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("non-empty network").output
    }
}

impl Mlp {
    /// `widths` lists the input width followed by each layer's output width.
    pub fn new<R: Rng>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert_eq!(widths.len(), activations.len() + 1, "one activation per layer");
        Self {
            layers: widths
                .windows(2)
                .zip(activations)
                .map(|(w, &a)| Dense::new(w[0], w[1], a, rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Dense::output_dim).collect()
    }

    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<MlpCache, NeuralError> {
        let mut caches: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(x, |c| c.output.as_slice());
            let c = layer.forward(input, mode)?;
            caches.push(c);
        }
        let cache = MlpCache { layers: caches };
        if cache.output().iter().all(|v| v.is_finite()) {
            Ok(cache)
        } else {
            Err(NeuralError::NonFinite("dense network"))
        }
    }

    pub fn output(&self, x: &[f64], mode: Mode) -> Result<Vec<f64>, NeuralError> {
        Ok(self.forward(x, mode)?.output().to_vec())
    }

    /// Input gradient; parameter gradients are accumulated into `grads`
    /// (`[W0, b0, W1, b1, ...]`).
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (i, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            g = layer.backward(c, &g, &mut grads[2 * i..2 * i + 2]);
        }
        g
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn identity_layer_passes_through() {
        let mut d = Dense::zeroed(3, 3, Activation::Identity);
        for i in 0..3 {
            d.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.5, -2.0, 3.0];
        let c = d.forward(&x, Mode::Quantized).unwrap();
        assert_eq!(c.output, x);
        let mut grads = d.zero_grads();
        assert_eq!(d.backward(&c, &[1.0, 2.0, 3.0], &mut grads), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn wrong_input_width() {
        let d = Dense::zeroed(3, 2, Activation::Tanh);
        assert!(matches!(d.forward(&[1.0], Mode::Quantized), Err(NeuralError::ShapeMismatch { .. })));
    }

    #[test]
    fn one_d_tanh_matches_finite_difference() {
        let mut rng = seed::rng(4);
        let d = Dense::new(1, 1, Activation::Tanh, &mut rng);
        let x = 0.37;
        let c = d.forward(&[x], Mode::Quantized).unwrap();
        let mut grads = d.zero_grads();
        let gx = d.backward(&c, &[1.0], &mut grads)[0];
        let h = 1e-5;
        let f = |x: f64| d.forward(&[x], Mode::Quantized).unwrap().output[0];
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!((gx - fd).abs() / fd.abs() <= 1e-6);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = Mlp::new(&[4, 8, 2], &[Activation::Tanh, Activation::Identity], &mut seed::rng(1));
        let b = Mlp::new(&[4, 8, 2], &[Activation::Tanh, Activation::Identity], &mut seed::rng(1));
        assert_eq!(a, b);
        assert!(a.layers[0].weight.data().iter().all(|w| w.abs() <= 0.5));
        assert_eq!(a.widths(), vec![8, 2]);
        assert_eq!(a.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
    }
}
