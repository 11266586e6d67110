use super::Tensor;

/// Adam with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(0.1);
        for _ in 0..10 {
            adam.step(vec![&mut p], &[Tensor::zeros(&[2])]);
        }
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn norm_ten_is_halved() {
        let mut g = vec![Tensor::vector(vec![6.0]), Tensor::vector(vec![8.0])];
        assert_eq!(clip_grad_norm(&mut g, 5.0), 10.0);
        assert_eq!(g[0].data(), &[3.0]);
        assert_eq!(g[1].data(), &[4.0]);
    }

    #[test]
    fn quadratic_converges_to_its_minimum() {
        // (p - 3)^2 has its minimum at 3.
        let mut p = Tensor::vector(vec![-4.0]);
        let mut adam = Adam::new(0.05);
        for step in 0..20_000 {
            let g = 2.0 * (p.data()[0] - 3.0);
            adam.step(vec![&mut p], &[Tensor::vector(vec![g])]);
            if (p.data()[0] - 3.0).abs() < 1e-6 && step > 100 {
                break;
            }
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-6, "{}", p.data()[0]);
    }

    proptest! {
        #[test]
        fn clipping_bounds_norm_and_keeps_direction(
            v in prop::collection::vec(-100.0f64..100.0, 1..10),
            max in 0.1f64..20.0,
        ) {
            let mut g = vec![Tensor::vector(v.clone())];
            clip_grad_norm(&mut g, max);
            prop_assert!(global_norm(&g) <= max * (1.0 + 1e-12));
            let k = g[0].data().iter().zip(&v).find(|(_, o)| o.abs() > 1e-9).map(|(a, o)| a / o);
            if let Some(k) = k {
                prop_assert!(k > 0.0);
                for (a, o) in g[0].data().iter().zip(&v) {
                    prop_assert!((a - k * o).abs() <= 1e-9 * (1.0 + o.abs()));
                }
            }
        }
    }
}
