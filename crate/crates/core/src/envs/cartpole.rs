use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, Policy, Step};
use crate::seed;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
/// Half the pole length.
const POLE_HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * POLE_HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const CARTPOLE_MAX_STEPS: usize = 500;

/// Cart and pole accelerations `(ẍ, θ̈)` for state `[x, ẋ, θ, θ̇]` under a
/// horizontal force on the cart. θ is measured from upright.
pub fn cartpole_accelerations(state: [f64; 4], force: f64) -> (f64, f64) {
    let [_, _, theta, theta_dot] = state;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    (x_acc, theta_acc)
}

/// Classic cart-pole balancing with explicit Euler integration. Action 0
/// pushes left, 1 pushes right; reward 1 per step including the failing one;
/// episodes are capped at 500 steps.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
            done: true,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }
}

impl Environment for CartPole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng: ChaCha8Rng = seed::rng(seed);
        for v in &mut self.state {
            *v = rng.gen_range(-0.05..0.05);
        }
        self.steps = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        if action > 1 {
            return Err(EnvError::InvalidAction { action, count: 2 });
        }
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (x_acc, theta_acc) = cartpole_accelerations(self.state, force);
        let [x, x_dot, theta, theta_dot] = self.state;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;
        let failed = self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD;
        self.done = failed || self.steps >= CARTPOLE_MAX_STEPS;
        Ok(Step {
            obs: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
        })
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Pushes right iff `3θ + θ̇ > 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CartPoleExpert;

impl CartPoleExpert {
    pub fn action(obs: &[f64]) -> usize {
        usize::from(3.0 * obs[2] + obs[3] > 0.0)
    }
}

impl Policy for CartPoleExpert {
    fn reset(&mut self) {}

    fn act(&mut self, obs: &[f64]) -> crate::Result<usize> {
        Ok(Self::action(obs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::evaluate;

    #[test]
    fn push_right_from_rest_moves_right() {
        let mut env = CartPole::new();
        env.set_state([0.0; 4]);
        env.step(1).unwrap();
        assert!(env.state()[1] > 0.0);
    }

    #[test]
    fn step_after_done() {
        let mut env = CartPole::new();
        assert_eq!(env.step(0), Err(EnvError::StepAfterDone));
        env.reset(0);
        assert!(env.step(2).is_err());
    }

    #[test]
    fn reset_is_reproducible() {
        let mut a = CartPole::new();
        let mut b = CartPole::new();
        assert_eq!(a.reset(5), b.reset(5));
        assert_ne!(a.reset(5), a.reset(6));
        for v in a.reset(9) {
            assert!(v.abs() <= 0.05);
        }
        b.reset(9);
        for action in [0, 1, 1, 0, 1] {
            assert_eq!(a.step(action).unwrap(), {
                let s = b.step(action);
                s.unwrap()
            });
        }
    }

    #[test]
    fn constant_push_fails_early_and_return_is_capped() {
        #[derive(Clone)]
        struct Right;
        impl Policy for Right {
            fn reset(&mut self) {}
            fn act(&mut self, _: &[f64]) -> crate::Result<usize> {
                Ok(1)
            }
        }
        let r = evaluate(&Right, &CartPole::new(), 5, 0).unwrap();
        assert!(r.returns.iter().all(|&x| x < 100.0));
        let r = evaluate(&CartPoleExpert, &CartPole::new(), 5, 0).unwrap();
        assert!(r.returns.iter().all(|&x| x <= CARTPOLE_MAX_STEPS as f64));
    }

    #[test]
    fn inverted_pole_falls_away_from_upright() {
        for theta in [0.01, -0.02, 0.1] {
            let (_, acc) = cartpole_accelerations([0.0, 0.0, theta, 0.0], 0.0);
            assert_eq!(acc.signum(), f64::signum(theta));
        }
    }

    /// Lagrangian form of the same system (rod of half-length l about its
    /// centre, inertia m l²/3), solved as a 2x2 linear system and integrated
    /// with RK4. The environment's derivative integrated at the same small
    /// step must agree.
    #[test]
    fn dynamics_match_independent_lagrangian_integrator() {
        fn lagrangian(s: [f64; 4]) -> [f64; 4] {
            let (m, mc, l, g) = (POLE_MASS, CART_MASS, POLE_HALF_LENGTH, GRAVITY);
            let [_, xd, th, thd] = s;
            let (sin, cos) = th.sin_cos();
            // [mc+m, m l cos; m l cos, 4/3 m l²] [ẍ; θ̈] = [m l θ̇² sin; m g l sin]
            let (a, b, c, d) = (mc + m, m * l * cos, m * l * cos, 4.0 / 3.0 * m * l * l);
            let (r1, r2) = (m * l * thd * thd * sin, m * g * l * sin);
            let det = a * d - b * c;
            let xa = (r1 * d - b * r2) / det;
            let tha = (a * r2 - c * r1) / det;
            [xd, xa, thd, tha]
        }
        fn env_derivative(s: [f64; 4]) -> [f64; 4] {
            let (xa, tha) = cartpole_accelerations(s, 0.0);
            [s[1], xa, s[3], tha]
        }
        fn rk4(f: fn([f64; 4]) -> [f64; 4], s: [f64; 4], h: f64) -> [f64; 4] {
            let add = |s: [f64; 4], k: [f64; 4], c: f64| std::array::from_fn(|i| s[i] + c * k[i]);
            let k1 = f(s);
            let k2 = f(add(s, k1, h / 2.0));
            let k3 = f(add(s, k2, h / 2.0));
            let k4 = f(add(s, k3, h));
            std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        }
        let h = 1e-4;
        let start = [0.0, 0.0, 0.01, 0.0];
        let (mut reference, mut same_rule, mut euler) = (start, start, start);
        for _ in 0..10_000 {
            reference = rk4(lagrangian, reference, h);
            same_rule = rk4(env_derivative, same_rule, h);
            let d = env_derivative(euler);
            euler = std::array::from_fn(|i| euler[i] + h * d[i]);
        }
        for i in 0..4 {
            assert!((reference[i] - same_rule[i]).abs() < 1e-9, "equations differ in coordinate {i}");
            assert!(
                (reference[i] - euler[i]).abs() < 1e-3,
                "coordinate {i}: {} vs {}",
                reference[i],
                euler[i]
            );
        }
        assert!(reference[2] > 0.01, "pole fell back towards upright");
    }
}
