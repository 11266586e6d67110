use serde::{Deserialize, Serialize};

/// Whether the ternary quantizer rounds (normal use) or passes its smooth
/// inner map through (used for finite-difference checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Quantized,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Relu6,
    Elu,
    TernaryTanh,
}

/// The smooth inner map `1.5·tanh(x) + 0.5·tanh(−3x)`.
pub fn ternary_tanh_smooth(x: f64) -> f64 {
    1.5 * x.tanh() + 0.5 * (-3.0 * x).tanh()
}

/// Rounds the smooth map to `{-1, 0, 1}` with thresholds at ±0.5.
pub fn ternary_tanh_forward(x: f64) -> f64 {
    let t = ternary_tanh_smooth(x);
    if t > 0.5 {
        1.0
    } else if t < -0.5 {
        -1.0
    } else {
        0.0
    }
}

/// Derivative of the smooth map, used as the straight-through gradient.
pub fn ternary_tanh_grad(x: f64) -> f64 {
    let sech2 = |v: f64| 1.0 - v.tanh().powi(2);
    1.5 * sech2(x) - 1.5 * sech2(3.0 * x)
}

impl Activation {
    pub fn apply(self, x: f64, mode: Mode) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::TernaryTanh => match mode {
                Mode::Quantized => ternary_tanh_forward(x),
                Mode::Smooth => ternary_tanh_smooth(x),
            },
        }
    }

    /// Derivative with respect to the pre-activation `x`, given the output
    /// `y`. ReLU6 uses 0 at and beyond its corners.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::TernaryTanh => ternary_tanh_grad(x),
        }
    }
}
