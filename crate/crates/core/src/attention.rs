//! Differential attention at decision points.
//!
//! Two raw observations that select different branches of a machine are
//! encoded to different codes. For every code position `f` where they
//! differ, Integrated Gradients attributes the change of the continuous
//! pre-quantization unit `f` between the two observations to the raw input
//! coordinates, using the second observation as the baseline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{ternary_tanh_forward, Dense, DenseCache, Mlp, Mode};
use crate::policy::Rpn;
use crate::qbn::Qbn;
use crate::{Result, TernaryCode};

pub const DEFAULT_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("{what}: expected width {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gradient is not finite along the integration path")]
    NonFiniteGradient,
    #[error("observations encode to the same code; they do not select different branches")]
    IdenticalCodes,
    #[error("integration needs at least one step")]
    ZeroSteps,
    #[error("unit {unit} out of range for a code of width {width}")]
    UnitOutOfRange { unit: usize, width: usize },
}

fn check(what: &'static str, expected: usize, found: usize) -> Result<(), AttentionError> {
    if expected == found {
        Ok(())
    } else {
        Err(AttentionError::ShapeMismatch {
            what,
            expected,
            found,
        })
    }
}

/// A differentiable real function of a vector.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Midpoint-rule Integrated Gradients of `f` at `o` against baseline `ob`:
/// `(o_i - ob_i) · mean_k ∂f/∂x_i(ob + (k - ½)/m · (o - ob))`, `k = 1..=m`.
pub fn integrated_gradients(f: &dyn ScalarField, o: &[f64], ob: &[f64], m: usize) -> Result<Vec<f64>> {
    check("observation", f.dim(), o.len())?;
    check("baseline", f.dim(), ob.len())?;
    if m == 0 {
        return Err(AttentionError::ZeroSteps.into());
    }
    let grads: Vec<Vec<f64>> = (1..=m)
        .into_par_iter()
        .map(|k| {
            let a = (k as f64 - 0.5) / m as f64;
            let x: Vec<f64> = o.iter().zip(ob).map(|(o, b)| b + a * (o - b)).collect();
            f.gradient(&x)
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; o.len()];
    for g in &grads {
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    if !sum.iter().all(|v| v.is_finite()) {
        return Err(AttentionError::NonFiniteGradient.into());
    }
    Ok(sum
        .iter()
        .zip(o.iter().zip(ob))
        .map(|(s, (o, b))| (o - b) * s / m as f64)
        .collect())
}

/// An encoder exposing its continuous vector just before ternary rounding.
pub trait PreQuantEncoder: Sync {
    fn input_dim(&self) -> usize;
    fn code_dim(&self) -> usize;
    fn pre_quant(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of pre-quantization unit `unit` with respect to the input.
    fn unit_gradient(&self, x: &[f64], unit: usize) -> Result<Vec<f64>>;

    fn code(&self, x: &[f64]) -> Result<TernaryCode> {
        let q: Vec<f64> = self.pre_quant(x)?.into_iter().map(ternary_tanh_forward).collect();
        Ok(TernaryCode::from_f64s(&q).expect("rounded values are ternary"))
    }
}

/// One pre-quantization unit viewed as a scalar field.
pub struct EncoderUnit<'a, E: PreQuantEncoder + ?Sized> {
    pub encoder: &'a E,
    pub unit: usize,
}

impl<E: PreQuantEncoder + ?Sized> ScalarField for EncoderUnit<'_, E> {
    fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.encoder.pre_quant(x)?[self.unit])
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.unit_gradient(x, self.unit)
    }
}

fn input_grad(layer: &Dense, cache: &DenseCache, g: &[f64]) -> Vec<f64> {
    layer.weight.matvec_t(&layer.pre_grad(cache, g))
}

/// Runs every layer but the last, whose pre-activation is the result.
fn pre_of_last(net: &Mlp, x: &[f64]) -> Result<(Vec<DenseCache>, Vec<f64>)> {
    let (last, hidden) = net.layers.split_last().expect("non-empty network");
    let mut caches: Vec<DenseCache> = Vec::new();
    for layer in hidden {
        let input = caches.last().map_or(x, |c| c.output.as_slice());
        let c = layer.forward(input, Mode::Quantized)?;
        caches.push(c);
    }
    let input = caches.last().map_or(x, |c| c.output.as_slice());
    let pre = last.pre_activation(input)?;
    Ok((caches, pre))
}

/// Gradient of unit `unit` of the last layer's pre-activation.
fn pre_unit_grad(net: &Mlp, caches: &[DenseCache], unit: usize) -> Vec<f64> {
    let last = net.layers.last().expect("non-empty network");
    let mut g = last.weight.row(unit).to_vec();
    for (layer, c) in net.layers.iter().zip(caches).rev() {
        g = input_grad(layer, c, &g);
    }
    g
}

fn check_unit(unit: usize, width: usize) -> Result<(), AttentionError> {
    if unit < width {
        Ok(())
    } else {
        Err(AttentionError::UnitOutOfRange { unit, width })
    }
}

impl PreQuantEncoder for Qbn {
    fn input_dim(&self) -> usize {
        Qbn::input_dim(self)
    }

    fn code_dim(&self) -> usize {
        self.bottleneck()
    }

    fn pre_quant(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.1)
    }

    fn unit_gradient(&self, x: &[f64], unit: usize) -> Result<Vec<f64>> {
        check_unit(unit, self.bottleneck())?;
        let (caches, _) = pre_of_last(&self.encoder, x)?;
        Ok(pre_unit_grad(&self.encoder, &caches, unit))
    }
}

/// `E_o` on raw observations: the policy's feature layers followed by the
/// observation quantizer's encoder.
#[derive(Debug, Clone, Copy)]
pub struct ObservationEncoderPath<'a> {
    pub rpn: &'a Rpn,
    pub q_o: &'a Qbn,
}

impl<'a> ObservationEncoderPath<'a> {
    pub fn new(rpn: &'a Rpn, q_o: &'a Qbn) -> Result<Self> {
        check("observation quantizer input", rpn.feature_dim(), q_o.input_dim())?;
        Ok(Self { rpn, q_o })
    }
}

impl PreQuantEncoder for ObservationEncoderPath<'_> {
    fn input_dim(&self) -> usize {
        self.rpn.obs_dim()
    }

    fn code_dim(&self) -> usize {
        self.q_o.bottleneck()
    }

    fn pre_quant(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.q_o.pre_quant(&self.rpn.feature(x)?)
    }

    fn unit_gradient(&self, x: &[f64], unit: usize) -> Result<Vec<f64>> {
        check("observation", self.input_dim(), x.len())?;
        let feat = self.rpn.features.forward(x, Mode::Quantized)?;
        let mut g = self.q_o.unit_gradient(feat.output(), unit)?;
        for (layer, c) in self.rpn.features.layers.iter().zip(&feat.layers).rev() {
            g = input_grad(layer, c, &g);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub o1: Vec<f64>,
    pub o2: Vec<f64>,
    pub baseline_is_o2: bool,
    /// Code positions where the two observations differ.
    pub differing: Vec<usize>,
    /// Attribution over raw coordinates for each differing position.
    pub per_feature: BTreeMap<usize, Vec<f64>>,
    /// `f(o1) - f(o2)` for each differing position.
    pub response_delta: BTreeMap<usize, f64>,
    /// Mean attribution magnitude over the differing positions.
    pub combined: Vec<f64>,
    pub steps: usize,
}

impl AttentionMap {
    /// `|Σ_i S_i[f] − (f(o1) − f(o2))|` for each differing position.
    pub fn completeness_residuals(&self) -> BTreeMap<usize, f64> {
        self.per_feature
            .iter()
            .map(|(f, s)| (*f, (s.iter().sum::<f64>() - self.response_delta[f]).abs()))
            .collect()
    }
}

/// Positions where the codes of `o1` and `o2` differ.
pub fn differing_features<E: PreQuantEncoder + ?Sized>(enc: &E, o1: &[f64], o2: &[f64]) -> Result<Vec<usize>> {
    let (a, b) = (enc.code(o1)?, enc.code(o2)?);
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(j, _)| j)
        .collect())
}

/// Integrated Gradients of each differing unit from baseline `o2` to `o1`.
pub fn differential_map<E: PreQuantEncoder + ?Sized>(enc: &E, o1: &[f64], o2: &[f64], m: usize) -> Result<AttentionMap> {
    check("first observation", enc.input_dim(), o1.len())?;
    check("second observation", enc.input_dim(), o2.len())?;
    let differing = differing_features(enc, o1, o2)?;
    if differing.is_empty() {
        return Err(AttentionError::IdenticalCodes.into());
    }
    let (p1, p2) = (enc.pre_quant(o1)?, enc.pre_quant(o2)?);
    let mut per_feature = BTreeMap::new();
    let mut response_delta = BTreeMap::new();
    let mut combined = vec![0.0; o1.len()];
    for &f in &differing {
        let s = integrated_gradients(&EncoderUnit { encoder: enc, unit: f }, o1, o2, m)?;
        for (c, v) in combined.iter_mut().zip(&s) {
            *c += v.abs();
        }
        per_feature.insert(f, s);
        response_delta.insert(f, p1[f] - p2[f]);
    }
    for c in &mut combined {
        *c /= differing.len() as f64;
    }
    Ok(AttentionMap {
        o1: o1.to_vec(),
        o2: o2.to_vec(),
        baseline_is_o2: true,
        differing,
        per_feature,
        response_delta,
        combined,
        steps: m,
    })
}

/// Raw coordinates by combined attribution, largest first; ties keep the
/// lower index first.
pub fn rank_features(map: &AttentionMap) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.combined.len()).collect();
    idx.sort_by(|&a, &b| map.combined[b].total_cmp(&map.combined[a]));
    idx
}
