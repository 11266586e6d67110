use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("value {0} is not a ternary digit (expected -1, 0 or 1)")]
pub struct InvalidTrit(pub f64);

/// A vector over {-1, 0, 1}: the discrete output of a quantized bottleneck.
///
/// Rendered as a string of `+`, `0`, `-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct TernaryCode(Vec<i8>);

impl TernaryCode {
    pub fn new(trits: Vec<i8>) -> Result<Self, InvalidTrit> {
        if let Some(&bad) = trits.iter().find(|t| !(-1..=1).contains(*t)) {
            return Err(InvalidTrit(bad as f64));
        }
        Ok(Self(trits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Balanced base-3 style enumeration of codes: digit `k` of `index` in
    /// base 3, mapped 0 -> 0, 1 -> +1, 2 -> -1. Distinct indices below `3^len`
    /// give distinct codes.
    pub fn from_index(mut index: usize, len: usize) -> Self {
        let mut trits = Vec::with_capacity(len);
        for _ in 0..len {
            trits.push(match index % 3 {
                0 => 0,
                1 => 1,
                _ => -1,
            });
            index /= 3;
        }
        Self(trits)
    }

    /// Accepts only values that are exactly -1, 0 or 1.
    pub fn from_f64s(values: &[f64]) -> Result<Self, InvalidTrit> {
        values
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else if v == -1.0 {
                    Ok(-1)
                } else {
                    Err(InvalidTrit(v))
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn parse_symbols(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Some(1),
                '0' => Some(0),
                '-' => Some(-1),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.0.iter().map(|&t| f64::from(t)).collect()
    }

    /// Number of positions where the codes differ. Panics on length mismatch.
    pub fn hamming(&self, other: &Self) -> usize {
        assert_eq!(self.len(), other.len(), "hamming distance of unequal codes");
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for TernaryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            f.write_str(match t {
                1 => "+",
                0 => "0",
                _ => "-",
            })?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<i64>> for TernaryCode {
    type Error = InvalidTrit;

    fn try_from(v: Vec<i64>) -> Result<Self, InvalidTrit> {
        v.into_iter()
            .map(|t| i8::try_from(t).map_err(|_| InvalidTrit(t as f64)))
            .collect::<Result<Vec<_>, _>>()
            .and_then(Self::new)
    }
}

impl From<TernaryCode> for Vec<i64> {
    fn from(c: TernaryCode) -> Self {
        c.0.into_iter().map(i64::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(TernaryCode::new(vec![0, 2]).is_err());
        assert!(TernaryCode::from_f64s(&[0.5]).is_err());
        assert!(serde_json::from_str::<TernaryCode>("[1,0,-2]").is_err());
    }

    #[test]
    fn symbols_round_trip() {
        let c = TernaryCode::new(vec![1, 0, -1, -1]).unwrap();
        assert_eq!(c.to_string(), "+0--");
        assert_eq!(TernaryCode::parse_symbols("+0--"), Some(c));
        assert_eq!(TernaryCode::parse_symbols("+x"), None);
    }

    #[test]
    fn from_index_is_injective() {
        let codes: std::collections::BTreeSet<_> =
            (0..81).map(|i| TernaryCode::from_index(i, 4)).collect();
        assert_eq!(codes.len(), 81);
    }
}
