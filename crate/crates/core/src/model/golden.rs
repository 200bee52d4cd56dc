use super::Backbone;
use crate::error::{Error, Result};
use crate::weights::WeightStore;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureParity {
    pub index: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    pub fixtures: Vec<FixtureParity>,
}

impl ParityReport {
    pub fn max_abs(&self) -> f64 {
        self.fixtures.iter().map(|f| f.max_abs).fold(0.0, f64::max)
    }

    pub fn mean_abs(&self) -> f64 {
        self.fixtures.iter().map(|f| f.mean_abs).sum::<f64>() / self.fixtures.len().max(1) as f64
    }

    pub fn passes(&self, max_tol: f64, mean_tol: f64) -> bool {
        !self.fixtures.is_empty() && self.fixtures.iter().all(|f| f.max_abs < max_tol && f.mean_abs < mean_tol)
    }
}

/// Compares the backbone against reference activations stored as
/// `fixture_{i}.input` (`1×s×s×3`) and `fixture_{i}.feature` pairs.
pub fn check_parity(backbone: &Backbone, golden: &WeightStore) -> Result<ParityReport> {
    let mut fixtures = Vec::new();
    for index in 0.. {
        let Some(input) = golden.get(&format!("fixture_{index}.input")) else {
            break;
        };
        let expected = golden
            .get(&format!("fixture_{index}.feature"))
            .ok_or_else(|| Error::Format {
                what: "golden file",
                message: format!("fixture_{index}.feature missing"),
            })?;
        let got = backbone.forward_features(input)?;
        if got.len() != expected.len() {
            return Err(Error::shape("golden feature", got.dims(), expected.dims()));
        }
        let diffs: Vec<f64> = got
            .data()
            .iter()
            .zip(expected.data())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .collect();
        fixtures.push(FixtureParity {
            index,
            max_abs: diffs.iter().copied().fold(0.0, f64::max),
            mean_abs: diffs.iter().sum::<f64>() / diffs.len() as f64,
        });
    }
    if fixtures.is_empty() {
        return Err(Error::Format {
            what: "golden file",
            message: "no fixture_0.input tensor".into(),
        });
    }
    Ok(ParityReport { fixtures })
}
