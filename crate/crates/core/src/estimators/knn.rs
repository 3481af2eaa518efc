use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ConditionalEstimator, EstimatorFactory, EstimatorSpec};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Uniform weight on the `k` nearest training contexts (Euclidean distance,
/// lower index wins ties).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnEstimator {
    k: usize,
    contexts: Vec<Vec<f64>>,
}

impl KnnEstimator {
    pub fn new(k: usize, contexts: Vec<Vec<f64>>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("knn needs at least one training point"));
        }
        if k == 0 || k > contexts.len() {
            return Err(Error::invalid(format!(
                "k = {k} must lie in 1..={}",
                contexts.len()
            )));
        }
        let p = contexts[0].len();
        if contexts.iter().any(|z| z.len() != p) {
            return Err(Error::invalid("ragged training contexts"));
        }
        Ok(KnnEstimator { k, contexts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    /// Indices of the `k` nearest training points, nearest first.
    pub fn neighbours(&self, zeta: &[f64]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .contexts
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let d2: f64 = z.iter().zip(zeta).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.truncate(self.k);
        order.into_iter().map(|(_, i)| i).collect()
    }
}

impl ConditionalEstimator for KnnEstimator {
    fn kind(&self) -> &'static str {
        "knn"
    }

    fn covariate_dim(&self) -> usize {
        self.contexts[0].len()
    }

    fn training_size(&self) -> usize {
        self.contexts.len()
    }

    fn weights_for(&self, zeta: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.contexts.len()];
        let share = 1.0 / self.k as f64;
        for i in self.neighbours(zeta) {
            w[i] = share;
        }
        w
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("knn serializes")
    }
}

pub struct KnnFactory;

impl EstimatorFactory for KnnFactory {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(
        &self,
        train: &Dataset,
        spec: &EstimatorSpec,
        _seed: u64,
    ) -> Result<Box<dyn ConditionalEstimator>> {
        let contexts = train.contexts().iter().map(|z| z.as_slice().to_vec()).collect();
        Ok(Box::new(KnnEstimator::new(spec.k, contexts)?))
    }

    fn from_json(&self, value: Value) -> Result<Box<dyn ConditionalEstimator>> {
        let raw: KnnEstimator = serde_json::from_value(value)?;
        Ok(Box::new(KnnEstimator::new(raw.k, raw.contexts)?))
    }
}
