//! Conditional-distribution estimators that turn a covariate vector into
//! weights over the training cost scenarios.
//!
//! Each estimator family is registered by name in an [`EstimatorRegistry`];
//! experiments pick one through [`EstimatorSpec::kind`].

mod forest;
mod knn;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{CovariateVector, Dataset, DiscreteConditional, ScenarioPool};

pub use forest::{ForestEstimator, ForestFactory, TreeNode};
pub use knn::{KnnEstimator, KnnFactory};

/// On-disk format version of serialized weight models.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT_NAME: &str = "prescript-weight-model";

/// Hyperparameters for every registered estimator; each family reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSpec {
    pub kind: String,
    /// Neighbours for `knn`.
    pub k: usize,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            kind: "forest".into(),
            k: 10,
            trees: 100,
            max_depth: 6,
            min_leaf: 5,
            bootstrap: true,
            max_features: None,
        }
    }
}

impl EstimatorSpec {
    pub fn knn(k: usize) -> Self {
        EstimatorSpec {
            kind: "knn".into(),
            k,
            ..Default::default()
        }
    }

    pub fn forest(trees: usize, max_depth: usize, min_leaf: usize) -> Self {
        EstimatorSpec {
            kind: "forest".into(),
            trees,
            max_depth,
            min_leaf,
            ..Default::default()
        }
    }
}

/// A fitted estimator. Weights are indexed like the training set.
pub trait ConditionalEstimator: Send + Sync + Debug {
    fn kind(&self) -> &'static str;
    fn covariate_dim(&self) -> usize;
    fn training_size(&self) -> usize;
    /// Probability weights over training indices, summing to one.
    fn weights_for(&self, zeta: &[f64]) -> Vec<f64>;
    fn to_json(&self) -> Value;
}

/// Fits and deserializes one estimator family.
pub trait EstimatorFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(
        &self,
        train: &Dataset,
        spec: &EstimatorSpec,
        seed: u64,
    ) -> Result<Box<dyn ConditionalEstimator>>;
    fn from_json(&self, value: Value) -> Result<Box<dyn ConditionalEstimator>>;
}

pub struct EstimatorRegistry {
    factories: BTreeMap<&'static str, Box<dyn EstimatorFactory>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        EstimatorRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, factory: Box<dyn EstimatorFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn get(&self, name: &str) -> Result<&dyn EstimatorFactory> {
        self.factories
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "estimator",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut r = EstimatorRegistry::empty();
        r.register(Box::new(KnnFactory));
        r.register(Box::new(ForestFactory));
        r
    }
}

/// A fitted estimator bound to the training scenario pool.
#[derive(Debug)]
pub struct WeightModel {
    seed: u64,
    pool: ScenarioPool,
    estimator: Box<dyn ConditionalEstimator>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: String,
    seed: u64,
    training_size: usize,
    covariate_dim: usize,
    model: Value,
}

impl WeightModel {
    pub fn fit(train: &Dataset, spec: &EstimatorSpec, seed: u64) -> Result<Self> {
        Self::fit_with(&EstimatorRegistry::default(), train, spec, seed)
    }

    pub fn fit_with(
        registry: &EstimatorRegistry,
        train: &Dataset,
        spec: &EstimatorSpec,
        seed: u64,
    ) -> Result<Self> {
        let estimator = registry.get(&spec.kind)?.fit(train, spec, seed)?;
        Ok(WeightModel {
            seed,
            pool: train.scenario_pool(),
            estimator,
        })
    }

    pub fn kind(&self) -> &'static str {
        self.estimator.kind()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pool(&self) -> &ScenarioPool {
        &self.pool
    }

    pub fn estimator(&self) -> &dyn ConditionalEstimator {
        self.estimator.as_ref()
    }

    /// Conditional over the full training pool (zeros kept).
    pub fn weights(&self, zeta: &CovariateVector) -> Result<DiscreteConditional> {
        if zeta.len() != self.estimator.covariate_dim() {
            return Err(Error::invalid(format!(
                "covariate dimension {} differs from training dimension {}",
                zeta.len(),
                self.estimator.covariate_dim()
            )));
        }
        DiscreteConditional::new(self.pool.clone(), self.estimator.weights_for(zeta.as_slice()))
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT_NAME.into(),
            version: MODEL_FORMAT_VERSION,
            kind: self.estimator.kind().into(),
            seed: self.seed,
            training_size: self.estimator.training_size(),
            covariate_dim: self.estimator.covariate_dim(),
            model: self.estimator.to_json(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    /// Rebinds a serialized model to the training set it was fitted on.
    pub fn from_json_str(s: &str, train: &Dataset) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT_NAME {
            return Err(Error::invalid(format!("not a weight model file: {}", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        if file.training_size != train.len() || file.covariate_dim != train.covariate_dim() {
            return Err(Error::invalid("model does not match the supplied training set"));
        }
        let estimator = EstimatorRegistry::default()
            .get(&file.kind)?
            .from_json(file.model)?;
        Ok(WeightModel {
            seed: file.seed,
            pool: train.scenario_pool(),
            estimator,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, train: &Dataset) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?, train)
    }
}

#[cfg(test)]
pub(crate) mod test_data {
    use crate::model::{CostVector, CovariateVector, Dataset, Role};

    pub fn dataset(rows: &[(&[f64], &[f64])]) -> Dataset {
        Dataset::new(
            rows.iter()
                .map(|(z, _)| CovariateVector::new(z.to_vec()).unwrap())
                .collect(),
            rows.iter()
                .map(|(_, c)| CostVector::new(c.to_vec()).unwrap())
                .collect(),
            Role::Train,
        )
        .unwrap()
    }
}
