//! Typed datasets, outcomes and forest hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a feature column is interpreted when searching for splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    /// Nominal feature with values in `0..levels`.
    Categorical {
        levels: u32,
    },
    /// SNP genotype coded as minor allele count (0, 1 or 2), split as ordered numeric.
    Genotype,
}

impl FeatureKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Outcome {
    Classification { labels: Vec<u32>, classes: u32 },
    Regression { values: Vec<f64> },
    Survival { time: Vec<f64>, status: Vec<bool> },
}

impl Outcome {
    pub fn len(&self) -> usize {
        match self {
            Outcome::Classification { labels, .. } => labels.len(),
            Outcome::Regression { values } => values.len(),
            Outcome::Survival { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Outcome::Classification { .. } => "classification",
            Outcome::Regression { .. } => "regression",
            Outcome::Survival { .. } => "survival",
        }
    }
}

/// One violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("dataset needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dataset has no features")]
    NoFeatures,
    #[error("feature {feature}: expected {expected} values, got {actual}")]
    ColumnLength { feature: usize, expected: usize, actual: usize },
    #[error("expected {expected} feature kinds/names, got {actual}")]
    MetadataLength { expected: usize, actual: usize },
    #[error("outcome has {actual} entries, expected {expected}")]
    OutcomeLength { expected: usize, actual: usize },
    #[error("feature {feature}, row {row}: non-finite value")]
    NonFinite { feature: usize, row: usize },
    #[error("feature {feature}, row {row}: value {value} is not a level of a categorical({levels}) feature")]
    BadCategory { feature: usize, row: usize, value: f64, levels: u32 },
    #[error("feature {feature}: categorical feature needs at least one level")]
    NoLevels { feature: usize },
    #[error("feature {feature}, row {row}: genotype value {value} not in {{0,1,2}}")]
    BadGenotype { feature: usize, row: usize, value: f64 },
    #[error("classification needs at least 2 classes, got {0}")]
    TooFewClasses(u32),
    #[error("class label {label} out of range [0, {classes}), row {row}")]
    LabelOutOfRange { row: usize, label: u32, classes: u32 },
    #[error("non-finite regression outcome, row {row}")]
    NonFiniteOutcome { row: usize },
    #[error("non-positive survival time, row {row}")]
    NonPositiveTime { row: usize },
    #[error("survival time and status lengths differ ({time} vs {status})")]
    StatusLength { time: usize, status: usize },
}

/// Complete (no missing values) feature matrix stored column-wise, with a typed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    kinds: Vec<FeatureKind>,
    names: Vec<String>,
    outcome: Outcome,
}

impl Dataset {
    /// Builds a dataset and checks every invariant; all violations are reported together.
    pub fn new(
        columns: Vec<Vec<f64>>,
        kinds: Vec<FeatureKind>,
        names: Vec<String>,
        outcome: Outcome,
    ) -> Result<Self, Vec<ValidationError>> {
        let ds = Dataset { columns, kinds, names, outcome };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset with default names `X1..Xp`.
    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        kinds: Vec<FeatureKind>,
        outcome: Outcome,
    ) -> Result<Self, Vec<ValidationError>> {
        let names = (1..=columns.len()).map(|i| format!("X{i}")).collect();
        Self::new(columns, kinds, names, outcome)
    }

    pub fn n_samples(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn kind(&self, feature: usize) -> FeatureKind {
        self.kinds[feature]
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn outcome(&self) -> &Outcome {
        &self.outcome
    }

    /// Keeps only the given features (in the given order).
    pub fn select_features(&self, features: &[usize]) -> Result<Dataset, Vec<ValidationError>> {
        Dataset::new(
            features.iter().map(|&f| self.columns[f].clone()).collect(),
            features.iter().map(|&f| self.kinds[f]).collect(),
            features.iter().map(|&f| self.names[f].clone()).collect(),
            self.outcome.clone(),
        )
    }

    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errors = Vec::new();
        let n = self.outcome.len();
        let p = self.columns.len();
        if n < 2 {
            errors.push(ValidationError::TooFewSamples(n));
        }
        if p == 0 {
            errors.push(ValidationError::NoFeatures);
        }
        if self.kinds.len() != p {
            errors.push(ValidationError::MetadataLength { expected: p, actual: self.kinds.len() });
        }
        if self.names.len() != p {
            errors.push(ValidationError::MetadataLength { expected: p, actual: self.names.len() });
        }

        for (feature, column) in self.columns.iter().enumerate() {
            if column.len() != n {
                errors.push(ValidationError::ColumnLength { feature, expected: n, actual: column.len() });
            }
            let kind = self.kinds.get(feature).copied().unwrap_or(FeatureKind::Continuous);
            if let FeatureKind::Categorical { levels: 0 } = kind {
                errors.push(ValidationError::NoLevels { feature });
                continue;
            }
            for (row, &value) in column.iter().enumerate() {
                if !value.is_finite() {
                    errors.push(ValidationError::NonFinite { feature, row });
                    continue;
                }
                match kind {
                    FeatureKind::Continuous => {}
                    FeatureKind::Categorical { levels } => {
                        if value < 0.0 || value.fract() != 0.0 || value >= levels as f64 {
                            errors.push(ValidationError::BadCategory { feature, row, value, levels });
                        }
                    }
                    FeatureKind::Genotype => {
                        if !(value == 0.0 || value == 1.0 || value == 2.0) {
                            errors.push(ValidationError::BadGenotype { feature, row, value });
                        }
                    }
                }
            }
        }

        match &self.outcome {
            Outcome::Classification { labels, classes } => {
                if *classes < 2 {
                    errors.push(ValidationError::TooFewClasses(*classes));
                }
                for (row, &label) in labels.iter().enumerate() {
                    if label >= *classes {
                        errors.push(ValidationError::LabelOutOfRange { row, label, classes: *classes });
                    }
                }
            }
            Outcome::Regression { values } => {
                for (row, v) in values.iter().enumerate() {
                    if !v.is_finite() {
                        errors.push(ValidationError::NonFiniteOutcome { row });
                    }
                }
            }
            Outcome::Survival { time, status } => {
                if time.len() != status.len() {
                    errors.push(ValidationError::StatusLength { time: time.len(), status: status.len() });
                }
                for (row, &t) in time.iter().enumerate() {
                    // also rejects NaN
                    if !(t > 0.0 && t.is_finite()) {
                        errors.push(ValidationError::NonPositiveTime { row });
                    }
                }
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("ntree must be positive")]
    ZeroTrees,
    #[error("mtry must be in 1..={candidates}, got {mtry}")]
    BadMtry { mtry: usize, candidates: usize },
    #[error("min_node_size must be positive")]
    ZeroMinNodeSize,
    #[error("threads must be positive")]
    ZeroThreads,
}

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    /// Candidate features drawn (without replacement) at each node.
    pub mtry: usize,
    /// Nodes with at most this many (in-bag) samples become leaves.
    pub min_node_size: usize,
    /// Surrogate splits stored per node.
    pub surrogates: usize,
    pub seed: u64,
    /// Worker threads. Results do not depend on it, so it is left out of serialized reports.
    #[serde(skip, default = "one_thread")]
    pub threads: usize,
}

fn one_thread() -> usize {
    1
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { ntree: 500, mtry: 1, min_node_size: 1, surrogates: 0, seed: 1, threads: 1 }
    }
}

impl ForestParams {
    /// Checks the parameters against the number of candidate features the forest will see.
    pub fn validate(&self, candidates: usize) -> Result<(), ParamError> {
        if self.ntree == 0 {
            return Err(ParamError::ZeroTrees);
        }
        if self.mtry == 0 || self.mtry > candidates {
            return Err(ParamError::BadMtry { mtry: self.mtry, candidates });
        }
        if self.min_node_size == 0 {
            return Err(ParamError::ZeroMinNodeSize);
        }
        if self.threads == 0 {
            return Err(ParamError::ZeroThreads);
        }
        Ok(())
    }
}

/// `floor(p^(3/4))`, at least 1 (177 for p = 1000).
pub fn mtry_three_quarters(p: usize) -> usize {
    ((p as f64).powf(0.75).floor() as usize).max(1)
}

/// `floor(sqrt(p))`, at least 1.
pub fn mtry_sqrt(p: usize) -> usize {
    ((p as f64).sqrt().floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls(labels: Vec<u32>) -> Outcome {
        Outcome::Classification { labels, classes: 2 }
    }

    #[test]
    fn categorical_in_range_is_valid() {
        let ds = Dataset::from_columns(
            vec![vec![0.0, 1.0, 2.0]],
            vec![FeatureKind::Categorical { levels: 3 }],
            cls(vec![0, 1, 0]),
        );
        assert!(ds.is_ok());
    }

    #[test]
    fn bad_category_names_feature_and_row() {
        let errs = Dataset::from_columns(
            vec![vec![0.0, 1.0], vec![0.0, 1.0, 5.0]],
            vec![FeatureKind::Continuous, FeatureKind::Categorical { levels: 3 }],
            cls(vec![0, 1, 0]),
        )
        .unwrap_err();
        assert!(errs.contains(&ValidationError::ColumnLength { feature: 0, expected: 3, actual: 2 }));
        assert!(errs.contains(&ValidationError::BadCategory { feature: 1, row: 2, value: 5.0, levels: 3 }));
    }

    #[test]
    fn zero_survival_time_is_reported() {
        let errs = Dataset::from_columns(
            vec![vec![0.1, 0.2, 0.3]],
            vec![FeatureKind::Continuous],
            Outcome::Survival { time: vec![1.0, 2.0, 0.0], status: vec![true, false, true] },
        )
        .unwrap_err();
        assert_eq!(errs, vec![ValidationError::NonPositiveTime { row: 2 }]);
        assert_eq!(errs[0].to_string(), "non-positive survival time, row 2");
    }

    #[test]
    fn genotype_and_label_checks() {
        let errs = Dataset::from_columns(
            vec![vec![0.0, 3.0], vec![f64::NAN, 1.0]],
            vec![FeatureKind::Genotype, FeatureKind::Continuous],
            cls(vec![0, 2]),
        )
        .unwrap_err();
        assert_eq!(errs.len(), 3);
        assert!(errs.contains(&ValidationError::BadGenotype { feature: 0, row: 1, value: 3.0 }));
        assert!(errs.contains(&ValidationError::NonFinite { feature: 1, row: 0 }));
        assert!(errs.contains(&ValidationError::LabelOutOfRange { row: 1, label: 2, classes: 2 }));
    }

    #[test]
    fn params_validation() {
        let mut p = ForestParams { mtry: 3, ..Default::default() };
        assert!(p.validate(3).is_ok());
        assert_eq!(p.validate(2), Err(ParamError::BadMtry { mtry: 3, candidates: 2 }));
        p.ntree = 0;
        assert_eq!(p.validate(3), Err(ParamError::ZeroTrees));
    }

    #[test]
    fn mtry_defaults() {
        assert_eq!(mtry_three_quarters(1000), 177);
        assert_eq!(mtry_three_quarters(200), 53);
        assert_eq!(mtry_three_quarters(300), 72);
        assert_eq!(mtry_sqrt(10), 3);
    }
}
