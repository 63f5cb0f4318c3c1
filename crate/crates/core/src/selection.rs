//! Null distributions, empirical p-values and threshold selection for MFI and MIR.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::importance::mir_unchecked;
use crate::surrogates::SquareMatrix;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_MIN_NONPOSITIVE: usize = 100;
pub const DEFAULT_REPETITIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("only {count} non-positive values, at least {required} needed for mirroring; use the permutation method")]
    InsufficientNonPositive { count: usize, required: usize },
    #[error("null distribution is empty")]
    EmptyNull,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("dimension mismatch: {0} values vs {1}x{1} matrix")]
    Dimension(usize, usize),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullKind {
    Janitza,
    PermutationMfi,
    PermutationMir,
}

/// How the null distribution is chosen. `Auto` mirrors when enough non-positive values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullMethod {
    #[default]
    Auto,
    Janitza,
    Permutation,
}

/// Sorted (ascending), non-empty sample of null values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    samples: Vec<f64>,
    pub kind: NullKind,
}

impl NullDistribution {
    pub fn new(mut samples: Vec<f64>, kind: NullKind) -> Result<Self, SelectionError> {
        if samples.is_empty() {
            return Err(SelectionError::EmptyNull);
        }
        samples.sort_by(f64::total_cmp);
        Ok(NullDistribution { samples, kind })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn mirrored(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for v in values {
        out.push(v);
        if v != 0.0 {
            out.push(-v);
        }
    }
    out
}

/// Non-positive values plus the mirror image of the negative ones.
pub fn janitza_null(values: &[f64], min_nonpositive: usize) -> Result<NullDistribution, SelectionError> {
    let count = values.iter().filter(|&&v| v <= 0.0).count();
    if count < min_nonpositive.max(1) {
        return Err(SelectionError::InsufficientNonPositive { count, required: min_nonpositive.max(1) });
    }
    NullDistribution::new(mirrored(values.iter().copied().filter(|&v| v <= 0.0)), NullKind::Janitza)
}

/// Off-diagonal entries of the permuted-feature relation block plus the mirror image of the non-zero ones.
/// An all-zero block gives the degenerate null `{0}`.
pub fn permutation_null_mfi(m_z: &SquareMatrix) -> NullDistribution {
    let off: Vec<f64> = m_z.off_diagonal().collect();
    if off.iter().all(|&v| v == 0.0) {
        warn!("relations among permuted features are all zero; MFI null distribution is degenerate");
        return NullDistribution { samples: vec![0.0], kind: NullKind::PermutationMfi };
    }
    NullDistribution::new(mirrored(off.into_iter()), NullKind::PermutationMfi).expect("non-empty")
}

/// For every repetition a uniform permutation `pi` of the features is drawn and the values
/// `air[pi(i)] + sum_{j != i} m_z[i][j] * air[pi(j)]` are emitted for all `i`.
/// Repetition `r` uses its own stream of a generator seeded from `rng`; output order is by repetition.
pub fn permutation_null_mir<R: Rng + ?Sized>(
    m_z: &SquareMatrix,
    air: &[f64],
    repetitions: usize,
    rng: &mut R,
) -> Result<NullDistribution, SelectionError> {
    if air.len() != m_z.size {
        return Err(SelectionError::Dimension(air.len(), m_z.size));
    }
    if repetitions == 0 {
        return Err(SelectionError::NoRepetitions);
    }
    let seed: u64 = rng.random();
    let samples: Vec<f64> = (0..repetitions)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut permuted = air.to_vec();
            permuted.shuffle(&mut rng);
            mir_unchecked(&permuted, m_z)
        })
        .collect();
    NullDistribution::new(samples, NullKind::PermutationMir)
}

/// Add-one empirical p-value `(1 + #{v >= observed}) / (1 + |null|)`.
pub fn pvalue(observed: f64, null: &NullDistribution) -> f64 {
    let below = null.samples.partition_point(|&v| v < observed);
    let at_least = null.samples.len() - below;
    (1 + at_least) as f64 / (1 + null.samples.len()) as f64
}

pub fn pvalues(observed: &[f64], null: &NullDistribution) -> Vec<f64> {
    observed.iter().map(|&o| pvalue(o, null)).collect()
}

/// Benjamini-Hochberg adjusted p-values (step-up, monotone, capped at 1).
pub fn benjamini_hochberg(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[b].total_cmp(&pvalues[a]).then(b.cmp(&a)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (k, &i) in order.iter().enumerate() {
        let rank = m - k;
        running = running.min(pvalues[i] * m as f64 / rank as f64);
        adjusted[i] = running;
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub hypothesis: String,
    pub alpha: f64,
    pub pvalues: Vec<f64>,
    /// Indices with `p <= alpha`, ascending.
    pub selected: Vec<usize>,
}

pub fn select(hypothesis: &str, pvalues: &[f64], alpha: f64) -> Result<SelectionResult, SelectionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SelectionError::BadAlpha(alpha));
    }
    Ok(SelectionResult {
        hypothesis: hypothesis.to_string(),
        alpha,
        pvalues: pvalues.to_vec(),
        selected: (0..pvalues.len()).filter(|&i| pvalues[i] <= alpha).collect(),
    })
}

/// Mirrored null for importance values. If fewer than `min_nonpositive` non-positive values
/// exist, the ones available are used anyway; with none at all every p-value is 1.
pub(crate) fn importance_pvalues(values: &[f64], min_nonpositive: usize) -> Vec<f64> {
    match janitza_null(values, min_nonpositive) {
        Ok(null) => pvalues(values, &null),
        Err(SelectionError::InsufficientNonPositive { count: 0, .. }) => {
            warn!("no non-positive importance values; all p-values set to 1");
            vec![1.0; values.len()]
        }
        Err(_) => {
            warn!("few non-positive importance values; mirrored null is coarse");
            pvalues(values, &janitza_null(values, 1).expect("at least one non-positive value"))
        }
    }
}

/// Number of entries that are `<= 0`.
pub fn count_nonpositive(values: &[f64]) -> usize {
    values.iter().filter(|&&v| v <= 0.0).count()
}

/// Resolves `Auto` to a concrete method given the observed values.
pub fn resolve_method(method: NullMethod, values: &[f64], min_nonpositive: usize) -> NullMethod {
    match method {
        NullMethod::Auto if count_nonpositive(values) >= min_nonpositive => NullMethod::Janitza,
        NullMethod::Auto => NullMethod::Permutation,
        m => m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn janitza_example() {
        let null = janitza_null(&[-2.0, -1.0, 0.0, 3.0, 5.0], 1).unwrap();
        assert_eq!(null.samples(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(
            janitza_null(&[1.0, 2.0], 1),
            Err(SelectionError::InsufficientNonPositive { count: 0, required: 1 })
        );
        assert!(janitza_null(&[-1.0, 2.0], 100).is_err());
    }

    #[test]
    fn janitza_symmetric_mean_zero() {
        let null = janitza_null(&[-3.0, -1.5, 1.5, 3.0, 0.0], 1).unwrap();
        let mean: f64 = null.samples().iter().sum::<f64>() / null.len() as f64;
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn mfi_null_examples() {
        let m = SquareMatrix::from_rows(vec![vec![0.9, 0.0, 0.2], vec![0.4, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let null = permutation_null_mfi(&m);
        // six off-diagonal entries: 0, 0.2, 0.4, 0, 0, 0
        assert_eq!(null.samples(), &[-0.4, -0.2, 0.0, 0.0, 0.0, 0.0, 0.2, 0.4]);
        let zero = permutation_null_mfi(&SquareMatrix::zeros(3));
        assert_eq!(zero.samples(), &[0.0]);
    }

    #[test]
    fn mir_null_degenerate_cases() {
        let air = [0.5, -0.25, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let null = permutation_null_mir(&SquareMatrix::zeros(3), &air, 4, &mut rng).unwrap();
        let mut expected: Vec<f64> = air.iter().copied().cycle().take(12).collect();
        expected.sort_by(f64::total_cmp);
        assert_eq!(null.samples(), expected.as_slice());

        let m = SquareMatrix::from_rows(vec![vec![0.0, 0.3], vec![0.7, 0.0]]);
        let null = permutation_null_mir(&m, &[0.0, 0.0], 5, &mut rng).unwrap();
        assert_eq!(null.samples(), &[0.0; 10]);
        assert!(permutation_null_mir(&m, &[0.0, 0.0], 0, &mut rng).is_err());
    }

    #[test]
    fn pvalue_boundaries() {
        let null = NullDistribution::new((0..99).map(f64::from).collect(), NullKind::Janitza).unwrap();
        assert_eq!(pvalue(1000.0, &null), 0.01);
        assert_eq!(pvalue(0.0, &null), 1.0);
        let null = NullDistribution::new((0..101).map(f64::from).collect(), NullKind::Janitza).unwrap();
        assert!((pvalue(50.0, &null) - 52.0 / 102.0).abs() < 1e-15);
    }

    #[test]
    fn select_examples() {
        let s = select("MIR", &[0.005, 0.2], 0.01).unwrap();
        assert_eq!(s.selected, vec![0]);
        assert!(select("MIR", &[], 0.01).unwrap().selected.is_empty());
        assert!(select("MIR", &[0.1], 1.0).is_err());
    }

    #[test]
    fn bh_matches_hand_computation() {
        let adj = benjamini_hochberg(&[0.01, 0.04, 0.03, 0.5]);
        let expected = [0.04, 0.04 * 4.0 / 3.0, 0.04 * 4.0 / 3.0, 0.5];
        for (a, e) in adj.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{adj:?}");
        }
    }

    #[test]
    fn auto_method() {
        let vals: Vec<f64> = (0..150).map(|i| i as f64 - 100.0).collect();
        assert_eq!(resolve_method(NullMethod::Auto, &vals, 100), NullMethod::Janitza);
        assert_eq!(resolve_method(NullMethod::Auto, &vals, 102), NullMethod::Permutation);
        assert_eq!(resolve_method(NullMethod::Janitza, &[], 100), NullMethod::Janitza);
    }
}
