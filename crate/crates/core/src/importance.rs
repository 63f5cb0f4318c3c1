//! Impurity importance, AIR, surrogate minimal depth and MIR.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::Forest;
use crate::surrogates::SquareMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImportanceError {
    #[error("surrogate minimal depth needs a forest grown with surrogates")]
    NoSurrogates,
    #[error("dimension mismatch: {0} importances vs {1}x{1} relation matrix")]
    Dimension(usize, usize),
    #[error("impurity vector of length {len} cannot be split into two blocks of {p}")]
    Blocks { len: usize, p: usize },
}

/// Sum of impurity decreases of the nodes split on each feature, divided by the number of trees.
pub fn impurity_importance(forest: &Forest) -> Vec<f64> {
    let mut imp = vec![0.0; forest.n_features()];
    for tree in forest.trees() {
        for node in tree.internal_nodes() {
            if let Some(split) = &node.split {
                imp[split.feature] += node.impurity_decrease;
            }
        }
    }
    let ntree = forest.trees().len() as f64;
    imp.iter_mut().for_each(|v| *v /= ntree);
    imp
}

/// Actual impurity reduction: importance of feature `i` minus that of its permuted copy `i + p`.
pub fn air(impurity: &[f64], p: usize) -> Result<Vec<f64>, ImportanceError> {
    if impurity.len() != 2 * p {
        return Err(ImportanceError::Blocks { len: impurity.len(), p });
    }
    Ok((0..p).map(|i| impurity[i] - impurity[i + p]).collect())
}

/// Mean over trees of the smallest depth at which a feature appears as primary split or stored
/// surrogate. Trees without the feature contribute their maximal depth + 1. Lower is more important.
pub fn surrogate_minimal_depth(forest: &Forest) -> Result<Vec<f64>, ImportanceError> {
    if forest.params().surrogates == 0 {
        return Err(ImportanceError::NoSurrogates);
    }
    let p = forest.n_features();
    let mut total = vec![0.0; p];
    let mut depth = vec![u32::MAX; p];
    for tree in forest.trees() {
        depth.iter_mut().for_each(|d| *d = u32::MAX);
        for node in tree.internal_nodes() {
            let features = node.split.iter().map(|s| s.feature).chain(node.surrogates.iter().map(|s| s.feature()));
            for f in features {
                depth[f] = depth[f].min(node.depth);
            }
        }
        let penalty = tree.depth() + 1;
        for (t, &d) in total.iter_mut().zip(&depth) {
            *t += f64::from(if d == u32::MAX { penalty } else { d });
        }
    }
    let ntree = forest.trees().len() as f64;
    Ok(total.into_iter().map(|t| t / ntree).collect())
}

/// `MIR_i = AIR_i + sum_{j != i} MFI[i][j] * AIR_j`.
pub fn mir(air: &[f64], mfi: &SquareMatrix) -> Result<Vec<f64>, ImportanceError> {
    if air.len() != mfi.size {
        return Err(ImportanceError::Dimension(air.len(), mfi.size));
    }
    Ok(mir_unchecked(air, mfi))
}

pub(crate) fn mir_unchecked(air: &[f64], rel: &SquareMatrix) -> Vec<f64> {
    (0..air.len())
        .map(|i| {
            let row = rel.row(i);
            air[i] + row.iter().zip(air).enumerate().filter(|&(j, _)| j != i).map(|(_, (m, a))| m * a).sum::<f64>()
        })
        .collect()
}

/// Per-feature importance measures and p-values of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub names: Vec<String>,
    pub impurity: Vec<f64>,
    pub air: Vec<f64>,
    pub smd: Vec<f64>,
    pub mir: Vec<f64>,
    pub p_air: Vec<f64>,
    pub p_mir: Vec<f64>,
}
