//! Pseudo-data generation and the mutual forest impact (MFI) relation matrix.
//!
//! The forest is grown once on the augmented design `[X | Z]`, where every column of `Z` is an
//! independent permutation of the matching column of `X`. The relation of `X_j` to `X_i` is then
//! corrected by the relation of `Z_j` to `Z_i` from the same forest.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, ForestParams};
use crate::forest::{train_forest, Forest, ForestError};
use crate::surrogates::{mean_adjusted_agreement, RelationMatrix, SquareMatrix};

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("relation analysis needs at least one surrogate per node (s > 0)")]
    NoSurrogates,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Original features followed by their permuted copies: feature `i` and `i + p` form a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDesign {
    pub dataset: Dataset,
    /// `permutations[i][r]` is the original row placed at row `r` of the permuted copy of feature `i`.
    pub permutations: Vec<Vec<usize>>,
    pub p: usize,
}

impl AugmentedDesign {
    pub fn pseudo_index(&self, feature: usize) -> usize {
        feature + self.p
    }
}

/// Appends an independently permuted copy of every feature; the outcome is left untouched.
pub fn generate_pseudo_data<R: Rng + ?Sized>(dataset: &Dataset, rng: &mut R) -> AugmentedDesign {
    let n = dataset.n_samples();
    let p = dataset.n_features();
    let mut columns = dataset.columns().to_vec();
    let mut kinds = dataset.kinds().to_vec();
    let mut names = dataset.names().to_vec();
    let mut permutations = Vec::with_capacity(p);
    for f in 0..p {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let col = dataset.column(f);
        columns.push(perm.iter().map(|&r| col[r]).collect());
        kinds.push(dataset.kind(f));
        names.push(format!("{}_perm", dataset.names()[f]));
        permutations.push(perm);
    }
    let augmented = Dataset::new(columns, kinds, names, dataset.outcome().clone())
        .expect("permuted copies of a valid dataset are valid");
    AugmentedDesign { dataset: augmented, permutations, p }
}

/// MFI together with the two relation blocks it is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfiMatrix {
    pub values: SquareMatrix,
    /// Mean adjusted agreement among original features.
    pub m_x: SquareMatrix,
    /// Mean adjusted agreement among permuted features.
    pub m_z: SquareMatrix,
}

impl MfiMatrix {
    pub fn size(&self) -> usize {
        self.values.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

/// MFI from the full `2p x 2p` relation matrix of an augmented forest.
///
/// `MFI[i][j] = M[X_i][X_j] - M[Z_i][Z_j]`. Rows where `X_i` or `Z_i` was never a primary split
/// carry no evidence and are set to 0.
pub fn mfi_from_relations(rel: &RelationMatrix, p: usize) -> MfiMatrix {
    assert_eq!(rel.size(), 2 * p, "relation matrix must cover the augmented design");
    let m_x = rel.m.block(0, 0, p);
    let m_z = rel.m.block(p, p, p);
    let mut values = SquareMatrix::zeros(p);
    for i in 0..p {
        if rel.primary_node_counts[i] == 0 || rel.primary_node_counts[i + p] == 0 {
            continue;
        }
        for j in 0..p {
            if j != i {
                values.set(i, j, m_x.get(i, j) - m_z.get(i, j));
            }
        }
    }
    MfiMatrix { values, m_x, m_z }
}

/// Result of one relation analysis run.
#[derive(Debug, Clone)]
pub struct MfiAnalysis {
    pub mfi: MfiMatrix,
    /// Relation matrix over all `2p` augmented features (cross-block entries included).
    pub relations: RelationMatrix,
    pub forest: Forest,
    pub design: AugmentedDesign,
}

/// Builds pseudo-data with `rng`, grows one forest on the augmented design (mtry applies to the
/// `2p` candidates) and derives MFI.
pub fn compute_mfi<R: Rng + ?Sized>(
    dataset: &Dataset,
    params: &ForestParams,
    rng: &mut R,
) -> Result<MfiAnalysis, RelationError> {
    if params.surrogates == 0 {
        return Err(RelationError::NoSurrogates);
    }
    dataset.validate().map_err(ForestError::Invalid)?;
    let design = generate_pseudo_data(dataset, rng);
    let forest = train_forest(&design.dataset, params)?;
    let relations = mean_adjusted_agreement(&forest);
    let mfi = mfi_from_relations(&relations, design.p);
    Ok(MfiAnalysis { mfi, relations, forest, design })
}
