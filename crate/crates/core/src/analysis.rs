//! End-to-end analysis: augmented forest, MFI, importance measures, p-values and selections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, ForestParams};
use crate::forest::{with_threads, ForestError};
use crate::importance::{air, impurity_importance, mir, surrogate_minimal_depth, ImportanceError, ImportanceReport};
use crate::relations::{compute_mfi, MfiAnalysis, RelationError};
use crate::selection::{
    benjamini_hochberg, importance_pvalues, janitza_null, permutation_null_mfi, permutation_null_mir, pvalues,
    resolve_method, select, NullMethod, SelectionError, SelectionResult, DEFAULT_ALPHA, DEFAULT_MIN_NONPOSITIVE,
    DEFAULT_REPETITIONS,
};
use crate::surrogates::SquareMatrix;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub params: ForestParams,
    pub alpha: f64,
    pub null_method: NullMethod,
    /// Non-positive values required before the mirrored null is used.
    pub min_nonpositive: usize,
    /// Permutations for the MIR null.
    pub repetitions: usize,
    /// Select on Benjamini-Hochberg adjusted p-values.
    pub adjust_bh: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            params: ForestParams::default(),
            alpha: DEFAULT_ALPHA,
            null_method: NullMethod::Auto,
            min_nonpositive: DEFAULT_MIN_NONPOSITIVE,
            repetitions: DEFAULT_REPETITIONS,
            adjust_bh: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedPair {
    pub feature: String,
    pub related: String,
    pub i: usize,
    pub j: usize,
    pub mfi: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selections {
    pub air: SelectionResult,
    pub mir: SelectionResult,
    /// Hypotheses are feature pairs, flattened row-major over the off-diagonal of the MFI matrix.
    pub related_pairs: Vec<RelatedPair>,
    pub mfi_null: NullMethod,
    pub mir_null: NullMethod,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub report: ImportanceReport,
    pub mfi_pvalues: SquareMatrix,
    pub selections: Selections,
    pub mfi: MfiAnalysis,
}

/// Seeds for the pseudo-data and the MIR null; tree streams use the plain seed.
fn aux_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(stream);
    rng
}

/// Pseudo-data, augmented forest and MFI with the same seeding as [`analyze`].
pub fn relations(dataset: &Dataset, params: &ForestParams) -> Result<MfiAnalysis, RelationError> {
    compute_mfi(dataset, params, &mut aux_rng(params.seed, 0))
}

/// MFI p-values for every ordered pair; rows without primary splits on `X_i` or `Z_i` get 1.
fn mfi_pvalues(an: &MfiAnalysis, cfg: &AnalysisConfig) -> Result<(SquareMatrix, NullMethod), SelectionError> {
    let p = an.mfi.size();
    let counts = &an.relations.primary_node_counts;
    let evidence = |i: usize| counts[i] > 0 && counts[i + p] > 0;
    let observed: Vec<f64> = (0..p)
        .filter(|&i| evidence(i))
        .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| an.mfi.get(i, j))
        .collect();
    let method = resolve_method(cfg.null_method, &observed, cfg.min_nonpositive);
    let null = match method {
        NullMethod::Janitza => janitza_null(&observed, cfg.min_nonpositive)?,
        _ => permutation_null_mfi(&an.mfi.m_z),
    };
    let mut out = SquareMatrix::zeros(p);
    for i in 0..p {
        for j in 0..p {
            let v = if i == j || !evidence(i) { 1.0 } else { pvalues(&[an.mfi.get(i, j)], &null)[0] };
            out.set(i, j, v);
        }
    }
    Ok((out, method))
}

/// MFI p-values and the selected related pairs of one relation analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatedSelection {
    pub pvalues: SquareMatrix,
    /// Ordered by p-value, then by decreasing MFI.
    pub pairs: Vec<RelatedPair>,
    pub null_method: NullMethod,
}

/// Tests every ordered pair `(i, j)`, `i != j`, for a positive relation.
pub fn related_pairs(
    an: &MfiAnalysis,
    names: &[String],
    cfg: &AnalysisConfig,
) -> Result<RelatedSelection, SelectionError> {
    let p = an.mfi.size();
    let (mfi_p, null_method) = mfi_pvalues(an, cfg)?;
    let flat: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let flat_p: Vec<f64> = flat.iter().map(|&(i, j)| mfi_p.get(i, j)).collect();
    let mut pairs: Vec<RelatedPair> = selection("MFI", &flat_p, cfg)?
        .selected
        .into_iter()
        .map(|k| {
            let (i, j) = flat[k];
            RelatedPair {
                feature: names[i].clone(),
                related: names[j].clone(),
                i,
                j,
                mfi: an.mfi.get(i, j),
                p: mfi_p.get(i, j),
            }
        })
        .collect();
    pairs.sort_by(|a, b| a.p.total_cmp(&b.p).then(b.mfi.total_cmp(&a.mfi)).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(RelatedSelection { pvalues: mfi_p, pairs, null_method })
}

fn selection(name: &str, p: &[f64], cfg: &AnalysisConfig) -> Result<SelectionResult, SelectionError> {
    if cfg.adjust_bh {
        select(name, &benjamini_hochberg(p), cfg.alpha)
    } else {
        select(name, p, cfg.alpha)
    }
}

/// Runs the full analysis. Deterministic for a fixed `cfg.params.seed`, regardless of thread count.
pub fn analyze(dataset: &Dataset, cfg: &AnalysisConfig) -> Result<AnalysisResult, AnalysisError> {
    let an = relations(dataset, &cfg.params)?;
    let p = an.design.p;

    let impurity_all = impurity_importance(&an.forest);
    let air_v = air(&impurity_all, p)?;
    let smd = surrogate_minimal_depth(&an.forest)?[..p].to_vec();
    let mir_v = mir(&air_v, &an.mfi.values)?;

    let p_air = importance_pvalues(&air_v, cfg.min_nonpositive);
    let mir_null = resolve_method(cfg.null_method, &mir_v, cfg.min_nonpositive);
    let p_mir = match mir_null {
        NullMethod::Janitza => pvalues(&mir_v, &janitza_null(&mir_v, cfg.min_nonpositive)?),
        _ => {
            let null = with_threads(cfg.params.threads, || {
                permutation_null_mir(&an.mfi.m_z, &air_v, cfg.repetitions, &mut aux_rng(cfg.params.seed, 1))
            })??;
            pvalues(&mir_v, &null)
        }
    };

    let names = dataset.names();
    let related = related_pairs(&an, names, cfg)?;
    let selections = Selections {
        air: selection("AIR", &p_air, cfg)?,
        mir: selection("MIR", &p_mir, cfg)?,
        related_pairs: related.pairs,
        mfi_null: related.null_method,
        mir_null,
    };
    let report = ImportanceReport {
        names: names.to_vec(),
        impurity: impurity_all[..p].to_vec(),
        air: air_v,
        smd,
        mir: mir_v,
        p_air,
        p_mir,
    };
    Ok(AnalysisResult { report, mfi_pvalues: related.pvalues, selections, mfi: an })
}
