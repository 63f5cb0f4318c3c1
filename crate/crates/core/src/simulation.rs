//! Simulation scenarios, replicated experiments and selection metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, AnalysisConfig};
use crate::data::{Dataset, FeatureKind, ForestParams, Outcome};
use crate::forest::{train_forest, with_threads, ForestError};
use crate::surrogates::{relation_threshold_select, SquareMatrix};

pub const NULL_A_LEVELS: [u32; 9] = [2, 3, 4, 5, 6, 7, 8, 10, 20];
pub const NULL_B_MAF: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];
/// Anchors of the correlated groups (0-based) and their target correlations.
pub const CORRELATED_ANCHORS: [(usize, f64); 6] = [(0, 0.9), (1, 0.6), (2, 0.3), (6, 0.9), (7, 0.6), (8, 0.3)];
pub const GROUP_SIZE: usize = 10;
pub const MIN_CORRELATION_FEATURES: usize = 9 + 6 * GROUP_SIZE;

const SURVIVAL_RATE: f64 = 0.5;
const CENSORING_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("need at least {required} features, got {got}")]
    TooFewFeatures { required: usize, got: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("need at least one case and one control")]
    EmptyClass,
    #[error("no null features left after the correlation guard")]
    EmptyNullSet,
    #[error("noise standard deviation must be finite and non-negative")]
    BadNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeType {
    Classification,
    Regression,
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    NullA,
    NullB,
    Correlation,
    NullBinary,
}

/// Known structure of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Features counted as relevant when measuring power.
    pub relevant: Vec<usize>,
    /// Features entering the outcome directly.
    pub causal: Vec<usize>,
    /// Group label per feature (`X1`, `cX1`, `ncV`, ...).
    pub groups: Vec<String>,
    /// Target correlation to the group anchor (1 for anchors and base features, 0 for independent ones).
    pub target_correlation: Vec<f64>,
}

impl SimTruth {
    fn independent(names: &[String]) -> Self {
        SimTruth {
            relevant: Vec::new(),
            causal: Vec::new(),
            groups: names.to_vec(),
            target_correlation: vec![0.0; names.len()],
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn outcome<R: Rng + ?Sized>(n: usize, ty: OutcomeType, rng: &mut R) -> Outcome {
    match ty {
        OutcomeType::Classification => {
            Outcome::Classification { labels: (0..n).map(|_| u32::from(rng.random_bool(0.5))).collect(), classes: 2 }
        }
        OutcomeType::Regression => Outcome::Regression { values: (0..n).map(|_| normal(rng)).collect() },
        OutcomeType::Survival => {
            let surv = Exp::new(SURVIVAL_RATE).expect("positive rate");
            let cens = Exp::new(CENSORING_RATE).expect("positive rate");
            let (mut time, mut status) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let t: f64 = surv.sample(rng);
                let c: f64 = cens.sample(rng);
                time.push(t.min(c).max(f64::MIN_POSITIVE));
                status.push(t <= c);
            }
            Outcome::Survival { time, status }
        }
    }
}

fn dataset(columns: Vec<Vec<f64>>, kinds: Vec<FeatureKind>, names: Vec<String>, outcome: Outcome) -> Dataset {
    Dataset::new(columns, kinds, names, outcome).expect("simulated data is valid")
}

/// Nine uniform nominal features with 2..20 categories and one standard normal feature; outcome
/// independent of all of them.
pub fn simulate_null_a<R: Rng + ?Sized>(n: usize, ty: OutcomeType, rng: &mut R) -> Result<Dataset, SimulationError> {
    if n < 2 {
        return Err(SimulationError::TooFewSamples(n));
    }
    let mut columns = Vec::with_capacity(10);
    let mut kinds = Vec::with_capacity(10);
    for &levels in &NULL_A_LEVELS {
        columns.push((0..n).map(|_| f64::from(rng.random_range(0..levels))).collect());
        kinds.push(FeatureKind::Categorical { levels });
    }
    columns.push((0..n).map(|_| normal(rng)).collect());
    kinds.push(FeatureKind::Continuous);
    let names = (1..=10).map(|i| format!("X{i}")).collect();
    let y = outcome(n, ty, rng);
    Ok(dataset(columns, kinds, names, y))
}

/// Ten genotype features (0/1/2 minor allele counts) with MAF 0.05..0.50; outcome independent.
pub fn simulate_null_b<R: Rng + ?Sized>(n: usize, ty: OutcomeType, rng: &mut R) -> Result<Dataset, SimulationError> {
    if n < 2 {
        return Err(SimulationError::TooFewSamples(n));
    }
    let columns = NULL_B_MAF
        .iter()
        .map(|&maf| {
            let b = Binomial::new(2, maf).expect("valid MAF");
            (0..n).map(|_| b.sample(rng) as f64).collect()
        })
        .collect();
    let names = (1..=10).map(|i| format!("X{i}")).collect();
    let y = outcome(n, ty, rng);
    Ok(dataset(columns, vec![FeatureKind::Genotype; 10], names, y))
}

/// `X1..X9` standard normal, ten correlated copies `r*A + sqrt(1-r^2)*e` of each anchor
/// `X1, X2, X3, X7, X8, X9`, independent normal fill-up features, and
/// `Y = X1 + ... + X6 + e` with `e ~ N(0, noise_sd^2)`.
pub fn simulate_correlation_study<R: Rng + ?Sized>(
    n: usize,
    p_total: usize,
    noise_sd: f64,
    rng: &mut R,
) -> Result<(Dataset, SimTruth), SimulationError> {
    if p_total < MIN_CORRELATION_FEATURES {
        return Err(SimulationError::TooFewFeatures { required: MIN_CORRELATION_FEATURES, got: p_total });
    }
    if n < 2 {
        return Err(SimulationError::TooFewSamples(n));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(SimulationError::BadNoise);
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p_total);
    let mut names = Vec::with_capacity(p_total);
    let mut groups = Vec::with_capacity(p_total);
    let mut target = Vec::with_capacity(p_total);
    for i in 0..9 {
        columns.push((0..n).map(|_| normal(rng)).collect());
        names.push(format!("X{}", i + 1));
        groups.push(format!("X{}", i + 1));
        target.push(1.0);
    }
    let mut relevant: Vec<usize> = (0..6).collect();
    for &(anchor, r) in &CORRELATED_ANCHORS {
        let scale = (1.0 - r * r).sqrt();
        for k in 0..GROUP_SIZE {
            let col = (0..n).map(|row| r * columns[anchor][row] + scale * normal(rng)).collect();
            if anchor < 3 {
                relevant.push(columns.len());
            }
            columns.push(col);
            names.push(format!("cX{}_{}", anchor + 1, k + 1));
            groups.push(format!("cX{}", anchor + 1));
            target.push(r);
        }
    }
    for k in 0..p_total - MIN_CORRELATION_FEATURES {
        columns.push((0..n).map(|_| normal(rng)).collect());
        names.push(format!("ncV{}", k + 1));
        groups.push("ncV".to_string());
        target.push(0.0);
    }
    let y = (0..n).map(|row| (0..6).map(|i| columns[i][row]).sum::<f64>() + noise_sd * normal(rng)).collect();
    let ds = dataset(columns, vec![FeatureKind::Continuous; p_total], names, Outcome::Regression { values: y });
    let truth = SimTruth { relevant, causal: (0..6).collect(), groups, target_correlation: target };
    Ok((ds, truth))
}

/// `p` independent standard normal features with `n_cases` ones followed by `n_controls` zeros.
pub fn simulate_null_binary<R: Rng + ?Sized>(
    n_cases: usize,
    n_controls: usize,
    p: usize,
    rng: &mut R,
) -> Result<(Dataset, SimTruth), SimulationError> {
    if n_cases == 0 || n_controls == 0 {
        return Err(SimulationError::EmptyClass);
    }
    if p == 0 {
        return Err(SimulationError::TooFewFeatures { required: 1, got: 0 });
    }
    let n = n_cases + n_controls;
    let columns = (0..p).map(|_| (0..n).map(|_| normal(rng)).collect()).collect();
    let labels = (0..n).map(|i| u32::from(i < n_cases)).collect();
    let names: Vec<String> = (1..=p).map(|i| format!("X{i}")).collect();
    let truth = SimTruth::independent(&names);
    let ds = dataset(columns, vec![FeatureKind::Continuous; p], names, Outcome::Classification { labels, classes: 2 });
    Ok((ds, truth))
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Mean over replicates and group members of the selection indicator.
pub fn empirical_power(selections: &[Vec<usize>], group: &[usize]) -> f64 {
    if selections.is_empty() || group.is_empty() {
        return 0.0;
    }
    let hits: usize = selections
        .iter()
        .map(|sel| {
            let sel: BTreeSet<_> = sel.iter().collect();
            group.iter().filter(|g| sel.contains(g)).count()
        })
        .sum();
    hits as f64 / (selections.len() * group.len()) as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Features that are not causal and whose absolute empirical correlation to every causal feature is below `guard`.
pub fn null_features(dataset: &Dataset, causal: &[usize], guard: f64) -> Vec<usize> {
    (0..dataset.n_features())
        .filter(|f| !causal.contains(f))
        .filter(|&f| causal.iter().all(|&c| pearson(dataset.column(f), dataset.column(c)).abs() < guard))
        .collect()
}

/// Selected null features divided by the number of null features.
pub fn fpr(selected: &[usize], dataset: &Dataset, causal: &[usize], guard: f64) -> Result<f64, SimulationError> {
    let nulls = null_features(dataset, causal, guard);
    if nulls.is_empty() {
        return Err(SimulationError::EmptyNullSet);
    }
    let sel: BTreeSet<_> = selected.iter().collect();
    Ok(nulls.iter().filter(|f| sel.contains(f)).count() as f64 / nulls.len() as f64)
}

/// Trains on `train` restricted to `selected` and returns the misclassification rate on `test`.
/// With nothing selected the training majority class is predicted.
pub fn paired_classification_error(
    train: &Dataset,
    test: &Dataset,
    selected: &[usize],
    params: &ForestParams,
) -> Result<f64, ForestError> {
    let (Outcome::Classification { labels: train_y, classes }, Outcome::Classification { labels: test_y, .. }) =
        (train.outcome(), test.outcome())
    else {
        return Err(ForestError::OobUnsupported);
    };
    let preds: Vec<u32> = if selected.is_empty() {
        let mut counts = vec![0usize; *classes as usize];
        train_y.iter().for_each(|&l| counts[l as usize] += 1);
        let majority = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b }) as u32;
        vec![majority; test.n_samples()]
    } else {
        let tr = train.select_features(selected).map_err(ForestError::Invalid)?;
        let te = test.select_features(selected).map_err(ForestError::Invalid)?;
        let mut params = params.clone();
        params.mtry = params.mtry.min(selected.len()).max(1);
        let forest = train_forest(&tr, &params)?;
        forest.predict(&te)?.into_iter().map(|v| v as u32).collect()
    };
    let wrong = preds.iter().zip(test_y).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / test_y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    /// Total feature count (correlation study and null binary scenario).
    pub p_total: usize,
    /// Outcome type for the null A/B scenarios.
    pub outcome: OutcomeType,
    pub replicates: usize,
    pub seed: u64,
    /// Standard deviation of the correlation study noise term.
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        let (n, p_total) = match scenario {
            Scenario::NullA | Scenario::NullB => (100, 10),
            Scenario::Correlation | Scenario::NullBinary => (100, 1000),
        };
        ScenarioSpec {
            scenario,
            n,
            p_total,
            outcome: OutcomeType::Classification,
            replicates: 100,
            seed: 1,
            noise_sd: 0.2,
        }
    }

    /// Generates replicate `r`'s data from its own stream.
    pub fn generate(&self, replicate: usize) -> Result<(Dataset, SimTruth), SimulationError> {
        self.generate_with(&mut replicate_rng(self.seed, replicate))
    }

    fn generate_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Dataset, SimTruth), SimulationError> {
        match self.scenario {
            Scenario::NullA => {
                let ds = simulate_null_a(self.n, self.outcome, rng)?;
                let truth = SimTruth::independent(ds.names());
                Ok((ds, truth))
            }
            Scenario::NullB => {
                let ds = simulate_null_b(self.n, self.outcome, rng)?;
                let truth = SimTruth::independent(ds.names());
                Ok((ds, truth))
            }
            Scenario::Correlation => simulate_correlation_study(self.n, self.p_total, self.noise_sd, rng),
            Scenario::NullBinary => simulate_null_binary(self.n / 2, self.n - self.n / 2, self.p_total, rng),
        }
    }
}

pub(crate) fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Forest and test settings; the forest seed is replaced per replicate.
    pub analysis: AnalysisConfig,
    /// Factor of the legacy row-mean relation threshold.
    pub threshold_t: f64,
    /// Correlation guard for the false positive rate.
    pub guard: f64,
    /// If set, SMD selects features whose SMD is at most this quantile of all SMD values.
    pub smd_quantile: Option<f64>,
    /// Record per-pair relation values (M, MFI) in the raw output and summary.
    pub record_pairs: bool,
    /// Worker threads across replicates.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            analysis: AnalysisConfig::default(),
            threshold_t: 5.0,
            guard: 0.2,
            smd_quantile: None,
            record_pairs: false,
            threads: 1,
        }
    }
}

/// One line of the long-format raw output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub replicate: usize,
    pub feature: String,
    pub method: String,
    pub value: f64,
    pub p: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub frequency: Vec<f64>,
    /// Mean selection indicator per group label (empirical power for relevant groups).
    pub group_frequency: BTreeMap<String, f64>,
    /// Mean Jaccard index over all pairs of replicates.
    pub jaccard: f64,
    /// Mean over replicates of selected null features / null features.
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub median: Vec<f64>,
    pub selection: Option<SelectionMetrics>,
}

/// Per-pair medians and selection frequencies. Entries are `None` when no replicate defined them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub median_m: Vec<Vec<Option<f64>>>,
    pub median_mfi: Vec<Vec<Option<f64>>>,
    pub mfi_frequency: Vec<Vec<f64>>,
    pub threshold_frequency: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub spec: ScenarioSpec,
    pub replicates_ok: usize,
    pub failures: Vec<ReplicateFailure>,
    pub features: Vec<String>,
    pub groups: Vec<String>,
    pub methods: Vec<MethodMetrics>,
    pub relations: Option<RelationSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub metrics: MetricsReport,
    pub raw: Vec<RawRecord>,
}

struct MethodRun {
    name: &'static str,
    values: Vec<f64>,
    pvalues: Option<Vec<f64>>,
    selected: Option<Vec<usize>>,
}

struct PairRun {
    m: SquareMatrix,
    m_defined: Vec<bool>,
    mfi: SquareMatrix,
    mfi_p: SquareMatrix,
    mfi_defined: Vec<bool>,
    mfi_selected: Vec<(usize, usize)>,
    threshold_selected: Vec<(usize, usize)>,
}

struct ReplicateRun {
    names: Vec<String>,
    truth: SimTruth,
    methods: Vec<MethodRun>,
    fpr_nulls: Vec<usize>,
    pairs: Option<PairRun>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

fn run_replicate(spec: &ScenarioSpec, cfg: &ExperimentConfig, r: usize) -> Result<ReplicateRun, String> {
    let mut rng = replicate_rng(spec.seed, r);
    let (ds, truth) = spec.generate_with(&mut rng).map_err(|e| e.to_string())?;
    let mut acfg = cfg.analysis.clone();
    acfg.params.seed = rng.random();
    let res = analyze(&ds, &acfg).map_err(|e| e.to_string())?;
    let rep = &res.report;
    let p = rep.names.len();

    let smd_selected = cfg.smd_quantile.map(|q| {
        let mut sorted = rep.smd.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = quantile(&sorted, q);
        (0..p).filter(|&i| rep.smd[i] <= cut).collect()
    });
    let methods = vec![
        MethodRun { name: "impurity", values: rep.impurity.clone(), pvalues: None, selected: None },
        MethodRun {
            name: "AIR",
            values: rep.air.clone(),
            pvalues: Some(rep.p_air.clone()),
            selected: Some(res.selections.air.selected.clone()),
        },
        MethodRun {
            name: "MIR",
            values: rep.mir.clone(),
            pvalues: Some(rep.p_mir.clone()),
            selected: Some(res.selections.mir.selected.clone()),
        },
        MethodRun { name: "SMD", values: rep.smd.clone(), pvalues: None, selected: smd_selected },
    ];
    let fpr_nulls = null_features(&ds, &truth.causal, cfg.guard);

    let pairs = cfg.record_pairs.then(|| {
        let rel = &res.mfi.relations;
        let m = rel.m.block(0, 0, p);
        let counts = &rel.primary_node_counts;
        let m_defined: Vec<bool> = (0..p).map(|i| counts[i] > 0).collect();
        let mfi_defined: Vec<bool> = (0..p).map(|i| counts[i] > 0 && counts[i + p] > 0).collect();
        let x_block = crate::surrogates::RelationMatrix { m: m.clone(), primary_node_counts: counts[..p].to_vec() };
        let threshold_selected = (0..p)
            .flat_map(|i| relation_threshold_select(&x_block, i, cfg.threshold_t).into_iter().map(move |j| (i, j)))
            .collect();
        PairRun {
            m,
            m_defined,
            mfi: res.mfi.mfi.values.clone(),
            mfi_p: res.mfi_pvalues.clone(),
            mfi_defined,
            mfi_selected: res.selections.related_pairs.iter().map(|rp| (rp.i, rp.j)).collect(),
            threshold_selected,
        }
    });
    Ok(ReplicateRun { names: rep.names.clone(), truth, methods, fpr_nulls, pairs })
}

fn raw_records(r: usize, run: &ReplicateRun, out: &mut Vec<RawRecord>) {
    for m in &run.methods {
        let sel: Option<BTreeSet<usize>> = m.selected.as_ref().map(|s| s.iter().copied().collect());
        for (i, name) in run.names.iter().enumerate() {
            out.push(RawRecord {
                replicate: r,
                feature: name.clone(),
                method: m.name.to_string(),
                value: m.values[i],
                p: m.pvalues.as_ref().map(|p| p[i]),
                selected: sel.as_ref().is_some_and(|s| s.contains(&i)),
            });
        }
    }
    if let Some(pr) = &run.pairs {
        let mfi_sel: BTreeSet<_> = pr.mfi_selected.iter().collect();
        let thr_sel: BTreeSet<_> = pr.threshold_selected.iter().collect();
        let p = run.names.len();
        for i in 0..p {
            for j in (0..p).filter(|&j| j != i) {
                let feature = format!("{}|{}", run.names[i], run.names[j]);
                out.push(RawRecord {
                    replicate: r,
                    feature: feature.clone(),
                    method: "M".into(),
                    value: pr.m.get(i, j),
                    p: None,
                    selected: thr_sel.contains(&(i, j)),
                });
                out.push(RawRecord {
                    replicate: r,
                    feature,
                    method: "MFI".into(),
                    value: pr.mfi.get(i, j),
                    p: Some(pr.mfi_p.get(i, j)),
                    selected: mfi_sel.contains(&(i, j)),
                });
            }
        }
    }
}

fn selection_metrics(runs: &[&ReplicateRun], k: usize) -> Option<SelectionMetrics> {
    let selections: Vec<Vec<usize>> = runs.iter().map(|r| r.methods[k].selected.clone()).collect::<Option<_>>()?;
    let p = runs[0].names.len();
    let reps = selections.len() as f64;
    let mut frequency = vec![0.0; p];
    for sel in &selections {
        sel.iter().for_each(|&i| frequency[i] += 1.0 / reps);
    }
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in runs[0].truth.groups.iter().enumerate() {
        members.entry(g.clone()).or_default().push(i);
    }
    let group_frequency = members.into_iter().map(|(g, m)| (g, empirical_power(&selections, &m))).collect();
    let mut jac = 0.0;
    let mut pairs = 0usize;
    for a in 0..selections.len() {
        for b in a + 1..selections.len() {
            jac += jaccard(&selections[a], &selections[b]);
            pairs += 1;
        }
    }
    let rates: Vec<f64> = runs
        .iter()
        .zip(&selections)
        .filter(|(r, _)| !r.fpr_nulls.is_empty())
        .map(|(r, sel)| {
            let s: BTreeSet<_> = sel.iter().collect();
            r.fpr_nulls.iter().filter(|f| s.contains(f)).count() as f64 / r.fpr_nulls.len() as f64
        })
        .collect();
    Some(SelectionMetrics {
        frequency,
        group_frequency,
        jaccard: if pairs == 0 { 1.0 } else { jac / pairs as f64 },
        fpr: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
    })
}

fn relation_summary(runs: &[&ReplicateRun]) -> Option<RelationSummary> {
    let pairs: Vec<&PairRun> = runs.iter().map(|r| r.pairs.as_ref()).collect::<Option<_>>()?;
    let p = runs[0].names.len();
    let reps = pairs.len() as f64;
    let med = |get: &dyn Fn(&PairRun, usize, usize) -> Option<f64>| -> Vec<Vec<Option<f64>>> {
        (0..p)
            .map(|i| (0..p).map(|j| median(&pairs.iter().filter_map(|pr| get(pr, i, j)).collect::<Vec<_>>())).collect())
            .collect()
    };
    let freq = |sel: &dyn Fn(&PairRun) -> &Vec<(usize, usize)>| -> Vec<Vec<f64>> {
        let mut f = vec![vec![0.0; p]; p];
        for pr in &pairs {
            sel(pr).iter().for_each(|&(i, j)| f[i][j] += 1.0 / reps);
        }
        f
    };
    Some(RelationSummary {
        median_m: med(&|pr, i, j| (i != j && pr.m_defined[i]).then(|| pr.m.get(i, j))),
        median_mfi: med(&|pr, i, j| (i != j && pr.mfi_defined[i]).then(|| pr.mfi.get(i, j))),
        mfi_frequency: freq(&|pr| &pr.mfi_selected),
        threshold_frequency: freq(&|pr| &pr.threshold_selected),
    })
}

/// Runs all replicates (in parallel over `cfg.threads` workers) and aggregates them in replicate
/// order. Failed replicates are recorded and excluded from the metrics.
pub fn run_experiment(spec: &ScenarioSpec, cfg: &ExperimentConfig) -> Result<ExperimentOutput, ForestError> {
    let results: Vec<Result<ReplicateRun, String>> = with_threads(cfg.threads, || {
        (0..spec.replicates).into_par_iter().map(|r| run_replicate(spec, cfg, r)).collect()
    })?;

    let mut failures = Vec::new();
    let mut runs: Vec<&ReplicateRun> = Vec::new();
    let mut raw = Vec::new();
    for (r, res) in results.iter().enumerate() {
        match res {
            Ok(run) => {
                raw_records(r, run, &mut raw);
                runs.push(run);
            }
            Err(error) => {
                log::warn!("replicate {r} failed: {error}");
                failures.push(ReplicateFailure { replicate: r, error: error.clone() });
            }
        }
    }

    let (features, groups, methods, relations) = match runs.first() {
        None => (Vec::new(), Vec::new(), Vec::new(), None),
        Some(first) => {
            let p = first.names.len();
            let methods = (0..first.methods.len())
                .map(|k| MethodMetrics {
                    method: first.methods[k].name.to_string(),
                    median: (0..p)
                        .map(|i| {
                            median(&runs.iter().map(|r| r.methods[k].values[i]).collect::<Vec<_>>()).unwrap_or(0.0)
                        })
                        .collect(),
                    selection: selection_metrics(&runs, k),
                })
                .collect();
            (first.names.clone(), first.truth.groups.clone(), methods, relation_summary(&runs))
        }
    };
    let metrics =
        MetricsReport { spec: spec.clone(), replicates_ok: runs.len(), failures, features, groups, methods, relations };
    Ok(ExperimentOutput { metrics, raw })
}
