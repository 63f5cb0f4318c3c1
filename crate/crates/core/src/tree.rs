//! Binary decision trees: split rules, node layout and recursive growth on a bootstrap sample.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{gini_decrease_unchecked, logrank_sorted, sse_decrease_from_sums};
use crate::data::{Dataset, FeatureKind, Outcome};
use crate::surrogates::{self, SurrogateSplit};

/// Categorical features with more levels than this are split on an outcome-ordered level index
/// instead of an exhaustive subset search.
pub const MAX_SUBSET_LEVELS: u32 = 12;

/// Test applied to a feature value; `true` sends the sample to the left child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// `x <= threshold` goes left.
    Threshold(f64),
    /// Listed levels (ascending) go left.
    CategorySubset(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub test: SplitTest,
}

impl SplitRule {
    pub fn threshold(feature: usize, threshold: f64) -> Self {
        SplitRule { feature, test: SplitTest::Threshold(threshold) }
    }

    pub fn subset(feature: usize, mut levels: Vec<u32>) -> Self {
        levels.sort_unstable();
        levels.dedup();
        SplitRule { feature, test: SplitTest::CategorySubset(levels) }
    }

    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        match &self.test {
            SplitTest::Threshold(t) => value <= *t,
            SplitTest::CategorySubset(levels) => levels.binary_search(&(value as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafValue {
    /// Per-class in-bag counts.
    Classes(Vec<u32>),
    Mean(f64),
    /// In-bag sample and event counts of the terminal node.
    Events {
        samples: u32,
        events: u32,
    },
}

impl LeafValue {
    /// Majority class (lowest index on ties).
    pub fn majority_class(&self) -> Option<u32> {
        match self {
            LeafValue::Classes(counts) => {
                let mut best = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = c;
                    }
                }
                Some(best as u32)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split: Option<SplitRule>,
    pub impurity_decrease: f64,
    /// In-bag draws reaching the node, duplicates included.
    pub node_size: usize,
    pub depth: u32,
    /// Sorted by descending adjusted agreement.
    pub surrogates: Vec<SurrogateSplit>,
    pub children: Option<[u32; 2]>,
    pub leaf: Option<LeafValue>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Nodes stored in creation order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Largest node depth (root = 0).
    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.split.is_some())
    }

    /// Terminal node reached by a row of `dataset`.
    pub fn leaf_for(&self, dataset: &Dataset, row: usize) -> &TreeNode {
        let mut node = &self.nodes[0];
        while let (Some(split), Some([l, r])) = (&node.split, node.children) {
            let x = dataset.column(split.feature)[row];
            node = &self.nodes[if split.goes_left(x) { l } else { r } as usize];
        }
        node
    }
}

/// Per-feature integer codes shared by every tree of a forest. Numeric features are coded by the
/// rank of their value among the distinct values; categorical features by their level.
pub(crate) struct FeatureCodes {
    pub codes: Vec<u32>,
    /// Distinct sorted values for numeric features (empty for categorical).
    pub distinct: Vec<f64>,
    /// Level count for categorical features.
    pub levels: Option<u32>,
}

pub(crate) enum PreparedOutcome {
    Class { labels: Vec<u32>, classes: usize },
    Reg { y: Vec<f64> },
    Surv { time: Vec<f64>, status: Vec<bool> },
}

pub(crate) struct Prepared {
    pub features: Vec<FeatureCodes>,
    pub outcome: PreparedOutcome,
    pub n: usize,
}

impl Prepared {
    pub fn new(ds: &Dataset) -> Self {
        let features = (0..ds.n_features())
            .map(|f| {
                let col = ds.column(f);
                match ds.kind(f) {
                    FeatureKind::Categorical { levels } => FeatureCodes {
                        codes: col.iter().map(|&v| v as u32).collect(),
                        distinct: Vec::new(),
                        levels: Some(levels),
                    },
                    FeatureKind::Continuous | FeatureKind::Genotype => {
                        let mut distinct = col.to_vec();
                        distinct.sort_by(|a, b| a.total_cmp(b));
                        distinct.dedup();
                        let codes = col.iter().map(|v| distinct.partition_point(|d| d < v) as u32).collect();
                        FeatureCodes { codes, distinct, levels: None }
                    }
                }
            })
            .collect();
        let outcome = match ds.outcome() {
            Outcome::Classification { labels, classes } => {
                PreparedOutcome::Class { labels: labels.clone(), classes: *classes as usize }
            }
            Outcome::Regression { values } => PreparedOutcome::Reg { y: values.clone() },
            Outcome::Survival { time, status } => PreparedOutcome::Surv { time: time.clone(), status: status.clone() },
        };
        Prepared { features, outcome, n: ds.n_samples() }
    }
}

pub(crate) struct SplitCandidate {
    pub rule: SplitRule,
    pub decrease: f64,
}

/// Reusable buffers for split and surrogate search.
pub(crate) struct Scratch {
    pub keys: Vec<u64>,
    pub left_counts: Vec<u64>,
    pub right_counts: Vec<u64>,
    pub flags: Vec<bool>,
    pub by_time: Vec<u32>,
    pub obs: Vec<(f64, bool, bool)>,
    pub goes_left: Vec<bool>,
    pub level_stats: Vec<LevelStat>,
}

#[derive(Clone, Default)]
pub(crate) struct LevelStat {
    pub count: u64,
    pub sum: f64,
    pub classes: Vec<u64>,
    pub time: f64,
    pub events: f64,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Scratch {
            keys: Vec::with_capacity(n),
            left_counts: Vec::new(),
            right_counts: Vec::new(),
            flags: vec![false; n],
            by_time: Vec::with_capacity(n),
            obs: Vec::with_capacity(n),
            goes_left: Vec::with_capacity(n),
            level_stats: Vec::new(),
        }
    }
}

/// Threshold between two consecutive distinct values that keeps `lo` on the left and `hi` on the right.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

fn is_better(decrease: f64, key: usize, best: &Option<(f64, usize, SplitRule)>) -> bool {
    match best {
        None => true,
        Some((d, k, _)) => decrease > *d || (decrease == *d && key < *k),
    }
}

/// Minimum criterion value that counts as a real improvement (guards against rounding noise).
fn improves(outcome: &PreparedOutcome, decrease: f64, parent_scale: f64) -> bool {
    match outcome {
        PreparedOutcome::Class { .. } => decrease > 0.0,
        PreparedOutcome::Reg { .. } => decrease > 1e-12 * parent_scale,
        PreparedOutcome::Surv { .. } => decrease > 1e-12,
    }
}

/// Best split over `candidates` for the samples in `samples` (duplicates allowed).
/// Exact ties go to the candidate listed first.
pub(crate) fn best_split_in(
    prep: &Prepared,
    samples: &[u32],
    candidates: &[usize],
    scratch: &mut Scratch,
) -> Option<SplitCandidate> {
    if let PreparedOutcome::Surv { time, .. } = &prep.outcome {
        scratch.by_time.clear();
        scratch.by_time.extend_from_slice(samples);
        scratch.by_time.sort_by(|&a, &b| time[a as usize].total_cmp(&time[b as usize]));
    }
    let parent_scale = match &prep.outcome {
        PreparedOutcome::Reg { y } => {
            let vals: Vec<f64> = samples.iter().map(|&s| y[s as usize]).collect();
            crate::criteria::sse(&vals)
        }
        _ => 0.0,
    };

    let mut best: Option<(f64, usize, SplitRule)> = None;
    for (key, &f) in candidates.iter().enumerate() {
        let fc = &prep.features[f];
        let found = match fc.levels {
            Some(levels) => best_categorical(prep, f, levels, samples, scratch),
            None => best_numeric(prep, f, samples, scratch),
        };
        if let Some((rule, decrease)) = found {
            if !improves(&prep.outcome, decrease, parent_scale) {
                continue;
            }
            if is_better(decrease, key, &best) {
                best = Some((decrease, key, rule));
            }
        }
    }
    best.map(|(decrease, _, rule)| SplitCandidate { rule, decrease })
}

/// Scan all cut points of a numeric feature in ascending order; the first maximum wins.
fn best_numeric(prep: &Prepared, f: usize, samples: &[u32], sc: &mut Scratch) -> Option<(SplitRule, f64)> {
    let fc = &prep.features[f];
    sc.keys.clear();
    sc.keys.extend(samples.iter().map(|&s| ((fc.codes[s as usize] as u64) << 32) | s as u64));
    sc.keys.sort_unstable();
    let m = sc.keys.len();
    if m < 2 || (sc.keys[0] >> 32) == (sc.keys[m - 1] >> 32) {
        return None;
    }
    let code = |k: u64| (k >> 32) as usize;
    let sample = |k: u64| (k & 0xffff_ffff) as usize;

    let mut best_dec = f64::NEG_INFINITY;
    let mut best_cut = 0usize;
    match &prep.outcome {
        PreparedOutcome::Class { labels, classes } => {
            sc.left_counts.clear();
            sc.left_counts.resize(*classes, 0);
            sc.right_counts.clear();
            sc.right_counts.resize(*classes, 0);
            for &k in &sc.keys {
                sc.right_counts[labels[sample(k)] as usize] += 1;
            }
            for i in 0..m - 1 {
                let c = labels[sample(sc.keys[i])] as usize;
                sc.left_counts[c] += 1;
                sc.right_counts[c] -= 1;
                if code(sc.keys[i]) != code(sc.keys[i + 1]) {
                    let d = gini_decrease_unchecked(&sc.left_counts, &sc.right_counts);
                    if d > best_dec {
                        best_dec = d;
                        best_cut = i;
                    }
                }
            }
        }
        PreparedOutcome::Reg { y } => {
            let total: f64 = sc.keys.iter().map(|&k| y[sample(k)]).sum();
            let mut sum_l = 0.0;
            for i in 0..m - 1 {
                sum_l += y[sample(sc.keys[i])];
                if code(sc.keys[i]) != code(sc.keys[i + 1]) {
                    let nl = (i + 1) as f64;
                    let d = sse_decrease_from_sums(nl, sum_l, m as f64 - nl, total - sum_l);
                    if d > best_dec {
                        best_dec = d;
                        best_cut = i;
                    }
                }
            }
        }
        PreparedOutcome::Surv { time, status } => {
            for i in 0..m - 1 {
                sc.flags[sample(sc.keys[i])] = true;
                if code(sc.keys[i]) != code(sc.keys[i + 1]) {
                    let d = logrank_flags(time, status, &sc.by_time, &sc.flags, &mut sc.obs);
                    if d > best_dec {
                        best_dec = d;
                        best_cut = i;
                    }
                }
            }
            for &k in &sc.keys {
                sc.flags[sample(k)] = false;
            }
        }
    }
    if best_dec == f64::NEG_INFINITY {
        return None;
    }
    let lo = fc.distinct[code(sc.keys[best_cut])];
    let hi = fc.distinct[code(sc.keys[best_cut + 1])];
    Some((SplitRule::threshold(f, midpoint(lo, hi)), best_dec))
}

fn logrank_flags(
    time: &[f64],
    status: &[bool],
    by_time: &[u32],
    flags: &[bool],
    obs: &mut Vec<(f64, bool, bool)>,
) -> f64 {
    obs.clear();
    obs.extend(by_time.iter().map(|&s| {
        let s = s as usize;
        (time[s], status[s], flags[s])
    }));
    logrank_sorted(obs)
}

/// Categorical split search: exhaustive over level subsets for few levels, otherwise over prefixes
/// of the levels ordered by outcome mean. Among equal decreases the lexicographically smaller
/// left level set wins.
fn best_categorical(
    prep: &Prepared,
    f: usize,
    levels: u32,
    samples: &[u32],
    sc: &mut Scratch,
) -> Option<(SplitRule, f64)> {
    let codes = &prep.features[f].codes;
    let n_classes = match &prep.outcome {
        PreparedOutcome::Class { classes, .. } => *classes,
        _ => 0,
    };
    let mut stats = std::mem::take(&mut sc.level_stats);
    stats.clear();
    stats.resize(levels as usize, LevelStat { classes: vec![0; n_classes], ..Default::default() });
    for &s in samples {
        let s = s as usize;
        let st = &mut stats[codes[s] as usize];
        st.count += 1;
        match &prep.outcome {
            PreparedOutcome::Class { labels, .. } => st.classes[labels[s] as usize] += 1,
            PreparedOutcome::Reg { y } => st.sum += y[s],
            PreparedOutcome::Surv { time, status } => {
                st.time += time[s];
                if status[s] {
                    st.events += 1.0;
                }
            }
        }
    }
    let present: Vec<u32> = (0..levels).filter(|&l| stats[l as usize].count > 0).collect();
    if present.len() < 2 {
        sc.level_stats = stats;
        return None;
    }

    // Left-level sets to evaluate.
    let partitions: Vec<Vec<u32>> = if levels <= MAX_SUBSET_LEVELS {
        let m = present.len();
        (0..(1u32 << (m - 1)) - 1)
            .map(|mask| {
                let mut left = vec![present[0]];
                left.extend((1..m).filter(|&k| mask & (1 << (k - 1)) != 0).map(|k| present[k]));
                left
            })
            .collect()
    } else {
        let mut ordered = present.clone();
        let score = |l: u32| -> f64 {
            let st = &stats[l as usize];
            match &prep.outcome {
                PreparedOutcome::Class { .. } => st.classes.get(1).copied().unwrap_or(0) as f64 / st.count as f64,
                PreparedOutcome::Reg { .. } => st.sum / st.count as f64,
                PreparedOutcome::Surv { .. } => st.events / st.time,
            }
        };
        ordered.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
        (1..ordered.len())
            .map(|k| {
                let mut left = ordered[..k].to_vec();
                left.sort_unstable();
                left
            })
            .collect()
    };

    let mut best: Option<(f64, Vec<u32>)> = None;
    let mut in_left = vec![false; levels as usize];
    for left in partitions {
        in_left.iter_mut().for_each(|b| *b = false);
        for &l in &left {
            in_left[l as usize] = true;
        }
        let d = match &prep.outcome {
            PreparedOutcome::Class { .. } => {
                sc.left_counts.clear();
                sc.left_counts.resize(n_classes, 0);
                sc.right_counts.clear();
                sc.right_counts.resize(n_classes, 0);
                for &l in &present {
                    let target = if in_left[l as usize] { &mut sc.left_counts } else { &mut sc.right_counts };
                    for (t, &c) in target.iter_mut().zip(&stats[l as usize].classes) {
                        *t += c;
                    }
                }
                gini_decrease_unchecked(&sc.left_counts, &sc.right_counts)
            }
            PreparedOutcome::Reg { .. } => {
                let (mut nl, mut sl, mut nr, mut sr) = (0.0, 0.0, 0.0, 0.0);
                for &l in &present {
                    let st = &stats[l as usize];
                    if in_left[l as usize] {
                        nl += st.count as f64;
                        sl += st.sum;
                    } else {
                        nr += st.count as f64;
                        sr += st.sum;
                    }
                }
                sse_decrease_from_sums(nl, sl, nr, sr)
            }
            PreparedOutcome::Surv { time, status } => {
                for &s in samples {
                    sc.flags[s as usize] = in_left[codes[s as usize] as usize];
                }
                let d = logrank_flags(time, status, &sc.by_time, &sc.flags, &mut sc.obs);
                for &s in samples {
                    sc.flags[s as usize] = false;
                }
                d
            }
        };
        let better = match &best {
            None => true,
            Some((bd, bl)) => d > *bd || (d == *bd && left < *bl),
        };
        if better {
            best = Some((d, left));
        }
    }
    sc.level_stats = stats;
    best.map(|(d, left)| (SplitRule::subset(f, left), d))
}

fn leaf_value(prep: &Prepared, samples: &[u32]) -> LeafValue {
    match &prep.outcome {
        PreparedOutcome::Class { labels, classes } => {
            let mut counts = vec![0u32; *classes];
            for &s in samples {
                counts[labels[s as usize] as usize] += 1;
            }
            LeafValue::Classes(counts)
        }
        PreparedOutcome::Reg { y } => {
            LeafValue::Mean(samples.iter().map(|&s| y[s as usize]).sum::<f64>() / samples.len() as f64)
        }
        PreparedOutcome::Surv { status, .. } => LeafValue::Events {
            samples: samples.len() as u32,
            events: samples.iter().filter(|&&s| status[s as usize]).count() as u32,
        },
    }
}

fn is_pure(prep: &Prepared, samples: &[u32]) -> bool {
    let first = samples[0] as usize;
    match &prep.outcome {
        PreparedOutcome::Class { labels, .. } => samples.iter().all(|&s| labels[s as usize] == labels[first]),
        PreparedOutcome::Reg { y } => samples.iter().all(|&s| y[s as usize] == y[first]),
        PreparedOutcome::Surv { time, status } => {
            samples.iter().all(|&s| time[s as usize] == time[first] && status[s as usize] == status[first])
        }
    }
}

pub(crate) struct GrowConfig {
    pub mtry: usize,
    pub min_node_size: usize,
    pub surrogates: usize,
}

/// Grows one tree on `samples` (a bootstrap draw, reordered in place).
pub(crate) fn grow_tree(prep: &Prepared, cfg: &GrowConfig, samples: &mut [u32], rng: &mut ChaCha8Rng) -> Tree {
    let p = prep.features.len();
    let mut scratch = Scratch::new(prep.n);
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut buffer: Vec<u32> = Vec::with_capacity(samples.len());
    // (node index, range start, range end)
    let mut stack = vec![(0usize, 0usize, samples.len())];
    nodes.push(empty_node(samples.len(), 0));

    while let Some((idx, lo, hi)) = stack.pop() {
        let depth = nodes[idx].depth;
        let node_samples = &mut samples[lo..hi];
        let size = hi - lo;

        let mut split = None;
        if size > cfg.min_node_size && !is_pure(prep, node_samples) {
            // random order, so exact ties between features are broken at random
            let mut candidates = index::sample(rng, p, cfg.mtry).into_vec();
            candidates.shuffle(rng);
            split = best_split_in(prep, node_samples, &candidates, &mut scratch);
        }

        let Some(SplitCandidate { rule, decrease }) = split else {
            nodes[idx].leaf = Some(leaf_value(prep, node_samples));
            continue;
        };

        let fc = &prep.features[rule.feature];
        scratch.goes_left.clear();
        for &s in node_samples.iter() {
            let left = match (&rule.test, fc.levels) {
                (SplitTest::CategorySubset(levels), Some(_)) => levels.binary_search(&fc.codes[s as usize]).is_ok(),
                (SplitTest::Threshold(t), None) => fc.distinct[fc.codes[s as usize] as usize] <= *t,
                _ => unreachable!("split test does not match feature kind"),
            };
            scratch.goes_left.push(left);
        }

        let surrogates = if cfg.surrogates > 0 {
            surrogates::search_node(prep, node_samples, &rule, cfg.surrogates, Some(rng.random()), &mut scratch)
        } else {
            Vec::new()
        };

        // Stable partition: left block first.
        buffer.clear();
        buffer.extend(node_samples.iter().zip(&scratch.goes_left).filter(|(_, &l)| l).map(|(&s, _)| s));
        let n_left = buffer.len();
        buffer.extend(node_samples.iter().zip(&scratch.goes_left).filter(|(_, &l)| !l).map(|(&s, _)| s));
        node_samples.copy_from_slice(&buffer);
        debug_assert!(n_left > 0 && n_left < size);

        let left_idx = nodes.len();
        nodes.push(empty_node(n_left, depth + 1));
        nodes.push(empty_node(size - n_left, depth + 1));
        let node = &mut nodes[idx];
        node.split = Some(rule);
        node.impurity_decrease = decrease;
        node.surrogates = surrogates;
        node.children = Some([left_idx as u32, left_idx as u32 + 1]);
        // Right pushed first so the left subtree is grown first.
        stack.push((left_idx + 1, lo + n_left, hi));
        stack.push((left_idx, lo, lo + n_left));
    }
    Tree { nodes }
}

fn empty_node(size: usize, depth: u32) -> TreeNode {
    TreeNode {
        split: None,
        impurity_decrease: 0.0,
        node_size: size,
        depth,
        surrogates: Vec::new(),
        children: None,
        leaf: None,
    }
}

/// Best primary split of the given node over `candidates`, ties going to the lower feature index.
///
/// Returns `None` when no candidate yields a positive impurity decrease.
pub fn best_split(dataset: &Dataset, samples: &[usize], candidates: &[usize]) -> Option<(SplitRule, f64)> {
    let prep = Prepared::new(dataset);
    let samples: Vec<u32> = samples.iter().map(|&s| s as u32).collect();
    let mut scratch = Scratch::new(prep.n);
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    best_split_in(&prep, &samples, &candidates, &mut scratch).map(|c| (c.rule, c.decrease))
}
