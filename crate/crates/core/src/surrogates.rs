//! Surrogate splits, adjusted agreement and the forest-wide mean adjusted agreement matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::forest::Forest;
use crate::tree::{midpoint, Prepared, Scratch, SplitRule, SplitTest};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("invalid primary split: majority child holds all {0} samples")]
    NoMinority(u64),
    #[error("agreement counts out of range (n_surr={n_surr}, n_maj={n_maj}, n_total={n_total})")]
    OutOfRange { n_surr: u64, n_maj: u64, n_total: u64 },
}

/// `(n_surr - n_maj) / (n_total - n_maj)`; negative when the surrogate is worse than the majority rule.
pub fn adjusted_agreement(n_surr: u64, n_maj: u64, n_total: u64) -> Result<f64, AgreementError> {
    if n_maj >= n_total {
        return Err(AgreementError::NoMinority(n_total));
    }
    if n_surr > n_total || 2 * n_maj < n_total {
        return Err(AgreementError::OutOfRange { n_surr, n_maj, n_total });
    }
    Ok((n_surr as f64 - n_maj as f64) / (n_total - n_maj) as f64)
}

/// An alternative split on another feature that mimics the primary split's routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSplit {
    pub rule: SplitRule,
    /// When set, samples the rule sends left follow the primary split's right child.
    pub reversed: bool,
    /// Adjusted agreement, always in (0, 1].
    pub adj: f64,
}

impl SurrogateSplit {
    pub fn feature(&self) -> usize {
        self.rule.feature
    }

    /// Whether the surrogate routes a value to the primary split's left child.
    pub fn goes_left(&self, value: f64) -> bool {
        self.rule.goes_left(value) != self.reversed
    }
}

/// Best rule of one feature by agreement with the primary routing, as (rule, reversed, agreement).
fn best_agreement(
    prep: &Prepared,
    f: usize,
    samples: &[u32],
    goes_left: &[bool],
    n_left: u64,
    sc: &mut Scratch,
) -> Option<(SplitRule, bool, u64)> {
    let fc = &prep.features[f];
    let n_total = samples.len() as u64;
    let n_right = n_total - n_left;

    if let Some(levels) = fc.levels {
        // Any level subset is allowed, so each level independently follows its majority direction.
        let stats = &mut sc.left_counts;
        stats.clear();
        stats.resize(2 * levels as usize, 0);
        for (&s, &l) in samples.iter().zip(goes_left) {
            stats[2 * fc.codes[s as usize] as usize + usize::from(!l)] += 1;
        }
        let mut left_levels = Vec::new();
        let mut right_present = false;
        let mut agree = 0;
        for level in 0..levels as usize {
            let (l, r) = (stats[2 * level], stats[2 * level + 1]);
            if l + r == 0 {
                continue;
            }
            agree += l.max(r);
            if l >= r {
                left_levels.push(level as u32);
            } else {
                right_present = true;
            }
        }
        if left_levels.is_empty() || !right_present {
            return None;
        }
        return Some((SplitRule::subset(f, left_levels), false, agree));
    }

    // Numeric: cumulative counts of primary-left samples over ascending codes.
    let mut best: Option<(usize, usize, bool, u64)> = None; // (code lo, code hi, reversed, agree)
    let mut consider = |lo: usize, hi: usize, le_total: u64, le_left: u64| {
        let fwd = le_left + (n_right - (le_total - le_left));
        let rev = n_total - fwd;
        for (rev_flag, agree) in [(false, fwd), (true, rev)] {
            if best.is_none_or(|b| agree > b.3) {
                best = Some((lo, hi, rev_flag, agree));
            }
        }
    };
    if fc.distinct.len() <= 64 {
        let counts = &mut sc.right_counts;
        counts.clear();
        counts.resize(2 * fc.distinct.len(), 0);
        for (&s, &l) in samples.iter().zip(goes_left) {
            counts[2 * fc.codes[s as usize] as usize + usize::from(!l)] += 1;
        }
        let present: Vec<usize> = (0..fc.distinct.len()).filter(|&c| counts[2 * c] + counts[2 * c + 1] > 0).collect();
        let (mut le_total, mut le_left) = (0, 0);
        for w in present.windows(2) {
            le_left += counts[2 * w[0]];
            le_total += counts[2 * w[0]] + counts[2 * w[0] + 1];
            consider(w[0], w[1], le_total, le_left);
        }
    } else {
        sc.keys.clear();
        sc.keys
            .extend(samples.iter().zip(goes_left).map(|(&s, &l)| ((fc.codes[s as usize] as u64) << 1) | u64::from(l)));
        sc.keys.sort_unstable();
        let (mut le_total, mut le_left) = (0, 0);
        let m = sc.keys.len();
        for i in 0..m.saturating_sub(1) {
            le_total += 1;
            le_left += sc.keys[i] & 1;
            let (a, b) = ((sc.keys[i] >> 1) as usize, (sc.keys[i + 1] >> 1) as usize);
            if a != b {
                consider(a, b, le_total, le_left);
            }
        }
    }
    let (lo, hi, reversed, agree) = best?;
    let threshold = midpoint(fc.distinct[lo], fc.distinct[hi]);
    Some((SplitRule::threshold(f, threshold), reversed, agree))
}

/// Tie key of feature `f`: the index itself, or a salted hash giving a random order per node.
#[inline]
fn tie_key(f: usize, salt: Option<u64>) -> u64 {
    match salt {
        None => f as u64,
        Some(salt) => {
            // splitmix64 finalizer
            let mut z = salt ^ (f as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }
    }
}

/// Up to `s` surrogates of `primary` among all other features, using the primary routing already
/// stored in `sc.goes_left`. Only adjusted agreements above 0 are kept. Equal agreements are
/// ordered by feature index, or randomly when `tie_salt` is given.
pub(crate) fn search_node(
    prep: &Prepared,
    samples: &[u32],
    primary: &SplitRule,
    s: usize,
    tie_salt: Option<u64>,
    sc: &mut Scratch,
) -> Vec<SurrogateSplit> {
    let goes_left = std::mem::take(&mut sc.goes_left);
    let n_total = samples.len() as u64;
    let n_left = goes_left.iter().filter(|&&l| l).count() as u64;
    let n_maj = n_left.max(n_total - n_left);

    let mut found: Vec<((u64, usize), SurrogateSplit)> = Vec::new();
    for f in 0..prep.features.len() {
        if f == primary.feature {
            continue;
        }
        if let Some((rule, reversed, agree)) = best_agreement(prep, f, samples, &goes_left, n_left, sc) {
            if agree <= n_maj {
                continue;
            }
            let adj = (agree - n_maj) as f64 / (n_total - n_maj) as f64;
            found.push(((tie_key(f, tie_salt), f), SurrogateSplit { rule, reversed, adj }));
        }
    }
    sc.goes_left = goes_left;
    found.sort_by(|a, b| b.1.adj.total_cmp(&a.1.adj).then(a.0.cmp(&b.0)));
    found.truncate(s);
    // fresh allocation: an in-place collect would keep room for every candidate on each node
    let mut out = Vec::with_capacity(found.len());
    out.extend(found.into_iter().map(|(_, sp)| sp));
    out
}

/// Surrogates of `primary` at a node holding `samples` (row indices, duplicates allowed): the best
/// rule of every other feature, kept when its adjusted agreement is positive, top `s` by
/// descending agreement with ties to the lower feature index.
pub fn find_surrogates(dataset: &Dataset, samples: &[usize], primary: &SplitRule, s: usize) -> Vec<SurrogateSplit> {
    let prep = Prepared::new(dataset);
    let samples: Vec<u32> = samples.iter().map(|&i| i as u32).collect();
    let mut sc = Scratch::new(prep.n);
    let col = dataset.column(primary.feature);
    sc.goes_left = samples.iter().map(|&i| primary.goes_left(col[i as usize])).collect();
    let n_left = sc.goes_left.iter().filter(|&&l| l).count();
    if n_left == 0 || n_left == samples.len() {
        return Vec::new();
    }
    search_node(&prep, &samples, primary, s, None, &mut sc)
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(size: usize) -> Self {
        SquareMatrix { size, values: vec![0.0; size * size] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let size = rows.len();
        assert!(rows.iter().all(|r| r.len() == size), "rows must form a square matrix");
        SquareMatrix { size, values: rows.into_iter().flatten().collect() }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.size + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    /// Sub-block starting at (`row0`, `col0`).
    pub fn block(&self, row0: usize, col0: usize, size: usize) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(size);
        for i in 0..size {
            for j in 0..size {
                out.set(i, j, self.get(row0 + i, col0 + j));
            }
        }
        out
    }

    /// Off-diagonal entries in row-major order.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).flat_map(move |i| (0..self.size).filter(move |&j| j != i).map(move |j| self.get(i, j)))
    }
}

/// Mean adjusted agreement `m[i][j]` of surrogate feature `j` over all nodes split on feature `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrix {
    pub m: SquareMatrix,
    /// Number of nodes using each feature as primary split.
    pub primary_node_counts: Vec<usize>,
}

impl RelationMatrix {
    pub fn size(&self) -> usize {
        self.m.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m.get(i, j)
    }
}

pub fn mean_adjusted_agreement(forest: &Forest) -> RelationMatrix {
    let p = forest.n_features();
    let mut sums = SquareMatrix::zeros(p);
    let mut counts = vec![0usize; p];
    for tree in forest.trees() {
        for node in tree.internal_nodes() {
            let i = node.split.as_ref().map(|s| s.feature).unwrap_or_default();
            counts[i] += 1;
            for sur in &node.surrogates {
                let j = sur.feature();
                sums.values[i * p + j] += sur.adj;
            }
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            for v in &mut sums.values[i * p..(i + 1) * p] {
                *v /= c as f64;
            }
        }
    }
    RelationMatrix { m: sums, primary_node_counts: counts }
}

/// Features whose relation to `i` exceeds `t` times the mean of row `i` (diagonal excluded).
pub fn relation_threshold_select(rel: &RelationMatrix, i: usize, t: f64) -> Vec<usize> {
    let p = rel.size();
    if p < 2 {
        return Vec::new();
    }
    let row = rel.m.row(i);
    let mean = row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).sum::<f64>() / (p - 1) as f64;
    (0..p).filter(|&j| j != i && row[j] > t * mean).collect()
}

impl SplitRule {
    /// Level set or threshold rendered for reports.
    pub fn describe(&self) -> String {
        match &self.test {
            SplitTest::Threshold(t) => format!("<= {t}"),
            SplitTest::CategorySubset(levels) => {
                let l: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
                format!("in {{{}}}", l.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureKind, Outcome};

    #[test]
    fn adjusted_agreement_examples() {
        assert_eq!(adjusted_agreement(10, 6, 10).unwrap(), 1.0);
        assert_eq!(adjusted_agreement(6, 6, 10).unwrap(), 0.0);
        assert_eq!(adjusted_agreement(9, 6, 10).unwrap(), 0.75);
        assert_eq!(adjusted_agreement(3, 6, 10).unwrap(), -0.75);
        assert_eq!(adjusted_agreement(10, 10, 10), Err(AgreementError::NoMinority(10)));
    }

    fn ds(cols: Vec<Vec<f64>>, kinds: Vec<FeatureKind>) -> Dataset {
        let n = cols[0].len();
        let labels = (0..n).map(|i| (i % 2) as u32).collect();
        Dataset::from_columns(cols, kinds, Outcome::Classification { labels, classes: 2 }).unwrap()
    }

    #[test]
    fn duplicate_column_is_perfect_and_first() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let noisy = vec![2.0, 3.0, 1.0, 6.0, 5.0, 4.0];
        let d = ds(vec![noisy, x.clone(), x], vec![FeatureKind::Continuous; 3]);
        let primary = SplitRule::threshold(2, 2.5);
        let sur = find_surrogates(&d, &[0, 1, 2, 3, 4, 5], &primary, 3);
        assert_eq!(sur[0].feature(), 1);
        assert_eq!(sur[0].adj, 1.0);
        assert!(sur.iter().all(|s| s.adj > 0.0 && s.feature() != 2));
    }

    #[test]
    fn constant_features_give_no_surrogates() {
        let d = ds(
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![7.0; 4], vec![0.0; 4]],
            vec![FeatureKind::Continuous, FeatureKind::Continuous, FeatureKind::Categorical { levels: 2 }],
        );
        assert!(find_surrogates(&d, &[0, 1, 2, 3], &SplitRule::threshold(0, 2.5), 3).is_empty());
    }

    #[test]
    fn fewer_than_s_surrogates() {
        // Primary sends rows 0..3 left. Feature 1 agrees fully, feature 2 agrees on 5/6,
        // feature 3 is no better than the majority rule.
        let d = ds(
            vec![
                vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
                vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
                vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
                vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
            ],
            vec![FeatureKind::Continuous; 4],
        );
        let sur = find_surrogates(&d, &[0, 1, 2, 3, 4, 5], &SplitRule::threshold(0, 0.5), 3);
        assert_eq!(sur.len(), 2);
        assert_eq!(sur[0].feature(), 1);
        assert!((sur[1].adj - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reversed_orientation_is_used() {
        let d = ds(vec![vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0]], vec![FeatureKind::Continuous; 2]);
        let sur = find_surrogates(&d, &[0, 1, 2, 3], &SplitRule::threshold(0, 2.5), 1);
        assert_eq!(sur.len(), 1);
        assert!(sur[0].reversed);
        assert_eq!(sur[0].adj, 1.0);
        assert!(sur[0].goes_left(4.0) && !sur[0].goes_left(1.0));
    }

    #[test]
    fn categorical_surrogate_follows_level_majorities() {
        let d = ds(
            vec![vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![2.0, 0.0, 2.0, 1.0, 1.0, 0.0]],
            vec![FeatureKind::Continuous, FeatureKind::Categorical { levels: 3 }],
        );
        let sur = find_surrogates(&d, &[0, 1, 2, 3, 4, 5], &SplitRule::threshold(0, 0.5), 1);
        // level 2 -> left (2/2), level 1 -> right (2/2), level 0 tied -> left; agreement 5 of 6.
        assert_eq!(sur[0].rule, SplitRule::subset(1, vec![0, 2]));
        assert!((sur[0].adj - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_select() {
        let mut m = SquareMatrix::zeros(101);
        m.set(0, 1, 0.9);
        for j in 2..101 {
            m.set(0, j, 0.001);
        }
        let rel = RelationMatrix { m, primary_node_counts: vec![1; 101] };
        assert_eq!(relation_threshold_select(&rel, 0, 5.0), vec![1]);
        assert!(relation_threshold_select(&rel, 3, 5.0).is_empty());
    }
}
