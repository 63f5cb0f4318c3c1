//! Brute-force reference implementations and small statistics shared by the test targets.
#![allow(dead_code)]

pub fn naive_gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

pub fn naive_sse(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum()
}

/// Log-rank statistic recomputed from scratch at every distinct event time.
pub fn naive_logrank(obs: &[(f64, bool, bool)]) -> f64 {
    let mut times: Vec<f64> = obs.iter().filter(|o| o.1).map(|o| o.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut num, mut var) = (0.0, 0.0);
    for t in times {
        let y = obs.iter().filter(|o| o.0 >= t).count() as f64;
        let yl = obs.iter().filter(|o| o.0 >= t && o.2).count() as f64;
        let d = obs.iter().filter(|o| o.0 == t && o.1).count() as f64;
        let dl = obs.iter().filter(|o| o.0 == t && o.1 && o.2).count() as f64;
        num += dl - d * yl / y;
        if y > 1.0 {
            var += d * (yl / y) * (1.0 - yl / y) * (y - d) / (y - 1.0);
        }
    }
    if var <= 0.0 {
        0.0
    } else {
        num * num / var
    }
}

/// Largest agreement of any threshold rule on `x` with the routing `left`, over both orientations.
pub fn naive_best_agreement(x: &[f64], left: &[bool]) -> u64 {
    let mut vals = x.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut best = 0;
    for w in vals.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let agree = x.iter().zip(left).filter(|&(&v, &l)| (v <= t) == l).count() as u64;
        best = best.max(agree).max(x.len() as u64 - agree);
    }
    best
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // ties share their average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_examples() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
}
