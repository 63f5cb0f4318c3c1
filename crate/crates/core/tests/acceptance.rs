//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each. With
//! `ACCEPTANCE_STRICT=1` the process exits non-zero when any criterion fails; otherwise the
//! verdicts are reported without failing the surrounding `cargo test` run.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{naive_best_agreement, naive_gini, naive_logrank, naive_sse, spearman};
use mutual_forest::analysis::{analyze, AnalysisConfig};
use mutual_forest::criteria::{gini_decrease, logrank_statistic, sse_decrease};
use mutual_forest::importance::mir;
use mutual_forest::io::{importance_json, matrix_tsv, metrics_json, raw_tsv, selections_json};
use mutual_forest::selection::{janitza_null, pvalue, select, NullDistribution, NullKind};
use mutual_forest::simulation::{
    run_experiment, ExperimentConfig, MetricsReport, Scenario, ScenarioSpec, NULL_A_LEVELS, NULL_B_MAF,
};
use mutual_forest::surrogates::{adjusted_agreement, find_surrogates};
use mutual_forest::{
    mean_adjusted_agreement, train_forest, Dataset, FeatureKind, ForestParams, Outcome, SplitRule, SquareMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn experiment(spec: &ScenarioSpec, params: ForestParams, record_pairs: bool) -> MetricsReport {
    let mut cfg = ExperimentConfig { record_pairs, threads: threads(), ..Default::default() };
    cfg.analysis.params = params;
    let out = run_experiment(spec, &cfg).expect("experiment runs");
    assert!(out.metrics.failures.is_empty(), "replicate failures: {:?}", out.metrics.failures);
    out.metrics
}

fn null_params() -> ForestParams {
    ForestParams { ntree: 100, mtry: 3, min_node_size: 1, surrogates: 3, ..Default::default() }
}

fn method<'a>(m: &'a MetricsReport, name: &str) -> &'a [f64] {
    &m.methods.iter().find(|x| x.method == name).expect("method present").median
}

fn group_freq(m: &MetricsReport, name: &str, group: &str) -> f64 {
    let sel =
        m.methods.iter().find(|x| x.method == name).and_then(|x| x.selection.as_ref()).expect("selection metrics");
    sel.group_frequency[group]
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_1(a: &MetricsReport) -> Verdict {
    let rel = a.relations.as_ref().expect("pair summary");
    // X9 has 20 categories, X1 has 2
    let m = rel.median_m[8][0].unwrap_or(f64::NAN);
    let mfi = rel.median_mfi[8][0].unwrap_or(f64::NAN);
    let m_t = rel.median_m[0][8].unwrap_or(f64::NAN);
    let mfi_t = rel.median_mfi[0][8].unwrap_or(f64::NAN);
    Verdict {
        pass: m >= 0.2 && mfi.abs() <= 0.05,
        detail: format!(
            "median M(X9 -> X1) = {m:.3} (need >= 0.2), median MFI(X9 -> X1) = {mfi:.3} (need |.| <= 0.05); \
             transposed pair: M(X1 -> X9) = {m_t:.3}, MFI(X1 -> X9) = {mfi_t:.3}"
        ),
    }
}

fn criterion_2(b: &MetricsReport) -> Verdict {
    let rel = b.relations.as_ref().expect("pair summary");
    let p = NULL_B_MAF.len();
    let mut rhos = Vec::new();
    let mut worst_mfi = 0.0f64;
    for i in 0..p {
        let (mut m, mut maf) = (Vec::new(), Vec::new());
        for j in (0..p).filter(|&j| j != i) {
            if let Some(v) = rel.median_m[i][j] {
                m.push(v);
                maf.push(NULL_B_MAF[j]);
            }
            if let Some(v) = rel.median_mfi[i][j] {
                worst_mfi = worst_mfi.max(v.abs());
            }
        }
        rhos.push(if m.len() > 2 { spearman(&m, &maf) } else { f64::NAN });
    }
    let min_rho = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict {
        pass: min_rho > 0.8 && worst_mfi <= 0.05,
        detail: format!(
            "per-row Spearman(median M, partner MAF) = {} (need all > 0.8); max |median MFI| = {worst_mfi:.3} (need <= 0.05)",
            fmt(&rhos)
        ),
    }
}

fn criterion_3(a: &MetricsReport, b: &MetricsReport) -> Verdict {
    let cats: Vec<f64> = NULL_A_LEVELS.iter().map(|&l| f64::from(l)).collect();
    let smd = &method(a, "SMD")[..9];
    let rho_smd = spearman(smd, &cats);
    let mut pass = rho_smd < -0.8;
    let mut detail =
        format!("null A: Spearman(median SMD, categories) = {rho_smd:.3} (need < -0.8), SMD = {}", fmt(smd));
    for (label, m, trend) in [("A", a, &cats[..]), ("B", b, &NULL_B_MAF[..])] {
        for name in ["AIR", "MIR"] {
            let med = method(m, name);
            let max_abs = med.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let rho = spearman(&med[..trend.len()], trend);
            pass &= max_abs <= 0.05 && rho.abs() < 0.5;
            detail += &format!("; null {label} {name}: max |median| = {max_abs:.3}, Spearman = {rho:.3}");
        }
    }
    Verdict { pass, detail: detail + " (need |median| <= 0.05 and |Spearman| < 0.5)" }
}

fn criterion_4() -> Verdict {
    let spec = ScenarioSpec { n: 100, p_total: 200, replicates: 20, ..ScenarioSpec::new(Scenario::Correlation) };
    let params = ForestParams { ntree: 500, mtry: 53, surrogates: 10, ..Default::default() };
    let m = experiment(&spec, params, false);
    let groups = ["X1", "X2", "X3", "X4", "X5", "X6", "cX1"];
    let freqs: Vec<f64> = groups.iter().map(|g| group_freq(&m, "MIR", g)).collect();
    let ncv = group_freq(&m, "MIR", "ncV");
    let (mir_cx2, air_cx2) = (group_freq(&m, "MIR", "cX2"), group_freq(&m, "AIR", "cX2"));
    let air: Vec<f64> = groups.iter().map(|g| group_freq(&m, "AIR", g)).collect();
    Verdict {
        pass: freqs.iter().all(|&f| f >= 0.8) && ncv <= 0.05 && mir_cx2 > air_cx2,
        detail: format!(
            "MIR frequency X1..X6, cX1 = {} (need >= 0.8 each), ncV = {ncv:.3} (need <= 0.05), \
             cX2 MIR {mir_cx2:.3} vs AIR {air_cx2:.3} (need MIR > AIR); AIR X1..X6, cX1 = {}",
            fmt(&freqs),
            fmt(&air)
        ),
    }
}

fn criterion_5() -> Verdict {
    let spec = ScenarioSpec { n: 100, p_total: 300, replicates: 20, ..ScenarioSpec::new(Scenario::NullBinary) };
    // s = 1% of p
    let params = ForestParams { ntree: 500, mtry: 72, surrogates: 3, ..Default::default() };
    let m = experiment(&spec, params, false);
    let sel = m.methods.iter().find(|x| x.method == "MIR").and_then(|x| x.selection.as_ref()).expect("MIR selection");
    let type1 = sel.frequency.iter().sum::<f64>() / sel.frequency.len() as f64;
    Verdict { pass: type1 <= 0.02, detail: format!("MIR type-I error = {type1:.4} (need <= 0.02)") }
}

fn criterion_6() -> Verdict {
    const N: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 5];

    for _ in 0..N {
        let k = rng.random_range(2..5);
        let mut left: Vec<u64> = (0..k).map(|_| rng.random_range(0..30)).collect();
        let mut right: Vec<u64> = (0..k).map(|_| rng.random_range(0..30)).collect();
        // both children non-empty
        left[k - 1] += 1;
        right[0] += 1;
        let parent: Vec<u64> = left.iter().zip(&right).map(|(a, b)| a + b).collect();
        let (nl, nr) = (left.iter().sum::<u64>() as f64, right.iter().sum::<u64>() as f64);
        let expect = naive_gini(&parent) - nl / (nl + nr) * naive_gini(&left) - nr / (nl + nr) * naive_gini(&right);
        worst[0] = worst[0].max((gini_decrease(&parent, &left, &right).unwrap() - expect).abs());

        let len = rng.random_range(2..40);
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let cut = rng.random_range(1..len);
        let expect = naive_sse(&v) - naive_sse(&v[..cut]) - naive_sse(&v[cut..]);
        let got = sse_decrease(&v, &v[..cut], &v[cut..]).unwrap();
        worst[1] = worst[1].max((got - expect).abs() / naive_sse(&v).max(1.0));

        let len = rng.random_range(2..40);
        let mut obs: Vec<(f64, bool, bool)> = (0..len)
            .map(|_| (f64::from(rng.random_range(1u32..15)), rng.random_bool(0.7), rng.random_bool(0.5)))
            .collect();
        obs[0].2 = true;
        obs[1].2 = false;
        let pick =
            |side: bool| -> (Vec<f64>, Vec<bool>) { obs.iter().filter(|o| o.2 == side).map(|o| (o.0, o.1)).unzip() };
        let ((lt, ls), (rt, rs)) = (pick(true), pick(false));
        let expect = naive_logrank(&obs);
        worst[2] = worst[2].max((logrank_statistic(&lt, &ls, &rt, &rs).unwrap() - expect).abs() / expect.max(1.0));
    }

    // adjusted agreement of the best surrogate against exhaustive counting
    let mut checked = 0;
    while checked < N {
        let n = rng.random_range(4..30);
        let cols: Vec<Vec<f64>> =
            (0..3).map(|_| (0..n).map(|_| f64::from(rng.random_range(0u8..6))).collect()).collect();
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        let ds = Dataset::from_columns(
            cols.clone(),
            vec![FeatureKind::Continuous; 3],
            Outcome::Classification { labels, classes: 2 },
        )
        .unwrap();
        let primary = SplitRule::threshold(0, f64::from(rng.random_range(0u8..5)) + 0.5);
        let left: Vec<bool> = cols[0].iter().map(|&v| primary.goes_left(v)).collect();
        let n_left = left.iter().filter(|&&l| l).count() as u64;
        if n_left == 0 || n_left == n as u64 {
            continue;
        }
        checked += 1;
        let n_maj = n_left.max(n as u64 - n_left);
        let samples: Vec<usize> = (0..n).collect();
        let got = find_surrogates(&ds, &samples, &primary, 2);
        let mut expect: Vec<f64> = (1..3)
            .map(|f| adjusted_agreement(naive_best_agreement(&cols[f], &left), n_maj, n as u64).unwrap())
            .filter(|&a| a > 0.0)
            .collect();
        expect.sort_by(|a, b| b.total_cmp(a));
        if got.len() != expect.len() {
            worst[3] = f64::INFINITY;
            continue;
        }
        for (g, e) in got.iter().zip(&expect) {
            worst[3] = worst[3].max((g.adj - e).abs());
        }
    }

    // mean adjusted agreement against a walk over every node
    for seed in 0..N as u64 {
        let n = rng.random_range(6..20);
        let cols: Vec<Vec<f64>> =
            (0..3).map(|_| (0..n).map(|_| f64::from(rng.random_range(0u8..8))).collect()).collect();
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        let Ok(ds) = Dataset::from_columns(
            cols,
            vec![FeatureKind::Continuous; 3],
            Outcome::Classification { labels, classes: 2 },
        ) else {
            continue;
        };
        let forest =
            train_forest(&ds, &ForestParams { ntree: 3, mtry: 2, surrogates: 2, seed, ..Default::default() }).unwrap();
        let rel = mean_adjusted_agreement(&forest);
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                let (mut sum, mut count) = (0.0, 0usize);
                for node in forest.trees().iter().flat_map(|t| t.nodes.iter()) {
                    if node.split.as_ref().is_some_and(|s| s.feature == i) {
                        count += 1;
                        sum += node.surrogates.iter().filter(|s| s.feature() == j).map(|s| s.adj).sum::<f64>();
                    }
                }
                let expect = if count == 0 { 0.0 } else { sum / count as f64 };
                worst[4] = worst[4].max((rel.get(i, j) - expect).abs());
            }
        }
    }

    let tol = [1e-12, 1e-12, 1e-9, 1e-12, 1e-12];
    Verdict {
        pass: worst.iter().zip(&tol).all(|(w, t)| w <= t),
        detail: format!(
            "{N} instances each; max error gini {:.1e}, sse {:.1e} (relative), log-rank {:.1e} (relative), \
             adjusted agreement {:.1e}, mean adjusted agreement {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    }
}

fn criterion_7() -> Verdict {
    let air = vec![0.7, -0.2, 0.0, 1.3, -0.05];
    let mir_ok = mir(&air, &SquareMatrix::zeros(air.len())).unwrap() == air;
    let janitza_ok = janitza_null(&[-2.0, -1.0, 0.0, 3.0, 5.0], 1)
        .map(|n| n.samples() == [-2.0, -1.0, 0.0, 1.0, 2.0])
        .unwrap_or(false);
    let null99 = NullDistribution::new((0..99).map(f64::from).collect(), NullKind::Janitza).unwrap();
    let null101 = NullDistribution::new((0..101).map(f64::from).collect(), NullKind::Janitza).unwrap();
    let p_max = pvalue(1000.0, &null99);
    let p_min = pvalue(0.0, &null99);
    let p_med = pvalue(50.0, &null101);
    let p_ok = (p_max - 0.01).abs() < 1e-15 && p_min == 1.0 && (p_med - 0.5).abs() < 0.01;
    let sel_ok = select("t", &[0.005, 0.2], 0.01).map(|s| s.selected == vec![0]).unwrap_or(false)
        && select("t", &[], 0.01).map(|s| s.selected.is_empty()).unwrap_or(false);
    Verdict {
        pass: mir_ok && janitza_ok && p_ok && sel_ok,
        detail: format!(
            "MIR = AIR at zero MFI: {mir_ok}; mirrored null example: {janitza_ok}; \
             p-values (above all 99, at min, at median of 101) = {p_max}, {p_min}, {p_med:.4}; selection examples: {sel_ok}"
        ),
    }
}

fn criterion_8() -> Verdict {
    let spec = ScenarioSpec { n: 80, p_total: 90, ..ScenarioSpec::new(Scenario::Correlation) };
    let ds = spec.generate(0).unwrap().0;
    let cfg = AnalysisConfig {
        params: ForestParams { ntree: 60, mtry: 29, surrogates: 3, seed: 7, ..Default::default() },
        ..Default::default()
    };
    let analysis = |threads: usize| {
        let mut c = cfg.clone();
        c.params.threads = threads;
        let res = analyze(&ds, &c).unwrap();
        [
            importance_json(&res, &cfg).unwrap(),
            selections_json(&res, &cfg).unwrap(),
            matrix_tsv(ds.names(), &res.mfi.mfi.values),
        ]
        .concat()
    };
    let sim_spec = ScenarioSpec { replicates: 6, ..ScenarioSpec::new(Scenario::NullB) };
    let simulation = |threads: usize| {
        let mut c = ExperimentConfig { record_pairs: true, threads, ..Default::default() };
        c.analysis.params = ForestParams { ntree: 40, mtry: 3, surrogates: 3, seed: 3, threads, ..Default::default() };
        let out = run_experiment(&sim_spec, &c).unwrap();
        metrics_json(&out.metrics).unwrap() + &raw_tsv(&out.raw)
    };
    let (a1, s1) = (analysis(1), simulation(1));
    let analyze_ok = [2, 8].iter().all(|&t| analysis(t) == a1);
    let simulate_ok = [2, 8].iter().all(|&t| simulation(t) == s1);
    Verdict {
        pass: analyze_ok && simulate_ok,
        detail: format!("byte-identical across 1/2/8 threads: analyze {analyze_ok}, simulate {simulate_ok}"),
    }
}

fn main() -> ExitCode {
    // the harness passes flags such as --list when enumerating tests
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    let mut report = |n: usize, start: Instant, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {status} ({:.1}s) {}", start.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed += 1;
        }
    };

    let t = Instant::now();
    let null_a = experiment(&ScenarioSpec::new(Scenario::NullA), null_params(), true);
    report(1, t, criterion_1(&null_a));
    let t = Instant::now();
    let null_b = experiment(&ScenarioSpec::new(Scenario::NullB), null_params(), true);
    report(2, t, criterion_2(&null_b));
    let t = Instant::now();
    report(3, t, criterion_3(&null_a, &null_b));
    let t = Instant::now();
    report(4, t, criterion_4());
    let t = Instant::now();
    report(5, t, criterion_5());
    let t = Instant::now();
    report(6, t, criterion_6());
    let t = Instant::now();
    report(7, t, criterion_7());
    let t = Instant::now();
    report(8, t, criterion_8());

    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
