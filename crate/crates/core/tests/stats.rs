use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfeval::stats::{holm_bonferroni, run_pairwise_family, ScoreTable, TestStatus};

fn table(columns: &[(&str, Vec<f64>)]) -> ScoreTable<f64> {
    columns
        .iter()
        .map(|(m, v)| {
            let per_image = v.iter().enumerate().map(|(i, &s)| (format!("img_{i:03}"), s)).collect();
            (m.to_string(), per_image)
        })
        .collect()
}

/// Monte-Carlo sign-flip p-value for the signed-rank statistic.
fn permutation_p(diffs: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let mut order: Vec<usize> = (0..nz.len()).collect();
    order.sort_by(|&a, &b| nz[a].abs().partial_cmp(&nz[b].abs()).unwrap());
    let mut ranks = vec![0.0; nz.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as f64 + 1.0;
    }
    let center = ranks.iter().sum::<f64>() / 2.0;
    let observed: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let extreme = (observed - center).abs();
    let mut hits = 0usize;
    for _ in 0..resamples {
        let w: f64 = ranks.iter().filter(|_| rng.random::<bool>()).sum();
        if (w - center).abs() >= extreme - 1e-9 {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (resamples + 1) as f64
}

#[test]
fn rejections_match_permutation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 40;
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.3)).collect();
    let noise = |rng: &mut ChaCha8Rng| rng.random_range(-0.02..0.02);
    let strong: Vec<f64> = base.iter().map(|b| b + 0.03 + noise(&mut rng)).collect();
    let weak: Vec<f64> = base.iter().map(|b| b + noise(&mut rng)).collect();
    let null: Vec<f64> = base.iter().map(|b| b + noise(&mut rng)).collect();
    let scores = table(&[("a_strong", strong), ("b_weak", weak), ("c_null", null)]);
    let results = run_pairwise_family(&scores, 0.05).unwrap();
    assert_eq!(results.len(), 3);

    let mut oracle_p = Vec::new();
    for r in &results {
        let a = &scores[&r.method_a];
        let b = &scores[&r.method_b];
        let diffs: Vec<f64> = a.values().zip(b.values()).map(|(x, y)| x - y).collect();
        oracle_p.push(permutation_p(&diffs, 100_000, &mut rng));
    }
    let oracle = holm_bonferroni(&oracle_p, 0.05).unwrap();
    let got: Vec<bool> = results.iter().map(|r| r.significant).collect();
    assert_eq!(got, oracle.reject, "oracle p {oracle_p:?}");
    assert_eq!(got, vec![true, true, false]);
    for (r, p) in results.iter().zip(&oracle_p) {
        assert!(r.p_raw >= 0.0 && r.p_adjusted >= r.p_raw && r.p_adjusted <= 1.0);
        if *p > 1e-3 {
            assert!((r.p_raw - p).abs() < 0.02, "{} vs {p}", r.p_raw);
        }
    }
}

#[test]
fn median_difference_fixture() {
    // right-skewed differences: median 0.1080, mean near the gap between
    // the two methods' mean scores
    let n = 500;
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            if u < 0.5 { 0.1080 - 0.08 * (0.5 - u) } else { 0.1080 + 0.14 * (u - 0.5) }
        })
        .collect();
    let vanilla: Vec<f64> = (0..n).map(|i| 0.03 + 0.06 * ((i * 7919) % n) as f64 / n as f64).collect();
    let xrai: Vec<f64> = vanilla.iter().zip(&diffs).map(|(v, d)| v + d).collect();
    let scores = table(&[("XRAI", xrai), ("Vanilla_IG", vanilla)]);
    let r = &run_pairwise_family(&scores, 0.05).unwrap()[0];
    assert_eq!((r.method_a.as_str(), r.method_b.as_str()), ("Vanilla_IG", "XRAI"));
    assert!((r.effect_size + 0.1080).abs() < 1e-4, "{}", r.effect_size);
    assert_eq!(r.status, TestStatus::Normal);
    assert!(r.significant && r.p_raw < 1e-80);
}

#[test]
fn twenty_one_pairs_in_lexicographic_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let methods = ["XRAI", "LIME", "SmoothGrad_IG", "GradCAM", "Blur_IG", "Guided_IG", "Vanilla_IG"];
    let cols: Vec<(&str, Vec<f64>)> = methods
        .iter()
        .map(|m| (*m, (0..30).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let results = run_pairwise_family(&table(&cols), 0.05).unwrap();
    assert_eq!(results.len(), 21);
    let pairs: Vec<(String, String)> = results.iter().map(|r| (r.method_a.clone(), r.method_b.clone())).collect();
    let mut sorted = pairs.clone();
    sorted.sort();
    assert_eq!(pairs, sorted);
    assert!(pairs.iter().all(|(a, b)| a < b));
    let smallest = results.iter().map(|r| r.p_raw).fold(1.0, f64::min);
    let at = results.iter().find(|r| r.p_raw == smallest).unwrap();
    assert!((at.p_adjusted - (21.0 * smallest).min(1.0)).abs() < 1e-15);
}

#[test]
fn identical_columns_are_degenerate_not_significant() {
    let v: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let results = run_pairwise_family(&table(&[("a", v.clone()), ("b", v)]), 0.05).unwrap();
    assert_eq!(results[0].status, TestStatus::Degenerate);
    assert_eq!(results[0].w_statistic, None);
    assert!(!results[0].significant);
    assert_eq!(results[0].n_zero_dropped, 10);
    let empty: ScoreTable<f64> = BTreeMap::new();
    assert!(run_pairwise_family(&empty, 0.05).unwrap().is_empty());
}
