mod common;

use kdmc::stats::{ad_statistic, ad_statistic_with, ad_test, purpose, DrawSource, DrawStream, Moments, NullDistribution, NullTable, StreamKey};
use proptest::collection::vec;
use proptest::prelude::*;

fn stream(purpose: u64, pair: u64, index: u64) -> DrawStream {
    DrawStream::new(99, StreamKey::new(purpose, pair, index))
}

/// `N ∫₀¹ (F_N(u) − u)² / (u (1 − u)) du` over the transformed sample.
fn a2_by_quadrature(samples: &[f64], null: NullDistribution) -> f64 {
    let mut u: Vec<f64> = samples.iter().map(|&x| null.cdf(x)).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let mut knots = vec![0.0];
    knots.extend(&u);
    knots.push(1.0);
    let mut total = 0.0;
    for (k, w) in knots.windows(2).enumerate() {
        let level = k as f64 / n;
        let f = |t: f64| {
            let t = t.clamp(1e-300, 1.0 - 1e-16);
            (level - t).powi(2) / (t * (1.0 - t))
        };
        total += common::adaptive_simpson(&f, w[0], w[1], 1e-14);
    }
    n * total
}

#[test]
fn order_statistic_form_matches_quadrature() {
    for set in 0..50u64 {
        let mut src = stream(purpose::ORACLE, 1, set);
        let n = 1 + (set as usize * 7) % 50;
        let null = if set % 2 == 0 { NullDistribution::StandardNormal } else { NullDistribution::UnitExponential };
        let xs: Vec<f64> = (0..n).map(|_| 0.8 * null.sample(&mut src) + 0.1).collect();
        let closed = ad_statistic(&xs, null).unwrap();
        let quad = a2_by_quadrature(&xs, null);
        assert!((closed - quad).abs() <= 1e-8 * closed.max(1.0), "set {set}: {closed} vs {quad}");
    }
}

#[test]
fn probability_integral_transform_leaves_a2_unchanged() {
    for set in 0..20u64 {
        let mut src = stream(purpose::ORACLE, 2, set);
        let xs: Vec<f64> = (0..200).map(|_| 1.2 * src.normal() - 0.3).collect();
        let null = NullDistribution::StandardNormal;
        let direct = ad_statistic(&xs, null).unwrap();
        let u: Vec<f64> = xs.iter().map(|&x| null.cdf(x)).collect();
        let uniform = ad_statistic_with(&u, |t| t.clamp(0.0, 1.0), |t| (1.0 - t).clamp(0.0, 1.0)).unwrap();
        assert!((direct - uniform).abs() <= 1e-10 * direct.max(1.0), "{direct} vs {uniform}");
    }
}

#[test]
fn a_million_normal_draws_pass() {
    let mut src = stream(purpose::SAMPLE, 3, 0);
    let xs: Vec<f64> = (0..1_000_000).map(|_| src.normal()).collect();
    // Asymptotic 1% critical value of the fully specified null.
    let a2 = ad_statistic(&xs, NullDistribution::StandardNormal).unwrap();
    assert!(a2 < 3.857, "A2 = {a2}");
    let ys: Vec<f64> = (0..1_000_000).map(|_| src.exponential()).collect();
    let a2 = ad_statistic(&ys, NullDistribution::UnitExponential).unwrap();
    assert!(a2 < 3.857, "A2 = {a2}");
}

#[test]
fn streams_with_different_keys_are_uncorrelated() {
    let keys = [(purpose::SAMPLE, 0, 0), (purpose::SAMPLE, 0, 1), (purpose::SAMPLE, 1, 0), (purpose::RESERVE, 0, 0), (purpose::ORACLE, 0, 0)];
    for (i, &a) in keys.iter().enumerate() {
        for &b in &keys[i + 1..] {
            let mut sa = stream(a.0, a.1, a.2);
            let mut sb = stream(b.0, b.1, b.2);
            let mut c = kdmc::stats::CoMoments::new();
            for _ in 0..100_000 {
                c.push(sa.normal(), sb.normal());
            }
            assert!(c.correlation().abs() < 0.01, "{a:?} {b:?}: {}", c.correlation());
        }
    }
}

#[test]
fn p_values_are_calibrated_and_powerful() {
    let table = NullTable::build(NullDistribution::StandardNormal, 100, 10_000, 5).unwrap();
    let rejected = (0..400u64)
        .filter(|&r| {
            let mut src = stream(purpose::ORACLE, 4, r);
            let xs: Vec<f64> = (0..100).map(|_| src.normal()).collect();
            table.test(&xs).unwrap().p < 0.05
        })
        .count();
    let rate = rejected as f64 / 400.0;
    assert!((rate - 0.05).abs() <= 0.03, "rejection rate {rate}");

    let mut src = stream(purpose::ORACLE, 5, 0);
    let shifted: Vec<f64> = (0..1000).map(|_| src.normal() + 0.5).collect();
    assert!(ad_test(&shifted, NullDistribution::StandardNormal, 2000, 6).unwrap().p < 0.01);
}

proptest! {
    #[test]
    fn moment_merges_are_order_free(xs in vec(-1e3..1e3f64, 3..200), cut1 in 0.0..1.0f64, cut2 in 0.0..1.0f64) {
        let n = xs.len();
        let (i, j) = {
            let a = (cut1 * n as f64) as usize;
            let b = (cut2 * n as f64) as usize;
            (a.min(b), a.max(b))
        };
        let part = |s: &[f64]| s.iter().copied().collect::<Moments>();
        let (a, b, c) = (part(&xs[..i]), part(&xs[i..j]), part(&xs[j..]));
        let left = a.merge(&b).merge(&c);
        let right = c.merge(&a.merge(&b));
        let whole = part(&xs);
        for m in [left, right] {
            prop_assert_eq!(m.count(), whole.count());
            prop_assert!((m.mean() - whole.mean()).abs() <= 1e-12 * whole.mean().abs().max(1.0));
            prop_assert!((m.variance() - whole.variance()).abs() <= 1e-12 * whole.variance().max(1e-300));
        }
    }
}
