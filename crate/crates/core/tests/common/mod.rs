//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use kdmc::background::Background;
use kdmc::levels::PilotReport;
use kdmc::mlmc::LevelSet;
use kdmc::stats::{DrawSource, DrawStream};

/// Event-by-event kinetic simulation of one particle released at x = 1.
pub fn kinetic_path<S: DrawSource>(bg: &Background, end_time: f64, src: &mut S) -> f64 {
    let (mu, sigma) = (bg.mu_v(), bg.sigma_v());
    let mut x = 1.0;
    let mut t = 0.0;
    let mut v = mu + sigma * src.normal();
    let mut tau = bg.collision_time(x, v, src.exponential()).unwrap();
    while t + tau < end_time {
        x += v * tau;
        t += tau;
        v = mu + sigma * src.normal();
        tau = bg.collision_time(x, v, src.exponential()).unwrap();
    }
    x + v * (end_time - t)
}

/// Displacement of the kinetic process with constant rate `rate` over
/// `[0, theta]`, started by a collision at time 0 and conditioned on its
/// velocity at time `theta` being `v_next`.
///
/// Collision times are Poisson and independent of the velocities, and the
/// velocity at `theta` is the one drawn at the last collision, so the
/// conditioning fixes the last segment's velocity and leaves the earlier
/// ones Maxwellian.
pub fn conditioned_phase<S: DrawSource>(theta: f64, rate: f64, mu: f64, sigma: f64, v_next: f64, src: &mut S) -> f64 {
    let mut times = vec![0.0];
    let mut t = src.exponential() / rate;
    while t < theta {
        times.push(t);
        t += src.exponential() / rate;
    }
    let last = times.len() - 1;
    let mut x = 0.0;
    for (k, &start) in times.iter().enumerate() {
        let end = if k == last { theta } else { times[k + 1] };
        let v = if k == last { v_next } else { mu + sigma * src.normal() };
        x += v * (end - start);
    }
    x
}

/// Smallest objective over every level set whose finest level is `finest`.
pub fn brute_force_selection(report: &PilotReport, finest: u32) -> (LevelSet, f64) {
    let mut best: Option<(LevelSet, f64)> = None;
    for mask in 0u32..(1 << finest) {
        let mut levels: Vec<u32> = (0..finest).filter(|l| mask & (1 << l) != 0).collect();
        levels.push(finest);
        let set = LevelSet::new(levels).unwrap();
        let obj = report.objective(&set);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((set, obj));
        }
    }
    best.unwrap()
}

/// Numerical minimiser of `Σ N C` subject to `Σ V/N = eps²/2`.
///
/// With weights `w_j = V_j / (N_j K)`, `K = eps²/2`, the constraint becomes
/// `Σ w = 1` and the cost `Σ C V / (K w)` is convex on the simplex.
/// Budget is shifted between pairs of members by a shrinking grid search
/// until no pair can improve.
pub fn grid_search_allocation(variances: &[f64], costs: &[f64], eps: f64) -> Vec<f64> {
    let k = eps * eps / 2.0;
    let j = variances.len();
    let cv: Vec<f64> = variances.iter().zip(costs).map(|(v, c)| v * c).collect();
    let mut w = vec![1.0 / j as f64; j];
    for _ in 0..200 {
        for a in 0..j {
            for b in (a + 1)..j {
                let s = w[a] + w[b];
                let f = |x: f64| cv[a] / x + cv[b] / (s - x);
                let (mut lo, mut hi) = (0.0, s);
                for _ in 0..12 {
                    let grid: Vec<f64> = (1..64).map(|i| lo + (hi - lo) * i as f64 / 64.0).collect();
                    let (i_best, _) = grid
                        .iter()
                        .map(|&x| f(x))
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (i, y)| if y < acc.1 { (i, y) } else { acc });
                    let step = (hi - lo) / 64.0;
                    let centre = grid[i_best];
                    lo = (centre - step).max(0.0);
                    hi = (centre + step).min(s);
                }
                let x = 0.5 * (lo + hi);
                w[a] = x;
                w[b] = s - x;
            }
        }
    }
    variances.iter().zip(&w).map(|(v, w)| v / (w * k)).collect()
}

/// Two-sample Anderson-Darling statistic (continuous-data form).
pub fn ad_two_sample(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let total = n + m;
    let mut pooled: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut from_x = 0.0;
    let mut sum = 0.0;
    for (i, &(_, is_x)) in pooled.iter().enumerate().take(pooled.len() - 1) {
        if is_x {
            from_x += 1.0;
        }
        let j = (i + 1) as f64;
        sum += (total * from_x - n * j).powi(2) / (j * (total - j));
    }
    sum / (n * m)
}

/// Permutation p-value of the two-sample statistic.
pub fn ad_two_sample_p(x: &[f64], y: &[f64], permutations: usize, src: &mut DrawStream) -> f64 {
    let observed = ad_two_sample(x, y);
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        for i in (1..pooled.len()).rev() {
            let j = ((src.uniform() * (i + 1) as f64) as usize).min(i);
            pooled.swap(i, j);
        }
        if ad_two_sample(&pooled[..x.len()], &pooled[x.len()..]) >= observed {
            exceed += 1;
        }
    }
    (exceed + 1) as f64 / (permutations + 1) as f64
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
