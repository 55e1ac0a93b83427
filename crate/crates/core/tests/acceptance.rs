//! Acceptance criteria at their pinned tolerances. Each test prints one
//! `PASS` or `FAIL` line. Run with
//! `cargo test --release --test acceptance -- --include-ignored --nocapture`.

mod common;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use kdmc::background::{Background, BackgroundFamily};
use kdmc::cli::{check_rn_rows, compare, run_mode, CommonArgs, EstimateArgs, Mode, RunConfig};
use kdmc::kd::{advection_coefficient, diffusion_coefficient, level_step};
use kdmc::levels::{cut_level, pilot_run, select_levels_exact, select_levels_heuristic, PilotOptions, PilotReport};
use kdmc::mlmc::{
    optimal_sample_counts_continuous, predicted_total_cost, run_estimator, CostModel, LevelSet, MemberKey, RunOptions, SampleBank, Sampler,
};
use kdmc::stats::{purpose, DrawSource, DrawStream, Moments, StreamKey};

/// Criteria run one at a time so that their runtimes are meaningful.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, passed: bool, detail: &str, elapsed: Duration, bound_s: f64) -> bool {
    let ok = passed && elapsed.as_secs_f64() < bound_s;
    println!(
        "criterion {id:>2} {name}: {}  ({detail}; {:.1} s of {bound_s} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn stream(purpose: u64, pair: u64, index: u64) -> DrawStream {
    DrawStream::new(2024, StreamKey::new(purpose, pair, index))
}

fn config(background: &str, a: f64, b: f64) -> RunConfig {
    let common = CommonArgs {
        background: Some(background.into()),
        a: Some(a),
        b: Some(b),
        seed: Some(1),
        ..CommonArgs::default()
    };
    let est = EstimateArgs {
        time_limit: Some(1e6),
        ..EstimateArgs::default()
    };
    RunConfig::resolve(&common, &est).unwrap()
}

#[test]
fn criterion_01_collision_time_inversion() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut src = stream(purpose::ORACLE, 1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let family = if src.uniform() < 0.5 { BackgroundFamily::B1 } else { BackgroundFamily::B2 };
        let bg = Background::make(family, 20.0 * src.uniform(), 0.1 + 2000.0 * src.uniform()).unwrap();
        let (x0, v, eps) = (-2.0 + 6.0 * src.uniform(), src.normal() * 2.0, src.exponential());
        let tau = bg.collision_time(x0, v, eps).unwrap();
        worst = worst.max((bg.rate_integral(x0, v, tau) - eps).abs() / eps);
    }
    let ok = report(1, "collision-time oracle", worst <= 1e-10, &format!("worst relative error {worst:.2e}"), start.elapsed(), 5.0);
    assert!(ok);
}

#[test]
fn criterion_02_coefficients_against_reference() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/coefficients_reference.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    let (mut u_min, mut u_max) = (f64::INFINITY, 0.0f64);
    for rec in reader.records() {
        let rec = rec.unwrap();
        let f: Vec<f64> = rec.iter().map(|s| s.parse().unwrap()).collect();
        let (theta, rate, v_next, mu, sigma, a_ref, d_ref) = (f[0], f[1], f[2], f[3], f[4], f[5], f[6]);
        let a = advection_coefficient(theta, v_next, rate, mu, sigma);
        let d = diffusion_coefficient(theta, v_next, rate, mu, sigma);
        for (got, want) in [(a, a_ref), (d, d_ref)] {
            let err = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
            worst = worst.max(err);
        }
        u_min = u_min.min(rate * theta);
        u_max = u_max.max(rate * theta);
        rows += 1;
    }
    let vanish = advection_coefficient(0.0, 1.3, 7.0, 0.0, 1.0) == 0.0 && diffusion_coefficient(0.0, 1.3, 7.0, 0.0, 1.0) == 0.0;
    let ok = report(
        2,
        "coefficient limits",
        worst <= 1e-10 && vanish && u_min <= 1e-10 && u_max >= 10.0,
        &format!("{rows} reference rows, u in [{u_min:.0e}, {u_max}], worst relative error {worst:.2e}, zero at theta = 0: {vanish}"),
        start.elapsed(),
        10.0,
    );
    assert!(ok);
}

#[test]
fn criterion_03_diffusive_phase_moments() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let n = 100_000u64;
    let mut all_ok = true;
    let mut details = Vec::new();
    for (case, &(theta, rate, v_next)) in [(0.01, 100.0, 0.7), (1e-3, 1000.0, -1.3), (0.5, 2.0, 0.3), (0.02, 5.0, 2.0)].iter().enumerate() {
        let a = advection_coefficient(theta, v_next, rate, 0.0, 1.0);
        let d = diffusion_coefficient(theta, v_next, rate, 0.0, 1.0);
        let xs: Vec<f64> = (0..n)
            .map(|i| common::conditioned_phase(theta, rate, 0.0, 1.0, v_next, &mut stream(purpose::ORACLE, 3 + case as u64, i)))
            .collect();
        let m: Moments = xs.iter().copied().collect();
        let mean = m.mean();
        let var = m.variance();
        let sd = var.sqrt();
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let se_mean = sd / (n as f64).sqrt();
        let se_sd = ((m4 - var * var) / (4.0 * n as f64 * var)).sqrt();
        let ok = (mean - a).abs() <= 3.0 * se_mean && (sd - d).abs() <= 3.0 * se_sd;
        all_ok &= ok;
        details.push(format!(
            "u={:.0e}: mean {:+.1} se, sd {:+.1} se",
            rate * theta,
            (mean - a) / se_mean,
            (sd - d) / se_sd
        ));
    }
    let ok = report(3, "diffusive-phase moment matching", all_ok, &details.join(", "), start.elapsed(), 60.0);
    assert!(ok);
}

#[test]
fn criterion_04_distributional_consistency() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = config("B1", 10.0, 1000.0);
    let rows = check_rn_rows(&cfg, &[2, 5, 8], &[2, 8], 1000, 10_000).unwrap();
    let min_p = rows.iter().map(|r| r.p).fold(1.0, f64::min);
    let ok = report(
        4,
        "distributional consistency",
        rows.len() == 18 && rows.iter().all(|r| r.p > 0.01),
        &format!("{} AD tests, smallest p {min_p:.3}", rows.len()),
        start.elapsed(),
        300.0,
    );
    assert!(ok);
}

#[test]
fn criterion_05_telescoping() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let sampler = Sampler::new(Background::make(BackgroundFamily::B1, 10.0, 100.0).unwrap(), 1.0, 5, 0, CostModel::Steps).unwrap();
    let opts = RunOptions::default();
    let multi = run_estimator(&sampler, &mut SampleBank::new(), &LevelSet::new(vec![4, 6, 8]).unwrap(), 0.05, &opts).unwrap();
    let single = run_estimator(&sampler, &mut SampleBank::new(), &LevelSet::single(8), 0.05, &opts).unwrap();
    let se = (multi.variance + single.variance).sqrt();
    let gap = (multi.estimate - single.estimate).abs();
    let ok = report(
        5,
        "telescoping",
        gap <= 3.0 * se,
        &format!("{{4,6,8}} {:.5} vs {{8}} {:.5}, gap {:.2} combined se", multi.estimate, single.estimate, gap / se),
        start.elapsed(),
        120.0,
    );
    assert!(ok);
}

#[test]
fn criterion_06_variance_decay() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let b = 1000.0;
    let sampler = Sampler::new(Background::homogeneous(b).unwrap(), 1.0, 6, 0, CostModel::Steps).unwrap();
    let v_diff: Vec<f64> = (1..=16u32)
        .map(|l| {
            let s = sampler.batch(MemberKey::pair(l, l - 1), purpose::SAMPLE, 0, 10_000).unwrap();
            s.iter().map(|s| s.value).collect::<Moments>().variance()
        })
        .collect();
    let levels: Vec<u32> = (12..=16).collect();
    let x: Vec<f64> = levels.iter().map(|&l| level_step(1.0, l).log2()).collect();
    let y: Vec<f64> = levels.iter().map(|&l| v_diff[l as usize - 1].log2()).collect();
    let slope = common::slope(&x, &y);
    let peak = 1 + v_diff.iter().enumerate().fold(0, |best, (i, v)| if *v > v_diff[best] { i } else { best }) as u32;
    let target = b.log2();
    let ok = report(
        6,
        "variance decay",
        (2.5..=3.5).contains(&slope) && (peak as f64 - target).abs() <= 1.0,
        &format!("slope {slope:.3} over levels 12-16, peak at level {peak}, dt = 1/b at level {target:.2}"),
        start.elapsed(),
        300.0,
    );
    assert!(ok);
}

#[test]
fn criterion_07_optimal_allocation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut src = stream(purpose::ORACLE, 7, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let j = 1 + (src.uniform() * 6.0) as usize;
        let v: Vec<f64> = (0..j).map(|_| 10f64.powf(-4.0 + 4.0 * src.uniform())).collect();
        let c: Vec<f64> = (0..j).map(|_| 10f64.powf(3.0 * src.uniform())).collect();
        let eps = 10f64.powf(-3.0 + 2.0 * src.uniform());
        let closed = optimal_sample_counts_continuous(&v, &c, eps).unwrap();
        let grid = common::grid_search_allocation(&v, &c, eps);
        for (a, b) in closed.iter().zip(&grid) {
            worst = worst.max((a - b).abs() / b);
        }
    }
    let ok = report(7, "optimal allocation", worst <= 0.01, &format!("100 instances, worst relative gap {worst:.2e}"), start.elapsed(), 10.0);
    assert!(ok);
}

#[test]
fn criterion_08_exact_selection() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut src = stream(purpose::ORACLE, 8, 0);
    let mut agree = 0;
    for _ in 0..100 {
        let finest = 1 + (src.uniform() * 12.0) as usize;
        let n = finest + 1;
        let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| 10f64.powf(lo + (hi - lo) * src.uniform())).collect() };
        let v = draw(-3.0, 0.0);
        let c = draw(0.0, 3.0);
        let vd = draw(-6.0, 0.0);
        let cd = draw(0.0, 3.5);
        let rho: Vec<f64> = (0..n).map(|_| 2.0 * src.uniform() - 1.0).collect();
        let r = PilotReport::from_parts(v, c, rho, vd, cd).unwrap();
        let dp = select_levels_exact(&r, finest as u32).unwrap();
        let (brute, best) = common::brute_force_selection(&r, finest as u32);
        if dp == brute && (r.objective(&dp) - best).abs() <= 1e-12 * best {
            agree += 1;
        }
    }
    let ok = report(8, "exact level selection", agree == 100, &format!("{agree}/100 instances match enumeration"), start.elapsed(), 30.0);
    assert!(ok);
}

#[test]
#[ignore = "fails at the pinned settings; see README"]
fn criterion_09_heuristic_selection() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let traced = select_levels_heuristic(&[4.0; 5], &[0.0, 8.0, 4.0, 1.5, 0.7]).unwrap();
    let mut worst: f64 = 0.0;
    let mut details = vec![format!("hand trace {traced}")];
    for family in [BackgroundFamily::B1, BackgroundFamily::B2] {
        for a in [0.0, 10.0] {
            for b in [100.0, 1000.0] {
                let sampler = Sampler::new(Background::make(family, a, b).unwrap(), 1.0, 9, 0, CostModel::Steps).unwrap();
                let finest = cut_level(&sampler) + 3;
                let r = pilot_run(&sampler, &mut SampleBank::new(), finest, &PilotOptions::default()).unwrap();
                let n = finest as usize + 1;
                let heuristic = select_levels_heuristic(&r.v[..n], &r.v_diff[..n]).unwrap();
                let exact = select_levels_exact(&r, finest).unwrap();
                let cost = |set: &LevelSet| {
                    let (v, c) = r.member_inputs(set);
                    predicted_total_cost(&v, &c, 1.0).unwrap()
                };
                let ratio = cost(&heuristic) / cost(&exact);
                worst = worst.max(ratio);
                details.push(format!("{family} a={a} b={b}: {heuristic} vs {exact} ratio {ratio:.2}"));
            }
        }
    }
    let ok = report(
        9,
        "heuristic level selection",
        traced.levels() == [1, 2, 3, 4] && worst <= 3.0,
        &details.join("; "),
        start.elapsed(),
        300.0,
    );
    assert!(ok);
}

#[test]
#[ignore = "fails at the pinned settings; see README"]
fn criterion_10_complexity_slope() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = config("B1", 10.0, 1000.0);
    cfg.eps = (4..=9).map(|r| 1.0 / 2f64.powi(r).sqrt()).collect();
    let log_eps: Vec<f64> = cfg.eps.iter().map(|e| e.ln()).collect();
    let mut slopes = Vec::new();
    let mut details = Vec::new();
    for mode in [Mode::Kdmc, Mode::MlKdmc] {
        let run = run_mode(&cfg, mode, cfg.seed).unwrap();
        let log_cost: Vec<f64> = run.results.iter().map(|r| r.total_cost.ln()).collect();
        let slope = common::slope(&log_eps, &log_cost);
        let last = run.last();
        let counts: Vec<String> = last.level_stats.iter().map(|s| format!("N={} V={:.2e}", s.n, s.variance)).collect();
        details.push(format!("{mode:?} slope {slope:.2} [final {}]", counts.join(" ")));
        slopes.push(slope);
    }
    let ok = report(
        10,
        "complexity slope",
        slopes.iter().all(|s| (-2.4..=-1.6).contains(s)),
        &details.join("; "),
        start.elapsed(),
        600.0,
    );
    assert!(ok);
}

#[test]
fn criterion_11_speedup_ordering() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut speedups = Vec::new();
    for b in [1.0f64, 100.0, 10_000.0] {
        let mut cfg = config("B1", 0.0, b);
        // Matched relative accuracy: one percent of the exact standard deviation.
        let exact_var = 2.0 / (b * b) * (b - 1.0 + (-b).exp());
        cfg.eps = vec![0.01 * exact_var.sqrt()];
        speedups.push(compare(&cfg, 2).unwrap().speedup);
    }
    let ok = report(
        11,
        "speedup ordering",
        speedups[2] > speedups[1] && speedups[1] > speedups[0] && speedups[1] >= 5.0,
        &format!("speedup b=1: {:.2}, b=100: {:.2}, b=10000: {:.2}", speedups[0], speedups[1], speedups[2]),
        start.elapsed(),
        900.0,
    );
    assert!(ok);
}

#[test]
fn criterion_12_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = config("B1", 10.0, 100.0);
    cfg.eps = vec![0.1, 0.05, 0.025];
    let mut fingerprints = Vec::new();
    for workers in [1, 4, 1, 4] {
        cfg.workers = workers;
        let mut fp = Vec::new();
        for mode in [Mode::Kdmc, Mode::MlKdmc] {
            for r in run_mode(&cfg, mode, cfg.seed).unwrap().results {
                fp.push((r.estimate.to_bits(), r.level_stats.iter().map(|s| (s.member, s.n)).collect::<Vec<_>>()));
            }
        }
        fingerprints.push(fp);
    }
    let same = fingerprints.windows(2).all(|w| w[0] == w[1]);
    let ok = report(
        12,
        "determinism",
        same,
        &format!("{} estimates per run compared over workers 1, 4, 1, 4", fingerprints[0].len()),
        start.elapsed(),
        120.0,
    );
    assert!(ok);
}
