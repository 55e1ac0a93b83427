//! Command-line harness behind the `kdmc` binary.
//!
//! Every subcommand resolves a [`RunConfig`] from built-in defaults, an
//! optional flat TOML file (`--config`) and command-line flags, in increasing
//! order of precedence, and writes CSV files into the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{Background, BackgroundFamily};
use crate::correlate::pooled_coarse_draws;
use crate::error::{Error, Result};
use crate::kd::level_step;
use crate::levels::{pilot_run, select_levels_exact, select_levels_heuristic, PilotOptions, PilotReport};
use crate::mlmc::{
    predicted_total_cost, run_adaptive, tolerance_sequence, AdaptiveOptions, CostModel, EstimatorResult, LevelSet, MemberKey, RunOptions,
    SampleBank, Sampler,
};
use crate::stats::{purpose, Moments, NullDistribution, NullTable};

/// Exit status when a consistency check fails.
pub const EXIT_CHECK_FAILED: i32 = 2;
/// Exit status for invalid configuration or any other error.
pub const EXIT_INVALID: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "kdmc", version, about = "Kinetic-diffusion Monte Carlo and its multilevel extension")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Background family (B1 or B2).
    #[arg(long, global = true)]
    pub background: Option<String>,
    /// Heterogeneity parameter of the collision rate.
    #[arg(long, global = true)]
    pub a: Option<f64>,
    /// Collision rate at the release point.
    #[arg(long, global = true)]
    pub b: Option<f64>,
    /// Simulation end time.
    #[arg(long = "T", global = true)]
    pub end_time: Option<f64>,
    /// Finest level L (time step T/2^L). Defaults to ceil(log2(bT)) + 3.
    #[arg(long, global = true)]
    pub max_level: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat TOML file with any of the configuration keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateArgs {
    /// Which estimator(s) to run.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Explicit tolerances, comma separated and decreasing.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// First tolerance of the sequence eps0 / sqrt(2^r).
    #[arg(long)]
    pub eps0: Option<f64>,
    /// Last index r of the tolerance sequence.
    #[arg(long)]
    pub r_max: Option<u32>,
    /// Smallest finest level the bias control may choose. Defaults to L.
    #[arg(long)]
    pub min_level: Option<u32>,
    /// Warm-up samples per level in the pilot run.
    #[arg(long)]
    pub n_warmup: Option<u64>,
    /// Level selection strategy for the multilevel estimator.
    #[arg(long, value_enum)]
    pub selection: Option<Selection>,
    /// Cost measure: steps (KD steps, deterministic) or wall (seconds).
    #[arg(long)]
    pub cost: Option<String>,
    /// Wall-clock limit per estimator run, in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Anderson-Darling tests of the aggregated coarse random numbers.
    CheckRn {
        /// Fine levels to test.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u32>>,
        /// Coarsening factors M (powers of two).
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<u64>>,
        /// Samples per test.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Monte Carlo replicates of the null distribution.
        #[arg(long, default_value_t = 10_000)]
        b_reps: usize,
    },
    /// Per-level variance and cost of single levels and adjacent differences.
    VarianceDecay {
        /// Samples per level and per pair.
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
    },
    /// Pilot run followed by exact and heuristic level selection.
    SelectLevels {
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Tolerance-adaptive estimation of the mean final position.
    Estimate {
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Cost ratio of single-level and multilevel estimation over repeated seeds.
    Compare {
        #[command(flatten)]
        est: EstimateArgs,
        /// Number of seeds.
        #[arg(long, default_value_t = 4)]
        repeats: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Kdmc,
    MlKdmc,
    Both,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Kdmc => "kdmc",
            Mode::MlKdmc => "ml-kdmc",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Exact,
    Heuristic,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    background: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    #[serde(rename = "T")]
    end_time: Option<f64>,
    max_level: Option<u32>,
    min_level: Option<u32>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    n_warmup: Option<u64>,
    eps: Option<Vec<f64>>,
    eps0: Option<f64>,
    r_max: Option<u32>,
    mode: Option<Mode>,
    selection: Option<Selection>,
    cost: Option<String>,
    time_limit: Option<f64>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub background: BackgroundFamily,
    pub a: f64,
    pub b: f64,
    #[serde(rename = "T")]
    pub end_time: f64,
    pub max_level: u32,
    pub min_level: u32,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub n_warmup: u64,
    pub eps: Vec<f64>,
    pub mode: Mode,
    pub selection: Selection,
    pub cost: String,
    pub time_limit: f64,
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, est: &EstimateArgs) -> Result<Self> {
        let file = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str::<ConfigFile>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let background: BackgroundFamily = common.background.clone().or(file.background).unwrap_or_else(|| "B1".into()).parse()?;
        let a = common.a.or(file.a).unwrap_or(0.0);
        let b = common.b.or(file.b).unwrap_or(100.0);
        let end_time = common.end_time.or(file.end_time).unwrap_or(1.0);
        if !(end_time > 0.0 && end_time.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {end_time}")));
        }
        if !(b > 0.0 && b.is_finite()) || !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("need a >= 0 and b > 0, got a = {a}, b = {b}")));
        }
        let default_level = {
            let c = (b * end_time).log2().ceil();
            (if c > 0.0 { c as u32 } else { 0 }) + 3
        };
        let max_level = common.max_level.or(file.max_level).unwrap_or(default_level);
        let min_level = est.min_level.or(file.min_level).unwrap_or(max_level);
        if min_level > max_level {
            return Err(Error::Config(format!("min_level {min_level} above max_level {max_level}")));
        }
        if max_level > 40 {
            return Err(Error::Config(format!("max_level {max_level} is too large")));
        }
        let eps = match est.eps.clone().or(file.eps) {
            Some(list) => list,
            None => {
                let eps0 = est.eps0.or(file.eps0).unwrap_or(1.0);
                let r_max = est.r_max.or(file.r_max).unwrap_or(6);
                tolerance_sequence(eps0, r_max)
            }
        };
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!("tolerances must be positive and decreasing, got {eps:?}")));
        }
        let n_warmup = est.n_warmup.or(file.n_warmup).unwrap_or(100);
        if n_warmup < 2 {
            return Err(Error::Config(format!("n_warmup must be at least 2, got {n_warmup}")));
        }
        let cost = est.cost.clone().or(file.cost).unwrap_or_else(|| "steps".into());
        cost.parse::<CostModel>()?;
        let time_limit = est.time_limit.or(file.time_limit).unwrap_or(60.0);
        if !(time_limit > 0.0) {
            return Err(Error::Config(format!("time_limit must be positive, got {time_limit}")));
        }
        let cfg = Self {
            background,
            a,
            b,
            end_time,
            max_level,
            min_level,
            seed: common.seed.or(file.seed).unwrap_or(1),
            workers: common.workers.or(file.workers).unwrap_or(0),
            out: common.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            n_warmup,
            eps,
            mode: est.mode.or(file.mode).unwrap_or(Mode::Both),
            selection: est.selection.or(file.selection).unwrap_or(Selection::Exact),
            cost,
            time_limit,
        };
        cfg.background()?;
        Ok(cfg)
    }

    pub fn background(&self) -> Result<Background> {
        Background::make(self.background, self.a, self.b).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost.parse().unwrap_or_default()
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.sampler_with_seed(self.seed)
    }

    pub fn sampler_with_seed(&self, seed: u64) -> Result<Sampler> {
        Sampler::new(self.background()?, self.end_time, seed, self.workers, self.cost_model())
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            time_limit: Some(Duration::from_secs_f64(self.time_limit)),
            ..RunOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckRow {
    pub level: u32,
    #[serde(rename = "M")]
    pub m: u64,
    pub variable: &'static str,
    #[serde(rename = "A2")]
    pub a2: f64,
    pub p: f64,
}

/// Anderson-Darling tests of the pooled coarse draws for every
/// `(level, M)` combination, in row order level, M, variable.
pub fn check_rn_rows(cfg: &RunConfig, levels: &[u32], factors: &[u64], n: usize, b_reps: usize) -> Result<Vec<CheckRow>> {
    let bg = cfg.background()?;
    let normal = NullTable::build(NullDistribution::StandardNormal, n, b_reps, cfg.seed)?;
    let exponential = NullTable::build(NullDistribution::UnitExponential, n, b_reps, cfg.seed)?;
    let combos: Vec<(u32, u64)> = levels.iter().flat_map(|&l| factors.iter().map(move |&m| (l, m))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let per_combo: Vec<Result<Vec<CheckRow>>> = pool.install(|| {
        combos
            .par_iter()
            .map(|&(level, m)| {
                let log = pooled_coarse_draws(&bg, cfg.end_time, level, m, n, cfg.seed)?;
                let mut rows = Vec::with_capacity(3);
                for (variable, samples, table) in [("nu", &log.nu, &normal), ("eps", &log.eps, &exponential), ("chi", &log.chi, &normal)] {
                    let r = table.test(samples)?;
                    rows.push(CheckRow {
                        level,
                        m,
                        variable,
                        a2: r.a2,
                        p: r.p,
                    });
                }
                Ok(rows)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_combo {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub level: u32,
    pub dt: f64,
    #[serde(rename = "V_l")]
    pub v_l: f64,
    #[serde(rename = "V_diff")]
    pub v_diff: Option<f64>,
    #[serde(rename = "C_diff")]
    pub c_diff: Option<f64>,
}

/// Sample variance of `Q_ℓ` and of `Q_ℓ − Q_{ℓ−1}`, and the mean cost of a
/// pair, for `ℓ = 0..=L`.
pub fn variance_decay_rows(cfg: &RunConfig, samples: u64) -> Result<Vec<DecayRow>> {
    if samples < 2 {
        return Err(Error::Config("need at least 2 samples per level".into()));
    }
    let sampler = cfg.sampler()?;
    let mut rows = Vec::new();
    for level in 0..=cfg.max_level {
        let single: Moments = sampler
            .batch(MemberKey::single(level), purpose::SAMPLE, 0, samples)?
            .iter()
            .map(|s| s.value)
            .collect();
        let (v_diff, c_diff) = if level > 0 {
            let mut m = Moments::new();
            for s in sampler.batch(MemberKey::pair(level, level - 1), purpose::SAMPLE, 0, samples)? {
                m.push_with_cost(s.value, s.cost);
            }
            (Some(m.variance()), Some(m.mean_cost()))
        } else {
            (None, None)
        };
        rows.push(DecayRow {
            level,
            dt: level_step(cfg.end_time, level),
            v_l: single.variance(),
            v_diff,
            c_diff,
        });
    }
    Ok(rows)
}

/// Pilot run plus both selections for finest level `L`.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub report: PilotReport,
    pub exact: LevelSet,
    pub heuristic: LevelSet,
}

impl SelectionOutcome {
    pub fn chosen(&self, selection: Selection) -> &LevelSet {
        match selection {
            Selection::Exact => &self.exact,
            Selection::Heuristic => &self.heuristic,
        }
    }
}

fn select_for(report: &PilotReport, finest: u32, selection: Selection) -> Result<LevelSet> {
    match selection {
        Selection::Exact => select_levels_exact(report, finest),
        Selection::Heuristic => {
            let n = finest as usize + 1;
            select_levels_heuristic(&report.v[..n], &report.v_diff[..n])
        }
    }
}

pub fn select_levels(cfg: &RunConfig) -> Result<SelectionOutcome> {
    let sampler = cfg.sampler()?;
    let mut bank = SampleBank::new();
    let report = pilot_run(&sampler, &mut bank, cfg.max_level, &pilot_options(cfg))?;
    Ok(SelectionOutcome {
        exact: select_for(&report, cfg.max_level, Selection::Exact)?,
        heuristic: select_for(&report, cfg.max_level, Selection::Heuristic)?,
        report,
    })
}

fn pilot_options(cfg: &RunConfig) -> PilotOptions {
    PilotOptions {
        n_warmup: cfg.n_warmup,
        ..PilotOptions::default()
    }
}

/// Results of one estimator family over the tolerance sequence.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: Mode,
    pub results: Vec<EstimatorResult>,
    /// Cost of the pilot samples, in cost-model units (zero for KDMC).
    pub pilot_cost: f64,
}

impl ModeRun {
    pub fn last(&self) -> &EstimatorResult {
        &self.results[self.results.len() - 1]
    }
}

/// Runs one estimator family (`Kdmc` or `MlKdmc`) with the given seed.
pub fn run_mode(cfg: &RunConfig, mode: Mode, seed: u64) -> Result<ModeRun> {
    let sampler = cfg.sampler_with_seed(seed)?;
    let mut bank = SampleBank::new();
    let opts = AdaptiveOptions {
        min_level: cfg.min_level,
        max_level: cfg.max_level,
        bias_samples: cfg.n_warmup,
        run: cfg.run_options(),
    };
    match mode {
        Mode::Kdmc => {
            let results = run_adaptive(&sampler, &mut bank, &cfg.eps, &opts, |l| Ok(LevelSet::single(l)))?;
            Ok(ModeRun {
                mode,
                results,
                pilot_cost: 0.0,
            })
        }
        Mode::MlKdmc => {
            let report = pilot_run(&sampler, &mut bank, cfg.max_level, &pilot_options(cfg))?;
            let pilot_cost = bank.iter().map(|(_, d)| d.moments.total_cost()).sum();
            let selection = cfg.selection;
            let results = run_adaptive(&sampler, &mut bank, &cfg.eps, &opts, |l| select_for(&report, l, selection))?;
            Ok(ModeRun { mode, results, pilot_cost })
        }
        Mode::Both => Err(Error::InvalidArgument("run_mode takes a single estimator family".into())),
    }
}

fn modes(mode: Mode) -> Vec<Mode> {
    match mode {
        Mode::Both => vec![Mode::Kdmc, Mode::MlKdmc],
        m => vec![m],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub seed: u64,
    pub cost_kdmc: f64,
    pub cost_mlkdmc: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub rows: Vec<CompareRow>,
    /// `Σ cost_kdmc / Σ cost_mlkdmc` over the seeds.
    pub speedup: f64,
    /// Jackknife standard error of `speedup`.
    pub std_error: f64,
}

/// Ratio of summed costs with its leave-one-seed-out jackknife error.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    let n = num.len();
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let ratio = sn / sd;
    if n < 2 {
        return (ratio, f64::NAN);
    }
    let loo: Vec<f64> = (0..n).map(|i| (sn - num[i]) / (sd - den[i])).collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|r| (r - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (ratio, var.sqrt())
}

/// Runs both estimators at the final tolerance for seeds
/// `seed, seed + 1, …` and compares their on-line costs.
pub fn compare(cfg: &RunConfig, repeats: u64) -> Result<CompareSummary> {
    if repeats == 0 {
        return Err(Error::Config("need at least one repeat".into()));
    }
    let mut final_only = cfg.clone();
    final_only.eps = vec![cfg.eps[cfg.eps.len() - 1]];
    let mut rows = Vec::new();
    for r in 0..repeats {
        let seed = cfg.seed.wrapping_add(r);
        let kd = run_mode(&final_only, Mode::Kdmc, seed)?;
        let ml = run_mode(&final_only, Mode::MlKdmc, seed)?;
        let (ck, cm) = (kd.last().total_cost, ml.last().total_cost);
        rows.push(CompareRow {
            seed,
            cost_kdmc: ck,
            cost_mlkdmc: cm,
            speedup: ck / cm,
        });
    }
    let num: Vec<f64> = rows.iter().map(|r| r.cost_kdmc).collect();
    let den: Vec<f64> = rows.iter().map(|r| r.cost_mlkdmc).collect();
    let (speedup, std_error) = jackknife_ratio(&num, &den);
    Ok(CompareSummary { rows, speedup, std_error })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct LevelRow {
    level: u32,
    #[serde(rename = "N")]
    n: u64,
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "C")]
    c: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    eps: f64,
    finest: u32,
    levels: String,
    estimate: f64,
    std_error: f64,
    bias: f64,
    cost: f64,
    converged: bool,
    decorrelations: u64,
}

#[derive(Debug, Serialize)]
struct SelectionRow {
    level: u32,
    dt: f64,
    #[serde(rename = "V_l")]
    v_l: f64,
    #[serde(rename = "C_l")]
    c_l: f64,
    rho_l: f64,
    #[serde(rename = "V_diff")]
    v_diff: Option<f64>,
    #[serde(rename = "C_diff")]
    c_diff: Option<f64>,
    extrapolated: bool,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    results: Vec<RecordEntry>,
}

#[derive(Debug, Serialize)]
struct RecordEntry {
    mode: String,
    eps: f64,
    levels: String,
    estimate: f64,
    std_error: f64,
    cost: f64,
    pilot_cost: f64,
    converged: bool,
    decorrelations: u64,
}

fn write_record(cfg: &RunConfig, command: &'static str, runs: &[ModeRun]) -> Result<()> {
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        results: runs
            .iter()
            .flat_map(|run| {
                run.results.iter().map(|r| RecordEntry {
                    mode: run.mode.name().into(),
                    eps: r.tolerance,
                    levels: r.level_set.to_string(),
                    estimate: r.estimate,
                    std_error: r.std_error(),
                    cost: r.total_cost,
                    pilot_cost: run.pilot_cost,
                    converged: r.converged,
                    decorrelations: r.decorrelations(),
                })
            })
            .collect(),
    };
    let text = toml::to_string(&record).map_err(|e| Error::Config(format!("cannot serialise run record: {e}")))?;
    fs::write(cfg.out.join("run.toml"), text)?;
    Ok(())
}

fn cmd_check_rn(cfg: &RunConfig, levels: Option<Vec<u32>>, factors: Option<Vec<u64>>, n: usize, b_reps: usize) -> Result<i32> {
    let levels = levels.unwrap_or_else(|| (1..=15).collect());
    let factors = factors.unwrap_or_else(|| vec![2, 4, 8, 16, 32, 64]);
    if let Some(m) = factors.iter().find(|m| **m < 2 || !m.is_power_of_two()) {
        return Err(Error::Config(format!("coarsening factor {m} is not a power of two >= 2")));
    }
    let rows = check_rn_rows(cfg, &levels, &factors, n, b_reps)?;
    write_csv(&cfg.out.join("check_rn.csv"), &rows)?;
    let below_1 = rows.iter().filter(|r| r.p < 0.01).count();
    let below_5 = rows.iter().filter(|r| r.p < 0.05).count();
    for r in rows.iter().filter(|r| r.p < 0.05) {
        println!(
            "level {:>2} M {:>2} {:<3}  A2 {:.4}  p {:.4}  {}",
            r.level,
            r.m,
            r.variable,
            r.a2,
            r.p,
            if r.p < 0.01 { "rejected at 1% and 5%" } else { "rejected at 5%" }
        );
    }
    println!("{} tests: {below_1} rejected at 1%, {below_5} rejected at 5%", rows.len());
    Ok(if below_1 > 0 { EXIT_CHECK_FAILED } else { 0 })
}

fn cmd_variance_decay(cfg: &RunConfig, samples: u64) -> Result<i32> {
    let rows = variance_decay_rows(cfg, samples)?;
    write_csv(&cfg.out.join("variance_decay.csv"), &rows)?;
    for r in &rows {
        println!(
            "level {:>2}  dt {:.3e}  V_l {:.4e}  V_diff {}  C_diff {}",
            r.level,
            r.dt,
            r.v_l,
            r.v_diff.map_or("-".into(), |v| format!("{v:.4e}")),
            r.c_diff.map_or("-".into(), |c| format!("{c:.1}")),
        );
    }
    Ok(0)
}

fn cmd_select_levels(cfg: &RunConfig) -> Result<i32> {
    let out = select_levels(cfg)?;
    let r = &out.report;
    let rows: Vec<SelectionRow> = (0..=cfg.max_level as usize)
        .map(|l| SelectionRow {
            level: l as u32,
            dt: level_step(cfg.end_time, l as u32),
            v_l: r.v[l],
            c_l: r.c[l],
            rho_l: r.rho[l],
            v_diff: (l > 0).then(|| r.v_diff[l]),
            c_diff: (l > 0).then(|| r.c_diff[l]),
            extrapolated: r.extrapolated[l],
        })
        .collect();
    write_csv(&cfg.out.join("select_levels.csv"), &rows)?;
    println!("cut level {}", r.tau_cut);
    for (name, set) in [("exact", &out.exact), ("heuristic", &out.heuristic)] {
        let (v, c) = r.member_inputs(set);
        let cost = predicted_total_cost(&v, &c, 1.0)?;
        println!("{name:<9} {set}  objective {:.6e}  predicted cost at eps=1 {cost:.6e}", r.objective(set));
    }
    Ok(0)
}

fn print_run(run: &ModeRun) {
    for r in &run.results {
        println!(
            "{:<7} eps {:.4e}  levels {}  estimate {:.6}  std error {:.3e}  cost {:.4e}{}",
            run.mode.name(),
            r.tolerance,
            r.level_set,
            r.estimate,
            r.std_error(),
            r.total_cost,
            if r.converged { "" } else { "  (time limit reached)" }
        );
    }
}

fn cmd_estimate(cfg: &RunConfig) -> Result<i32> {
    let mut runs = Vec::new();
    for mode in modes(cfg.mode) {
        let run = run_mode(cfg, mode, cfg.seed)?;
        let last = run.last();
        let level_rows: Vec<LevelRow> = last
            .level_stats
            .iter()
            .map(|s| LevelRow {
                level: s.member.fine,
                n: s.n,
                e: s.mean,
                v: s.variance,
                c: s.cost,
            })
            .collect();
        write_csv(&cfg.out.join(format!("levels_{}.csv", mode.name())), &level_rows)?;
        let summary: Vec<SummaryRow> = run
            .results
            .iter()
            .map(|r| SummaryRow {
                eps: r.tolerance,
                finest: r.level_set.finest(),
                levels: r.level_set.to_string(),
                estimate: r.estimate,
                std_error: r.std_error(),
                bias: r.bias.unwrap_or(f64::NAN),
                cost: r.total_cost,
                converged: r.converged,
                decorrelations: r.decorrelations(),
            })
            .collect();
        write_csv(&cfg.out.join(format!("summary_{}.csv", mode.name())), &summary)?;
        print_run(&run);
        runs.push(run);
    }
    if runs.len() == 2 {
        println!("speedup {:.3}", runs[0].last().total_cost / runs[1].last().total_cost);
    }
    write_record(cfg, "estimate", &runs)?;
    Ok(0)
}

fn cmd_compare(cfg: &RunConfig, repeats: u64) -> Result<i32> {
    let summary = compare(cfg, repeats)?;
    write_csv(&cfg.out.join("compare.csv"), &summary.rows)?;
    for r in &summary.rows {
        println!("seed {}  cost kdmc {:.4e}  cost ml-kdmc {:.4e}  speedup {:.3}", r.seed, r.cost_kdmc, r.cost_mlkdmc, r.speedup);
    }
    println!("speedup {:.3} +- {:.3}", summary.speedup, summary.std_error);
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let est = match &cli.command {
        Command::SelectLevels { est } | Command::Estimate { est } | Command::Compare { est, .. } => est.clone(),
        _ => EstimateArgs::default(),
    };
    let cfg = RunConfig::resolve(&cli.common, &est)?;
    fs::create_dir_all(&cfg.out)?;
    match cli.command {
        Command::CheckRn { levels, factors, n, b_reps } => cmd_check_rn(&cfg, levels, factors, n, b_reps),
        Command::VarianceDecay { samples } => cmd_variance_decay(&cfg, samples),
        Command::SelectLevels { .. } => cmd_select_levels(&cfg),
        Command::Estimate { .. } => cmd_estimate(&cfg),
        Command::Compare { repeats, .. } => cmd_compare(&cfg, repeats),
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
