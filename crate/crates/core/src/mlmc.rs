//! Multilevel estimator of the expected final position.
//!
//! The estimator over an ordered level set `ℓ_1 < … < ℓ_J = L` is the
//! telescoping sum `E[Q_{ℓ_1}] + Σ_j E[Q_{ℓ_j} − Q_{ℓ_{j−1}}]`. Each term is a
//! "member" sampled independently; differences come from correlated pairs.
//! Samples are kept in a [`SampleBank`] so that pilot samples and samples
//! taken for a larger tolerance are reused.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::background::Background;
use crate::correlate::correlated_path;
use crate::error::{Error, Result};
use crate::kd::{level_step, simulate_path_with};
use crate::stats::{pair_id, purpose, DrawStream, Moments, StreamKey};

/// Ordered, strictly increasing set of levels; the last one is the finest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LevelSet {
    levels: Vec<u32>,
}

impl LevelSet {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidLevelSet("empty level set".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidLevelSet(format!("levels must be strictly increasing: {levels:?}")));
        }
        Ok(Self { levels })
    }

    pub fn single(level: u32) -> Self {
        Self { levels: vec![level] }
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn finest(&self) -> u32 {
        self.levels[self.levels.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, level: u32) -> bool {
        self.levels.binary_search(&level).is_ok()
    }

    /// Estimator members `(ℓ_j, ℓ_{j−1})`, the first with no coarse level.
    pub fn members(&self) -> Vec<MemberKey> {
        self.levels
            .iter()
            .enumerate()
            .map(|(j, &fine)| MemberKey {
                fine,
                coarse: (j > 0).then(|| self.levels[j - 1]),
            })
            .collect()
    }
}

impl std::fmt::Display for LevelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// One term of the telescoping sum: `Q_fine`, or `Q_fine − Q_coarse`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemberKey {
    pub fine: u32,
    pub coarse: Option<u32>,
}

impl MemberKey {
    pub fn single(level: u32) -> Self {
        Self { fine: level, coarse: None }
    }

    pub fn pair(fine: u32, coarse: u32) -> Self {
        Self { fine, coarse: Some(coarse) }
    }
}

/// How the cost of a sample is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// Number of KD steps taken, plus one for the initial flight. Deterministic.
    #[default]
    Steps,
    /// Wall-clock seconds.
    WallClock,
}

impl std::str::FromStr for CostModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "steps" => Ok(Self::Steps),
            "wall" | "wallclock" | "wall-clock" => Ok(Self::WallClock),
            other => Err(Error::Config(format!("unknown cost model {other:?} (expected steps or wall)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// `Q_fine`, or `Q_fine − Q_coarse` for a pair.
    pub value: f64,
    pub x_fine: f64,
    pub x_coarse: Option<f64>,
    pub cost: f64,
    pub decorrelations: u64,
}

/// Draws samples of estimator members on a worker pool. Sample `i` of a
/// member always uses the stream keyed by `(purpose, member, i)`, so results
/// do not depend on the number of workers.
#[derive(Clone)]
pub struct Sampler {
    bg: Background,
    end_time: f64,
    seed: u64,
    cost: CostModel,
    pool: Arc<rayon::ThreadPool>,
}

impl std::fmt::Debug for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sampler")
            .field("end_time", &self.end_time)
            .field("seed", &self.seed)
            .field("cost", &self.cost)
            .field("workers", &self.pool.current_num_threads())
            .finish()
    }
}

impl Sampler {
    /// `workers = 0` uses one worker per available core.
    pub fn new(bg: Background, end_time: f64, seed: u64, workers: usize, cost: CostModel) -> Result<Self> {
        if !(end_time > 0.0 && end_time.is_finite()) {
            return Err(Error::InvalidArgument(format!("end time must be positive, got {end_time}")));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            bg,
            end_time,
            seed,
            cost,
            pool: Arc::new(pool),
        })
    }

    pub fn background(&self) -> &Background {
        &self.bg
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn sample(&self, member: MemberKey, purpose_tag: u64, index: u64) -> Result<Sample> {
        let pair = pair_id(member.fine, member.coarse);
        let mut src = DrawStream::new(self.seed, StreamKey::new(purpose_tag, pair, index));
        let start = (self.cost == CostModel::WallClock).then(Instant::now);
        let dt_fine = level_step(self.end_time, member.fine);
        let (value, x_fine, x_coarse, steps, decorrelations) = match member.coarse {
            None => {
                let out = simulate_path_with(&self.bg, self.end_time, dt_fine, &mut src, |_, _| {})?;
                (out.x, out.x, None, out.steps + 1, 0)
            }
            Some(coarse) => {
                if coarse >= member.fine {
                    return Err(Error::InvalidLevelSet(format!("coarse level {coarse} not below fine level {}", member.fine)));
                }
                let mut reserve = DrawStream::new(self.seed, StreamKey::new(purpose::RESERVE ^ purpose_tag, pair, index));
                let dt_coarse = level_step(self.end_time, coarse);
                let out = correlated_path(&self.bg, self.end_time, dt_fine, dt_coarse, &mut src, &mut reserve)?;
                (out.difference(), out.x_fine, Some(out.x_coarse), out.fine_steps + out.coarse_steps + 1, out.decorrelations)
            }
        };
        let cost = match start {
            Some(s) => s.elapsed().as_secs_f64().max(1e-9),
            None => steps as f64,
        };
        Ok(Sample {
            value,
            x_fine,
            x_coarse,
            cost,
            decorrelations,
        })
    }

    /// Samples `start .. start + count` of a member, in index order.
    pub fn batch(&self, member: MemberKey, purpose_tag: u64, start: u64, count: u64) -> Result<Vec<Sample>> {
        self.pool.install(|| {
            (start..start + count)
                .into_par_iter()
                .map(|i| self.sample(member, purpose_tag, i))
                .collect()
        })
    }
}

/// Accumulated samples of one member.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MemberData {
    pub moments: Moments,
    pub decorrelations: u64,
}

/// Samples per member, reused across tolerances and level sets. New samples
/// of a member continue its index sequence.
#[derive(Debug, Clone, Default)]
pub struct SampleBank {
    members: BTreeMap<MemberKey, MemberData>,
}

impl SampleBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, member: MemberKey) -> MemberData {
        self.members.get(&member).copied().unwrap_or_default()
    }

    pub fn count(&self, member: MemberKey) -> u64 {
        self.get(member).moments.count()
    }

    /// Takes `count` more samples of `member`.
    pub fn extend(&mut self, sampler: &Sampler, member: MemberKey, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let start = self.count(member);
        let samples = sampler.batch(member, purpose::SAMPLE, start, count)?;
        let entry = self.members.entry(member).or_default();
        for s in samples {
            entry.moments.push_with_cost(s.value, s.cost);
            entry.decorrelations += s.decorrelations;
        }
        Ok(())
    }

    /// Tops `member` up to at least `count` samples.
    pub fn ensure(&mut self, sampler: &Sampler, member: MemberKey, count: u64) -> Result<()> {
        let have = self.count(member);
        self.extend(sampler, member, count.saturating_sub(have))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MemberKey, &MemberData)> {
        self.members.iter()
    }
}

/// Per-member summary of an estimator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStatistics {
    pub member: MemberKey,
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    /// Mean cost per sample.
    pub cost: f64,
    pub decorrelations: u64,
}

impl LevelStatistics {
    fn from_bank(bank: &SampleBank, member: MemberKey) -> Self {
        let d = bank.get(member);
        Self {
            member,
            n: d.moments.count(),
            mean: d.moments.mean(),
            variance: d.moments.variance(),
            cost: d.moments.mean_cost(),
            decorrelations: d.decorrelations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub tolerance: f64,
    pub level_set: LevelSet,
    pub level_stats: Vec<LevelStatistics>,
    /// `Σ N_j C_j` over the members, in cost-model units.
    pub total_cost: f64,
    /// Achieved statistical variance `Σ V_j / N_j`.
    pub variance: f64,
    /// Bias bound used when the finest level was chosen, if any.
    pub bias: Option<f64>,
    /// False when the run stopped at its time limit before meeting its targets.
    pub converged: bool,
}

impl EstimatorResult {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn decorrelations(&self) -> u64 {
        self.level_stats.iter().map(|s| s.decorrelations).sum()
    }
}

fn check_allocation_inputs(variances: &[f64], costs: &[f64], eps: f64) -> Result<()> {
    if variances.len() != costs.len() || variances.is_empty() {
        return Err(Error::InvalidArgument("need one variance and one cost per member".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) || costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidArgument("variances must be nonnegative and costs positive".into()));
    }
    Ok(())
}

/// Sample counts minimising total cost subject to `Σ V_j/N_j = ε²/2`, before
/// rounding: `N_j = (2/ε²) √(V_j/C_j) Σ_i √(V_i C_i)`.
pub fn optimal_sample_counts_continuous(variances: &[f64], costs: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_allocation_inputs(variances, costs, eps)?;
    let s: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(v, c)| 2.0 / (eps * eps) * (v / c).sqrt() * s)
        .collect())
}

/// Optimal counts rounded up, with at least two samples per member.
pub fn optimal_sample_counts(variances: &[f64], costs: &[f64], eps: f64) -> Result<Vec<u64>> {
    Ok(optimal_sample_counts_continuous(variances, costs, eps)?
        .into_iter()
        .map(|n| (n.ceil() as u64).max(2))
        .collect())
}

/// Cost of the optimally allocated estimator: `(2/ε²) (Σ_j √(V_j C_j))²`.
pub fn predicted_total_cost(variances: &[f64], costs: &[f64], eps: f64) -> Result<f64> {
    check_allocation_inputs(variances, costs, eps)?;
    let s: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(2.0 / (eps * eps) * s * s)
}

/// Knobs shared by the estimator drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Samples taken for every member before the first allocation.
    pub initial_samples: u64,
    /// Smallest batch taken for a member that is short of its target.
    pub min_batch: u64,
    /// Stop (unconverged) once this much wall-clock time has passed.
    pub time_limit: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            initial_samples: 100,
            min_batch: 100,
            time_limit: None,
        }
    }
}

/// Runs the multilevel estimator on `level_set` to tolerance `eps`, reusing
/// and extending the samples in `bank`.
pub fn run_estimator(sampler: &Sampler, bank: &mut SampleBank, level_set: &LevelSet, eps: f64, opts: &RunOptions) -> Result<EstimatorResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {eps}")));
    }
    let started = Instant::now();
    let members = level_set.members();
    for &m in &members {
        bank.ensure(sampler, m, opts.initial_samples.max(2))?;
    }
    let mut converged = true;
    loop {
        let stats: Vec<LevelStatistics> = members.iter().map(|&m| LevelStatistics::from_bank(bank, m)).collect();
        let variances: Vec<f64> = stats.iter().map(|s| s.variance).collect();
        let costs: Vec<f64> = stats.iter().map(|s| s.cost.max(f64::MIN_POSITIVE)).collect();
        let targets = optimal_sample_counts(&variances, &costs, eps)?;
        let deficits: Vec<u64> = targets.iter().zip(&stats).map(|(t, s)| t.saturating_sub(s.n)).collect();
        if deficits.iter().all(|&d| d == 0) {
            break;
        }
        if opts.time_limit.is_some_and(|limit| started.elapsed() >= limit) {
            converged = false;
            break;
        }
        for (&m, &deficit) in members.iter().zip(&deficits) {
            if deficit > 0 {
                let batch = deficit.min(opts.min_batch.max(deficit.div_ceil(10)));
                bank.extend(sampler, m, batch)?;
            }
        }
    }
    Ok(summarise(bank, level_set, eps, converged))
}

fn summarise(bank: &SampleBank, level_set: &LevelSet, eps: f64, converged: bool) -> EstimatorResult {
    let level_stats: Vec<LevelStatistics> = level_set.members().iter().map(|&m| LevelStatistics::from_bank(bank, m)).collect();
    EstimatorResult {
        estimate: level_stats.iter().map(|s| s.mean).sum(),
        tolerance: eps,
        level_set: level_set.clone(),
        total_cost: level_stats.iter().map(|s| s.n as f64 * s.cost).sum(),
        variance: level_stats.iter().map(|s| s.variance / s.n as f64).sum(),
        bias: None,
        converged,
        level_stats,
    }
}

/// Plain Monte Carlo on level `level` alone.
pub fn estimate_single_level(sampler: &Sampler, bank: &mut SampleBank, level: u32, eps: f64, opts: &RunOptions) -> Result<EstimatorResult> {
    run_estimator(sampler, bank, &LevelSet::single(level), eps, opts)
}

/// Bias bound for finest level `level` from the adjacent difference means of
/// levels `level-2 ..= level`: `m_L / (2^w − 1)`, where `m_L` is the mean of
/// `Q_L − Q_{L−1}` reduced by two standard errors (floored at zero) and `w`
/// is the fitted decay rate of those means, clamped to `[0.5, 4]`.
pub fn bias_estimate(bank: &SampleBank, level: u32) -> Option<f64> {
    if level == 0 {
        return None;
    }
    let top = bank.get(MemberKey::pair(level, level - 1)).moments;
    if top.count() < 2 {
        return None;
    }
    let significant = (top.mean().abs() - 2.0 * top.std_error()).max(0.0);
    let mut pts = Vec::new();
    for l in level.saturating_sub(2).max(1)..=level {
        let m = bank.get(MemberKey::pair(l, l - 1)).moments;
        if m.count() >= 2 && m.mean() != 0.0 {
            pts.push((l as f64, m.mean().abs().log2()));
        }
    }
    let w = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (-sxy / sxx).clamp(0.5, 4.0)
    } else {
        1.0
    };
    Some(significant / (2f64.powf(w) - 1.0))
}

/// Settings of the tolerance-adaptive driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub min_level: u32,
    pub max_level: u32,
    /// Samples of each adjacent difference used for bias estimation.
    pub bias_samples: u64,
    pub run: RunOptions,
}

/// The tolerance sequence `ε_r = ε_0 / √(2^r)` for `r = 0..=r_max`.
pub fn tolerance_sequence(eps0: f64, r_max: u32) -> Vec<f64> {
    (0..=r_max).map(|r| eps0 / 2f64.powf(r as f64 / 2.0)).collect()
}

/// Runs the estimator for a decreasing sequence of tolerances. For each
/// tolerance the finest level is the smallest level (never below the
/// previous one) whose bias estimate is at most `ε/√2`; `select` then maps
/// the finest level to a level set. Samples carry over between tolerances.
pub fn run_adaptive<F>(sampler: &Sampler, bank: &mut SampleBank, tolerances: &[f64], opts: &AdaptiveOptions, mut select: F) -> Result<Vec<EstimatorResult>>
where
    F: FnMut(u32) -> Result<LevelSet>,
{
    if tolerances.windows(2).any(|w| w[1] >= w[0]) || tolerances.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("tolerances must be positive and decreasing".into()));
    }
    if opts.min_level > opts.max_level {
        return Err(Error::InvalidArgument("min level above max level".into()));
    }
    let mut finest = opts.min_level;
    let mut results = Vec::with_capacity(tolerances.len());
    for &eps in tolerances {
        let mut bias = None;
        while finest <= opts.max_level {
            if finest == 0 {
                break;
            }
            for l in finest.saturating_sub(2).max(1)..=finest {
                bank.ensure(sampler, MemberKey::pair(l, l - 1), opts.bias_samples.max(2))?;
            }
            bias = bias_estimate(bank, finest);
            if bias.is_some_and(|b| b <= eps / std::f64::consts::SQRT_2) || finest == opts.max_level {
                break;
            }
            finest += 1;
        }
        let level_set = select(finest)?;
        if level_set.finest() != finest {
            return Err(Error::InvalidLevelSet(format!("selected set {level_set} does not end at level {finest}")));
        }
        let mut result = run_estimator(sampler, bank, &level_set, eps, &opts.run)?;
        result.bias = bias;
        results.push(result);
    }
    Ok(results)
}
