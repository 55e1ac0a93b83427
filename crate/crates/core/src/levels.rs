//! Level-set selection.
//!
//! A pilot run estimates per-level variances and costs. The exact selector
//! minimises the predicted estimator cost over all level sets ending at `L`
//! as a shortest path over the levels; the heuristic selector walks the
//! variance profile upwards and keeps levels with enough variance decay.

use crate::error::{Error, Result};
use crate::kd::{level_step, INITIAL_POSITION};
use crate::mlmc::{LevelSet, MemberKey, SampleBank, Sampler};
use crate::stats::{purpose, CoMoments};

/// Per-level inputs to level selection. Index `ℓ` of every vector refers to
/// level `ℓ`; the difference entries at index 0 are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotReport {
    /// `V[Q_ℓ]`.
    pub v: Vec<f64>,
    /// Mean cost of one sample of `Q_ℓ`.
    pub c: Vec<f64>,
    /// Correlation of `Q_ℓ` with the finest level.
    pub rho: Vec<f64>,
    /// `V[Q_ℓ − Q_{ℓ−1}]`.
    pub v_diff: Vec<f64>,
    /// Mean cost of one correlated pair `(ℓ, ℓ−1)`.
    pub c_diff: Vec<f64>,
    /// Level whose time step is closest from above to `1/b`.
    pub tau_cut: u32,
    /// Entries filled by extrapolation rather than sampling.
    pub extrapolated: Vec<bool>,
}

impl PilotReport {
    /// Builds a report from raw per-level inputs, all of length `L + 1`.
    pub fn from_parts(v: Vec<f64>, c: Vec<f64>, rho: Vec<f64>, v_diff: Vec<f64>, c_diff: Vec<f64>) -> Result<Self> {
        let n = v.len();
        if n == 0 || [c.len(), rho.len(), v_diff.len(), c_diff.len()].iter().any(|&l| l != n) {
            return Err(Error::InvalidArgument("pilot inputs must all have one entry per level".into()));
        }
        if v.iter().chain(&v_diff[1..]).any(|x| !(*x >= 0.0)) || c.iter().chain(&c_diff[1..]).any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidArgument("pilot variances must be nonnegative and costs positive".into()));
        }
        if rho.iter().any(|r| !(r.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("correlations must lie in [-1, 1]".into()));
        }
        Ok(Self {
            v,
            c,
            rho,
            v_diff,
            c_diff,
            tau_cut: 0,
            extrapolated: vec![false; n],
        })
    }

    pub fn finest(&self) -> u32 {
        (self.v.len() - 1) as u32
    }

    /// `V[Q_i − Q_j]` for `i > j`: measured for adjacent levels, otherwise
    /// the correlation-based approximation.
    pub fn cross_variance(&self, i: u32, j: u32) -> f64 {
        let (i, j) = (i as usize, j as usize);
        if i == j + 1 {
            self.v_diff[i]
        } else {
            approx_cross_variance(self.v[i], self.v[j], self.rho[i], self.rho[j])
        }
    }

    /// Cost of one correlated pair `(i, j)`: measured for adjacent levels,
    /// otherwise `C_i + C_j`.
    pub fn cross_cost(&self, i: u32, j: u32) -> f64 {
        let (i, j) = (i as usize, j as usize);
        if i == j + 1 {
            self.c_diff[i]
        } else {
            self.c[i] + self.c[j]
        }
    }

    /// Per-member variances and costs for a level set, in member order.
    pub fn member_inputs(&self, set: &LevelSet) -> (Vec<f64>, Vec<f64>) {
        set.members()
            .iter()
            .map(|m| match m.coarse {
                None => (self.v[m.fine as usize], self.c[m.fine as usize]),
                Some(c) => (self.cross_variance(m.fine, c), self.cross_cost(m.fine, c)),
            })
            .unzip()
    }

    /// `√(V_{ℓ_1} C_{ℓ_1}) + Σ_j √(V_{ℓ_j,ℓ_{j−1}} C_{ℓ_j,ℓ_{j−1}})`; the
    /// predicted estimator cost is `(2/ε²)` times its square.
    pub fn objective(&self, set: &LevelSet) -> f64 {
        let (v, c) = self.member_inputs(set);
        v.iter().zip(&c).map(|(v, c)| (v * c).sqrt()).sum()
    }
}

/// `V_i + V_j − 2√((ρ_i² + ρ_j² − 1) V_i V_j)`, with a negative radicand and
/// a negative result both clamped to zero.
pub fn approx_cross_variance(v_i: f64, v_j: f64, rho_i: f64, rho_j: f64) -> f64 {
    approx_cross_variance_checked(v_i, v_j, rho_i, rho_j).0
}

/// As [`approx_cross_variance`], also reporting whether the radicand was
/// clamped.
pub fn approx_cross_variance_checked(v_i: f64, v_j: f64, rho_i: f64, rho_j: f64) -> (f64, bool) {
    let r = rho_i * rho_i + rho_j * rho_j - 1.0;
    let clamped = r < 0.0;
    let value = v_i + v_j - 2.0 * (r.max(0.0) * v_i * v_j).sqrt();
    (value.max(0.0), clamped)
}

/// `⌈log₂(b T)⌉` floored at zero, where `b` is the collision rate at the
/// release point.
pub fn cut_level(sampler: &Sampler) -> u32 {
    let b = sampler.background().rate(INITIAL_POSITION);
    let x = (b * sampler.end_time()).log2().ceil();
    if x.is_finite() && x > 0.0 {
        x as u32
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotOptions {
    /// Samples per measured level and pair.
    pub n_warmup: u64,
    /// Levels up to at least this one are always measured (capped at `L`).
    pub min_measured_level: u32,
}

impl Default for PilotOptions {
    fn default() -> Self {
        Self {
            n_warmup: 100,
            min_measured_level: 10,
        }
    }
}

/// Measures levels `0..=P` with `P = min(L, max(tau_cut, min_measured_level))`
/// and extrapolates above `P`: difference variances decay by a factor 8 per
/// level, level variances and all costs stay flat. Samples go into `bank`
/// so the estimator can reuse them.
pub fn pilot_run(sampler: &Sampler, bank: &mut SampleBank, finest: u32, opts: &PilotOptions) -> Result<PilotReport> {
    if opts.n_warmup < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 warm-up samples, got {}", opts.n_warmup)));
    }
    let tau_cut = cut_level(sampler);
    let top = finest.min(tau_cut.max(opts.min_measured_level));
    let n = (finest + 1) as usize;
    let mut v = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut v_diff = vec![0.0; n];
    let mut c_diff = vec![0.0; n];
    let mut extrapolated = vec![false; n];

    for l in 0..=top {
        bank.ensure(sampler, MemberKey::single(l), opts.n_warmup)?;
        let m = bank.get(MemberKey::single(l)).moments;
        v[l as usize] = m.variance();
        c[l as usize] = m.mean_cost().max(f64::MIN_POSITIVE);
        if l > 0 {
            bank.ensure(sampler, MemberKey::pair(l, l - 1), opts.n_warmup)?;
            let d = bank.get(MemberKey::pair(l, l - 1)).moments;
            v_diff[l as usize] = d.variance();
            c_diff[l as usize] = d.mean_cost().max(f64::MIN_POSITIVE);
        }
    }
    let t = top as usize;
    for l in t + 1..n {
        v[l] = v[t];
        c[l] = c[t];
        v_diff[l] = v_diff[l - 1] / 8.0;
        c_diff[l] = if t > 0 { c_diff[t] } else { c[t] * 2.0 };
        extrapolated[l] = true;
    }

    // Correlations with the top measured level, from coupled (top, ℓ) pairs.
    let mut rho_top = vec![1.0; t + 1];
    for l in 0..top {
        let samples = sampler.batch(MemberKey::pair(top, l), purpose::PILOT_CORRELATION, 0, opts.n_warmup)?;
        let mut cm = CoMoments::new();
        for s in &samples {
            cm.push(s.x_fine, s.x_coarse.unwrap_or(s.x_fine));
        }
        rho_top[l as usize] = cm.correlation();
    }
    // Above the top measured level, increments are treated as independent:
    // V[Q_L − Q_ℓ] ≈ Σ_{k=ℓ+1..L} V[Q_k − Q_{k−1}], and Q_L inherits the
    // correlations of Q_top with the measured levels.
    let mut rho = vec![1.0; n];
    rho[..=t].copy_from_slice(&rho_top);
    let last = n - 1;
    for l in t + 1..last {
        let cross: f64 = v_diff[l + 1..=last].iter().sum();
        let denom = 2.0 * (v[last] * v[l]).sqrt();
        rho[l] = if denom > 0.0 {
            ((v[last] + v[l] - cross) / denom).clamp(-1.0, 1.0)
        } else {
            1.0
        };
    }
    let mut report = PilotReport::from_parts(v, c, rho, v_diff, c_diff)?;
    report.tau_cut = tau_cut;
    report.extrapolated = extrapolated;
    Ok(report)
}

/// Level set ending at `finest` with the smallest objective, by dynamic
/// programming over levels: the best set ending at `ℓ` either starts at `ℓ`
/// or extends the best set ending at some `j < ℓ`.
pub fn select_levels_exact(report: &PilotReport, finest: u32) -> Result<LevelSet> {
    if finest > report.finest() {
        return Err(Error::InvalidArgument(format!(
            "finest level {finest} beyond pilot data (up to {})",
            report.finest()
        )));
    }
    let n = finest as usize + 1;
    let mut best = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        best[i] = (report.v[i] * report.c[i]).sqrt();
        for j in 0..i {
            let edge = (report.cross_variance(i as u32, j as u32) * report.cross_cost(i as u32, j as u32)).sqrt();
            if best[j] + edge < best[i] {
                best[i] = best[j] + edge;
                prev[i] = Some(j);
            }
        }
    }
    let mut levels = vec![finest];
    let mut cur = finest as usize;
    while let Some(p) = prev[cur] {
        levels.push(p as u32);
        cur = p;
    }
    levels.reverse();
    LevelSet::new(levels)
}

/// The heuristic selection before the finest level is forced in: the first
/// level whose difference variance no longer exceeds its level variance and
/// the one below it, then every higher level whose difference variance drops
/// below half of the smallest one kept so far. `None` when no level reaches
/// the crossover.
pub fn heuristic_core(v_levels: &[f64], v_diffs: &[f64]) -> Result<Option<Vec<u32>>> {
    if v_levels.is_empty() || v_levels.len() != v_diffs.len() {
        return Err(Error::InvalidArgument("need one level variance and one difference variance per level".into()));
    }
    let finest = v_levels.len() - 1;
    let mut l = 1;
    while l <= finest && v_diffs[l] > v_levels[l] {
        l += 1;
    }
    if l > finest {
        return Ok(None);
    }
    let mut set = vec![(l - 1) as u32, l as u32];
    let mut v_min = v_diffs[l];
    for k in l + 1..=finest {
        if v_diffs[k] < v_min / 2.0 {
            set.push(k as u32);
            v_min = v_diffs[k];
        }
    }
    Ok(Some(set))
}

/// Heuristic level selection; the result always ends at the finest level.
pub fn select_levels_heuristic(v_levels: &[f64], v_diffs: &[f64]) -> Result<LevelSet> {
    let finest = v_levels.len().saturating_sub(1) as u32;
    if finest == 0 {
        return LevelSet::new(vec![0]);
    }
    match heuristic_core(v_levels, v_diffs)? {
        None => LevelSet::new(vec![finest - 1, finest]),
        Some(mut set) => {
            if *set.last().unwrap() != finest {
                set.push(finest);
            }
            LevelSet::new(set)
        }
    }
}

/// Time step of each level, for reporting.
pub fn level_steps(end_time: f64, finest: u32) -> Vec<f64> {
    (0..=finest).map(|l| level_step(end_time, l)).collect()
}
