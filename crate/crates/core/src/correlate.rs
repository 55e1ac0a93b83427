//! Correlated fine/coarse KD path pairs.
//!
//! The fine path is simulated step by step. Each coarse step consumes the
//! fine steps whose random numbers act over the same stretch of time (the
//! aggregation window) and turns them into one coarse draw triple: the
//! velocity draw is copied, the exponential budget is what remains of the
//! fine flight at the coarse clock, and the diffusive draw is a normalised
//! weighted sum of the window's normal draws.

use crate::background::Background;
use crate::error::{Error, Result};
use crate::kd::{grid_ceil, initial_state, kd_step, relaxation_bracket, validate_times, EventDraws, KdStepRecord, ParticleState};
use crate::stats::{pair_id, purpose, DrawSource, DrawStream, StreamKey};

/// Fine steps `κ_k .. κ_{k+1}-1` that feed one coarse diffusive phase.
#[derive(Debug, Clone, Copy)]
pub struct AggregationWindow<'a> {
    /// Index of the first fine step in the window.
    pub kappa: usize,
    pub fine_records: &'a [KdStepRecord],
}

impl AggregationWindow<'_> {
    /// Index one past the last fine step, i.e. the next window's `kappa`.
    pub fn end(&self) -> usize {
        self.kappa + self.fine_records.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseDraws {
    pub nu_t: f64,
    pub eps_t: f64,
    pub chi_t: f64,
}

/// Velocity draw of the coarse kinetic phase that follows the window: the
/// draw of the first fine kinetic phase after it.
pub fn aggregate_nu(window: &AggregationWindow) -> Result<f64> {
    window
        .fine_records
        .last()
        .map(|r| r.draws.nu)
        .ok_or_else(|| Error::InvalidArgument("empty aggregation window".into()))
}

/// Remaining exponential budget of the fine flight that starts at `anchor`
/// (position, velocity, time) once the coarse clock reaches `coarse_time`.
/// The elapsed time may be negative. Returns `None` when the budget is
/// exhausted.
pub fn aggregate_eps(eps_fine: f64, bg: &Background, anchor: (f64, f64, f64), coarse_time: f64) -> Option<f64> {
    let (x, v, t) = anchor;
    let eps = eps_fine - bg.rate_integral(x, v, coarse_time - t);
    (eps > 0.0).then_some(eps)
}

/// Expected time within a diffusive phase of length `theta` during which the
/// next post-collisional velocity already acts.
#[inline]
pub fn time_transfer(theta: f64, rate: f64) -> f64 {
    -(-rate * theta).exp_m1() / rate
}

/// Weight of a diffusive draw: the unconditioned standard deviation of the
/// diffusive displacement over the shortened phase `θ - ζ`.
fn diffusive_weight(theta: f64, rate: f64, sigma_v: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    // R(θ - ζ) = Rθ + expm1(-Rθ), accurate for small Rθ via the series.
    let u_shortened = relaxation_bracket(rate * theta);
    let radicand = 2.0 * sigma_v * sigma_v / (rate * rate) * relaxation_bracket(u_shortened);
    radicand.max(0.0).sqrt()
}

/// `(weight, draw)` pairs entering the aggregated diffusive draw, in window
/// order: `β χ` for the first step, then `α ν` and `β χ` for each later one.
pub fn chi_terms(window: &AggregationWindow, sigma_v: f64) -> Vec<(f64, f64)> {
    let recs = window.fine_records;
    let mut terms = Vec::with_capacity(2 * recs.len());
    for (i, rec) in recs.iter().enumerate() {
        if i > 0 {
            let prev = &recs[i - 1];
            let tau_shifted = rec.tau + time_transfer(prev.theta, prev.rate);
            terms.push((tau_shifted * sigma_v, prev.draws.nu));
        }
        terms.push((diffusive_weight(rec.theta, rec.rate, sigma_v), rec.draws.chi));
    }
    terms
}

/// Normalised weighted sum of the window's normal draws. A window with a
/// single fine step, or with all weights zero, passes its `χ` through.
pub fn aggregate_chi(window: &AggregationWindow, sigma_v: f64) -> Result<f64> {
    let first = window
        .fine_records
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty aggregation window".into()))?;
    if window.fine_records.len() == 1 {
        return Ok(first.draws.chi);
    }
    let terms = chi_terms(window, sigma_v);
    let norm = terms.iter().map(|(w, _)| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(first.draws.chi);
    }
    Ok(terms.iter().map(|(w, z)| w * z).sum::<f64>() / norm)
}

/// Hooks into a correlated sweep. Both methods default to no-ops.
pub trait PairObserver {
    fn fine_step(&mut self, _state: &ParticleState, _record: &KdStepRecord) {}
    fn coarse_step(&mut self, _window: &AggregationWindow, _draws: &CoarseDraws, _decorrelated: bool) {}
}

impl PairObserver for () {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub x_fine: f64,
    pub x_coarse: f64,
    /// Fine KD steps computed, including speculative ones past the end time.
    pub fine_steps: u64,
    pub coarse_steps: u64,
    /// Coarse steps whose exponential budget had to be redrawn.
    pub decorrelations: u64,
}

impl PairOutcome {
    pub fn difference(&self) -> f64 {
        self.x_fine - self.x_coarse
    }
}

/// Coarsening factor `dt_coarse / dt_fine`, required to be a power of two.
fn coarsening_factor(dt_fine: f64, dt_coarse: f64) -> Result<u64> {
    let ratio = dt_coarse / dt_fine;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * m || !(m as u64).is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "coarse step must be a power-of-two multiple of the fine step, got ratio {ratio}"
        )));
    }
    Ok(m as u64)
}

/// Simulates a fine path with step `dt_fine` and a coarse path with step
/// `dt_coarse` driven by the fine path's random numbers, both up to
/// `end_time`. `src` drives the fine path; `reserve` is only consulted when
/// an aggregated exponential budget is exhausted.
///
/// The fine final position is identical to [`crate::kd::simulate_path`] on
/// the same stream: fine steps taken after the fine path has reached
/// `end_time` only generate draws for the coarse path.
pub fn correlated_path_with<S, R, O>(
    bg: &Background,
    end_time: f64,
    dt_fine: f64,
    dt_coarse: f64,
    src: &mut S,
    reserve: &mut R,
    observer: &mut O,
) -> Result<PairOutcome>
where
    S: DrawSource + ?Sized,
    R: DrawSource + ?Sized,
    O: PairObserver + ?Sized,
{
    validate_times(end_time, dt_fine)?;
    validate_times(end_time, dt_coarse)?;
    coarsening_factor(dt_fine, dt_coarse)?;

    let (mut fine, _, _) = initial_state(bg, src)?;
    let mut coarse = fine;
    let mut fine_final = (fine.t + fine.tau >= end_time).then_some(fine);
    let mut window: Vec<KdStepRecord> = Vec::new();
    let mut kappa = 0usize;
    let mut fine_steps = 0u64;
    let mut coarse_steps = 0u64;
    let mut decorrelations = 0u64;

    while coarse.t + coarse.tau < end_time || fine.t + fine.tau < end_time {
        let coarse_ceil = grid_ceil(coarse.t + coarse.tau, dt_coarse);
        loop {
            let draws = EventDraws::draw(src);
            let (next, record) = kd_step(&fine, bg, dt_fine, draws)?;
            fine = next;
            fine_steps += 1;
            observer.fine_step(&fine, &record);
            window.push(record);
            if fine_final.is_none() && fine.t + fine.tau >= end_time {
                fine_final = Some(fine);
            }
            if grid_ceil(fine.t + fine.tau, dt_fine) > coarse_ceil {
                break;
            }
        }
        if coarse.t + coarse.tau < end_time {
            let aggregation = AggregationWindow {
                kappa,
                fine_records: &window,
            };
            let nu_t = aggregate_nu(&aggregation)?;
            let eps_fine = window[window.len() - 1].draws.eps;
            let (eps_t, decorrelated) = match aggregate_eps(eps_fine, bg, (fine.x, fine.v, fine.t), coarse_ceil) {
                Some(e) => (e, false),
                None => (reserve.exponential(), true),
            };
            let chi_t = aggregate_chi(&aggregation, bg.sigma_v())?;
            let draws = CoarseDraws { nu_t, eps_t, chi_t };
            let (next, _) = kd_step(
                &coarse,
                bg,
                dt_coarse,
                EventDraws {
                    nu: nu_t,
                    eps: eps_t,
                    chi: chi_t,
                },
            )?;
            coarse = next;
            coarse_steps += 1;
            decorrelations += decorrelated as u64;
            observer.coarse_step(&aggregation, &draws, decorrelated);
        }
        kappa += window.len();
        window.clear();
    }

    let fine_final = fine_final.unwrap_or(fine);
    let tail = |s: &ParticleState| if s.t < end_time { s.x + s.v * (end_time - s.t) } else { s.x };
    Ok(PairOutcome {
        x_fine: tail(&fine_final),
        x_coarse: tail(&coarse),
        fine_steps,
        coarse_steps,
        decorrelations,
    })
}

pub fn correlated_path<S, R>(bg: &Background, end_time: f64, dt_fine: f64, dt_coarse: f64, src: &mut S, reserve: &mut R) -> Result<PairOutcome>
where
    S: DrawSource + ?Sized,
    R: DrawSource + ?Sized,
{
    correlated_path_with(bg, end_time, dt_fine, dt_coarse, src, reserve, &mut ())
}

/// Collects every aggregated coarse draw of a sweep.
#[derive(Debug, Default, Clone)]
pub struct CoarseDrawLog {
    pub nu: Vec<f64>,
    pub eps: Vec<f64>,
    pub chi: Vec<f64>,
}

impl PairObserver for CoarseDrawLog {
    fn coarse_step(&mut self, _window: &AggregationWindow, draws: &CoarseDraws, _decorrelated: bool) {
        self.nu.push(draws.nu_t);
        self.eps.push(draws.eps_t);
        self.chi.push(draws.chi_t);
    }
}

/// Pools aggregated coarse draws from repeated correlated sweeps at fine
/// level `level` with coarsening factor `m` until `n` values of each are
/// available. The initial draws, which are copied rather than aggregated,
/// are not included.
pub fn pooled_coarse_draws(bg: &Background, end_time: f64, level: u32, m: u64, n: usize, seed: u64) -> Result<CoarseDrawLog> {
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("coarsening factor must be a power of two, got {m}")));
    }
    let dt_fine = crate::kd::level_step(end_time, level);
    let dt_coarse = dt_fine * m as f64;
    let pair = pair_id(level, Some(level.wrapping_sub(m.trailing_zeros())));
    let mut log = CoarseDrawLog::default();
    let mut index = 0u64;
    while log.nu.len() < n {
        let mut src = DrawStream::new(seed, StreamKey::new(purpose::CHECK_RN, pair, index));
        let mut reserve = DrawStream::new(seed, StreamKey::new(purpose::RESERVE, pair, index));
        correlated_path_with(bg, end_time, dt_fine, dt_coarse, &mut src, &mut reserve, &mut log)?;
        index += 1;
    }
    log.nu.truncate(n);
    log.eps.truncate(n);
    log.chi.truncate(n);
    Ok(log)
}
