//! Kinetic-diffusion (KD) paths.
//!
//! A KD step flies the particle kinetically to its next collision, then moves
//! it by a Gaussian advection-diffusion displacement for the remainder of the
//! time interval the collision fell in. The new post-collisional velocity is
//! drawn before the diffusive phase because the displacement is conditioned
//! on it.
//!
//! Heterogeneous backgrounds use the homogeneous coefficients with the rate
//! frozen at the collision location.

use crate::background::Background;
use crate::error::{Error, Result};
use crate::stats::DrawSource;

/// Every path starts here at `t = 0`.
pub const INITIAL_POSITION: f64 = 1.0;

/// Below this value of `u = Rθ` the coefficient brackets are summed as power
/// series; above it the closed forms are accurate to a few ulps.
pub const SERIES_SWITCH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub x: f64,
    pub v: f64,
    pub t: f64,
    /// Time until the pending collision.
    pub tau: f64,
}

/// The random triple consumed by one KD step, in consumption order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDraws {
    /// Standard normal draw for the next post-collisional velocity.
    pub nu: f64,
    /// Unit exponential budget of the next kinetic flight.
    pub eps: f64,
    /// Standard normal draw for the diffusive displacement.
    pub chi: f64,
}

impl EventDraws {
    pub fn draw<S: DrawSource + ?Sized>(src: &mut S) -> Self {
        let nu = src.normal();
        let eps = src.exponential();
        let chi = src.normal();
        Self { nu, eps, chi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdStepRecord {
    /// Duration of the kinetic phase that ended in this step's collision.
    pub tau: f64,
    /// Duration of the diffusive phase after the collision.
    pub theta: f64,
    /// Collision rate at the collision location.
    pub rate: f64,
    pub a_coef: f64,
    pub d_coef: f64,
    pub draws: EventDraws,
}

/// Sums `Σ_{n≥start} c(n) uⁿ/n!` until the terms stop contributing.
#[inline]
fn series(u: f64, start: u32, coef: impl Fn(u32) -> f64) -> f64 {
    let mut power = 1.0;
    for n in 1..=start {
        power *= u / n as f64;
    }
    let mut sum = 0.0;
    let mut n = start;
    loop {
        let term = coef(n) * power;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || n > 80 {
            return sum;
        }
        n += 1;
        power *= u / n as f64;
    }
}

/// `2(e^{-u} - 1) + u(e^{-u} + 1)`, which is `u³/6 + O(u⁴)`.
pub fn diffusion_bracket(u: f64) -> f64 {
    if u < SERIES_SWITCH {
        series(u, 3, |n| {
            let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
            sign * (n as f64 - 2.0)
        })
    } else {
        let em = (-u).exp_m1();
        2.0 * em + u * (em + 2.0)
    }
}

/// `1 - 2u e^{-u} - e^{-2u}`, which is `u³/3 + O(u⁴)`.
pub fn velocity_bracket(u: f64) -> f64 {
    if u < SERIES_SWITCH {
        series(u, 3, |n| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sign * (2.0 * n as f64 - 2f64.powi(n as i32))
        })
    } else {
        -(-2.0 * u).exp_m1() - 2.0 * u * (-u).exp()
    }
}

/// `e^{-u} + u - 1`, which is `u²/2 + O(u³)`.
pub fn relaxation_bracket(u: f64) -> f64 {
    if u < SERIES_SWITCH {
        series(u, 2, |n| if n % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (-u).exp_m1() + u
    }
}

/// Mean displacement of the diffusive phase:
/// `μθ + (v_next − μ)(1 − e^{−Rθ})/R`.
pub fn advection_coefficient(theta: f64, v_next: f64, rate: f64, mu_v: f64, _sigma_v: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    mu_v * theta + (v_next - mu_v) * (-(-rate * theta).exp_m1()) / rate
}

/// Standard deviation of the diffusive displacement, plus whether a negative
/// round-off radicand had to be clamped to zero.
pub fn diffusion_coefficient_checked(theta: f64, v_next: f64, rate: f64, mu_v: f64, sigma_v: f64) -> (f64, bool) {
    if theta == 0.0 {
        return (0.0, false);
    }
    let u = rate * theta;
    let r2 = rate * rate;
    let w = v_next - mu_v;
    let radicand = 2.0 * sigma_v * sigma_v / r2 * diffusion_bracket(u) + w * w / r2 * velocity_bracket(u);
    if radicand < 0.0 {
        (0.0, true)
    } else {
        (radicand.sqrt(), false)
    }
}

pub fn diffusion_coefficient(theta: f64, v_next: f64, rate: f64, mu_v: f64, sigma_v: f64) -> f64 {
    diffusion_coefficient_checked(theta, v_next, rate, mu_v, sigma_v).0
}

/// Smallest grid time `n·dt` at or after `t`.
#[inline]
pub fn grid_ceil(t: f64, dt: f64) -> f64 {
    let g = (t / dt).ceil() * dt;
    if g < t {
        g + dt
    } else {
        g
    }
}

/// Time step of level `level`: `T / 2^level`.
#[inline]
pub fn level_step(end_time: f64, level: u32) -> f64 {
    end_time / 2f64.powi(level as i32)
}

/// One kinetic-diffusion step. `state.tau` must already hold the time to the
/// pending collision; `draws` supplies the next velocity, the next flight
/// budget and the diffusive displacement.
pub fn kd_step(state: &ParticleState, bg: &Background, dt: f64, draws: EventDraws) -> Result<(ParticleState, KdStepRecord)> {
    let (mu, sigma) = (bg.mu_v(), bg.sigma_v());
    let v_next = mu + sigma * draws.nu;
    let t_collision = state.t + state.tau;
    let t_next = grid_ceil(t_collision, dt);
    let theta = t_next - t_collision;
    let x_collision = state.x + state.v * state.tau;
    let rate = bg.rate(x_collision);
    let a_coef = advection_coefficient(theta, v_next, rate, mu, sigma);
    let d_coef = diffusion_coefficient(theta, v_next, rate, mu, sigma);
    let x_next = x_collision + a_coef + d_coef * draws.chi;
    let tau_next = bg.collision_time(x_next, v_next, draws.eps)?;
    Ok((
        ParticleState {
            x: x_next,
            v: v_next,
            t: t_next,
            tau: tau_next,
        },
        KdStepRecord {
            tau: state.tau,
            theta,
            rate,
            a_coef,
            d_coef,
            draws,
        },
    ))
}

/// Final position and step count of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub x: f64,
    pub steps: u64,
}

pub(crate) fn validate_times(end_time: f64, dt: f64) -> Result<()> {
    if !(end_time > 0.0 && end_time.is_finite()) {
        return Err(Error::InvalidArgument(format!("end time must be positive, got {end_time}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Initial state from the first `(ν, ε)` pair.
pub(crate) fn initial_state<S: DrawSource + ?Sized>(bg: &Background, src: &mut S) -> Result<(ParticleState, f64, f64)> {
    let nu = src.normal();
    let eps = src.exponential();
    let v = bg.mu_v() + bg.sigma_v() * nu;
    let tau = bg.collision_time(INITIAL_POSITION, v, eps)?;
    Ok((
        ParticleState {
            x: INITIAL_POSITION,
            v,
            t: 0.0,
            tau,
        },
        nu,
        eps,
    ))
}

/// Simulates one KD path up to `end_time`, calling `on_step` for every step.
pub fn simulate_path_with<S, F>(bg: &Background, end_time: f64, dt: f64, src: &mut S, mut on_step: F) -> Result<PathOutcome>
where
    S: DrawSource + ?Sized,
    F: FnMut(&ParticleState, &KdStepRecord),
{
    validate_times(end_time, dt)?;
    let (mut state, _, _) = initial_state(bg, src)?;
    let mut steps = 0;
    while state.t + state.tau < end_time {
        let draws = EventDraws::draw(src);
        let (next, record) = kd_step(&state, bg, dt, draws)?;
        on_step(&next, &record);
        state = next;
        steps += 1;
    }
    let mut x = state.x;
    if state.t < end_time {
        x += state.v * (end_time - state.t);
    }
    Ok(PathOutcome { x, steps })
}

/// Simulates one KD path and returns the final position with every step record.
pub fn simulate_path<S: DrawSource + ?Sized>(bg: &Background, end_time: f64, dt: f64, src: &mut S) -> Result<(f64, Vec<KdStepRecord>)> {
    let mut records = Vec::new();
    let out = simulate_path_with(bg, end_time, dt, src, |_, r| records.push(*r))?;
    Ok((out.x, records))
}
