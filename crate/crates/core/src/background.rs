//! Plasma background: a piecewise-linear collision rate `R(x)` together with
//! the mean and standard deviation of the Maxwellian post-collisional
//! velocity distribution.
//!
//! The rate is stored as explicit linear segments so that the collision-time
//! integral `∫₀^τ R(x₀ + v t) dt = ε` can be inverted in closed form, one
//! segment at a time. The outermost segments extend indefinitely.

use crate::error::{Error, Result};

/// The two rate families of the one-dimensional test case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BackgroundFamily {
    /// Symmetric V-shaped rate with its minimum `b` at `x = 1`.
    B1,
    /// Constant rate `b` for `x <= 1`, rising linearly for `x > 1`.
    B2,
}

impl std::str::FromStr for BackgroundFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "B1" | "b1" => Ok(Self::B1),
            "B2" | "b2" => Ok(Self::B2),
            other => Err(Error::Config(format!("unknown background family {other:?}"))),
        }
    }
}

impl std::fmt::Display for BackgroundFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::B1 => f.write_str("B1"),
            Self::B2 => f.write_str("B2"),
        }
    }
}

/// One linear piece: `R(x) = value + slope * (x - anchor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub anchor: f64,
    pub value: f64,
    pub slope: f64,
}

impl Segment {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.value + self.slope * (x - self.anchor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    mu_v: f64,
    sigma_v: f64,
}

impl Background {
    /// Builds a background from `breakpoints.len() + 1` segments. Segment `i`
    /// covers `[breakpoints[i-1], breakpoints[i])`.
    pub fn new(breakpoints: Vec<f64>, segments: Vec<Segment>, mu_v: f64, sigma_v: f64) -> Result<Self> {
        if segments.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidBackground(format!(
                "{} breakpoints need {} segments, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                segments.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidBackground("breakpoints must be finite and strictly increasing".into()));
        }
        if !(sigma_v > 0.0 && sigma_v.is_finite()) || !mu_v.is_finite() {
            return Err(Error::InvalidBackground(format!("need finite mu_v and sigma_v > 0, got ({mu_v}, {sigma_v})")));
        }
        for s in &segments {
            if !(s.anchor.is_finite() && s.value.is_finite() && s.slope.is_finite()) {
                return Err(Error::InvalidBackground("segment coefficients must be finite".into()));
            }
        }
        // Nonnegative everywhere: check every segment at its ends, and make
        // sure the unbounded outer pieces do not decrease outward.
        let first = segments.first().expect("at least one segment");
        let last = segments.last().expect("at least one segment");
        if !breakpoints.is_empty() && (first.slope > 0.0 || last.slope < 0.0) {
            return Err(Error::InvalidBackground("outer segments would turn negative".into()));
        }
        if breakpoints.is_empty() && first.slope != 0.0 {
            return Err(Error::InvalidBackground("a single unbounded segment must be constant".into()));
        }
        for (i, p) in breakpoints.iter().enumerate() {
            if segments[i].eval(*p) < 0.0 || segments[i + 1].eval(*p) < 0.0 {
                return Err(Error::InvalidBackground(format!("negative rate at breakpoint {p}")));
            }
        }
        if breakpoints.is_empty() && first.value < 0.0 {
            return Err(Error::InvalidBackground("negative constant rate".into()));
        }
        Ok(Self {
            breakpoints,
            segments,
            mu_v,
            sigma_v,
        })
    }

    /// Constant rate `b` with standard Maxwellian moments (`mu_v = 0`, `sigma_v = 1`).
    pub fn homogeneous(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidBackground(format!("rate must be positive, got {b}")));
        }
        Self::new(
            Vec::new(),
            vec![Segment {
                anchor: 0.0,
                value: b,
                slope: 0.0,
            }],
            0.0,
            1.0,
        )
    }

    /// The test-case backgrounds `R1` and `R2`, both with `mu_v = 0`,
    /// `sigma_v = 1` and a single breakpoint at `x = 1`.
    pub fn make(family: BackgroundFamily, a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidBackground(format!("b must be positive, got {b}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidBackground(format!("a must be nonnegative, got {a}")));
        }
        let left_slope = match family {
            BackgroundFamily::B1 => -a * b,
            BackgroundFamily::B2 => 0.0,
        };
        let seg = |slope| Segment {
            anchor: 1.0,
            value: b,
            slope,
        };
        Self::new(vec![1.0], vec![seg(left_slope), seg(a * b)], 0.0, 1.0)
    }

    pub fn with_velocity_moments(mut self, mu_v: f64, sigma_v: f64) -> Result<Self> {
        if !(sigma_v > 0.0 && sigma_v.is_finite()) || !mu_v.is_finite() {
            return Err(Error::InvalidBackground(format!("need finite mu_v and sigma_v > 0, got ({mu_v}, {sigma_v})")));
        }
        self.mu_v = mu_v;
        self.sigma_v = sigma_v;
        Ok(self)
    }

    #[inline]
    pub fn mu_v(&self) -> f64 {
        self.mu_v
    }

    #[inline]
    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Collision rate at `x`. At a breakpoint the right-hand segment is used.
    #[inline]
    pub fn rate(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&p| p <= x);
        self.segments[idx].eval(x)
    }

    /// Index of the segment a particle at `x` moving in direction `v` is in.
    #[inline]
    fn segment_index(&self, x: f64, v: f64) -> usize {
        if v >= 0.0 {
            self.breakpoints.partition_point(|&p| p <= x)
        } else {
            self.breakpoints.partition_point(|&p| p < x)
        }
    }

    /// Time until the ray leaves segment `idx`, or infinity for an outer piece.
    #[inline]
    fn exit_time(&self, idx: usize, x: f64, v: f64) -> (f64, f64) {
        if v > 0.0 && idx < self.breakpoints.len() {
            let p = self.breakpoints[idx];
            ((p - x) / v, p)
        } else if v < 0.0 && idx > 0 {
            let p = self.breakpoints[idx - 1];
            ((p - x) / v, p)
        } else {
            (f64::INFINITY, f64::NAN)
        }
    }

    /// Signed integral `∫₀ˢ R(x₀ + v t) dt`. Negative `s` integrates backwards
    /// along the ray and returns a nonpositive value.
    pub fn rate_integral(&self, x0: f64, v: f64, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        if s < 0.0 {
            return -self.rate_integral(x0 + v * s, v, -s);
        }
        if v == 0.0 {
            return self.rate(x0) * s;
        }
        let mut x = x0;
        let mut t = 0.0;
        let mut acc = 0.0;
        loop {
            let idx = self.segment_index(x, v);
            let seg = self.segments[idx];
            let (exit, p) = self.exit_time(idx, x, v);
            let r0 = seg.eval(x);
            let g = seg.slope * v;
            let remaining = s - t;
            if exit >= remaining {
                acc += r0 * remaining + 0.5 * g * remaining * remaining;
                return acc;
            }
            acc += r0 * exit + 0.5 * g * exit * exit;
            t += exit;
            x = p;
        }
    }

    /// Solves `∫₀^τ R(x₀ + v t) dt = eps` for `τ`, marching segment by segment.
    pub fn collision_time(&self, x0: f64, v: f64, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("exponential budget must be positive, got {eps}")));
        }
        if v == 0.0 {
            let r = self.rate(x0);
            if r > 0.0 {
                return Ok(eps / r);
            }
            return Err(Error::NoCollision {
                x0,
                v,
                reached: 0.0,
                budget: eps,
            });
        }
        let mut x = x0;
        let mut t = 0.0;
        let mut remaining = eps;
        loop {
            let idx = self.segment_index(x, v);
            let seg = self.segments[idx];
            let (exit, p) = self.exit_time(idx, x, v);
            let r0 = seg.eval(x);
            let g = seg.slope * v;
            let available = if exit.is_finite() {
                r0 * exit + 0.5 * g * exit * exit
            } else if g > 0.0 || (g == 0.0 && r0 > 0.0) {
                f64::INFINITY
            } else if g < 0.0 {
                0.5 * r0 * r0 / -g
            } else {
                0.0
            };
            if available >= remaining {
                return Ok(t + linear_rate_root(r0, g, remaining));
            }
            if !exit.is_finite() {
                return Err(Error::NoCollision {
                    x0,
                    v,
                    reached: eps - remaining + available,
                    budget: eps,
                });
            }
            remaining -= available;
            t += exit;
            x = p;
        }
    }
}

/// Smallest positive `h` with `r0 h + g h²/2 = e`, in the rationalised form
/// `2e / (r0 + sqrt(r0² + 2 g e))`, which stays accurate as `g -> 0`.
#[inline]
fn linear_rate_root(r0: f64, g: f64, e: f64) -> f64 {
    let disc = (r0 * r0 + 2.0 * g * e).max(0.0);
    2.0 * e / (r0 + disc.sqrt())
}
