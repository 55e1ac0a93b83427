//! One-pass moment accumulators with an exact parallel merge.

/// Running count, mean and sum of squared deviations (Welford), plus a
/// running sum of per-sample costs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    cost: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.push_with_cost(x, 0.0);
    }

    #[inline]
    pub fn push_with_cost(&mut self, x: f64, cost: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.cost += cost;
    }

    /// Combines two accumulators as if their inputs had been pushed into one.
    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / n as f64;
        Self {
            n,
            mean,
            m2,
            cost: self.cost + other.cost,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n > 0 {
            (self.variance() / self.n as f64).sqrt()
        } else {
            f64::INFINITY
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.cost
    }

    /// Mean cost per sample.
    pub fn mean_cost(&self) -> f64 {
        if self.n > 0 {
            self.cost / self.n as f64
        } else {
            0.0
        }
    }
}

impl Extend<f64> for Moments {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Self::new();
        m.extend(iter);
        m
    }
}

/// Joint moments of a pair `(x, y)`: both marginals plus the co-moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoMoments {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let (na, nb, nf) = (self.n as f64, other.n as f64, n as f64);
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        Self {
            n,
            mean_x: self.mean_x + dx * nb / nf,
            mean_y: self.mean_y + dy * nb / nf,
            m2_x: self.m2_x + other.m2_x + dx * dx * na * nb / nf,
            m2_y: self.m2_y + other.m2_y + dy * dy * na * nb / nf,
            c_xy: self.c_xy + other.c_xy + dx * dy * na * nb / nf,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean_x(&self) -> f64 {
        self.mean_x
    }

    pub fn mean_y(&self) -> f64 {
        self.mean_y
    }

    pub fn variance_x(&self) -> f64 {
        if self.n > 1 {
            (self.m2_x / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    pub fn variance_y(&self) -> f64 {
        if self.n > 1 {
            (self.m2_y / (self.n - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    pub fn covariance(&self) -> f64 {
        if self.n > 1 {
            self.c_xy / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    /// Variance of `x - y`.
    pub fn variance_of_difference(&self) -> f64 {
        (self.variance_x() + self.variance_y() - 2.0 * self.covariance()).max(0.0)
    }

    /// Pearson correlation clamped to `[-1, 1]`; zero when either marginal is
    /// degenerate.
    pub fn correlation(&self) -> f64 {
        let denom = (self.m2_x * self.m2_y).sqrt();
        if denom > 0.0 {
            (self.c_xy / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}
