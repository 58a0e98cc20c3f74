//! Monotone piecewise-cubic Hermite interpolation.
//!
//! Bid functions and cost CDFs are represented on grids with known node
//! slopes. The constructor clamps supplied slopes into the Fritsch-Carlson
//! box (nonnegative, at most three times the adjacent secants), which keeps
//! the interpolant monotone without touching slopes that are already safe.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneCubic {
    /// Build from nodes `(x, y)` with prescribed slopes `m = dy/dx`.
    ///
    /// `x` must be strictly increasing and `y` nondecreasing.
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, mut m: Vec<f64>) -> Result<Self> {
        validate(&x, &y)?;
        if m.len() != x.len() {
            return Err(Error::shape("slope vector length mismatch"));
        }
        let n = x.len();
        for i in 0..n {
            let left = if i > 0 {
                (y[i] - y[i - 1]) / (x[i] - x[i - 1])
            } else {
                f64::INFINITY
            };
            let right = if i + 1 < n {
                (y[i + 1] - y[i]) / (x[i + 1] - x[i])
            } else {
                f64::INFINITY
            };
            let cap = 3.0 * left.min(right);
            m[i] = m[i].clamp(0.0, cap);
        }
        Ok(MonotoneCubic { x, y, m })
    }

    /// Build from nodes alone, estimating slopes by the Fritsch-Carlson rule.
    pub fn from_data(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        validate(&x, &y)?;
        let n = x.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
            .collect();
        let mut m = vec![0.0; n];
        m[0] = secants[0];
        m[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            m[i] = if secants[i - 1] * secants[i] > 0.0 {
                0.5 * (secants[i - 1] + secants[i])
            } else {
                0.0
            };
        }
        Self::with_slopes(x, y, m)
    }

    /// Interpolation nodes.
    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    /// Node values.
    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn y_min(&self) -> f64 {
        self.y[0]
    }

    pub fn y_max(&self) -> f64 {
        *self.y.last().unwrap()
    }

    /// Interpolated value at `q`, with `q` clamped to the node range.
    pub fn eval(&self, q: f64) -> f64 {
        let (i, s, h) = self.locate(q);
        let (h00, h10, h01, h11) = hermite(s);
        self.y[i] * h00 + h * self.m[i] * h10 + self.y[i + 1] * h01 + h * self.m[i + 1] * h11
    }

    /// Interpolated derivative at `q`, with `q` clamped to the node range.
    pub fn deriv(&self, q: f64) -> f64 {
        let (i, s, h) = self.locate(q);
        let d00 = (6.0 * s * s - 6.0 * s) / h;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s * s - 2.0 * s;
        self.y[i] * d00 + self.m[i] * d10 + self.y[i + 1] * d01 + self.m[i + 1] * d11
    }

    fn locate(&self, q: f64) -> (usize, f64, f64) {
        let q = q.clamp(self.x[0], *self.x.last().unwrap());
        let i = self
            .x
            .partition_point(|&xi| xi <= q)
            .saturating_sub(1)
            .min(self.x.len() - 2);
        let h = self.x[i + 1] - self.x[i];
        (i, (q - self.x[i]) / h, h)
    }
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::shape("need matching node vectors of length >= 2"));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("abscissae must be strictly increasing"));
    }
    if y.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("ordinates must be nondecreasing"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("nodes must be finite"));
    }
    Ok(())
}

fn hermite(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}
