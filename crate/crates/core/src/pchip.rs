//! Monotone piecewise cubic Hermite interpolation (Fritsch–Carlson).
//!
//! Interior slopes are weighted harmonic means of the adjacent secants, or zero
//! where the secants change sign. End slopes use the three-point one-sided
//! formula, clamped so they never point against the first secant and never
//! exceed three times it when the data turn over.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PchipError {
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot abscissae must be strictly ascending (index {0})")]
    Unsorted(usize),
    #[error("xs and ys differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("non-finite knot value at index {0}")]
    NonFinite(usize),
    #[error("x = {x} outside [{lower}, {upper}]")]
    OutOfRange { x: f64, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PchipCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl PchipCurve {
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self, PchipError> {
        if xs.len() != ys.len() {
            return Err(PchipError::Length(xs.len(), ys.len()));
        }
        let n = xs.len();
        if n < 2 {
            return Err(PchipError::TooFewKnots(n));
        }
        if let Some(i) = (0..n).find(|&i| !xs[i].is_finite() || !ys[i].is_finite()) {
            return Err(PchipError::NonFinite(i));
        }
        if let Some(i) = (1..n).find(|&i| !(xs[i - 1] < xs[i])) {
            return Err(PchipError::Unsorted(i));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { xs: xs.to_vec(), ys: ys.to_vec(), slopes })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> Result<f64, PchipError> {
        let (lower, upper) = self.domain();
        if !(x >= lower && x <= upper) {
            return Err(PchipError::OutOfRange { x, lower, upper });
        }
        // Index of the last knot <= x, capped so x == upper lands in the final interval.
        let k = self.xs.partition_point(|&xk| xk <= x).clamp(1, self.xs.len() - 1) - 1;
        if x == self.xs[k] {
            return Ok(self.ys[k]);
        }
        if x == self.xs[k + 1] {
            return Ok(self.ys[k + 1]);
        }
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1])
    }

    pub fn eval_many(&self, xs: &[f64]) -> Result<Vec<f64>, PchipError> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
