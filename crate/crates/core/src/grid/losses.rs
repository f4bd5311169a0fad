//! Piecewise-linear approximation of quadratic line losses.
//!
//! A line carrying `f` MW dissipates roughly `k * f^2` MW, where `k` is the
//! per-unit resistance divided by the system base. The clearing problem cannot
//! hold quadratic equalities, so the loss curve on `|f| in [0, capacity]` is
//! replaced by the upper envelope of least-squares lines, one per segment.

use serde::{Deserialize, Serialize};

/// One affine piece `w >= slope * |f| + intercept` of the loss envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSegment {
    pub slope: f64,
    pub intercept: f64,
}

impl LossSegment {
    pub fn eval(&self, flow: f64) -> f64 {
        self.slope * flow.abs() + self.intercept
    }
}

/// Evaluates the max-of-segments envelope at `flow`.
pub fn envelope(segments: &[LossSegment], flow: f64) -> f64 {
    segments
        .iter()
        .map(|s| s.eval(flow))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Least-squares fit of `coefficient * f^2` by `M f + Q` on `[lo, hi]`.
///
/// Solves the 2x2 normal equations of the continuous problem
/// `min int_lo^hi (coefficient f^2 - M f - Q)^2 df` using the power moments of
/// the interval.
fn fit_interval(coefficient: f64, lo: f64, hi: f64) -> LossSegment {
    let moment = |k: i32| (hi.powi(k + 1) - lo.powi(k + 1)) / f64::from(k + 1);
    let (m0, m1, m2, m3) = (moment(0), moment(1), moment(2), moment(3));
    // [m2 m1; m1 m0] [M; Q] = coefficient * [m3; m2]
    let det = m2 * m0 - m1 * m1;
    let rhs0 = coefficient * m3;
    let rhs1 = coefficient * m2;
    let slope = (rhs0 * m0 - m1 * rhs1) / det;
    let intercept = (m2 * rhs1 - m1 * rhs0) / det;
    LossSegment { slope, intercept }
}

/// Fits `coefficient * f^2` over `|f| in [0, capacity]` with `segments` evenly
/// spaced least-squares pieces.
///
/// A zero coefficient yields all-zero segments. Intercepts may be negative;
/// the clearing model keeps line losses nonnegative through a variable bound.
pub fn fit_loss_linearization(coefficient: f64, capacity: f64, segments: usize) -> Vec<LossSegment> {
    assert!(coefficient >= 0.0, "loss coefficient must be nonnegative");
    assert!(capacity > 0.0, "capacity must be positive");
    assert!(segments >= 1, "at least one segment is required");
    if coefficient == 0.0 {
        return vec![
            LossSegment {
                slope: 0.0,
                intercept: 0.0
            };
            segments
        ];
    }
    let width = capacity / segments as f64;
    (0..segments)
        .map(|s| fit_interval(coefficient, s as f64 * width, (s + 1) as f64 * width))
        .collect()
}
