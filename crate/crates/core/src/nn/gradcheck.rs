//! Finite-difference helpers for verifying analytic gradients.

pub const STEP: f64 = 1e-5;

/// `(f(h) - f(-h)) / 2h` where `f` evaluates the loss with one coordinate
/// shifted by its argument.
pub fn central_difference(f: impl Fn(f64) -> f64) -> f64 {
    (f(STEP) - f(-STEP)) / (2.0 * STEP)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}
