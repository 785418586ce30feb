//! Robust loss functions.

/// Tukey biweight loss with cutoff `c`.
///
/// `rho(r) = c^2/6 * (1 - (1 - (r/c)^2)^3)` inside the cutoff and `c^2/6` outside.
pub fn tukey_loss(r: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let sat = c * c / 6.0;
    if r.abs() >= c {
        return sat;
    }
    let u = 1.0 - (r / c) * (r / c);
    sat * (1.0 - u * u * u)
}

/// Derivative of [`tukey_loss`] with respect to `r`.
pub fn tukey_derivative(r: f64, c: f64) -> f64 {
    if r.abs() >= c {
        return 0.0;
    }
    let u = 1.0 - (r / c) * (r / c);
    r * u * u
}

/// IRLS weight applied to a squared residual norm `s = |r|^2` under a Huber
/// loss of width `delta`. Multiplying the residual by `sqrt(weight)` gives the
/// reweighted least-squares step.
pub fn huber_weight(s: f64, delta: f64) -> f64 {
    let n = s.sqrt();
    if n <= delta {
        1.0
    } else {
        delta / n
    }
}

/// Huber cost of a squared residual norm, scaled so that it equals `s` inside the width.
pub fn huber_cost(s: f64, delta: f64) -> f64 {
    let n = s.sqrt();
    if n <= delta {
        s
    } else {
        2.0 * delta * n - delta * delta
    }
}
