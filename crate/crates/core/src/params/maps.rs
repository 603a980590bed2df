//! Scalar maps from unconstrained logits to constrained parameter values, their derivatives
//! and their inverses.

use crate::error::{ensure_finite, Error, Result};

/// Logistic function, numerically stable for large `|theta|`.
pub fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^theta)` without overflow.
pub fn softplus(theta: f64) -> f64 {
    theta.max(0.0) + (-theta.abs()).exp().ln_1p()
}

/// Maps a logit into `(0, 1)`.
pub fn map_unit(theta: f64) -> Result<f64> {
    Ok(sigmoid(ensure_finite(theta, "logit")?))
}

pub fn map_unit_grad(theta: f64) -> f64 {
    let s = sigmoid(theta);
    s * (1.0 - s)
}

pub fn unmap_unit(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::OutOfBounds {
            name: "unit value".into(),
            value: x,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok((x / (1.0 - x)).ln())
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if a < b && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInterval {
            name: "bounded map".into(),
            lo: a,
            hi: b,
        })
    }
}

/// Maps a logit into `(a, b)`.
pub fn map_bounded(theta: f64, a: f64, b: f64) -> Result<f64> {
    check_interval(a, b)?;
    Ok(a + map_unit(theta)? * (b - a))
}

pub fn map_bounded_grad(theta: f64, a: f64, b: f64) -> f64 {
    map_unit_grad(theta) * (b - a)
}

pub fn unmap_bounded(x: f64, a: f64, b: f64) -> Result<f64> {
    check_interval(a, b)?;
    if !(x > a && x < b) {
        return Err(Error::OutOfBounds {
            name: "bounded value".into(),
            value: x,
            lo: a,
            hi: b,
        });
    }
    let u = (x - a) / (b - a);
    Ok((u / (1.0 - u)).ln())
}

/// Wraps a logit into `[0, a)`. The derivative is taken as 1 everywhere.
pub fn map_modulo(theta: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("modulus must be positive, got {a}")));
    }
    let r = ensure_finite(theta, "logit")?.rem_euclid(a);
    // rem_euclid can round up to `a` for tiny negative inputs
    Ok(if r >= a { 0.0 } else { r })
}

/// Maps a logit to a non-positive value `-ln(1 + e^theta)`.
pub fn map_nonpositive(theta: f64) -> f64 {
    -softplus(theta)
}

pub fn map_nonpositive_grad(theta: f64) -> f64 {
    -sigmoid(theta)
}

pub fn unmap_nonpositive(y: f64) -> Result<f64> {
    if !(y < 0.0) {
        return Err(Error::OutOfBounds {
            name: "log value".into(),
            value: y,
            lo: f64::NEG_INFINITY,
            hi: 0.0,
        });
    }
    Ok((-y).exp_m1().ln())
}
