//! The simulation design `h(Y) = g(X) + σ(X) ε` with `X ~ U[0, 1]`,
//! `ε ~ U[-1, 1]`, `h⁻¹(u) = u³/8 + 7u/8`, `g(x) = 1 + x` and
//! `σ(x) = (1 + x)² / 2`, together with closed-form versions of every
//! population quantity the estimators target.

use rand::Rng;

use crate::error::{Error, Result};
use crate::smoothers::Dataset;

/// `A = ∫_0^1 (σ g' - g σ') / σ dx`.
pub const A: f64 = -1.0;
/// `B = ∫_0^1 σ'/σ dx = log 4`.
pub const B: f64 = std::f64::consts::LN_2 * 2.0;

/// `H(u) = u³/8 + 7u/8`, the inverse of the transformation.
pub fn inverse_transform(u: f64) -> f64 {
    u * u * u / 8.0 + 7.0 * u / 8.0
}

/// `h₀ = H⁻¹`: the real root of `u³ + 7u - 8y = 0`.
pub fn transform(y: f64) -> f64 {
    let disc = (16.0 * y * y + 343.0 / 27.0).sqrt();
    let mut u = (4.0 * y + disc).cbrt() + (4.0 * y - disc).cbrt();
    for _ in 0..3 {
        let f = u * u * u + 7.0 * u - 8.0 * y;
        u -= f / (3.0 * u * u + 7.0);
    }
    u
}

pub fn transform_prime(y: f64) -> f64 {
    let u = transform(y);
    1.0 / (3.0 * u * u / 8.0 + 7.0 / 8.0)
}

pub fn regression(x: f64) -> f64 {
    1.0 + x
}

pub fn scale(x: f64) -> f64 {
    (1.0 + x) * (1.0 + x) / 2.0
}

fn scale_prime(x: f64) -> f64 {
    1.0 + x
}

pub fn response(x: f64, eps: f64) -> f64 {
    inverse_transform(regression(x) + scale(x) * eps)
}

/// Root of λ: `H(1 / log 4)`.
pub fn true_y0() -> f64 {
    inverse_transform(1.0 / B)
}

/// `λ(y) = -(A + B h₀(y)) / h₀'(y)`.
pub fn true_lambda(y: f64) -> f64 {
    -(A + B * transform(y)) / transform_prime(y)
}

/// `(h₀(y) - h₀(y0_pin)) / (h₀(y1_pin) - h₀(y0_pin))`.
pub fn true_transform_renorm(y: f64, y0_pin: f64, y1_pin: f64) -> Result<f64> {
    let base = transform(y0_pin);
    let span = transform(y1_pin) - base;
    if span == 0.0 {
        return Err(Error::DegeneratePins);
    }
    Ok((transform(y) - base) / span)
}

/// `F⁻¹(τ | x) = H(g(x) + σ(x)(2τ - 1))`.
pub fn true_quantile(tau: f64, x: f64) -> f64 {
    inverse_transform(regression(x) + scale(x) * (2.0 * tau - 1.0))
}

/// Standardized error `(h(Y) - g(X)) / σ(X)` of a response.
pub fn true_error(y: f64, x: f64) -> f64 {
    (transform(y) - regression(x)) / scale(x)
}

/// `F_{Y|X}(y | x)`.
pub fn true_cdf(y: f64, x: f64) -> f64 {
    ((true_error(y, x) + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn inside(y: f64, x: f64) -> bool {
    let e = true_error(y, x);
    (-1.0..=1.0).contains(&e)
}

/// `∂F_{Y|X}/∂y`, which equals the joint density since `f_X = 1` on `[0, 1]`.
pub fn true_phi_y(y: f64, x: f64) -> f64 {
    if inside(y, x) {
        transform_prime(y) / (2.0 * scale(x))
    } else {
        0.0
    }
}

/// `∂F_{Y|X}/∂x`.
pub fn true_phi_x(y: f64, x: f64) -> f64 {
    if inside(y, x) {
        let s = scale(x);
        -(s + (transform(y) - regression(x)) * scale_prime(x)) / (2.0 * s * s)
    } else {
        0.0
    }
}

/// Draws `n` observations together with the latent errors.
pub fn generate_with_errors<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(Dataset, Vec<f64>)> {
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random_range(0.0..1.0);
        let ei: f64 = rng.random_range(-1.0..1.0);
        y.push(response(xi, ei));
        x.push(xi);
        eps.push(ei);
    }
    Ok((Dataset::univariate(y, x)?, eps))
}

pub fn generate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    generate_with_errors(n, rng).map(|(d, _)| d)
}
