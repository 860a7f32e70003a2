//! Scalar components read off λ̂: the root ŷ0, the slope-based B̃, the branch
//! constant α̂2, the threshold `t_n`, and plug-in asymptotic variances of ŷ0
//! and B̃.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::{LambdaCurve, WeightSpec, PHI_Y_FLOOR};
use crate::numeric::{bisect, linspace, trapezoid_weights};
use crate::smoothers::{SmootherState, DENSITY_FLOOR};

/// Default constant in `t_n = c_t (log(n)² / (n h_y))^{1/4}`.
pub const DEFAULT_C_T: f64 = 0.25;
/// Roots of λ̂ are polished until `|λ̂| < ROOT_TOL`.
pub const ROOT_TOL: f64 = 1e-10;
/// Trapezoid nodes per coordinate for the variance integrals.
pub const VARIANCE_NODES: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimates {
    pub y0_hat: f64,
    pub b_tilde: f64,
    pub alpha2_hat: f64,
    pub t_n: f64,
    pub var_y0: Option<f64>,
    pub var_b_tilde: Option<f64>,
}

impl ComponentEstimates {
    /// B̃ should be positive; a nonpositive value is kept but flagged here.
    pub fn b_tilde_suspicious(&self) -> bool {
        self.b_tilde <= 0.0
    }
}

/// All roots of λ̂ on its grid, each polished by bisection.
pub fn lambda_roots(curve: &LambdaCurve) -> Vec<f64> {
    let grid = curve.grid();
    let values = curve.values();
    let mut roots = Vec::new();
    for k in 0..grid.len() {
        if values[k] == 0.0 {
            roots.push(grid[k]);
            continue;
        }
        if k + 1 < grid.len() && values[k + 1] != 0.0 && values[k].signum() != values[k + 1].signum() {
            let f = |y: f64| curve.eval(y).unwrap_or(f64::NAN);
            roots.push(bisect(f, grid[k], grid[k + 1], ROOT_TOL));
        }
    }
    roots
}

/// ŷ0: among all zeros of λ̂ the one of smallest absolute value.
pub fn estimate_y0(curve: &LambdaCurve) -> Result<f64> {
    lambda_roots(curve)
        .into_iter()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .ok_or(Error::NoRoot)
}

pub fn compute_t_n(n: usize, h_y: f64, c_t: f64) -> f64 {
    threshold(n as f64, h_y, c_t)
}

fn threshold(n: f64, h_y: f64, c_t: f64) -> f64 {
    let ln = n.ln();
    c_t * (ln * ln / (n * h_y)).powf(0.25)
}

/// B̃ = -λ̂'(ŷ0).
pub fn estimate_b_tilde(curve: &LambdaCurve, y0_hat: f64) -> Result<f64> {
    Ok(-curve.derivative(y0_hat)?)
}

/// α̂2 = -exp(b (∫_{y2}^{ŷ0-t} 1/λ̂ - ∫_{y1}^{ŷ0+t} 1/λ̂)).
pub fn estimate_alpha2(curve: &LambdaCurve, y0_hat: f64, b: f64, y1: f64, y2: f64, t_n: f64) -> Result<f64> {
    if !(t_n > 0.0) {
        return Err(Error::BadAnchors(format!("t_n must be positive, got {t_n}")));
    }
    if !(y2 < y0_hat - t_n && y0_hat + t_n < y1) {
        return Err(Error::BadAnchors(format!(
            "need y2 < y0 - t_n < y0 + t_n < y1, got y2 = {y2}, y0 = {y0_hat}, t_n = {t_n}, y1 = {y1}"
        )));
    }
    let lower = curve.integral_inv(y2, y0_hat - t_n)?;
    let upper = curve.integral_inv(y1, y0_hat + t_n)?;
    Ok(-(b * (lower - upper)).exp())
}

/// Coefficients of the linear expansion of `Φ̂_x/Φ̂_y - Φ_x/Φ_y` in the
/// estimation errors of `p, p_x, p_y, f, f_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DTerms {
    pub p0: f64,
    pub py: f64,
    pub px: f64,
    pub f0: f64,
    pub fx: f64,
}

/// Evaluates the D-terms from `(p, p_x, p_y, f, f_x)` at one point.
pub fn d_terms(p: f64, p_x: f64, p_y: f64, f: f64, f_x: f64) -> DTerms {
    let phi_y = p_y / f;
    let phi_x = p_x / f - p * f_x / (f * f);
    DTerms {
        p0: -f_x / (phi_y * f * f),
        py: -phi_x / (phi_y * phi_y * f),
        px: 1.0 / (phi_y * f),
        f0: 2.0 * p * f_x / (phi_y * f.powi(3)) - p_x / (phi_y * f * f) + p_y * phi_x / (phi_y * phi_y * f * f),
        fx: -p / (phi_y * f * f),
    }
}

/// Tensor trapezoid nodes and weights over the weight support.
fn support_nodes(weight: &WeightSpec, per_axis: usize) -> Vec<(Vec<f64>, f64)> {
    let mut points = vec![(Vec::new(), 1.0)];
    for &(a, b) in weight.support() {
        let nodes = linspace(a, b, per_axis);
        let w = trapezoid_weights(a, b, per_axis);
        points = points
            .into_iter()
            .flat_map(|(p, pw): (Vec<f64>, f64)| {
                nodes.iter().zip(&w).map(move |(&v, &vw)| {
                    let mut q = p.clone();
                    q.push(v);
                    (q, pw * vw)
                })
            })
            .collect();
    }
    points
}

/// `∫ v(w)² D(w)² f_{Y,X}(y0, w) dw` by tensor trapezoid, where `integrand`
/// returns `(D, f_{Y,X})` or `None` for points outside the usable support.
pub fn weighted_d_integral<F>(weight: &WeightSpec, per_axis: usize, integrand: F) -> f64
where
    F: Fn(&[f64]) -> Option<(f64, f64)>,
{
    support_nodes(weight, per_axis)
        .iter()
        .map(|(w, q)| {
            let v = weight.eval(w);
            if v == 0.0 {
                return 0.0;
            }
            integrand(w).map_or(0.0, |(d, fyx)| q * v * v * d * d * fyx)
        })
        .sum()
}

/// Kernel plug-in version of `∫ v² D_{p,y}(y0, ·)² f_{Y,X}(y0, ·)`. Points
/// with a vanishing density or `Φ̂_y` contribute nothing.
pub fn plugin_d_py_integral(state: &SmootherState, y0_hat: f64, weight: &WeightSpec) -> f64 {
    let per_axis = if weight.support().len() == 1 { VARIANCE_NODES } else { 21 };
    weighted_d_integral(weight, per_axis, |w| {
        let slice = state.slice(w);
        if slice.f() <= DENSITY_FLOOR {
            return None;
        }
        let p = slice.partials(y0_hat).ok()?;
        if p.phi_y <= PHI_Y_FLOOR {
            return None;
        }
        let d = -p.phi_x / (p.phi_y * p.phi_y * slice.f());
        Some((d, slice.p_y(y0_hat)))
    })
}

/// Plug-in `σ²_{y0} = (∫K² / b²) ∫ v² D̂_{p,y}² f̂_{Y,X}`.
pub fn var_y0_plugin(state: &SmootherState, y0_hat: f64, b: f64, weight: &WeightSpec) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::DivisionByZero("variance of y0 needs a nonzero B".into()));
    }
    Ok(state.kernel().roughness() / (b * b) * plugin_d_py_integral(state, y0_hat, weight))
}

/// Plug-in `σ²_{B̃} = (∫K'²) ∫ v² D̂_{p,y}² f̂_{Y,X}`.
pub fn var_b_tilde_plugin(state: &SmootherState, y0_hat: f64, weight: &WeightSpec) -> f64 {
    state.kernel().derivative_roughness() * plugin_d_py_integral(state, y0_hat, weight)
}
