//! Smoothing kernels `K`, their derivatives `K'`, antiderivatives
//! `𝒦(u) = ∫_{-∞}^u K`, and the product kernel used for multivariate regressors.
//!
//! Compact kernels are stored as polynomials on `[-1, 1]`, so all three
//! quantities are evaluated in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Epanechnikov,
    Gaussian,
    /// Epanechnikov multiplied by an even polynomial so that the first
    /// `m - 1` moments vanish.
    HigherOrder(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    // Ascending coefficients of K, its derivative and its antiderivative on
    // [-1, 1]; empty for the Gaussian kernel.
    #[serde(skip)]
    density: Vec<f64>,
    #[serde(skip)]
    slope: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::epanechnikov()
    }
}

impl KernelSpec {
    pub fn epanechnikov() -> Self {
        Self::from_polynomial(KernelFamily::Epanechnikov, vec![0.75, 0.0, -0.75])
    }

    pub fn gaussian() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            density: Vec::new(),
            slope: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    /// Kernel of even order `m >= 4` built as `P(u) * 0.75 (1 - u^2)` with `P`
    /// an even polynomial of degree `m - 2`.
    pub fn higher_order(m: u32) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "higher-order kernel needs an even order >= 4, got {m}"
            )));
        }
        let terms = (m / 2) as usize;
        // moments of the Epanechnikov kernel: ∫u^{2i} K = 3 / ((2i+1)(2i+3))
        let moment = |i: usize| 3.0 / (((2 * i + 1) * (2 * i + 3)) as f64);
        let mut system: Vec<Vec<f64>> = (0..terms)
            .map(|j| {
                let mut row: Vec<f64> = (0..terms).map(|k| moment(j + k)).collect();
                row.push(if j == 0 { 1.0 } else { 0.0 });
                row
            })
            .collect();
        let coef = solve_dense(&mut system)?;
        let mut p = vec![0.0; 2 * terms - 1];
        for (k, c) in coef.iter().enumerate() {
            p[2 * k] = *c;
        }
        let density = poly_mul(&p, &[0.75, 0.0, -0.75]);
        Ok(Self::from_polynomial(KernelFamily::HigherOrder(m), density))
    }

    pub fn from_family(family: KernelFamily) -> Result<Self> {
        match family {
            KernelFamily::Epanechnikov => Ok(Self::epanechnikov()),
            KernelFamily::Gaussian => Ok(Self::gaussian()),
            KernelFamily::HigherOrder(m) => Self::higher_order(m),
        }
    }

    fn from_polynomial(family: KernelFamily, density: Vec<f64>) -> Self {
        let slope = poly_derivative(&density);
        let mut cumulative = poly_antiderivative(&density);
        let offset = poly_eval(&cumulative, -1.0);
        cumulative[0] -= offset;
        Self {
            family,
            density,
            slope,
            cumulative,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Moment order `m`: the first nonvanishing moment beyond the zeroth.
    pub fn order(&self) -> u32 {
        match self.family {
            KernelFamily::Epanechnikov | KernelFamily::Gaussian => 2,
            KernelFamily::HigherOrder(m) => m,
        }
    }

    /// Half-width of the support, `None` for unbounded kernels.
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Gaussian => None,
            _ => Some(1.0),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => gaussian_pdf(u),
            _ if u.abs() >= 1.0 => 0.0,
            _ => poly_eval(&self.density, u),
        }
    }

    pub fn eval_prime(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => -u * gaussian_pdf(u),
            _ if u.abs() >= 1.0 => 0.0,
            _ => poly_eval(&self.slope, u),
        }
    }

    /// `𝒦(u) = ∫_{-∞}^u K(t) dt`.
    pub fn eval_int(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 0.5 * (1.0 + statrs::function::erf::erf(u / std::f64::consts::SQRT_2)),
            _ if u <= -1.0 => 0.0,
            _ if u >= 1.0 => 1.0,
            _ => poly_eval(&self.cumulative, u),
        }
    }

    /// Product kernel `Π_j K(u_j)`; the empty product is one.
    pub fn eval_product(&self, u: &[f64]) -> f64 {
        u.iter().map(|&v| self.eval(v)).product()
    }

    /// `∂/∂u_j Π_k K(u_k) = K'(u_j) Π_{k≠j} K(u_k)`.
    pub fn eval_product_partial(&self, u: &[f64], j: usize) -> f64 {
        u.iter()
            .enumerate()
            .map(|(k, &v)| if k == j { self.eval_prime(v) } else { self.eval(v) })
            .product()
    }

    /// `∫ K(u)^2 du`.
    pub fn roughness(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 0.5 / std::f64::consts::PI.sqrt(),
            _ => poly_integral_pm1(&poly_mul(&self.density, &self.density)),
        }
    }

    /// `∫ u^2 K(u) du`.
    pub fn second_moment(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0,
            _ => poly_integral_pm1(&poly_mul(&self.density, &[0.0, 0.0, 1.0])),
        }
    }

    /// Canonical bandwidth `(R(K) / μ₂(K)^2)^{1/5}`; `None` when `μ₂` vanishes.
    pub fn canonical_scale(&self) -> Option<f64> {
        let mu2 = self.second_moment();
        (self.order() == 2 && mu2 > 0.0).then(|| (self.roughness() / (mu2 * mu2)).powf(0.2))
    }

    /// `∫ K'(u)^2 du`.
    pub fn derivative_roughness(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 0.25 / std::f64::consts::PI.sqrt(),
            _ => poly_integral_pm1(&poly_mul(&self.slope, &self.slope)),
        }
    }

    /// Self-convolution `(K * K)(u) = ∫ K(t) K(u - t) dt`.
    pub fn self_convolution(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => gaussian_pdf(u / std::f64::consts::SQRT_2) / std::f64::consts::SQRT_2,
            KernelFamily::Epanechnikov => {
                let a = u.abs();
                if a >= 2.0 {
                    0.0
                } else {
                    3.0 / 160.0 * (2.0 - a).powi(3) * (a * a + 6.0 * a + 4.0)
                }
            }
            KernelFamily::HigherOrder(_) => {
                if u.abs() >= 2.0 {
                    return 0.0;
                }
                let lo = (-1.0f64).max(u - 1.0);
                let hi = 1.0f64.min(u + 1.0);
                gauss_legendre(|t| self.eval(t) * self.eval(u - t), lo, hi, 8)
            }
        }
    }
}

fn gaussian_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn poly_eval(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * u + a)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &a)| a * k as f64).collect()
}

fn poly_antiderivative(c: &[f64]) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(c.iter().enumerate().map(|(k, &a)| a / (k + 1) as f64))
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_integral_pm1(c: &[f64]) -> f64 {
    let anti = poly_antiderivative(c);
    poly_eval(&anti, 1.0) - poly_eval(&anti, -1.0)
}

/// Gaussian elimination with partial pivoting on an augmented `k × (k+1)` system.
fn solve_dense(m: &mut [Vec<f64>]) -> Result<Vec<f64>> {
    let k = m.len();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if m[pivot][col].abs() < 1e-300 {
            return Err(Error::InvalidInput("singular moment system".into()));
        }
        m.swap(col, pivot);
        for row in col + 1..k {
            let factor = m[row][col] / m[col][col];
            for c in col..=k {
                m[row][c] -= factor * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let tail: f64 = (row + 1..k).map(|c| m[row][c] * x[c]).sum();
        x[row] = (m[row][k] - tail) / m[row][row];
    }
    Ok(x)
}
