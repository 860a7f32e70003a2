//! Kernel plug-in estimates of the regressor density, the joint density, the
//! integrated joint density `p̂(y, x) = n⁻¹ Σ 𝒦_{h_y}(y - Y_i) 𝐊_{h_x}(x - X_i)`,
//! their partial derivatives, and the conditional CDF `Φ̂ = p̂ / f̂` with its
//! partials and quantile inversion.
//!
//! Queries at a fixed regressor point share the `x`-kernel weights, so the
//! workhorse is [`LocalSlice`]: build it once per `x`, then evaluate any `y`.

pub mod bandwidth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numeric::linspace;

pub use bandwidth::{reference_bandwidth, robust_scale, select_h_x_reference, select_h_x_reference_for, select_h_y_cv, cv_criterion};

/// Regressor densities at or below this floor are treated as outside the support.
pub const DENSITY_FLOOR: f64 = 1e-8;
/// Convergence tolerance of quantile inversion, measured in `Φ̂`.
pub const QUANTILE_TOL: f64 = 1e-8;
/// Number of bracketing nodes scanned before bisection in quantile inversion.
pub const QUANTILE_SCAN_POINTS: usize = 512;

/// `n` paired observations `(Y_i, X_i)` with `X_i ∈ ℝ^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    d: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("regressor dimension must be at least 1".into()));
        }
        if y.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: y.len() });
        }
        if x.len() != y.len() * d {
            return Err(Error::InvalidInput(format!(
                "regressor matrix has {} entries, expected {} x {}",
                x.len(),
                y.len(),
                d
            )));
        }
        if let Some(i) = y.iter().chain(x.iter()).position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry at flat position {i}")));
        }
        Ok(Self { y, x, d })
    }

    pub fn univariate(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        Self::new(y, x, 1)
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged regressor rows".into()));
        }
        Self::new(y, rows.concat(), d)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x_column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.d + j]).collect()
    }

    pub fn y_range(&self) -> (f64, f64) {
        min_max(&self.y)
    }
}

pub fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h_y: f64,
    pub h_x: f64,
}

impl Bandwidths {
    pub fn new(h_y: f64, h_x: f64) -> Result<Self> {
        for (name, h) in [("h_y", h_y), ("h_x", h_x)] {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidInput(format!("bandwidth {name} must be positive and finite, got {h}")));
            }
        }
        Ok(Self { h_y, h_x })
    }
}

/// `(Φ̂, ∂Φ̂/∂y, ∂Φ̂/∂x_j)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPartials {
    pub phi: f64,
    pub phi_y: f64,
    pub phi_x: f64,
}

/// Immutable bundle of data, kernel and bandwidths exposing every kernel estimate.
#[derive(Debug, Clone)]
pub struct SmootherState {
    data: Dataset,
    kernel: KernelSpec,
    bw: Bandwidths,
    deriv_index: usize,
    // observation indices sorted by the first regressor coordinate
    order: Vec<usize>,
    sorted_x0: Vec<f64>,
}

impl SmootherState {
    /// `deriv_index` is the zero-based regressor coordinate that `f̂_x`, `p̂_x`
    /// and `Φ̂_x` differentiate along.
    pub fn new(data: Dataset, kernel: KernelSpec, bw: Bandwidths, deriv_index: usize) -> Result<Self> {
        if deriv_index >= data.d() {
            return Err(Error::InvalidInput(format!(
                "derivative index {deriv_index} out of bounds for d = {}",
                data.d()
            )));
        }
        let mut order: Vec<usize> = (0..data.n()).collect();
        order.sort_by(|&a, &b| data.x_row(a)[0].total_cmp(&data.x_row(b)[0]));
        let sorted_x0 = order.iter().map(|&i| data.x_row(i)[0]).collect();
        Ok(Self {
            data,
            kernel,
            bw,
            deriv_index,
            order,
            sorted_x0,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn bandwidths(&self) -> Bandwidths {
        self.bw
    }

    pub fn deriv_index(&self) -> usize {
        self.deriv_index
    }

    /// Collects the `x`-kernel weights of every observation that can contribute at `x`.
    pub fn slice(&self, x: &[f64]) -> LocalSlice<'_> {
        assert_eq!(x.len(), self.data.d(), "query point dimension mismatch");
        let n = self.data.n() as f64;
        let h = self.bw.h_x;
        let d = self.data.d() as i32;
        let scale = 1.0 / (n * h.powi(d));
        let scale_x = scale / h;
        let candidates: &[usize] = match self.kernel.support_radius() {
            Some(r) => {
                let lo = self.sorted_x0.partition_point(|&v| v <= x[0] - r * h);
                let hi = self.sorted_x0.partition_point(|&v| v < x[0] + r * h);
                &self.order[lo..hi]
            }
            None => &self.order,
        };
        let mut u = vec![0.0; x.len()];
        let mut entries = Vec::with_capacity(candidates.len());
        let mut f = 0.0;
        let mut f_x = 0.0;
        for &i in candidates {
            for (k, (uk, xi)) in u.iter_mut().zip(self.data.x_row(i)).enumerate() {
                *uk = (x[k] - xi) / h;
            }
            let w = self.kernel.eval_product(&u) * scale;
            let wx = self.kernel.eval_product_partial(&u, self.deriv_index) * scale_x;
            if w == 0.0 && wx == 0.0 {
                continue;
            }
            f += w;
            f_x += wx;
            entries.push(SliceEntry { y: self.data.y[i], w, wx });
        }
        LocalSlice {
            kernel: &self.kernel,
            h_y: self.bw.h_y,
            f,
            f_x,
            entries,
        }
    }

    pub fn f_hat(&self, x: &[f64]) -> f64 {
        self.slice(x).f
    }

    pub fn f_x_hat(&self, x: &[f64]) -> f64 {
        self.slice(x).f_x
    }

    pub fn p_hat(&self, y: f64, x: &[f64]) -> f64 {
        self.slice(x).p(y)
    }

    pub fn p_y_hat(&self, y: f64, x: &[f64]) -> f64 {
        self.slice(x).p_y(y)
    }

    pub fn p_x_hat(&self, y: f64, x: &[f64]) -> f64 {
        self.slice(x).p_x(y)
    }

    pub fn phi_partials(&self, y: f64, x: &[f64]) -> Result<PhiPartials> {
        self.slice(x).partials(y)
    }

    /// Smallest `y` with `Φ̂(y, x) >= tau`, located by a scan over
    /// `[min Y - h_y, max Y + h_y]` followed by bisection.
    pub fn cond_quantile(&self, tau: f64, x: &[f64]) -> Result<f64> {
        let (lo, hi) = self.data.y_range();
        self.slice(x).quantile(tau, lo - self.bw.h_y, hi + self.bw.h_y)
    }
}

#[derive(Debug, Clone, Copy)]
struct SliceEntry {
    y: f64,
    w: f64,
    wx: f64,
}

/// Kernel weights of all observations near one regressor point.
#[derive(Debug, Clone)]
pub struct LocalSlice<'a> {
    kernel: &'a KernelSpec,
    h_y: f64,
    f: f64,
    f_x: f64,
    entries: Vec<SliceEntry>,
}

impl LocalSlice<'_> {
    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn f_x(&self) -> f64 {
        self.f_x
    }

    pub fn p(&self, y: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.w * self.kernel.eval_int((y - e.y) / self.h_y))
            .sum()
    }

    /// Joint density estimate `f̂_{Y,X}(y, x)`.
    pub fn p_y(&self, y: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.w * self.kernel.eval((y - e.y) / self.h_y))
            .sum::<f64>()
            / self.h_y
    }

    pub fn p_x(&self, y: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.wx * self.kernel.eval_int((y - e.y) / self.h_y))
            .sum()
    }

    fn check_density(&self) -> Result<()> {
        if self.f <= DENSITY_FLOOR {
            return Err(Error::DensityTooSmall {
                density: self.f,
                floor: DENSITY_FLOOR,
            });
        }
        Ok(())
    }

    pub fn phi(&self, y: f64) -> Result<f64> {
        self.check_density()?;
        Ok(self.p(y) / self.f)
    }

    pub fn partials(&self, y: f64) -> Result<PhiPartials> {
        self.check_density()?;
        let (mut p, mut p_y, mut p_x) = (0.0, 0.0, 0.0);
        for e in &self.entries {
            let u = (y - e.y) / self.h_y;
            let cum = self.kernel.eval_int(u);
            p += e.w * cum;
            p_x += e.wx * cum;
            p_y += e.w * self.kernel.eval(u);
        }
        p_y /= self.h_y;
        let f = self.f;
        Ok(PhiPartials {
            phi: p / f,
            phi_y: p_y / f,
            phi_x: p_x / f - p * self.f_x / (f * f),
        })
    }

    /// Conditional quantile with the search restricted to `[lo, hi]`.
    pub fn quantile(&self, tau: f64, lo: f64, hi: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("quantile level must lie in (0, 1), got {tau}")));
        }
        self.check_density()?;
        let nodes = linspace(lo, hi, QUANTILE_SCAN_POINTS);
        let mut prev = nodes[0];
        if self.p(prev) / self.f >= tau {
            return Ok(prev);
        }
        for &node in &nodes[1..] {
            let value = self.p(node) / self.f;
            if value >= tau {
                return Ok(self.refine_quantile(tau, prev, node, value));
            }
            prev = node;
        }
        Err(Error::QuantileNotBracketed { tau })
    }

    fn refine_quantile(&self, tau: f64, mut below: f64, mut above: f64, mut above_value: f64) -> f64 {
        for _ in 0..200 {
            if above_value - tau <= QUANTILE_TOL {
                break;
            }
            let mid = 0.5 * (below + above);
            if mid <= below || mid >= above {
                break;
            }
            let v = self.p(mid) / self.f;
            if v >= tau {
                above = mid;
                above_value = v;
            } else {
                below = mid;
            }
        }
        above
    }
}
