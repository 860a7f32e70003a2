//! The λ̂ functional: a weighted aggregate over regressor points of
//! `Φ̂_x(y, x) / Φ̂_y(y, x)`, tabulated on a `y`-grid and interpolated with a
//! monotone cubic. Provides evaluation, a central-difference derivative and
//! signed integrals of `1/λ̂`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, linspace, quantile_sorted, sorted_copy, trapezoid_weights, MonotoneCubic};
use crate::smoothers::{min_max, LocalSlice, SmootherState};

/// Regressor points whose `Φ̂_y` is at or below this floor are left out of the aggregate.
pub const PHI_Y_FLOOR: f64 = 1e-6;
pub const DEFAULT_N_X: usize = 100;
pub const DEFAULT_GRID_POINTS: usize = 256;
/// Minimum number of quadrature panels used for `∫ 1/λ̂`.
pub const MIN_INTEGRAL_PANELS: usize = 1024;
const GRID_QUANTILES: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    Indicator,
    /// Equals one in the interior and tapers to zero at the box edges through
    /// an infinitely differentiable transition over 10% of each side.
    SmoothBump,
}

/// Weight function `v` supported on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    support: Vec<(f64, f64)>,
    kind: WeightKind,
}

impl WeightSpec {
    pub fn new(support: Vec<(f64, f64)>, kind: WeightKind) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("weight support needs at least one coordinate".into()));
        }
        if let Some((a, b)) = support.iter().find(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput(format!("weight support interval [{a}, {b}] is empty")));
        }
        Ok(Self { support, kind })
    }

    /// Indicator of `[0, 1]^d`.
    pub fn unit_indicator(d: usize) -> Self {
        Self {
            support: vec![(0.0, 1.0); d],
            kind: WeightKind::Indicator,
        }
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(x)
            .map(|(&(a, b), &v)| {
                if v < a || v > b {
                    return 0.0;
                }
                match self.kind {
                    WeightKind::Indicator => 1.0,
                    WeightKind::SmoothBump => {
                        let width = 0.1 * (b - a);
                        smooth_step((v - a) / width) * smooth_step((b - v) / width)
                    }
                }
            })
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.support.iter().zip(x).all(|(&(a, b), &v)| v >= a && v <= b)
    }
}

/// C^∞ transition from 0 (t <= 0) to 1 (t >= 1).
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMode {
    /// Plain mean over `n_x` equidistant points between the smallest and the
    /// largest regressor observation.
    MeanOverPoints,
    /// Composite trapezoid over the weight support.
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOptions {
    pub n_x: usize,
    pub mode: AggregationMode,
    pub grid_points: usize,
    /// Points the grid must reach in addition to the inner 98% of `Y`.
    pub cover: Vec<f64>,
    pub on_degenerate: DegeneratePolicy,
}

/// What to do with a grid point at which every regressor point is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegeneratePolicy {
    Fail,
    /// Keep the longest run of valid grid points around the median of `Y`.
    Trim,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        Self {
            n_x: DEFAULT_N_X,
            mode: AggregationMode::MeanOverPoints,
            grid_points: DEFAULT_GRID_POINTS,
            cover: Vec::new(),
            on_degenerate: DegeneratePolicy::Fail,
        }
    }
}

/// Tabulated λ̂ with interpolation and integration machinery.
#[derive(Debug, Clone)]
pub struct LambdaCurve {
    interp: MonotoneCubic,
    h_y: f64,
    dropped: Vec<usize>,
    exclusion: Option<(f64, f64)>,
}

impl LambdaCurve {
    /// Wraps explicit grid values (used for analytic curves and tests).
    /// `h_y` sets the derivative step together with the grid spacing.
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>, h_y: f64) -> Result<Self> {
        let dropped = vec![0; grid.len()];
        Ok(Self {
            interp: MonotoneCubic::new(grid, values)?,
            h_y,
            dropped,
            exclusion: None,
        })
    }

    /// Tabulates a closed-form λ on `points` equidistant nodes.
    pub fn from_fn<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, points: usize, h_y: f64) -> Result<Self> {
        let grid = linspace(lo, hi, points);
        let values = grid.iter().map(|&y| f(y)).collect();
        Self::from_values(grid, values, h_y)
    }

    /// Marks `(lo, hi)` as a neighbourhood of the root that integrals may not cross.
    pub fn with_exclusion(mut self, lo: f64, hi: f64) -> Self {
        self.exclusion = Some((lo.min(hi), lo.max(hi)));
        self
    }

    pub fn exclusion(&self) -> Option<(f64, f64)> {
        self.exclusion
    }

    pub fn grid(&self) -> &[f64] {
        self.interp.nodes()
    }

    pub fn values(&self) -> &[f64] {
        self.interp.values()
    }

    /// Per grid point, how many regressor points were dropped from the aggregate.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn h_y(&self) -> f64 {
        self.h_y
    }

    pub fn range(&self) -> (f64, f64) {
        (self.interp.lo(), self.interp.hi())
    }

    pub fn spacing(&self) -> f64 {
        let (lo, hi) = self.range();
        (hi - lo) / (self.grid().len() - 1) as f64
    }

    fn check_range(&self, y: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if !(y >= lo && y <= hi) {
            return Err(Error::OutOfRange { value: y, lo, hi });
        }
        Ok(())
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        self.check_range(y)?;
        Ok(self.interp.eval(y))
    }

    /// Central difference with step `max(h_y / 2, grid spacing)`.
    pub fn derivative(&self, y: f64) -> Result<f64> {
        let step = (0.5 * self.h_y).max(self.spacing());
        self.check_range(y - step)?;
        self.check_range(y + step)?;
        Ok((self.interp.eval(y + step) - self.interp.eval(y - step)) / (2.0 * step))
    }

    /// Signed `∫_from^to 1/λ̂(u) du`.
    pub fn integral_inv(&self, from: f64, to: f64) -> Result<f64> {
        self.integral_inv_panels(from, to, MIN_INTEGRAL_PANELS)
    }

    pub(crate) fn integral_inv_panels(&self, from: f64, to: f64, min_panels: usize) -> Result<f64> {
        self.check_range(from)?;
        self.check_range(to)?;
        if from == to {
            return Ok(0.0);
        }
        let (a, b) = (from.min(to), from.max(to));
        if let Some((lo, hi)) = self.exclusion {
            if a < hi && b > lo {
                return Err(Error::SingularityInRange { from, to });
            }
        }
        let mut breaks = vec![a];
        breaks.extend(self.grid().iter().copied().filter(|&g| g > a && g < b));
        breaks.push(b);
        let sign = self.interp.eval(a).signum();
        for &p in &breaks {
            let v = self.interp.eval(p);
            if v == 0.0 || v.signum() != sign {
                return Err(Error::SingularityInRange { from, to });
            }
        }
        let total = b - a;
        let mut acc = 0.0;
        for w in breaks.windows(2) {
            let share = ((w[1] - w[0]) / total * min_panels as f64).ceil() as usize;
            acc += gauss_legendre(|u| 1.0 / self.interp.eval(u), w[0], w[1], share.max(1));
        }
        Ok(if from <= to { acc } else { -acc })
    }
}

/// Regressor evaluation points with their aggregation weights.
fn regressor_points(state: &SmootherState, weight: &WeightSpec, opts: &LambdaOptions) -> Vec<(Vec<f64>, f64)> {
    let data = state.data();
    let d = data.d();
    let per_axis = if d == 1 {
        opts.n_x
    } else {
        (opts.n_x as f64).powf(1.0 / d as f64).ceil() as usize
    };
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
        .map(|j| {
            let (lo, hi) = match opts.mode {
                AggregationMode::MeanOverPoints => min_max(&data.x_column(j)),
                AggregationMode::Trapezoid => weight.support()[j],
            };
            let nodes = linspace(lo, hi, per_axis);
            let w = match opts.mode {
                AggregationMode::MeanOverPoints => vec![1.0 / per_axis as f64; per_axis],
                AggregationMode::Trapezoid => trapezoid_weights(lo, hi, per_axis),
            };
            (nodes, w)
        })
        .collect();
    let mut points = vec![(Vec::with_capacity(d), 1.0)];
    for (nodes, w) in &axes {
        points = points
            .into_iter()
            .flat_map(|(p, pw)| {
                nodes.iter().zip(w).map(move |(&v, &vw)| {
                    let mut q = p.clone();
                    q.push(v);
                    (q, pw * vw)
                })
            })
            .collect();
    }
    points
}

struct Contributor<'a> {
    slice: LocalSlice<'a>,
    weight: f64,
    v: f64,
}

/// Builds λ̂ on a grid covering the inner 98% of the response (and any
/// `opts.cover` points).
pub fn build_lambda(state: &SmootherState, weight: &WeightSpec, opts: &LambdaOptions) -> Result<LambdaCurve> {
    if weight.support().len() != state.data().d() {
        return Err(Error::InvalidInput("weight support dimension differs from the regressor".into()));
    }
    if opts.n_x == 0 || opts.grid_points < 2 {
        return Err(Error::InvalidInput("need n_x >= 1 and at least two grid points".into()));
    }
    let sorted = sorted_copy(state.data().y());
    let mut lo = quantile_sorted(&sorted, GRID_QUANTILES.0);
    let mut hi = quantile_sorted(&sorted, GRID_QUANTILES.1);
    for &c in &opts.cover {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    if !(hi > lo) {
        return Err(Error::DegenerateSample("response quantile range is empty".into()));
    }
    let grid = linspace(lo, hi, opts.grid_points);

    let points = regressor_points(state, weight, opts);
    let positive_mass: f64 = points.iter().filter(|(x, _)| weight.eval(x) > 0.0).map(|(_, w)| w).sum();
    let contributors: Vec<Contributor<'_>> = points
        .iter()
        .filter_map(|(x, w)| {
            let v = weight.eval(x);
            (v > 0.0).then(|| Contributor {
                slice: state.slice(x),
                weight: *w,
                v,
            })
        })
        .collect();
    if contributors.is_empty() {
        return Err(Error::InvalidInput("no regressor evaluation point carries positive weight".into()));
    }

    let rows: Vec<Result<(f64, usize)>> = grid
        .par_iter()
        .map(|&y| {
            let mut num = 0.0;
            let mut mass = 0.0;
            let mut dropped = 0;
            for c in &contributors {
                match c.slice.partials(y) {
                    Ok(p) if p.phi_y > PHI_Y_FLOOR => {
                        num += c.weight * c.v * p.phi_x / p.phi_y;
                        mass += c.weight;
                    }
                    _ => dropped += 1,
                }
            }
            if mass == 0.0 {
                return Err(Error::AllPointsDegenerate { y });
            }
            Ok((num * positive_mass / mass, dropped))
        })
        .collect();
    let (grid, rows) = match opts.on_degenerate {
        DegeneratePolicy::Fail => (grid, rows.into_iter().collect::<Result<Vec<_>>>()?),
        DegeneratePolicy::Trim => {
            let median = quantile_sorted(&sorted, 0.5);
            let centre = grid.partition_point(|&g| g < median).min(grid.len() - 1);
            let first_bad = rows.iter().find_map(|r| r.as_ref().err().cloned());
            if rows[centre].is_err() {
                return Err(first_bad.unwrap_or(Error::AllPointsDegenerate { y: median }));
            }
            let mut a = centre;
            while a > 0 && rows[a - 1].is_ok() {
                a -= 1;
            }
            let mut b = centre;
            while b + 1 < rows.len() && rows[b + 1].is_ok() {
                b += 1;
            }
            if b == a {
                return Err(first_bad.unwrap_or(Error::AllPointsDegenerate { y: median }));
            }
            let kept = rows.into_iter().skip(a).take(b - a + 1).collect::<Result<Vec<_>>>()?;
            (grid[a..=b].to_vec(), kept)
        }
    };
    let (values, dropped): (Vec<f64>, Vec<usize>) = rows.into_iter().unzip();
    let mut curve = LambdaCurve::from_values(grid, values, state.bandwidths().h_y)?;
    curve.dropped = dropped;
    Ok(curve)
}
