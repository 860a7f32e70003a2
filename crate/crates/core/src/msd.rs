//! Minimum-distance-from-independence estimation of B: candidate
//! transformations `𝔥_c = sign(ĥ₁)|ĥ₁|^c`, standardized residuals, the
//! empirical dependence functional `G_nMD`, its L² norm `Â`, and the scalar
//! minimization over `c`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::{LambdaCurve, WeightSpec};
use crate::numeric::{golden_section, linspace, quantile, trapezoid_weights, MonotoneCubic};
use crate::smoothers::{Dataset, SmootherState, DENSITY_FLOOR};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.75;
pub const DEFAULT_B_RANGE: (f64, f64) = (0.25, 4.0);
pub const DEFAULT_QUAD: usize = 64;
/// Candidate exponents scanned before the golden-section refinement.
pub const B_GRID_POINTS: usize = 64;
pub const B_TOL: f64 = 1e-4;
pub const DENOMINATOR_FLOOR: f64 = 1e-10;
/// Nodes of the tabulated ĥ₁ and of the tabulated quantile curves.
const H1_TABLE_POINTS: usize = 513;
const QUANTILE_TABLE_POINTS: usize = 129;
/// Exponents checked by the envelope conditions during region construction.
const ENVELOPE_C_POINTS: usize = 16;
const SHRINK_STEP: f64 = 0.05;
const MIN_BOX_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdConfig {
    pub tau: f64,
    pub beta: f64,
    pub b_range: (f64, f64),
    pub e_range: (f64, f64),
    pub m_x: (f64, f64),
    pub quad_x: usize,
    pub quad_e: usize,
}

impl Default for MsdConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            beta: DEFAULT_BETA,
            b_range: DEFAULT_B_RANGE,
            e_range: (0.0, 1.0),
            m_x: (0.0, 1.0),
            quad_x: DEFAULT_QUAD,
            quad_e: DEFAULT_QUAD,
        }
    }
}

impl MsdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau && self.tau < self.beta && self.beta < 1.0) {
            return Err(Error::InvalidInput(format!("need 0 < tau < beta < 1, got {} and {}", self.tau, self.beta)));
        }
        let (b1, b2) = self.b_range;
        if !(0.0 < b1 && b1 < b2 && b2.is_finite()) {
            return Err(Error::InvalidInput(format!("need 0 < B1 < B2, got [{b1}, {b2}]")));
        }
        for (name, (a, b)) in [("e_range", self.e_range), ("m_x", self.m_x)] {
            if !(a < b && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} [{a}, {b}] is empty")));
            }
        }
        if self.quad_x < 2 || self.quad_e < 2 {
            return Err(Error::InvalidInput("quadrature grids need at least two nodes".into()));
        }
        Ok(())
    }

    pub fn x_grid(&self) -> Vec<f64> {
        linspace(self.m_x.0, self.m_x.1, self.quad_x)
    }

    pub fn e_grid(&self) -> Vec<f64> {
        linspace(self.e_range.0, self.e_range.1, self.quad_e)
    }

    fn contains_x(&self, x: f64) -> bool {
        x >= self.m_x.0 && x <= self.m_x.1
    }
}

type Curve = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// The nuisance triple `(ĥ₁, F̂⁻¹(τ|·), F̂⁻¹(β|·))`.
pub struct CandidateS {
    h1: Curve,
    domain: (f64, f64),
    q_tau: Curve,
    q_beta: Curve,
}

impl std::fmt::Debug for CandidateS {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CandidateS").field("domain", &self.domain).finish_non_exhaustive()
    }
}

impl CandidateS {
    pub fn new<H, Q, R>(h1: H, domain: (f64, f64), q_tau: Q, q_beta: R) -> Result<Self>
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
        Q: Fn(f64) -> f64 + Send + Sync + 'static,
        R: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(domain.0 < domain.1) {
            return Err(Error::InvalidInput(format!("h1 domain [{}, {}] is empty", domain.0, domain.1)));
        }
        Ok(Self {
            h1: Box::new(h1),
            domain,
            q_tau: Box::new(q_tau),
            q_beta: Box::new(q_beta),
        })
    }

    /// Plug-in triple: ĥ₁ tabulated on `domain` from λ̂ (pinned to 1 at `y1`)
    /// and conditional quantile curves tabulated over the regressor range.
    pub fn from_estimates(state: &SmootherState, curve: &LambdaCurve, y1: f64, domain: (f64, f64), tau: f64, beta: f64) -> Result<Self> {
        if state.data().d() != 1 {
            return Err(Error::UnsupportedDimension(state.data().d()));
        }
        if !(domain.0 < domain.1) {
            return Err(Error::InvalidInput(format!("h1 domain [{}, {}] is empty", domain.0, domain.1)));
        }
        let nodes = linspace(domain.0, domain.1, H1_TABLE_POINTS);
        let mut acc = curve.integral_inv(y1, nodes[0])?;
        let mut values = vec![(-acc).exp()];
        for w in nodes.windows(2) {
            acc += curve.integral_inv_panels(w[0], w[1], 8)?;
            values.push((-acc).exp());
        }
        let h1 = MonotoneCubic::new(nodes, values)?;

        let (x_lo, x_hi) = crate::smoothers::min_max(&state.data().x_column(0));
        let xs = linspace(x_lo, x_hi, QUANTILE_TABLE_POINTS);
        let table = |p: f64| -> Result<MonotoneCubic> {
            let qs = xs.par_iter().map(|&x| state.cond_quantile(p, &[x])).collect::<Result<Vec<f64>>>()?;
            MonotoneCubic::new(xs.clone(), qs)
        };
        let q_tau = table(tau)?;
        let q_beta = table(beta)?;
        Ok(Self {
            h1: Box::new(move |y| h1.eval(y)),
            domain,
            q_tau: Box::new(move |x| q_tau.eval(x)),
            q_beta: Box::new(move |x| q_beta.eval(x)),
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn h1(&self, y: f64) -> f64 {
        (self.h1)(y)
    }

    pub fn q_tau(&self, x: f64) -> f64 {
        (self.q_tau)(x)
    }

    pub fn q_beta(&self, x: f64) -> f64 {
        (self.q_beta)(x)
    }

    fn clamp(&self, y: f64) -> (f64, bool) {
        let c = y.clamp(self.domain.0, self.domain.1);
        (c, c != y)
    }
}

/// `exp(-c ∫_{y1}^y 1/λ̂)`.
pub fn h_c_hat(curve: &LambdaCurve, c: f64, y1: f64, y: f64) -> Result<f64> {
    if c == 0.0 {
        return Ok(1.0);
    }
    Ok((-c * curve.integral_inv(y1, y)?).exp())
}

fn signed_power(v: f64, c: f64) -> f64 {
    v.signum() * v.abs().powf(c)
}

/// ĥ₁ evaluated at each in-region observation and its two quantiles; these
/// do not depend on `c`.
#[derive(Debug, Clone)]
pub struct Prepared {
    x: Vec<f64>,
    at_y: Vec<f64>,
    at_tau: Vec<f64>,
    at_beta: Vec<f64>,
    /// Responses moved onto the edge of the ĥ₁ domain.
    pub clamped: usize,
    /// Quantile values moved onto the edge of the ĥ₁ domain.
    pub clamped_quantiles: usize,
}

impl Prepared {
    pub fn new(cand: &CandidateS, data: &Dataset, cfg: &MsdConfig) -> Result<Self> {
        if data.d() != 1 {
            return Err(Error::UnsupportedDimension(data.d()));
        }
        let mut p = Prepared {
            x: Vec::new(),
            at_y: Vec::new(),
            at_tau: Vec::new(),
            at_beta: Vec::new(),
            clamped: 0,
            clamped_quantiles: 0,
        };
        for (i, &y) in data.y().iter().enumerate() {
            let x = data.x_row(i)[0];
            if !cfg.contains_x(x) {
                continue;
            }
            let (yc, moved) = cand.clamp(y);
            p.clamped += moved as usize;
            let (qt, mt) = cand.clamp(cand.q_tau(x));
            let (qb, mb) = cand.clamp(cand.q_beta(x));
            p.clamped_quantiles += mt as usize + mb as usize;
            p.x.push(x);
            p.at_y.push(cand.h1(yc));
            p.at_tau.push(cand.h1(qt));
            p.at_beta.push(cand.h1(qb));
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `(x_i, ε̂_{c,i})` for every in-region observation.
    pub fn residuals(&self, c: f64) -> Result<Vec<(f64, f64)>> {
        (0..self.len())
            .map(|i| {
                let a = signed_power(self.at_tau[i], c);
                let b = signed_power(self.at_beta[i], c);
                let denom = b - a;
                if denom.abs() < DENOMINATOR_FLOOR {
                    return Err(Error::DegenerateDenominator { index: i });
                }
                Ok((self.x[i], (signed_power(self.at_y[i], c) - a) / denom))
            })
            .collect()
    }
}

/// Residuals of the observations with `X_i ∈ M_X`.
pub fn residuals(cand: &CandidateS, c: f64, data: &Dataset, cfg: &MsdConfig) -> Result<Vec<(f64, f64)>> {
    Prepared::new(cand, data, cfg)?.residuals(c)
}

/// `G(x, e) = P̂(X≤x, ε̂≤e) - P̂(X≤x) P̂(ε̂≤e)` over the in-region sample,
/// as a matrix with one row per `x_grid` node. Both grids must be ascending.
pub fn g_nmd(residuals: &[(f64, f64)], x_grid: &[f64], e_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    if residuals.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let n = residuals.len() as f64;
    let mut sorted = residuals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // counts[k]: observations seen so far whose residual first fits under e_grid[k]
    let bucket = |e: f64| e_grid.partition_point(|&g| g < e);
    let mut marginal_e = vec![0usize; e_grid.len() + 1];
    for &(_, e) in &sorted {
        marginal_e[bucket(e)] += 1;
    }
    let marginal_cdf = cumulate(&marginal_e, e_grid.len());
    let mut joint = vec![0usize; e_grid.len() + 1];
    let mut next = 0;
    let mut out = Vec::with_capacity(x_grid.len());
    for &xg in x_grid {
        while next < sorted.len() && sorted[next].0 <= xg {
            joint[bucket(sorted[next].1)] += 1;
            next += 1;
        }
        let joint_cdf = cumulate(&joint, e_grid.len());
        let px = next as f64 / n;
        out.push(
            joint_cdf
                .iter()
                .zip(&marginal_cdf)
                .map(|(&j, &m)| j as f64 / n - px * (m as f64 / n))
                .collect(),
        );
    }
    Ok(out)
}

fn cumulate(counts: &[usize], len: usize) -> Vec<usize> {
    let mut acc = 0;
    counts[..len]
        .iter()
        .map(|&k| {
            acc += k;
            acc
        })
        .collect()
}

/// `‖G‖₂` over `M_X × [e_a, e_b]` by the 2-D trapezoid rule.
pub fn a_hat(g: &[Vec<f64>], cfg: &MsdConfig) -> f64 {
    let wx = trapezoid_weights(cfg.m_x.0, cfg.m_x.1, cfg.quad_x);
    let we = trapezoid_weights(cfg.e_range.0, cfg.e_range.1, cfg.quad_e);
    let s: f64 = g
        .iter()
        .zip(&wx)
        .map(|(row, &a)| a * row.iter().zip(&we).map(|(&v, &b)| b * v * v).sum::<f64>())
        .sum();
    s.max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdEstimate {
    pub b_hat: f64,
    pub a_min: f64,
    pub grid_c: Vec<f64>,
    /// `Â` on the scan grid; `None` where the residuals were degenerate.
    pub grid_a: Vec<Option<f64>>,
    pub in_region: usize,
    pub clamped: usize,
}

fn criterion(prep: &Prepared, c: f64, cfg: &MsdConfig, xg: &[f64], eg: &[f64]) -> Result<f64> {
    let r = prep.residuals(c)?;
    Ok(a_hat(&g_nmd(&r, xg, eg)?, cfg))
}

/// B̂ = argmin over `[B1, B2]` of `Â(c)`: grid scan, then golden-section
/// refinement around the best grid point. Ties go to the smaller `c`.
pub fn estimate_b_msd(cand: &CandidateS, data: &Dataset, cfg: &MsdConfig) -> Result<MsdEstimate> {
    if data.d() != 1 {
        return Err(Error::UnsupportedDimension(data.d()));
    }
    cfg.validate()?;
    let prep = Prepared::new(cand, data, cfg)?;
    if prep.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let xg = cfg.x_grid();
    let eg = cfg.e_grid();
    let grid_c = linspace(cfg.b_range.0, cfg.b_range.1, B_GRID_POINTS);
    let grid_a: Vec<Option<f64>> = grid_c
        .par_iter()
        .map(|&c| criterion(&prep, c, cfg, &xg, &eg).ok())
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, a) in grid_a.iter().enumerate() {
        if let Some(a) = *a {
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((k, a));
            }
        }
    }
    let (k, a_grid) = best.ok_or(Error::AllDegenerate)?;
    let lo = grid_c[k.saturating_sub(1)];
    let hi = grid_c[(k + 1).min(grid_c.len() - 1)];
    let (c_gs, a_gs) = golden_section(
        |c| criterion(&prep, c, cfg, &xg, &eg).unwrap_or(f64::INFINITY),
        lo,
        hi,
        B_TOL,
    );
    let (b_hat, a_min) = if a_gs < a_grid || (a_gs == a_grid && c_gs < grid_c[k]) {
        (c_gs, a_gs)
    } else {
        (grid_c[k], a_grid)
    };
    Ok(MsdEstimate {
        b_hat,
        a_min,
        grid_c,
        grid_a,
        in_region: prep.len(),
        clamped: prep.clamped,
    })
}

/// `f̂ > DENSITY_FLOOR` on the region grid and the region inside the weight support.
pub fn check_m1(state: &SmootherState, weight: &WeightSpec, cfg: &MsdConfig) -> bool {
    let (a, b) = weight.support()[0];
    cfg.m_x.0 >= a && cfg.m_x.1 <= b && cfg.x_grid().iter().all(|&x| state.f_hat(&[x]) > DENSITY_FLOOR)
}

/// Both quantile curves strictly inside the ĥ₁ domain on the region grid.
pub fn check_m3(cand: &CandidateS, cfg: &MsdConfig) -> bool {
    let (za, zb) = cand.domain;
    cfg.x_grid().iter().all(|&x| {
        let (qt, qb) = (cand.q_tau(x), cand.q_beta(x));
        qt > za && qt < zb && qb > za && qb < zb
    })
}

/// Residual values of the domain edges: the open interval of `e` for which
/// `𝔥_c(q_τ) + e (𝔥_c(q_β) - 𝔥_c(q_τ))` stays inside `(𝔥_c(z_a), 𝔥_c(z_b))`
/// at every `(x, c)` on the check grid.
pub fn envelope_interval(cand: &CandidateS, cfg: &MsdConfig) -> Option<(f64, f64)> {
    let (za, zb) = cand.domain;
    let (ha, hb) = (cand.h1(za), cand.h1(zb));
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in linspace(cfg.b_range.0, cfg.b_range.1, ENVELOPE_C_POINTS) {
        for x in cfg.x_grid() {
            let a = signed_power(cand.h1(cand.q_tau(x)), c);
            let b = signed_power(cand.h1(cand.q_beta(x)), c);
            let d = b - a;
            if !(d.abs() >= DENOMINATOR_FLOOR) {
                return None;
            }
            let e1 = (signed_power(ha, c) - a) / d;
            let e2 = (signed_power(hb, c) - a) / d;
            lo = lo.max(e1.min(e2));
            hi = hi.min(e1.max(e2));
        }
    }
    (lo < hi).then_some((lo, hi))
}

/// The sup/inf envelope conditions evaluated on the `(x, e, c)` product grid.
pub fn check_m4_m5(cand: &CandidateS, cfg: &MsdConfig) -> bool {
    let (za, zb) = cand.domain;
    let (ha, hb) = (cand.h1(za), cand.h1(zb));
    let es = cfg.e_grid();
    linspace(cfg.b_range.0, cfg.b_range.1, ENVELOPE_C_POINTS).into_iter().all(|c| {
        let (lo, hi) = (signed_power(ha, c), signed_power(hb, c));
        cfg.x_grid().iter().all(|&x| {
            let a = signed_power(cand.h1(cand.q_tau(x)), c);
            let b = signed_power(cand.h1(cand.q_beta(x)), c);
            es.iter().all(|&e| {
                let v = a + e * (b - a);
                v > lo && v < hi
            })
        })
    })
}

/// Shrinks the inner-decile box of the regressor until the region checks
/// pass, and sets `e_range` to the central 80% of the residuals at the
/// midpoint of `b_range`, intersected with the envelope interval.
pub fn construct_m_x(state: &SmootherState, cand: &CandidateS, weight: &WeightSpec, draft: &MsdConfig) -> Result<MsdConfig> {
    let data = state.data();
    if data.d() != 1 {
        return Err(Error::UnsupportedDimension(data.d()));
    }
    let xs = data.x_column(0);
    let (x_min, x_max) = crate::smoothers::min_max(&xs);
    let (s_lo, s_hi) = weight.support()[0];
    let mut box_lo = quantile(&xs, 0.1).max(s_lo);
    let mut box_hi = quantile(&xs, 0.9).min(s_hi);
    let floor = MIN_BOX_FRACTION * (x_max - x_min);
    let c_mid = 0.5 * (draft.b_range.0 + draft.b_range.1);
    loop {
        if !(box_hi - box_lo >= floor) || !(box_hi > box_lo) {
            return Err(Error::CannotSatisfy(format!(
                "region shrank below {MIN_BOX_FRACTION} of the regressor range without passing the checks"
            )));
        }
        let mut cfg = MsdConfig {
            m_x: (box_lo, box_hi),
            ..draft.clone()
        };
        let prep = Prepared::new(cand, data, &cfg)?;
        if prep.is_empty() {
            return Err(Error::CannotSatisfy("no observation inside the candidate region".into()));
        }
        if check_m1(state, weight, &cfg) && check_m3(cand, &cfg) {
            if let (Ok(r), Some((lo, hi))) = (prep.residuals(c_mid), envelope_interval(cand, &cfg)) {
                let es: Vec<f64> = r.iter().map(|p| p.1).collect();
                let margin = 1e-6 * (hi - lo);
                let e_a = quantile(&es, 0.1).max(lo + margin);
                let e_b = quantile(&es, 0.9).min(hi - margin);
                if e_a < e_b {
                    cfg.e_range = (e_a, e_b);
                    if check_m4_m5(cand, &cfg) {
                        return Ok(cfg);
                    }
                }
            }
        }
        let step = SHRINK_STEP * (box_hi - box_lo);
        box_lo += step;
        box_hi -= step;
    }
}
