//! The linearised transformation estimators ĥ and h̃: exponentiated
//! integrals of 1/λ̂ on either side of ŷ0, joined through ŷ0 by linear ramps.

use serde::{Deserialize, Serialize};

use crate::anchors::{estimate_alpha2, ComponentEstimates};
use crate::error::{Error, Result};
use crate::lambda::LambdaCurve;
use crate::numeric::{linspace, trapezoid};

/// Gauss–Legendre panels per cached cell and per partial cell.
const CELL_PANELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BChoice {
    /// Use B̃ from the component estimates (h̃).
    UseTilde,
    /// Use an externally supplied value such as B̂ (ĥ).
    UseHat(f64),
}

/// Cumulative `∫_anchor^p 1/λ̂` at sorted points `p` covering one branch.
/// Entries beyond a zero of λ̂ (seen from the anchor) are `None`.
#[derive(Debug, Clone)]
struct BranchCache {
    anchor: f64,
    points: Vec<f64>,
    cum: Vec<Option<f64>>,
}

impl BranchCache {
    fn new(curve: &LambdaCurve, anchor: f64, lo: f64, hi: f64) -> Self {
        let mut points = vec![lo, anchor, hi];
        points.extend(curve.grid().iter().copied().filter(|&g| g > lo && g < hi));
        points.sort_by(f64::total_cmp);
        points.dedup();
        let k0 = points.iter().position(|&p| p == anchor).unwrap_or(0);
        let mut cum = vec![None; points.len()];
        cum[k0] = Some(0.0);
        for k in k0 + 1..points.len() {
            cum[k] = cum[k - 1].and_then(|c| {
                curve
                    .integral_inv_panels(points[k - 1], points[k], CELL_PANELS)
                    .ok()
                    .map(|v| c + v)
            });
        }
        for k in (0..k0).rev() {
            cum[k] = cum[k + 1].and_then(|c| {
                curve
                    .integral_inv_panels(points[k + 1], points[k], CELL_PANELS)
                    .ok()
                    .map(|v| c + v)
            });
        }
        Self { anchor, points, cum }
    }

    /// `∫_anchor^y 1/λ̂` for `y` inside the cached range.
    fn integral(&self, curve: &LambdaCurve, y: f64) -> Result<f64> {
        if y == self.anchor {
            return Ok(0.0);
        }
        let k = self.points.partition_point(|&p| p <= y).clamp(1, self.points.len() - 1) - 1;
        // start from the cell end that lies between the anchor and y
        let base = if y > self.anchor { k } else { k + 1 };
        let start = self.points[base];
        match self.cum[base] {
            Some(c) => Ok(c + curve.integral_inv_panels(start, y, CELL_PANELS)?),
            None => Err(Error::SingularityInRange { from: self.anchor, to: y }),
        }
    }
}

/// Assembled piecewise transformation estimate.
#[derive(Debug, Clone)]
pub struct TransformCurve {
    curve: LambdaCurve,
    y0_hat: f64,
    b: f64,
    alpha2: f64,
    t_n: f64,
    y1: f64,
    y2: f64,
    upper: BranchCache,
    lower: BranchCache,
    upper_edge: f64,
    lower_edge: f64,
}

impl TransformCurve {
    pub fn y0_hat(&self) -> f64 {
        self.y0_hat
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn t_n(&self) -> f64 {
        self.t_n
    }

    pub fn anchors(&self) -> (f64, f64) {
        (self.y1, self.y2)
    }

    pub fn curve(&self) -> &LambdaCurve {
        &self.curve
    }

    pub fn range(&self) -> (f64, f64) {
        self.curve.range()
    }

    fn upper_branch(&self, y: f64) -> Result<f64> {
        Ok((-self.b * self.upper.integral(&self.curve, y)?).exp())
    }

    fn lower_branch(&self, y: f64) -> Result<f64> {
        Ok(self.alpha2 * (-self.b * self.lower.integral(&self.curve, y)?).exp())
    }
}

/// Builds h̃ (with B̃) or ĥ (with a supplied b). The lower-branch constant is
/// recomputed from the curve with the chosen b.
pub fn build_transform(
    curve: &LambdaCurve,
    components: &ComponentEstimates,
    b_choice: BChoice,
    y1: f64,
    y2: f64,
) -> Result<TransformCurve> {
    let y0 = components.y0_hat;
    let t_n = components.t_n;
    let b = match b_choice {
        BChoice::UseTilde => components.b_tilde,
        BChoice::UseHat(b) => b,
    };
    if !b.is_finite() {
        return Err(Error::BadAnchors(format!("b must be finite, got {b}")));
    }
    let (lo, hi) = curve.range();
    if !(lo <= y2 && y1 <= hi) {
        return Err(Error::BadAnchors(format!("anchors y2 = {y2}, y1 = {y1} outside the curve range [{lo}, {hi}]")));
    }
    let alpha2 = estimate_alpha2(curve, y0, b, y1, y2, t_n)?;
    let upper = BranchCache::new(curve, y1, y0 + t_n, hi);
    let lower = BranchCache::new(curve, y2, lo, y0 - t_n);
    let mut t = TransformCurve {
        curve: curve.clone(),
        y0_hat: y0,
        b,
        alpha2,
        t_n,
        y1,
        y2,
        upper,
        lower,
        upper_edge: 0.0,
        lower_edge: 0.0,
    };
    t.upper_edge = t.upper_branch(y0 + t_n)?;
    t.lower_edge = t.lower_branch(y0 - t_n)?;
    Ok(t)
}

pub fn eval_transform(t: &TransformCurve, y: f64) -> Result<f64> {
    let (lo, hi) = t.range();
    if !(y >= lo && y <= hi) {
        return Err(Error::OutOfRange { value: y, lo, hi });
    }
    let y0 = t.y0_hat;
    if y >= y0 + t.t_n {
        t.upper_branch(y)
    } else if y > y0 {
        Ok((y - y0) / t.t_n * t.upper_edge)
    } else if y == y0 {
        Ok(0.0)
    } else if y > y0 - t.t_n {
        Ok((y0 - y) / t.t_n * t.lower_edge)
    } else {
        t.lower_branch(y)
    }
}

/// Trapezoid approximation of `∫ (t - oracle)²` over `n_grid` equidistant points.
pub fn mise<F: Fn(f64) -> f64>(t: &TransformCurve, oracle: F, grid_lo: f64, grid_hi: f64, n_grid: usize) -> Result<f64> {
    if grid_lo < t.y0_hat + t.t_n {
        return Err(Error::InvalidInput(format!(
            "MISE grid must start at or above y0 + t_n = {}, got {grid_lo}",
            t.y0_hat + t.t_n
        )));
    }
    if n_grid < 2 || !(grid_hi > grid_lo) {
        return Err(Error::InvalidInput("MISE grid needs at least two points on a nonempty interval".into()));
    }
    let grid = linspace(grid_lo, grid_hi, n_grid);
    let sq = grid
        .iter()
        .map(|&y| eval_transform(t, y).map(|v| (v - oracle(y)).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(&grid, &sq))
}

/// Evaluates the curve on `n` equidistant points; unavailable points are `None`.
pub fn tabulate(t: &TransformCurve, lo: f64, hi: f64, n: usize) -> Vec<(f64, Option<f64>)> {
    linspace(lo, hi, n).into_iter().map(|y| (y, eval_transform(t, y).ok())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simstudy::design::{self, true_lambda, true_transform_renorm, true_y0};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn components(y0: f64, b: f64, t_n: f64) -> ComponentEstimates {
        ComponentEstimates {
            y0_hat: y0,
            b_tilde: b,
            alpha2_hat: -1.0,
            t_n,
            var_y0: None,
            var_b_tilde: None,
        }
    }

    fn analytic() -> (LambdaCurve, TransformCurve) {
        let curve = LambdaCurve::from_fn(true_lambda, 0.1, 3.0, 600, 0.01).unwrap();
        let t = build_transform(&curve, &components(true_y0(), design::B, 0.05), BChoice::UseTilde, 2.0, 0.2).unwrap();
        (curve, t)
    }

    #[test]
    fn pins_are_exact() {
        let (_, t) = analytic();
        assert_eq!(eval_transform(&t, 2.0).unwrap(), 1.0);
        assert_eq!(eval_transform(&t, true_y0()).unwrap(), 0.0);
    }

    #[test]
    fn analytic_curve_recovers_truth() {
        let (_, t) = analytic();
        let y0 = true_y0();
        for y in [0.8, 1.0, 1.5, 2.5] {
            let truth = true_transform_renorm(y, y0, 2.0).unwrap();
            assert_abs_diff_eq!(eval_transform(&t, y).unwrap(), truth, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(eval_transform(&t, 1.0).unwrap(), 0.300962, epsilon = 1e-4);
        // α2 is a t_n → 0 limit, so check the lower branch with a small threshold
        let curve = LambdaCurve::from_fn(true_lambda, 0.1, 3.0, 600, 0.01).unwrap();
        let t = build_transform(&curve, &components(y0, design::B, 1e-3), BChoice::UseTilde, 2.0, 0.2).unwrap();
        assert_abs_diff_eq!(eval_transform(&t, 0.2).unwrap(), true_transform_renorm(0.2, y0, 2.0).unwrap(), epsilon = 1e-3);
    }

    #[test]
    fn ramps_interpolate_edges() {
        let (_, t) = analytic();
        let y0 = t.y0_hat();
        let tn = t.t_n();
        let up = eval_transform(&t, y0 + tn).unwrap();
        let down = eval_transform(&t, y0 - tn).unwrap();
        assert_abs_diff_eq!(eval_transform(&t, y0 + tn / 2.0).unwrap(), up / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_transform(&t, y0 - tn / 2.0).unwrap(), down / 2.0, epsilon = 1e-15);
        assert!(eval_transform(&t, y0 - 1e-3).unwrap() < 0.0);
    }

    #[test]
    fn joints_are_continuous() {
        let (_, t) = analytic();
        let y0 = t.y0_hat();
        let tn = t.t_n();
        let eps = 1e-12;
        for joint in [y0 - tn, y0, y0 + tn] {
            let l = eval_transform(&t, joint - eps).unwrap();
            let r = eval_transform(&t, joint + eps).unwrap();
            let m = eval_transform(&t, joint).unwrap();
            assert!((l - m).abs() < 1e-9 && (r - m).abs() < 1e-9, "joint {joint}: {l} {m} {r}");
        }
    }

    #[test]
    fn rejects_bad_anchors_and_range() {
        let (curve, t) = analytic();
        let c = components(true_y0(), design::B, 0.05);
        assert!(matches!(build_transform(&curve, &c, BChoice::UseTilde, 0.7, 0.2), Err(Error::BadAnchors(_))));
        assert!(matches!(build_transform(&curve, &c, BChoice::UseTilde, 2.0, 0.66), Err(Error::BadAnchors(_))));
        assert!(matches!(build_transform(&curve, &c, BChoice::UseTilde, 5.0, 0.2), Err(Error::BadAnchors(_))));
        assert!(matches!(eval_transform(&t, 3.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn mise_examples() {
        let (_, t) = analytic();
        let lo = t.y0_hat() + t.t_n();
        let self_mise = mise(&t, |y| eval_transform(&t, y).unwrap(), lo, 2.5, 200).unwrap();
        assert_eq!(self_mise, 0.0);
        let delta = 0.3;
        let shifted = mise(&t, |y| eval_transform(&t, y).unwrap() + delta, lo, 2.5, 200).unwrap();
        assert_abs_diff_eq!(shifted, delta * delta * (2.5 - lo), epsilon = 1e-12);
        assert!(mise(&t, |_| 0.0, lo - 0.01, 2.5, 200).is_err());
    }

    #[test]
    fn singular_cells_are_unavailable() {
        // λ with a second zero at 2.5 above the anchor
        let f = |y: f64| -(y - 0.5) * (2.5 - y);
        let curve = LambdaCurve::from_fn(f, 0.0, 3.0, 301, 0.01).unwrap();
        let t = build_transform(&curve, &components(0.5, 2.0, 0.1), BChoice::UseTilde, 2.0, 0.2).unwrap();
        assert!(eval_transform(&t, 2.4).is_ok());
        assert!(eval_transform(&t, 2.8).is_err());
    }

    proptest! {
        #[test]
        fn b_consistency_on_upper_branch(b in 0.2f64..3.0, b2 in 0.2f64..3.0, y in 0.75f64..2.9) {
            let curve = LambdaCurve::from_fn(true_lambda, 0.1, 3.0, 300, 0.01).unwrap();
            let c = components(true_y0(), b, 0.05);
            let t1 = build_transform(&curve, &c, BChoice::UseTilde, 2.0, 0.2).unwrap();
            let t2 = build_transform(&curve, &c, BChoice::UseHat(b2), 2.0, 0.2).unwrap();
            let v1 = eval_transform(&t1, y).unwrap();
            let v2 = eval_transform(&t2, y).unwrap();
            prop_assert!((v2 - v1.powf(b2 / b)).abs() <= 1e-12 * v2.abs().max(1.0));
        }

        #[test]
        fn upper_branch_is_nondecreasing(b in 0.2f64..3.0, a in 0.75f64..2.9, step in 0.0f64..0.5) {
            let curve = LambdaCurve::from_fn(true_lambda, 0.1, 3.0, 300, 0.01).unwrap();
            let t = build_transform(&curve, &components(true_y0(), b, 0.05), BChoice::UseTilde, 2.0, 0.2).unwrap();
            let hi = (a + step).min(3.0);
            prop_assert!(eval_transform(&t, hi).unwrap() >= eval_transform(&t, a).unwrap());
        }
    }
}
