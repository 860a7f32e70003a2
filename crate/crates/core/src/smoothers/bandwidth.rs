//! Bandwidth selection: least-squares cross-validation for the response and
//! the normal reference rule for the regressor.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numeric::{golden_section, logspace, quantile_sorted, sorted_copy, std_dev};

use super::Dataset;

/// Number of log-spaced candidate bandwidths scanned by cross-validation.
pub const CV_GRID_POINTS: usize = 40;
/// Cross-validation grid spans `[CV_GRID_LO, CV_GRID_HI]` times the reference bandwidth.
pub const CV_GRID_LO: f64 = 0.05;
pub const CV_GRID_HI: f64 = 2.0;

/// `min(sd, IQR / 1.34)`, falling back to whichever of the two is positive.
pub fn robust_scale(v: &[f64]) -> f64 {
    let sd = std_dev(v);
    let sorted = sorted_copy(v);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    }
}

/// Normal reference rule `1.06 · scale · n^{-1/(4+d)}`.
pub fn reference_bandwidth(scale: f64, n: usize, d: usize) -> f64 {
    1.06 * scale * (n as f64).powf(-1.0 / (4.0 + d as f64))
}

/// Reference-rule regressor bandwidth using the geometric mean of the
/// per-coordinate robust scales.
pub fn select_h_x_reference(data: &Dataset) -> Result<f64> {
    let scales: Vec<f64> = (0..data.d())
        .map(|j| robust_scale(&data.x_column(j)))
        .filter(|&s| s > 0.0)
        .collect();
    if scales.is_empty() {
        return Err(Error::DegenerateSample("every regressor coordinate is constant".into()));
    }
    let log_mean = scales.iter().map(|s| s.ln()).sum::<f64>() / scales.len() as f64;
    Ok(reference_bandwidth(log_mean.exp(), data.n(), data.d()))
}

/// Reference rule carried over to `kernel` through the ratio of canonical
/// bandwidths, so the 1.06 constant is only used as is for the Gaussian kernel.
/// Kernels of order above two keep the Gaussian-scale value.
pub fn select_h_x_reference_for(data: &Dataset, kernel: &KernelSpec) -> Result<f64> {
    let base = select_h_x_reference(data)?;
    let gauss = KernelSpec::gaussian().canonical_scale().expect("gaussian kernel has order two");
    Ok(base * kernel.canonical_scale().map_or(1.0, |c| c / gauss))
}

/// Least-squares cross-validation score `∫f̂² - (2/n) Σ f̂_{-i}(Y_i)` for the
/// response density at bandwidth `h`. `sorted` must be ascending.
pub fn cv_criterion(sorted: &[f64], kernel: &KernelSpec, h: f64) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    // Gaussian tails beyond 8 standard units are far below double precision.
    let reach = kernel.support_radius().unwrap_or(8.0);
    let mut conv = 0.0;
    let mut loo = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let u = (sorted[j] - sorted[i]) / h;
            if u >= 2.0 * reach {
                break;
            }
            conv += kernel.self_convolution(u);
            loo += kernel.eval(u);
        }
    }
    let integral_sq = (2.0 * conv + nf * kernel.self_convolution(0.0)) / (nf * nf * h);
    let loo_mean = 2.0 * loo / (nf * (nf - 1.0) * h);
    integral_sq - 2.0 * loo_mean
}

/// Cross-validated response bandwidth: scan a log-spaced grid around the
/// reference rule, then refine the best cell by golden-section search.
pub fn select_h_y_cv(data: &Dataset, kernel: &KernelSpec) -> Result<f64> {
    cv_search(data.y(), kernel).map(|r| r.h)
}

#[derive(Debug, Clone)]
pub struct CvSearch {
    pub h: f64,
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
}

pub fn cv_search(y: &[f64], kernel: &KernelSpec) -> Result<CvSearch> {
    if y.len() < 10 {
        return Err(Error::InsufficientData { needed: 10, got: y.len() });
    }
    if std_dev(y) == 0.0 {
        return Err(Error::DegenerateSample("response has zero variance".into()));
    }
    let sorted = sorted_copy(y);
    let reference = reference_bandwidth(robust_scale(y), y.len(), 1);
    let grid = logspace(CV_GRID_LO * reference, CV_GRID_HI * reference, CV_GRID_POINTS);
    let scores: Vec<f64> = grid.iter().map(|&h| cv_criterion(&sorted, kernel, h)).collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (h_gs, s_gs) = golden_section(|h| cv_criterion(&sorted, kernel, h), lo, hi, 1e-4 * reference);
    let h = if s_gs <= scores[best] { h_gs } else { grid[best] };
    Ok(CvSearch { h, grid, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn reference_formula() {
        assert_abs_diff_eq!(reference_bandwidth(1.0, 100, 1), 1.06 * 100f64.powf(-0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(reference_bandwidth(1.0, 100, 1), 0.421994, epsilon = 1e-6);
    }

    #[test]
    fn reference_scale_equivariance() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 7.0).collect();
        let y = vec![0.0; 50];
        let base = select_h_x_reference(&Dataset::univariate(y.clone(), x.clone()).unwrap()).unwrap();
        let scaled = select_h_x_reference(&Dataset::univariate(y, x.iter().map(|v| 3.5 * v).collect()).unwrap()).unwrap();
        assert_abs_diff_eq!(scaled, 3.5 * base, epsilon = 1e-12);
    }

    #[test]
    fn kernel_reference_rescales_by_canonical_ratio() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let data = Dataset::univariate(x.clone(), x).unwrap();
        let base = select_h_x_reference(&data).unwrap();
        let gauss = select_h_x_reference_for(&data, &KernelSpec::gaussian()).unwrap();
        let epan = select_h_x_reference_for(&data, &KernelSpec::epanechnikov()).unwrap();
        assert_abs_diff_eq!(gauss, base, epsilon = 1e-15);
        assert_abs_diff_eq!(epan / base, 2.2138, epsilon = 1e-4);
        let quartic = select_h_x_reference_for(&data, &KernelSpec::higher_order(4).unwrap()).unwrap();
        assert_abs_diff_eq!(quartic, base, epsilon = 1e-15);
    }

    #[test]
    fn reference_rejects_constant_regressor() {
        let data = Dataset::univariate(vec![1.0, 2.0, 3.0], vec![4.0; 3]).unwrap();
        assert!(matches!(select_h_x_reference(&data), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn cv_rejects_degenerate_input() {
        let k = KernelSpec::epanechnikov();
        assert!(matches!(cv_search(&[1.0; 20], &k), Err(Error::DegenerateSample(_))));
        assert!(matches!(cv_search(&[1.0, 2.0], &k), Err(Error::InsufficientData { .. })));
    }

    /// Brute-force O(n²) score with explicit numeric ∫f̂².
    fn brute_cv(y: &[f64], k: &KernelSpec, h: f64) -> f64 {
        let n = y.len() as f64;
        let (lo, hi) = super::super::min_max(y);
        let m = 20_000;
        let step = (hi - lo + 4.0 * h) / m as f64;
        let mut isq = 0.0;
        for s in 0..=m {
            let t = lo - 2.0 * h + s as f64 * step;
            let f: f64 = y.iter().map(|&yi| k.eval((t - yi) / h)).sum::<f64>() / (n * h);
            let w = if s == 0 || s == m { 0.5 } else { 1.0 };
            isq += w * f * f * step;
        }
        let mut loo = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let s: f64 = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &yj)| k.eval((yi - yj) / h)).sum();
            loo += s / ((n - 1.0) * h);
        }
        isq - 2.0 * loo / n
    }

    #[test]
    fn cv_criterion_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..60).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sorted = sorted_copy(&y);
        let k = KernelSpec::epanechnikov();
        for h in [0.2, 0.5, 1.1] {
            assert_abs_diff_eq!(cv_criterion(&sorted, &k, h), brute_cv(&y, &k, h), epsilon = 1e-6);
        }
    }

    #[test]
    fn cv_normal_sample_near_reference_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let y: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = select_h_y_cv(&Dataset::univariate(y.clone(), vec![0.0; 200]).unwrap(), &KernelSpec::epanechnikov()).unwrap();
        let rule = 1.06 * std_dev(&y) * 200f64.powf(-0.2);
        assert!(h > 0.0);
        assert!(h > rule / 2.0 && h < rule * 2.0, "h = {h}, rule = {rule}");
    }

    #[test]
    fn golden_refinement_stays_within_one_grid_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y: Vec<f64> = (0..150).map(|_| StandardNormal.sample(&mut rng)).collect();
        let search = cv_search(&y, &KernelSpec::epanechnikov()).unwrap();
        let best = search
            .scores
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let lo = search.grid[best.saturating_sub(1)];
        let hi = search.grid[(best + 1).min(search.grid.len() - 1)];
        assert!(search.h >= lo && search.h <= hi);
    }
}
