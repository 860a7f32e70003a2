//! End-to-end estimation on one dataset: bandwidths, λ̂, the scalar
//! components, optionally B̂, and the assembled transformation.

use serde::{Deserialize, Serialize};

use crate::anchors::{
    compute_t_n, estimate_alpha2, estimate_b_tilde, estimate_y0, var_b_tilde_plugin, var_y0_plugin, ComponentEstimates,
    DEFAULT_C_T,
};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::lambda::{build_lambda, AggregationMode, DegeneratePolicy, LambdaCurve, LambdaOptions, WeightKind, WeightSpec, DEFAULT_GRID_POINTS, DEFAULT_N_X};
use crate::msd::{construct_m_x, estimate_b_msd, CandidateS, MsdConfig, MsdEstimate, DEFAULT_B_RANGE, DEFAULT_BETA, DEFAULT_QUAD, DEFAULT_TAU};
use crate::numeric::quantile;
use crate::smoothers::bandwidth::{select_h_x_reference, select_h_x_reference_for, select_h_y_cv};
use crate::smoothers::{min_max, Bandwidths, Dataset, SmootherState};
use crate::transform::{build_transform, BChoice, TransformCurve};

pub const DEFAULT_Y1: f64 = 2.0;
pub const DEFAULT_Y2: f64 = 0.2;
/// Upper response quantile bounding the ĥ₁ domain and the default evaluation range.
pub const UPPER_Y_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthMode {
    /// Cross-validated `h_y`, reference-rule `h_x` rescaled to the kernel.
    Auto,
    /// As `Auto` but with the Gaussian-constant rule `1.06 · scale · n^{-1/(4+d)}` for any kernel.
    AutoGaussianConstant,
    Fixed { h_y: f64, h_x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BMethod {
    Tilde,
    Msd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bandwidths: BandwidthMode,
    pub kernel: KernelFamily,
    pub c_t: f64,
    pub n_x: usize,
    pub grid_points: usize,
    pub aggregation: AggregationMode,
    pub y1: f64,
    pub y2: f64,
    pub b_method: BMethod,
    pub tau: f64,
    pub beta: f64,
    pub b_range: (f64, f64),
    pub quad: usize,
    pub variances: bool,
    /// Weight function `v`; defaults to the indicator of the regressor's bounding box.
    pub weight: Option<WeightSpec>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bandwidths: BandwidthMode::Auto,
            kernel: KernelFamily::Epanechnikov,
            c_t: DEFAULT_C_T,
            n_x: DEFAULT_N_X,
            grid_points: DEFAULT_GRID_POINTS,
            aggregation: AggregationMode::MeanOverPoints,
            y1: DEFAULT_Y1,
            y2: DEFAULT_Y2,
            b_method: BMethod::Tilde,
            tau: DEFAULT_TAU,
            beta: DEFAULT_BETA,
            b_range: DEFAULT_B_RANGE,
            quad: DEFAULT_QUAD,
            variances: true,
            weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdSummary {
    pub config: MsdConfig,
    pub estimate: MsdEstimate,
    pub z_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub bandwidths: Bandwidths,
    pub state: SmootherState,
    pub weight: WeightSpec,
    pub curve: LambdaCurve,
    pub components: ComponentEstimates,
    /// The b that enters the transformation (B̃ or B̂).
    pub b_used: f64,
    pub msd: Option<MsdSummary>,
    pub transform: TransformCurve,
    /// `min(q_{0.99}(Y), upper end of the λ̂ grid)`.
    pub y_upper: f64,
}

pub fn choose_bandwidths(data: &Dataset, kernel: &KernelSpec, mode: BandwidthMode) -> Result<Bandwidths> {
    match mode {
        BandwidthMode::Fixed { h_y, h_x } => Bandwidths::new(h_y, h_x),
        BandwidthMode::Auto => Bandwidths::new(select_h_y_cv(data, kernel)?, select_h_x_reference_for(data, kernel)?),
        BandwidthMode::AutoGaussianConstant => Bandwidths::new(select_h_y_cv(data, kernel)?, select_h_x_reference(data)?),
    }
}

fn default_weight(data: &Dataset) -> Result<WeightSpec> {
    let support = (0..data.d()).map(|j| min_max(&data.x_column(j))).collect();
    WeightSpec::new(support, WeightKind::Indicator)
}

/// λ̂ and the scalar components ŷ0, t_n, B̃ and α̂2 (the latter with B̃).
pub fn estimate_components(
    state: &SmootherState,
    weight: &WeightSpec,
    opts: &FitOptions,
) -> Result<(LambdaCurve, ComponentEstimates)> {
    let lambda_opts = LambdaOptions {
        n_x: opts.n_x,
        mode: opts.aggregation,
        grid_points: opts.grid_points,
        cover: vec![opts.y2, opts.y1],
        on_degenerate: DegeneratePolicy::Trim,
    };
    let curve = build_lambda(state, weight, &lambda_opts)?;
    let y0_hat = estimate_y0(&curve)?;
    let h_y = state.bandwidths().h_y;
    let t_n = compute_t_n(state.data().n(), h_y, opts.c_t);
    let b_tilde = estimate_b_tilde(&curve, y0_hat)?;
    let alpha2_hat = estimate_alpha2(&curve, y0_hat, b_tilde, opts.y1, opts.y2, t_n)?;
    let (var_y0, var_b_tilde) = if opts.variances {
        (
            var_y0_plugin(state, y0_hat, b_tilde, weight).ok(),
            Some(var_b_tilde_plugin(state, y0_hat, weight)),
        )
    } else {
        (None, None)
    };
    let curve = curve.with_exclusion(y0_hat - t_n, y0_hat + t_n);
    Ok((
        curve,
        ComponentEstimates {
            y0_hat,
            b_tilde,
            alpha2_hat,
            t_n,
            var_y0,
            var_b_tilde,
        },
    ))
}

/// Runs the full estimation on `data`.
pub fn fit(data: Dataset, opts: &FitOptions) -> Result<FitResult> {
    let kernel = KernelSpec::from_family(opts.kernel)?;
    let bandwidths = choose_bandwidths(&data, &kernel, opts.bandwidths)?;
    let weight = match &opts.weight {
        Some(w) => w.clone(),
        None => default_weight(&data)?,
    };
    let q_upper = quantile(data.y(), UPPER_Y_QUANTILE);
    let state = SmootherState::new(data, kernel, bandwidths, 0)?;
    let (curve, components) = estimate_components(&state, &weight, opts)?;
    // a trimmed λ̂ grid may end below the quantile
    let y_upper = q_upper.min(curve.range().1);

    let (b_choice, msd) = match opts.b_method {
        BMethod::Tilde => (BChoice::UseTilde, None),
        BMethod::Msd => {
            let summary = fit_msd(&state, &curve, &components, &weight, opts, y_upper)?;
            (BChoice::UseHat(summary.estimate.b_hat), Some(summary))
        }
    };
    let transform = build_transform(&curve, &components, b_choice, opts.y1, opts.y2)?;
    Ok(FitResult {
        bandwidths,
        state,
        weight,
        curve,
        b_used: transform.b(),
        components,
        msd,
        transform,
        y_upper,
    })
}

/// B̂ with `[z_a, z_b] = [ŷ0 + 2 t_n, q_{0.99}(Y)]` and a data-driven region.
pub fn fit_msd(
    state: &SmootherState,
    curve: &LambdaCurve,
    components: &ComponentEstimates,
    weight: &WeightSpec,
    opts: &FitOptions,
    y_upper: f64,
) -> Result<MsdSummary> {
    if state.data().d() != 1 {
        return Err(Error::UnsupportedDimension(state.data().d()));
    }
    let z_range = (components.y0_hat + 2.0 * components.t_n, y_upper);
    let cand = CandidateS::from_estimates(state, curve, opts.y1, z_range, opts.tau, opts.beta)?;
    let draft = MsdConfig {
        tau: opts.tau,
        beta: opts.beta,
        b_range: opts.b_range,
        quad_x: opts.quad,
        quad_e: opts.quad,
        ..MsdConfig::default()
    };
    draft.validate()?;
    let config = construct_m_x(state, &cand, weight, &draft)?;
    let estimate = estimate_b_msd(&cand, state.data(), &config)?;
    Ok(MsdSummary { config, estimate, z_range })
}
