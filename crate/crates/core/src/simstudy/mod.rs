//! Monte Carlo driver for the simulation design: per-replication data
//! generation, estimation and MISE against the renormalized truth, with
//! aggregation into means, standard deviations and normal QQ data.

pub mod design;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::anchors::DEFAULT_C_T;
use crate::error::{Error, Result};
use crate::fit::{choose_bandwidths, estimate_components, BandwidthMode, FitOptions, DEFAULT_Y1, DEFAULT_Y2, UPPER_Y_QUANTILE};
use crate::kernels::KernelSpec;
use crate::lambda::{WeightSpec, DEFAULT_N_X};
use crate::numeric::{mean, quantile, std_dev};
use crate::smoothers::SmootherState;
use crate::transform::{build_transform, mise, BChoice};

pub const DEFAULT_N: usize = 500;
pub const DEFAULT_REPS: usize = 100;
pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_MISE_POINTS: usize = 200;
pub const MIN_N: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub y1: f64,
    pub y2: f64,
    pub c_t: f64,
    pub n_x: usize,
    pub bandwidth_mode: BandwidthMode,
    pub mise_points: usize,
}

impl SimConfig {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            n,
            reps,
            seed,
            y1: DEFAULT_Y1,
            y2: DEFAULT_Y2,
            c_t: DEFAULT_C_T,
            n_x: DEFAULT_N_X,
            bandwidth_mode: BandwidthMode::Auto,
            mise_points: DEFAULT_MISE_POINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(Error::InsufficientData { needed: MIN_N, got: self.n });
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        if self.mise_points < 2 {
            return Err(Error::InvalidInput("MISE grid needs at least two points".into()));
        }
        Ok(())
    }
}

/// Outcome of one replication. Fields are `None` past the stage that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub h_y: Option<f64>,
    pub h_x: Option<f64>,
    pub y0_hat: Option<f64>,
    pub b_tilde: Option<f64>,
    pub alpha2_hat: Option<f64>,
    pub t_n: Option<f64>,
    pub mise: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Moments {
    fn of(values: &[f64]) -> Self {
        Self {
            count: values.len(),
            mean: (!values.is_empty()).then(|| mean(values)),
            sd: (values.len() >= 2).then(|| std_dev(values)),
        }
    }
}

/// Sorted standardized draws paired with standard normal quantiles at `(i - 1/2)/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub theoretical: Vec<f64>,
    pub sample: Vec<f64>,
}

impl QqData {
    pub fn from_draws(values: &[f64]) -> Self {
        let m = values.len();
        if m < 2 {
            return Self {
                theoretical: Vec::new(),
                sample: Vec::new(),
            };
        }
        let (mu, sd) = (mean(values), std_dev(values));
        let mut sample: Vec<f64> = values.iter().map(|v| if sd > 0.0 { (v - mu) / sd } else { 0.0 }).collect();
        sample.sort_by(f64::total_cmp);
        let normal = Normal::standard();
        let theoretical = (0..m).map(|i| normal.inverse_cdf((i as f64 + 0.5) / m as f64)).collect();
        Self { theoretical, sample }
    }

    /// Correlation of the two columns; 1 means a perfectly straight QQ line.
    pub fn correlation(&self) -> f64 {
        crate::numeric::correlation(&self.theoretical, &self.sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub per_rep: Vec<RepRecord>,
    pub y0_hat: Moments,
    pub b_tilde: Moments,
    pub alpha2_hat: Moments,
    pub mise: Moments,
    pub qq_y0: QqData,
    pub qq_b_tilde: QqData,
    /// Replications with at least one missing quantity.
    pub failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
}

/// Generator of replication `rep`: the seed picks the key and the replication
/// number picks the stream, so draws do not depend on the number of reps.
pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn run_rep(cfg: &SimConfig, rep: usize) -> RepRecord {
    let mut rec = RepRecord {
        rep,
        h_y: None,
        h_x: None,
        y0_hat: None,
        b_tilde: None,
        alpha2_hat: None,
        t_n: None,
        mise: None,
        failure: None,
    };
    if let Err(e) = fill_rep(cfg, rep, &mut rec) {
        rec.failure = Some(e.kind().to_string());
    }
    rec
}

fn fill_rep(cfg: &SimConfig, rep: usize, rec: &mut RepRecord) -> Result<()> {
    let mut rng = rep_rng(cfg.seed, rep);
    let data = design::generate(cfg.n, &mut rng)?;
    let kernel = KernelSpec::epanechnikov();
    let bw = choose_bandwidths(&data, &kernel, cfg.bandwidth_mode)?;
    rec.h_y = Some(bw.h_y);
    rec.h_x = Some(bw.h_x);
    let q_upper = quantile(data.y(), UPPER_Y_QUANTILE);
    let state = SmootherState::new(data, kernel, bw, 0)?;
    let opts = FitOptions {
        c_t: cfg.c_t,
        n_x: cfg.n_x,
        y1: cfg.y1,
        y2: cfg.y2,
        variances: false,
        ..FitOptions::default()
    };
    let (curve, comp) = estimate_components(&state, &WeightSpec::unit_indicator(1), &opts)?;
    rec.y0_hat = Some(comp.y0_hat);
    rec.b_tilde = Some(comp.b_tilde);
    rec.alpha2_hat = Some(comp.alpha2_hat);
    rec.t_n = Some(comp.t_n);
    let t = build_transform(&curve, &comp, BChoice::UseTilde, cfg.y1, cfg.y2)?;
    let y0 = comp.y0_hat;
    let y1 = cfg.y1;
    let lo = y0 + comp.t_n;
    let hi = q_upper.min(curve.range().1);
    let m = mise(&t, |y| design::true_transform_renorm(y, y0, y1).unwrap_or(f64::NAN), lo, hi, cfg.mise_points)?;
    rec.mise = Some(m);
    Ok(())
}

pub fn mc_run(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let per_rep: Vec<RepRecord> = (0..cfg.reps).into_par_iter().map(|rep| run_rep(cfg, rep)).collect();
    Ok(aggregate(cfg.clone(), per_rep))
}

pub fn aggregate(config: SimConfig, per_rep: Vec<RepRecord>) -> SimReport {
    let column = |f: fn(&RepRecord) -> Option<f64>| -> Vec<f64> { per_rep.iter().filter_map(f).collect() };
    let y0 = column(|r| r.y0_hat);
    let b = column(|r| r.b_tilde);
    let a2 = column(|r| r.alpha2_hat);
    let ms = column(|r| r.mise);
    let mut failure_kinds = BTreeMap::new();
    for r in &per_rep {
        if let Some(k) = &r.failure {
            *failure_kinds.entry(k.clone()).or_insert(0) += 1;
        }
    }
    SimReport {
        failures: per_rep.iter().filter(|r| r.failure.is_some()).count(),
        y0_hat: Moments::of(&y0),
        b_tilde: Moments::of(&b),
        alpha2_hat: Moments::of(&a2),
        mise: Moments::of(&ms),
        qq_y0: QqData::from_draws(&y0),
        qq_b_tilde: QqData::from_draws(&b),
        failure_kinds,
        config,
        per_rep,
    }
}
