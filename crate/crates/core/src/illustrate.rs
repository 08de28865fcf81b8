//! Single-dataset illustration: one large free-knot fit to the smooth
//! hypoxic-burden scenario, effect curves with credible bands at fixed
//! heart-rate responses, the estimated effectiveness threshold and chain
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::dist::{derive_seed, quantiles, stream};
use crate::error::{config, Result};
use crate::posterior::{trace_extract, PosteriorDraws, Trace};
use crate::regression::{PatientRecord, PriorSpec};
use crate::sampler::{run_sampler, FitMode, SamplerConfig};
use crate::scenario::{generate_patients, ScenarioId, ScenarioSpec, ILLUSTRATION_NOISE_SD};
use crate::spline::{standard_covariates, SplineSpace};
use crate::trial::CANDIDATE_KNOTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IllustrationConfig {
    pub n: usize,
    /// Model averaging over terms by default; `FreeKnot` keeps every term.
    pub mode: FitMode,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    pub alpha: f64,
    /// Heart-rate responses at which the HB curves are drawn.
    pub dhr_levels: Vec<f64>,
    /// HB values of the trace patterns (crossed with `dhr_levels`).
    pub trace_hb: Vec<f64>,
    pub grid_step: f64,
}

impl Default for IllustrationConfig {
    fn default() -> Self {
        Self {
            n: 500,
            mode: FitMode::FreeKnotBma,
            seed: 7,
            sampler: SamplerConfig::default(),
            prior: PriorSpec::default(),
            alpha: 0.05,
            dhr_levels: vec![5.0, 15.0],
            trace_hb: vec![20.0, 80.0],
            grid_step: 0.5,
        }
    }
}

/// Posterior summary of the effect at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub dhr: f64,
    pub hb: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub prob_positive: f64,
}

/// Where the curve at one heart-rate level turns positive for good. The
/// effective region of this scenario is an upper tail, so each threshold is
/// the start of the last run of grid points that reaches the end of the
/// grid; isolated excursions at the sparse low end are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelThreshold {
    pub dhr: f64,
    /// Start of the final run where the posterior mean is positive.
    pub mean_crossing: Option<f64>,
    /// Start of the final run where the effect is positive with probability above `1 - alpha`.
    pub significance_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Illustration {
    pub bands: Vec<BandPoint>,
    pub thresholds: Vec<LevelThreshold>,
    /// Range of the significance thresholds across levels.
    pub threshold_interval: Option<(f64, f64)>,
    /// Largest absolute difference of posterior means between two levels.
    pub max_level_gap: f64,
    pub true_threshold: f64,
    pub trace: Trace,
    pub rhat: Vec<Option<f64>>,
    pub knot_acceptance: f64,
}

fn grid(data: &[PatientRecord], step: f64) -> Vec<f64> {
    let hb: Vec<f64> = data.iter().map(|p| p.x[0]).collect();
    let q = quantiles(&hb, &[0.01, 0.99]);
    let (lo, hi) = ((q[0] / step).ceil() * step, q[1]);
    (0..).map(|i| lo + i as f64 * step).take_while(|&v| v <= hi).collect()
}

/// Summaries of `draws` along the HB grid at each heart-rate level.
pub fn curve_bands(draws: &PosteriorDraws, hb: &[f64], dhr_levels: &[f64]) -> Vec<BandPoint> {
    let ev = draws.evaluator();
    let mut out = Vec::with_capacity(hb.len() * dhr_levels.len());
    for &dhr in dhr_levels {
        for &h in hb {
            let g = ev.gamma_draws(&[h, dhr]);
            let n = g.len() as f64;
            let q = quantiles(&g, &[0.025, 0.975]);
            out.push(BandPoint {
                dhr,
                hb: h,
                mean: g.iter().sum::<f64>() / n,
                lower: q[0],
                upper: q[1],
                prob_positive: g.iter().filter(|&&v| v > 0.0).count() as f64 / n,
            });
        }
    }
    out
}

/// First grid value of the trailing run satisfying `pred`.
fn trailing_run<'a>(pts: &[&'a BandPoint], pred: impl Fn(&BandPoint) -> bool) -> Option<f64> {
    let tail = pts.iter().rev().take_while(|b| pred(b)).count();
    (tail > 0).then(|| pts[pts.len() - tail].hb)
}

/// Upward crossings of each level's curve.
pub fn level_thresholds(bands: &[BandPoint], dhr_levels: &[f64], alpha: f64) -> Vec<LevelThreshold> {
    dhr_levels
        .iter()
        .map(|&dhr| {
            let pts: Vec<&BandPoint> = bands.iter().filter(|b| b.dhr == dhr).collect();
            LevelThreshold {
                dhr,
                mean_crossing: trailing_run(&pts, |b| b.mean > 0.0),
                significance_threshold: trailing_run(&pts, |b| b.prob_positive > 1.0 - alpha),
            }
        })
        .collect()
}

/// The smooth HB scenario at illustration noise, one fit, all summaries.
pub fn illustrate(cfg: &IllustrationConfig) -> Result<Illustration> {
    if cfg.n == 0 || cfg.dhr_levels.is_empty() || !(cfg.grid_step > 0.0) {
        return config("illustration needs n > 0, at least one level and a positive grid step");
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return config("alpha must lie in (0, 1)");
    }
    let scenario = ScenarioSpec::new(ScenarioId::Main(4)).with_noise_sd(ILLUSTRATION_NOISE_SD);
    let data = generate_patients(cfg.n, &scenario, None, &mut stream(derive_seed(cfg.seed, 0)));
    let space = SplineSpace::from_data(&data, standard_covariates(2), CANDIDATE_KNOTS)?;
    let sampler = SamplerConfig { mode: cfg.mode, ..cfg.sampler.clone() };
    let draws = run_sampler(&data, &space, &cfg.prior, &sampler, derive_seed(cfg.seed, 1))?;

    let hb = grid(&data, cfg.grid_step);
    let bands = curve_bands(&draws, &hb, &cfg.dhr_levels);
    let thresholds = level_thresholds(&bands, &cfg.dhr_levels, cfg.alpha);
    let sig: Vec<f64> = thresholds.iter().filter_map(|t| t.significance_threshold).collect();
    let threshold_interval = (!sig.is_empty())
        .then(|| (sig.iter().copied().fold(f64::INFINITY, f64::min), sig.iter().copied().fold(f64::NEG_INFINITY, f64::max)));

    let mut max_level_gap = 0.0f64;
    for (i, &h) in hb.iter().enumerate() {
        let means: Vec<f64> = (0..cfg.dhr_levels.len()).map(|l| bands[l * hb.len() + i].mean).collect();
        debug_assert!(bands[i].hb == h);
        let spread = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min);
        max_level_gap = max_level_gap.max(spread);
    }

    let patterns: Vec<Vec<f64>> = cfg
        .trace_hb
        .iter()
        .flat_map(|&h| cfg.dhr_levels.iter().map(move |&d| vec![h, d]))
        .collect();
    let trace = trace_extract(&draws, &patterns);
    let rhat = trace.rhat();
    let knot_acceptance = draws.stats.knot_accepted as f64 / draws.stats.knot_proposed.max(1) as f64;
    Ok(Illustration {
        bands,
        thresholds,
        threshold_interval,
        max_level_gap,
        true_threshold: crate::scenario::scenario4_threshold(),
        trace,
        rhat,
        knot_acceptance,
    })
}
