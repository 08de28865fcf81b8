//! Random-number generation and densities for the laws used by the trial
//! simulator: truncated Student-t and normal biomarker generators, the
//! truncated Poisson priors on knot and term counts, and the inverse-gamma
//! noise prior.
//!
//! Every sampler takes an explicit [`RandomStream`]; nothing here holds
//! shared state. Truncated continuous laws are sampled by inverting the CDF
//! on the truncated interval, so cost is constant however narrow the window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{config, Error, Result};

/// Seeded random stream owned by exactly one worker.
pub type RandomStream = ChaCha8Rng;

/// Builds a stream from a 64-bit seed.
pub fn stream(seed: u64) -> RandomStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with an index (replication, chain, ...) into a new seed.
///
/// SplitMix64 finaliser, so neighbouring indices give unrelated seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Location-scale Student-t restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTSpec {
    pub df: f64,
    pub scale: f64,
    pub shift: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedTSpec {
    /// Hypoxic burden generator, (%min)/h.
    pub const HYPOXIC_BURDEN: TruncatedTSpec = TruncatedTSpec {
        df: 5.0,
        scale: 50.0,
        shift: 15.0,
        lower: 0.0,
        upper: 265.0,
    };

    /// Heart-rate response generator, bpm.
    pub const HEART_RATE_RESPONSE: TruncatedTSpec = TruncatedTSpec {
        df: 5.0,
        scale: 3.0,
        shift: 8.0,
        lower: 2.0,
        upper: 20.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.df > 0.0) || !(self.scale > 0.0) {
            return config(format!(
                "truncated t needs df > 0 and scale > 0 (got df={}, scale={})",
                self.df, self.scale
            ));
        }
        check_interval(self.lower, self.upper)
    }
}

/// Normal law restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalSpec {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalSpec {
    /// Vasoconstrictive burden generator, N(20, 13^2) left truncated at 0.
    pub const VASOCONSTRICTIVE_BURDEN: TruncatedNormalSpec = TruncatedNormalSpec {
        mean: 20.0,
        sd: 13.0,
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0) {
            return config(format!("truncated normal needs sd > 0 (got {})", self.sd));
        }
        check_interval(self.lower, self.upper)
    }
}

fn check_interval(lower: f64, upper: f64) -> Result<()> {
    if lower.is_nan() || upper.is_nan() || !(lower < upper) {
        return config(format!("empty truncation interval [{lower}, {upper}]"));
    }
    Ok(())
}

/// Inverse-CDF draw from a standardised law on `[a, b]`.
///
/// Intervals lying in the right tail are reflected into the left tail where
/// the CDF keeps its relative precision.
fn sample_standardized<R: Rng + ?Sized>(
    cdf: impl Fn(f64) -> f64,
    inv: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rng: &mut R,
) -> f64 {
    let (lo, hi, flip) = if a > 0.0 { (-b, -a, true) } else { (a, b, false) };
    let flo = if lo == f64::NEG_INFINITY { 0.0 } else { cdf(lo) };
    let fhi = if hi == f64::INFINITY { 1.0 } else { cdf(hi) };
    let u: f64 = rng.random();
    let z = if fhi > flo {
        let p = (flo + u * (fhi - flo)).clamp(0.0, 1.0);
        inv(p)
    } else {
        // Window below CDF resolution: the law is flat there to working
        // precision, so draw uniformly.
        lo + u * (hi - lo)
    };
    let z = if z.is_nan() { 0.5 * (lo + hi) } else { z.clamp(lo, hi) };
    if flip {
        -z
    } else {
        z
    }
}

/// Draws `shift + scale * t_df` conditioned on lying in `[lower, upper]`.
pub fn sample_truncated_t<R: Rng + ?Sized>(spec: &TruncatedTSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    let t = StudentsT::new(0.0, 1.0, spec.df).map_err(|e| Error::Config(e.to_string()))?;
    let a = (spec.lower - spec.shift) / spec.scale;
    let b = (spec.upper - spec.shift) / spec.scale;
    let z = sample_standardized(|x| t.cdf(x), |p| t.inverse_cdf(p), a, b, rng);
    Ok((spec.shift + spec.scale * z).clamp(spec.lower, spec.upper))
}

/// Draws from `N(mean, sd^2)` conditioned on `[lower, upper]`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    spec: &TruncatedNormalSpec,
    rng: &mut R,
) -> Result<f64> {
    spec.validate()?;
    let n = Normal::standard();
    let a = (spec.lower - spec.mean) / spec.sd;
    let b = (spec.upper - spec.mean) / spec.sd;
    let z = sample_standardized(|x| n.cdf(x), |p| n.inverse_cdf(p), a, b, rng);
    Ok((spec.mean + spec.sd * z).clamp(spec.lower, spec.upper))
}

/// Log of a Gamma(shape, rate = 1) draw, stable for very small shapes.
///
/// For shape < 1 uses `G(a) = G(a + 1) * U^(1/a)` in log space.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) {
        return config(format!("gamma shape must be positive (got {shape})"));
    }
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        return Ok(g.sample(rng).ln());
    }
    let g = Gamma::new(shape + 1.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    Ok(g.sample(rng).ln() + u.ln() / shape)
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-scale/x)`.
///
/// The reciprocal is Gamma(shape, rate = scale). Draws too large for `f64`
/// saturate at `f64::MAX`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) {
        return config(format!(
            "inverse gamma needs shape > 0 and scale > 0 (got {shape}, {scale})"
        ));
    }
    let log_draw = scale.ln() - sample_log_gamma(shape, rng)?;
    Ok(log_draw.min(f64::MAX.ln()).exp().max(f64::MIN_POSITIVE))
}

/// Log density of the inverse-gamma law.
pub fn inverse_gamma_ln_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Log density of `N(mean, variance)`.
pub fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + r * r / variance)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Poisson law restricted to `{0, ..., support_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPoissonSpec {
    pub rate: f64,
    pub support_max: usize,
}

impl TruncatedPoissonSpec {
    pub fn new(rate: f64, support_max: usize) -> Result<Self> {
        if !(rate > 0.0) {
            return config(format!("truncated Poisson rate must be positive (got {rate})"));
        }
        Ok(Self { rate, support_max })
    }

    fn ln_unnormalized(&self, k: usize) -> f64 {
        -self.rate + k as f64 * self.rate.ln() - ln_gamma(k as f64 + 1.0)
    }

    /// Log of the normaliser `C = sum_{j <= support_max} e^-rate rate^j / j!`.
    pub fn ln_normalizer(&self) -> f64 {
        log_sum_exp((0..=self.support_max).map(|j| self.ln_unnormalized(j)))
    }

    pub fn ln_pmf(&self, k: usize) -> Result<f64> {
        if k > self.support_max {
            return Err(Error::Domain(format!(
                "k = {k} outside truncated Poisson support 0..={}",
                self.support_max
            )));
        }
        Ok(self.ln_unnormalized(k) - self.ln_normalizer())
    }

    pub fn pmf(&self, k: usize) -> Result<f64> {
        self.ln_pmf(k).map(f64::exp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let ln_c = self.ln_normalizer();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in 0..=self.support_max {
            acc += (self.ln_unnormalized(k) - ln_c).exp();
            if u < acc {
                return k;
            }
        }
        self.support_max
    }
}

/// Truncated Poisson probability of `k` (free-function form).
pub fn truncated_poisson_pmf(k: usize, spec: &TruncatedPoissonSpec) -> Result<f64> {
    spec.pmf(k)
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics (`(n - 1) p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles of unsorted data.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}
