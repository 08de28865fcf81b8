//! Gaussian linear-model machinery shared by the three formulations:
//! likelihood, the Normal-Inverse-Gamma conjugate posterior with its exact
//! log marginal likelihood, coefficient draws, and the pre-specified cutoff
//! design.
//!
//! Two coefficient priors are supported, both with `sigma2 ~ IG(a0, b0)`:
//!
//! - independent: `beta ~ N(0, v I)`. Given `sigma2`, `beta` integrates out
//!   in closed form ([`GaussianConditional`]);
//! - noise-scaled: `beta | sigma2 ~ N(0, sigma2 v I)`. Both `beta` and
//!   `sigma2` integrate out ([`NigPosterior`]).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{normal_ln_pdf, sample_inverse_gamma, sample_standard_normal};
use crate::error::{config, Error, Result};
use crate::spline::{design_row, ModelStructure, SplineSpace};

/// One trial participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    /// Negative systolic blood pressure change (positive = improvement).
    pub y: f64,
    /// Randomised to treatment.
    pub t: bool,
    /// Biomarkers: HB, dHR and optionally VCB.
    pub x: Vec<f64>,
}

/// How the coefficient prior variance relates to the noise variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientPrior {
    /// `beta ~ N(0, v I)` independently of `sigma2`.
    #[default]
    Independent,
    /// `beta | sigma2 ~ N(0, sigma2 v I)`.
    NoiseScaled,
}

/// Hyperparameters for coefficients, noise and the structure priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior variance `v` on every regression coefficient.
    pub coef_variance: f64,
    #[serde(default)]
    pub coef_prior: CoefficientPrior,
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    /// Truncated-Poisson rate on the number of active terms.
    pub lambda_terms: f64,
    /// Truncated-Poisson rate on the number of knots per spline term.
    pub lambda_knots: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            coef_variance: 20f64.sqrt(),
            coef_prior: CoefficientPrior::Independent,
            sigma_shape: 0.01,
            sigma_scale: 0.01,
            lambda_terms: 3.0,
            lambda_knots: 3.0,
        }
    }
}

impl PriorSpec {
    /// Alternative reading of the coefficient prior: variance 20.
    pub fn with_variance_twenty(self) -> Self {
        Self { coef_variance: 20.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("coef_variance", self.coef_variance),
            ("sigma_shape", self.sigma_shape),
            ("sigma_scale", self.sigma_scale),
            ("lambda_terms", self.lambda_terms),
            ("lambda_knots", self.lambda_knots),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return config(format!("prior.{name} must be positive and finite (got {v})"));
            }
        }
        Ok(())
    }
}

/// Regression coefficients aligned to design columns, plus noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientState {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

/// Exact Normal-Inverse-Gamma posterior of `(beta, sigma2)` under the
/// noise-scaled prior.
#[derive(Debug, Clone)]
pub struct NigPosterior {
    pub mean: DVector<f64>,
    /// Cholesky factor of the posterior precision `X'X + I / v`
    /// (the covariance of `beta` is `sigma2` times its inverse).
    pub precision: Cholesky<f64, Dyn>,
    pub shape: f64,
    pub scale: f64,
    /// `log p(y)` with coefficients and noise variance integrated out.
    pub log_marginal: f64,
}

impl NigPosterior {
    /// Posterior from sufficient statistics `X'X`, `X'y`, `y'y` and `n`.
    pub fn from_gram(
        gram: &DMatrix<f64>,
        xty: &DVector<f64>,
        yty: f64,
        n: usize,
        prior: &PriorSpec,
    ) -> Result<Self> {
        let p = gram.nrows();
        let mut precision = gram.clone();
        for i in 0..p {
            precision[(i, i)] += 1.0 / prior.coef_variance;
        }
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::Numerical("posterior precision not positive definite".into()))?;
        let mean = chol.solve(xty);
        let quad = xty.dot(&mean);
        let shape = prior.sigma_shape + 0.5 * n as f64;
        // y'y - m' Lambda m is a residual sum of squares; never below zero.
        let scale = prior.sigma_scale + 0.5 * (yty - quad).max(0.0);
        let ln_det_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_marginal = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * ln_det_precision
            - 0.5 * p as f64 * prior.coef_variance.ln()
            + prior.sigma_shape * prior.sigma_scale.ln()
            - shape * scale.ln()
            + ln_gamma(shape)
            - ln_gamma(prior.sigma_shape);
        Ok(Self { mean, precision: chol, shape, scale, log_marginal })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Posterior mean of `sigma2` (infinite when shape <= 1).
    pub fn sigma2_mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.scale / (self.shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// Marginal posterior covariance of `beta` (multivariate t).
    pub fn beta_covariance(&self) -> DMatrix<f64> {
        self.precision.inverse() * self.sigma2_mean()
    }
}

/// `beta | sigma2, y` under the independent prior, with `log p(y | sigma2)`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    /// Cholesky factor of `X'X / sigma2 + I / v`.
    pub precision: Cholesky<f64, Dyn>,
    pub sigma2: f64,
    /// `log p(y | sigma2)` with `beta` integrated out.
    pub log_marginal: f64,
}

impl GaussianConditional {
    pub fn from_gram(
        gram: &DMatrix<f64>,
        xty: &DVector<f64>,
        yty: f64,
        n: usize,
        sigma2: f64,
        prior: &PriorSpec,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be positive (got {sigma2})")));
        }
        let p = gram.nrows();
        let mut precision = gram / sigma2;
        for i in 0..p {
            precision[(i, i)] += 1.0 / prior.coef_variance;
        }
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::Numerical("conditional precision not positive definite".into()))?;
        let scaled = xty / sigma2;
        let mean = chol.solve(&scaled);
        let ln_det_precision = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_marginal = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln())
            - 0.5 * p as f64 * prior.coef_variance.ln()
            - 0.5 * ln_det_precision
            - 0.5 * yty / sigma2
            + 0.5 * scaled.dot(&mean);
        Ok(Self { mean, precision: chol, sigma2, log_marginal })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `beta ~ N(mean, precision^-1)` for a fixed `sigma2`.
pub fn sample_conditional_beta<R: Rng + ?Sized>(cond: &GaussianConditional, rng: &mut R) -> Result<DVector<f64>> {
    let z = DVector::from_iterator(cond.dim(), (0..cond.dim()).map(|_| sample_standard_normal(rng)));
    let u = cond
        .precision
        .l_dirty()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(&cond.mean + u)
}

/// `sigma2 | beta, y` from sufficient statistics.
///
/// Under the noise-scaled prior `beta` also carries information on `sigma2`.
pub fn sample_sigma2_given_beta<R: Rng + ?Sized>(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yty: f64,
    n: usize,
    beta: &DVector<f64>,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    let rss = (yty - 2.0 * xty.dot(beta) + beta.dot(&(gram * beta))).max(0.0);
    let (shape, scale) = match prior.coef_prior {
        CoefficientPrior::Independent => (prior.sigma_shape + 0.5 * n as f64, prior.sigma_scale + 0.5 * rss),
        CoefficientPrior::NoiseScaled => (
            prior.sigma_shape + 0.5 * (n + beta.len()) as f64,
            prior.sigma_scale + 0.5 * (rss + beta.dot(beta) / prior.coef_variance),
        ),
    };
    sample_inverse_gamma(shape, scale, rng)
}

/// Conjugate posterior for a design matrix and responses.
pub fn conjugate_posterior(design: &DMatrix<f64>, y: &[f64], prior: &PriorSpec) -> Result<NigPosterior> {
    if design.nrows() != y.len() {
        return Err(Error::Domain(format!(
            "design has {} rows but y has {} entries",
            design.nrows(),
            y.len()
        )));
    }
    let yv = DVector::from_column_slice(y);
    let gram = design.transpose() * design;
    let xty = design.transpose() * &yv;
    NigPosterior::from_gram(&gram, &xty, yv.dot(&yv), y.len(), prior)
}

/// Exact draw: `sigma2` from its inverse-gamma marginal, then `beta | sigma2`.
pub fn sample_coefficients<R: Rng + ?Sized>(post: &NigPosterior, rng: &mut R) -> Result<CoefficientState> {
    let sigma2 = sample_inverse_gamma(post.shape, post.scale, rng)?;
    let z = DVector::from_iterator(post.dim(), (0..post.dim()).map(|_| sample_standard_normal(rng)));
    // L L' = Lambda; solving L' u = z gives u ~ N(0, Lambda^-1).
    let u = post
        .precision
        .l_dirty()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let beta = &post.mean + u * sigma2.sqrt();
    Ok(CoefficientState { beta: beta.iter().copied().collect(), sigma2 })
}

/// `sum_i log N(y_i; row_i . beta, sigma2)`.
pub fn log_likelihood(y: &[f64], design: &DMatrix<f64>, coef: &CoefficientState) -> Result<f64> {
    if !(coef.sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive (got {})", coef.sigma2)));
    }
    if design.ncols() != coef.beta.len() || design.nrows() != y.len() {
        return Err(Error::Domain("design, coefficient and response shapes disagree".into()));
    }
    let beta = DVector::from_column_slice(&coef.beta);
    let fitted = design * beta;
    Ok(y.iter()
        .zip(fitted.iter())
        .map(|(&yi, &fi)| normal_ln_pdf(yi, fi, coef.sigma2))
        .sum())
}

/// Pre-specified biomarker thresholds, `z_j = I(x_j > threshold_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub thresholds: Vec<f64>,
}

impl CutoffSpec {
    /// HB > 60 and dHR > 8.
    pub fn two_biomarker() -> Self {
        Self { thresholds: vec![60.0, 8.0] }
    }

    /// HB > 60, dHR > 8 and VCB > 20.
    pub fn three_biomarker() -> Self {
        Self { thresholds: vec![60.0, 8.0, 20.0] }
    }

    /// Indicator subsets in column order: by size, then lexicographic.
    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let k = self.thresholds.len();
        let mut out: Vec<Vec<usize>> = (0u32..1 << k)
            .map(|m| (0..k).filter(|&j| m & (1 << j) != 0).collect())
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    pub fn indicators(&self, x: &[f64]) -> Vec<bool> {
        self.thresholds.iter().zip(x).map(|(&c, &v)| v > c).collect()
    }

    /// `[prod z over each subset] ++ [T * same]`.
    pub fn row(&self, x: &[f64], t: bool) -> Vec<f64> {
        let z = self.indicators(x);
        let base: Vec<f64> = self
            .subsets()
            .iter()
            .map(|s| if s.iter().all(|&j| z[j]) { 1.0 } else { 0.0 })
            .collect();
        let tv = if t { 1.0 } else { 0.0 };
        base.iter().copied().chain(base.iter().map(|v| v * tv)).collect()
    }

    pub fn column_count(&self) -> usize {
        2 << self.thresholds.len()
    }
}

pub fn cutoff_design(data: &[PatientRecord], spec: &CutoffSpec) -> Result<DMatrix<f64>> {
    let k = spec.thresholds.len();
    let p = spec.column_count();
    let mut m = DMatrix::zeros(data.len(), p);
    for (i, pt) in data.iter().enumerate() {
        if pt.x.len() < k {
            return config(format!(
                "patient {i} has {} biomarkers but {k} cutoffs were requested",
                pt.x.len()
            ));
        }
        for (j, v) in spec.row(&pt.x, pt.t).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// The model whose design rows define fitted values and the blip effect.
#[derive(Debug, Clone, Copy)]
pub enum Formulation<'a> {
    Cutoff(&'a CutoffSpec),
    Spline {
        space: &'a SplineSpace,
        structure: &'a ModelStructure,
    },
}

impl Formulation<'_> {
    pub fn design_row(&self, x: &[f64], t: bool) -> Vec<f64> {
        match self {
            Formulation::Cutoff(spec) => spec.row(x, t),
            Formulation::Spline { space, structure } => design_row(x, t, space, structure),
        }
    }

    pub fn design(&self, data: &[PatientRecord]) -> Result<DMatrix<f64>> {
        match self {
            Formulation::Cutoff(spec) => cutoff_design(data, spec),
            Formulation::Spline { space, structure } => Ok(crate::spline::design_matrix(data, space, structure)),
        }
    }
}

/// Blip effect at `x`: the treatment-column part of the design row dotted
/// with `beta`.
pub fn gamma_at(x: &[f64], form: Formulation<'_>, coef: &CoefficientState) -> f64 {
    let treated = form.design_row(x, true);
    let control = form.design_row(x, false);
    treated
        .iter()
        .zip(&control)
        .zip(&coef.beta)
        .map(|((a, c), b)| (a - c) * b)
        .sum()
}
