//! Independent numerical oracles for the regression and sampler layers:
//! quadrature for marginal likelihoods, closed-form posterior moments,
//! prior recovery without data and an enumerated structure posterior.
//! Each check returns `Err` with a description when it fails.
#![allow(dead_code)]

use std::collections::HashMap;

use enrichment::dist::{derive_seed, sample_standard_normal, stream, TruncatedPoissonSpec};
use enrichment::regression::{conjugate_posterior, CoefficientPrior, GaussianConditional, PatientRecord, PriorSpec};
use enrichment::sampler::{run_sampler, FitMode, SamplerConfig};
use enrichment::spline::{
    design_matrix, standard_covariates, CandidateKnots, Covariate, CovariateBasis, KnotState, ModelStructure,
    SplineSpace,
};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub type Check = Result<(), String>;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn ln_normal_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let chol = Cholesky::new(cov.clone()).expect("covariance positive definite");
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let z = chol.solve(y);
    -0.5 * (n * LN_2PI + ln_det + y.dot(&z))
}

fn ln_inverse_gamma(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Composite Simpson weights on `n` (odd) equally spaced points.
fn simpson(n: usize, h: f64) -> Vec<f64> {
    assert!(n % 2 == 1);
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * h / 3.0
        })
        .collect()
}

fn small_problem() -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -0.8, 1.0, 1.1, 1.0, 0.2]);
    let y = DVector::from_vec(vec![1.2, -0.4, 2.1, 0.9]);
    (x, y)
}

pub fn nig_marginal_matches_nested_quadrature() -> Check {
    let (x, y) = small_problem();
    let prior = PriorSpec {
        coef_variance: 2.0,
        coef_prior: CoefficientPrior::NoiseScaled,
        sigma_shape: 2.0,
        sigma_scale: 1.0,
        ..PriorSpec::default()
    };
    let exact = conjugate_posterior(&x, y.as_slice(), &prior).unwrap().log_marginal;

    // outer: u = ln sigma2; inner: (beta1, beta2) on a box scaled by sigma
    let (nu, u_lo, u_hi) = (241, -7.0, 5.0);
    let hu = (u_hi - u_lo) / (nu - 1) as f64;
    let wu = simpson(nu, hu);
    let nb = 241;
    let mut outer = Vec::with_capacity(nu);
    for (iu, wu_i) in wu.iter().enumerate() {
        let u = u_lo + iu as f64 * hu;
        let s2 = u.exp();
        let half = 9.0 * (s2 * prior.coef_variance).sqrt();
        let hb = 2.0 * half / (nb - 1) as f64;
        let wb = simpson(nb, hb);
        let mut inner = Vec::with_capacity(nb * nb);
        for (i, wi) in wb.iter().enumerate() {
            let b1 = -half + i as f64 * hb;
            for (j, wj) in wb.iter().enumerate() {
                let b2 = -half + j as f64 * hb;
                let rss: f64 = (0..4).map(|r| (y[r] - x[(r, 0)] * b1 - x[(r, 1)] * b2).powi(2)).sum();
                let ln_lik = -2.0 * (LN_2PI + s2.ln()) - 0.5 * rss / s2;
                let ln_prior = -(LN_2PI + (s2 * prior.coef_variance).ln()) - 0.5 * (b1 * b1 + b2 * b2) / (s2 * prior.coef_variance);
                inner.push(ln_lik + ln_prior + (wi * wj).ln());
            }
        }
        // change of variables: d sigma2 = sigma2 du
        outer.push(log_sum_exp(&inner) + ln_inverse_gamma(s2, prior.sigma_shape, prior.sigma_scale) + u + wu_i.ln());
    }
    let quad = log_sum_exp(&outer);
    ensure!((quad - exact).abs() < 1e-3, "quadrature {quad} vs closed form {exact}");
    Ok(())
}

pub fn conditional_marginal_matches_quadrature() -> Check {
    let (x, y) = small_problem();
    let prior = PriorSpec::default();
    let sigma2 = 0.7;
    let gram = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let exact = GaussianConditional::from_gram(&gram, &xty, y.dot(&y), 4, sigma2, &prior).unwrap().log_marginal;
    let v = prior.coef_variance;
    let nb = 801;
    let half = 10.0 * v.sqrt();
    let hb = 2.0 * half / (nb - 1) as f64;
    let wb = simpson(nb, hb);
    let mut terms = Vec::with_capacity(nb * nb);
    for (i, wi) in wb.iter().enumerate() {
        let b1 = -half + i as f64 * hb;
        for (j, wj) in wb.iter().enumerate() {
            let b2 = -half + j as f64 * hb;
            let rss: f64 = (0..4).map(|r| (y[r] - x[(r, 0)] * b1 - x[(r, 1)] * b2).powi(2)).sum();
            let ln_lik = -2.0 * (LN_2PI + sigma2.ln()) - 0.5 * rss / sigma2;
            let ln_prior = -(LN_2PI + v.ln()) - 0.5 * (b1 * b1 + b2 * b2) / v;
            terms.push(ln_lik + ln_prior + (wi * wj).ln());
        }
    }
    let quad = log_sum_exp(&terms);
    ensure!((quad - exact).abs() < 1e-3, "quadrature {quad} vs closed form {exact}");
    Ok(())
}

fn one_covariate_space(knots: &[f64]) -> SplineSpace {
    SplineSpace {
        covariates: vec![CovariateBasis {
            covariate: Covariate { name: "HB".into(), factors: vec![0] },
            knots: CandidateKnots::new(knots.to_vec(), (0.0, 1.0)).unwrap(),
        }],
    }
}

fn synthetic_data(n: usize, seed: u64) -> Vec<PatientRecord> {
    let mut rng = stream(seed);
    (0..n)
        .map(|i| {
            let x: f64 = rng.random::<f64>();
            let t = i % 2 == 0;
            let effect = if t { 1.5 * (x - 0.4).max(0.0) * 3.0 - 0.3 } else { 0.0 };
            let y = 0.5 + x + effect + 0.8 * sample_standard_normal(&mut rng);
            PatientRecord { y, t, x: vec![x] }
        })
        .collect()
}

/// Batch-means standard error of the mean.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| v[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn fixed_config(n_samples: usize) -> SamplerConfig {
    SamplerConfig { n_samples, burn_in: 200, thin: 1, chains: 1, structure_moves: false, ..SamplerConfig::default() }
}

pub fn fixed_structure_moments_noise_scaled() -> Check {
    let data = synthetic_data(60, 11);
    let space = one_covariate_space(&[0.3, 0.6]);
    let prior = PriorSpec { coef_prior: CoefficientPrior::NoiseScaled, coef_variance: 20.0, ..PriorSpec::default() };
    let draws = run_sampler(&data, &space, &prior, &fixed_config(6000), 5).unwrap();
    let s = ModelStructure::saturated(1);
    let x = design_matrix(&data, &space, &s);
    let y: Vec<f64> = data.iter().map(|p| p.y).collect();
    let post = conjugate_posterior(&x, &y, &prior).unwrap();
    let cov = post.beta_covariance();
    let n = draws.len() as f64;
    for j in 0..post.dim() {
        let mean = draws.draws.iter().map(|d| d.coef.beta[j]).sum::<f64>() / n;
        let se = (cov[(j, j)] / n).sqrt();
        ensure!((mean - post.mean[j]).abs() < 3.0 * se, "beta[{j}] {mean} vs {} (se {se})", post.mean[j]);
    }
    let s2: Vec<f64> = draws.draws.iter().map(|d| d.coef.sigma2).collect();
    let m = s2.iter().sum::<f64>() / n;
    let sd = (s2.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    ensure!((m - post.sigma2_mean()).abs() < 3.0 * sd / n.sqrt(), "sigma2 {m} vs {}", post.sigma2_mean());
    Ok(())
}

pub fn fixed_structure_moments_independent_prior() -> Check {
    let data = synthetic_data(60, 12);
    let space = one_covariate_space(&[0.3, 0.6]);
    let prior = PriorSpec::default();
    let draws = run_sampler(&data, &space, &prior, &fixed_config(20_000), 6).unwrap();

    // oracle: E[beta | y] = int E[beta | sigma2, y] p(sigma2 | y), with
    // p(y | sigma2) = N(y; 0, sigma2 I + v X X') evaluated directly
    let s = ModelStructure::saturated(1);
    let x = design_matrix(&data, &space, &s);
    let y = DVector::from_iterator(data.len(), data.iter().map(|p| p.y));
    let (n, p, v) = (data.len(), x.ncols(), prior.coef_variance);
    let xxt = &x * x.transpose() * v;
    let (nu, lo, hi) = (1201, -4.0, 2.0);
    let hu = (hi - lo) / (nu - 1) as f64;
    let w = simpson(nu, hu);
    let mut ln_w = Vec::with_capacity(nu);
    let mut cond_means = Vec::with_capacity(nu);
    let mut s2s = Vec::with_capacity(nu);
    for (i, wi) in w.iter().enumerate() {
        let u = lo + i as f64 * hu;
        let s2 = u.exp();
        let cov = &xxt + DMatrix::identity(n, n) * s2;
        ln_w.push(ln_normal_density(&y, &cov) + ln_inverse_gamma(s2, prior.sigma_shape, prior.sigma_scale) + u + wi.ln());
        let prec = x.transpose() * &x / s2 + DMatrix::identity(p, p) / v;
        cond_means.push(prec.cholesky().unwrap().solve(&(x.transpose() * &y / s2)));
        s2s.push(s2);
    }
    let norm = log_sum_exp(&ln_w);
    let weights: Vec<f64> = ln_w.iter().map(|l| (l - norm).exp()).collect();
    let sigma2_oracle: f64 = weights.iter().zip(&s2s).map(|(w, s)| w * s).sum();
    let beta_oracle: Vec<f64> =
        (0..p).map(|j| weights.iter().zip(&cond_means).map(|(w, m)| w * m[j]).sum()).collect();

    for (j, want) in beta_oracle.iter().enumerate() {
        let series: Vec<f64> = draws.draws.iter().map(|d| d.coef.beta[j]).collect();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let se = batch_se(&series, 40);
        ensure!((mean - want).abs() < 3.0 * se, "beta[{j}] {mean} vs {want} (se {se})");
    }
    let series: Vec<f64> = draws.draws.iter().map(|d| d.coef.sigma2).collect();
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let se = batch_se(&series, 40);
    ensure!((mean - sigma2_oracle).abs() < 3.0 * se, "sigma2 {mean} vs {sigma2_oracle} (se {se})");
    Ok(())
}

/// Pearson statistic against `expected` probabilities at the 1% level.
fn chi_square_ok(counts: &[usize], expected: &[f64], label: &str) -> Check {
    let total: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let df = expected.iter().filter(|&&p| p > 0.0).count() - 1;
    let crit = ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99);
    ensure!(stat < crit, "{label}: chi-square {stat:.2} >= {crit:.2} (df {df}), counts {counts:?}");
    Ok(())
}

fn prior_space() -> SplineSpace {
    let covs = standard_covariates(2);
    let bounds = [(0.0, 100.0), (2.0, 20.0), (0.0, 2000.0)];
    SplineSpace {
        covariates: covs
            .into_iter()
            .zip(bounds)
            .map(|(c, (lo, hi))| {
                let pos = (1..=5).map(|q| lo + (hi - lo) * q as f64 / 6.0).collect();
                CovariateBasis { covariate: c, knots: CandidateKnots::new(pos, (lo, hi)).unwrap() }
            })
            .collect(),
    }
}

pub fn knot_counts_recover_prior_without_data() -> Check {
    // one covariate keeps the two terms well mixed between retained draws
    let space = one_covariate_space(&[0.1, 0.3, 0.5, 0.7, 0.9]);
    let prior = PriorSpec::default();
    let cfg = SamplerConfig { n_samples: 8000, burn_in: 500, thin: 40, chains: 1, ..SamplerConfig::default() };
    let draws = run_sampler(&[], &space, &prior, &cfg, 99).unwrap();
    ensure!(draws.len() == 8000, "retained {} draws", draws.len());
    let tp = TruncatedPoissonSpec::new(prior.lambda_knots, 5).unwrap();
    let expected: Vec<f64> = (0..=5).map(|k| tp.pmf(k).unwrap()).collect();
    for predictive in [false, true] {
        let mut counts = vec![0usize; 6];
        for d in &draws.draws {
            counts[d.structure.as_ref().unwrap().term(predictive, 0).unwrap().count()] += 1;
        }
        chi_square_ok(&counts, &expected, &format!("predictive={predictive}"))?;
    }
    Ok(())
}

pub fn term_counts_recover_prior_without_data() -> Check {
    let space = prior_space();
    let prior = PriorSpec::default();
    let cfg = SamplerConfig {
        n_samples: 8000,
        burn_in: 500,
        thin: 20,
        chains: 1,
        mode: FitMode::FreeKnotBma,
        ..SamplerConfig::default()
    };
    let draws = run_sampler(&[], &space, &prior, &cfg, 101).unwrap();
    let c = space.len();
    let tp = TruncatedPoissonSpec::new(prior.lambda_terms, 2 * c).unwrap();
    let expected: Vec<f64> = (0..=2 * c).map(|m| tp.pmf(m).unwrap()).collect();
    let mut counts = vec![0usize; 2 * c + 1];
    for d in &draws.draws {
        let s = d.structure.as_ref().unwrap();
        ensure!(s.satisfies_hierarchy(), "hierarchy broken in {s:?}");
        counts[s.term_count()] += 1;
    }
    chi_square_ok(&counts, &expected, "term count")?;
    Ok(())
}

/// Every structure of one covariate with two candidate knots.
fn enumerate_structures() -> Vec<ModelStructure> {
    let states: Vec<KnotState> = (0..4u32).map(|b| KnotState::from_indices(&(0..2).filter(|i| b & (1 << i) != 0).collect::<Vec<_>>())).collect();
    let mut out = vec![ModelStructure::empty(1)];
    for &h in &states {
        out.push(ModelStructure { prognostic: vec![Some(h)], predictive: vec![None] });
        for &f in &states {
            out.push(ModelStructure { prognostic: vec![Some(h)], predictive: vec![Some(f)] });
        }
    }
    out
}

/// Structure prior written out for one covariate: every term count has
/// exactly one feasible term set, knots are TP(k) / C(2, k).
fn ln_structure_prior(s: &ModelStructure, prior: &PriorSpec) -> f64 {
    let terms = TruncatedPoissonSpec::new(prior.lambda_terms, 2).unwrap();
    let knots = TruncatedPoissonSpec::new(prior.lambda_knots, 2).unwrap();
    let choose = [1.0f64, 2.0, 1.0];
    let mut lp = terms.ln_pmf(s.term_count()).unwrap();
    for st in s.prognostic.iter().chain(&s.predictive).flatten() {
        lp += knots.ln_pmf(st.count()).unwrap() - choose[st.count()].ln();
    }
    lp
}

fn structure_frequencies(data: &[PatientRecord], space: &SplineSpace, prior: &PriorSpec, seed: u64) -> (HashMap<ModelStructure, usize>, usize) {
    let cfg = SamplerConfig {
        n_samples: 6000,
        burn_in: 500,
        thin: 8,
        chains: 2,
        mode: FitMode::FreeKnotBma,
        ..SamplerConfig::default()
    };
    let draws = run_sampler(data, space, prior, &cfg, seed).unwrap();
    let mut freq = HashMap::new();
    for d in &draws.draws {
        *freq.entry(d.structure.clone().unwrap()).or_insert(0) += 1;
    }
    (freq, draws.len())
}

pub fn structure_posterior_matches_enumeration_noise_scaled() -> Check {
    let data = synthetic_data(40, 21);
    let space = one_covariate_space(&[0.35, 0.7]);
    let prior = PriorSpec { coef_prior: CoefficientPrior::NoiseScaled, ..PriorSpec::default() };
    let y: Vec<f64> = data.iter().map(|p| p.y).collect();
    let all = enumerate_structures();
    let ln_post: Vec<f64> = all
        .iter()
        .map(|s| {
            let x = design_matrix(&data, &space, s);
            conjugate_posterior(&x, &y, &prior).unwrap().log_marginal + ln_structure_prior(s, &prior)
        })
        .collect();
    let z = log_sum_exp(&ln_post);
    let expected: Vec<f64> = ln_post.iter().map(|l| (l - z).exp()).collect();
    let (freq, _) = structure_frequencies(&data, &space, &prior, 31);
    let counts: Vec<usize> = all.iter().map(|s| freq.get(s).copied().unwrap_or(0)).collect();
    chi_square_ok(&counts, &expected, "noise-scaled structure posterior")?;
    Ok(())
}

pub fn structure_posterior_matches_enumeration_independent_prior() -> Check {
    let data = synthetic_data(40, 22);
    let space = one_covariate_space(&[0.35, 0.7]);
    let prior = PriorSpec::default();
    let y = DVector::from_iterator(data.len(), data.iter().map(|p| p.y));
    let n = data.len();
    let all = enumerate_structures();
    let (nu, lo, hi) = (601, -4.0, 2.0);
    let hu = (hi - lo) / (nu - 1) as f64;
    let w = simpson(nu, hu);
    let ln_post: Vec<f64> = all
        .iter()
        .map(|s| {
            let x = design_matrix(&data, &space, s);
            let xxt = &x * x.transpose() * prior.coef_variance;
            let terms: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(i, wi)| {
                    let u = lo + i as f64 * hu;
                    let s2 = u.exp();
                    let cov = &xxt + DMatrix::identity(n, n) * s2;
                    ln_normal_density(&y, &cov) + ln_inverse_gamma(s2, prior.sigma_shape, prior.sigma_scale) + u + wi.ln()
                })
                .collect();
            log_sum_exp(&terms) + ln_structure_prior(s, &prior)
        })
        .collect();
    let z = log_sum_exp(&ln_post);
    let expected: Vec<f64> = ln_post.iter().map(|l| (l - z).exp()).collect();
    let (freq, _) = structure_frequencies(&data, &space, &prior, derive_seed(32, 0));
    let counts: Vec<usize> = all.iter().map(|s| freq.get(s).copied().unwrap_or(0)).collect();
    chi_square_ok(&counts, &expected, "independent-prior structure posterior")?;
    Ok(())
}
