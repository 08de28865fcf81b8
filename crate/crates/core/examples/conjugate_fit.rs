//! Exact posterior of a fixed-structure regression under both coefficient
//! priors: marginal likelihoods and posterior means.

use enrichment::dist::stream;
use enrichment::regression::{conjugate_posterior, CoefficientPrior, GaussianConditional, PriorSpec};
use enrichment::scenario::{generate_patients, ScenarioId, ScenarioSpec};
use enrichment::spline::{design_matrix, standard_covariates, ModelStructure, SplineSpace};
use nalgebra::DVector;

fn main() -> enrichment::Result<()> {
    let data = generate_patients(300, &ScenarioSpec::new(ScenarioId::Main(6)), None, &mut stream(5));
    let space = SplineSpace::from_data(&data, standard_covariates(2), 5)?;
    let s = ModelStructure::saturated(space.len());
    let x = design_matrix(&data, &space, &s);
    let y: Vec<f64> = data.iter().map(|p| p.y).collect();

    let nig = PriorSpec { coef_prior: CoefficientPrior::NoiseScaled, coef_variance: 20.0, ..PriorSpec::default() };
    let post = conjugate_posterior(&x, &y, &nig)?;
    println!("noise-scaled: log p(y) = {:.3}, E[sigma2 | y] = {:.2}", post.log_marginal, post.sigma2_mean());
    println!("  posterior mean {:?}", post.mean.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>());

    let yv = DVector::from_vec(y);
    let gram = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    for sigma2 in [50.0, 70.0, 90.0] {
        let cond = GaussianConditional::from_gram(&gram, &xty, yv.dot(&yv), yv.len(), sigma2, &PriorSpec::default())?;
        println!("independent prior, sigma2 {sigma2}: log p(y | sigma2) = {:.3}", cond.log_marginal);
    }
    Ok(())
}
