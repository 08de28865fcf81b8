//! Reversible-jump fit with term selection on one simulated dataset:
//! move acceptance, predictive-term inclusion probabilities and the
//! estimated effect at a few biomarker profiles.

use enrichment::dist::stream;
use enrichment::posterior::inclusion_probabilities;
use enrichment::regression::PriorSpec;
use enrichment::sampler::{run_sampler, FitMode, SamplerConfig};
use enrichment::scenario::{generate_patients, ScenarioId, ScenarioSpec};
use enrichment::spline::{standard_covariates, SplineSpace};

fn main() -> enrichment::Result<()> {
    let scenario = ScenarioSpec::new(ScenarioId::Main(3));
    let data = generate_patients(400, &scenario, None, &mut stream(11));
    let space = SplineSpace::from_data(&data, standard_covariates(2), 5)?;
    let cfg = SamplerConfig { n_samples: 1000, burn_in: 2000, thin: 2, chains: 2, mode: FitMode::FreeKnotBma, ..SamplerConfig::default() };
    let draws = run_sampler(&data, &space, &PriorSpec::default(), &cfg, 12)?;

    let st = &draws.stats;
    println!(
        "knot moves accepted {}/{}, term moves accepted {}/{}",
        st.knot_accepted, st.knot_proposed, st.term_accepted, st.term_proposed
    );
    for (name, p) in inclusion_probabilities(&draws) {
        println!("P({name} predictive) = {p:.3}");
    }
    let ev = draws.evaluator();
    for hb in [10.0, 50.0, 120.0] {
        let x = [hb, 8.0];
        println!("HB {hb:>5}: P(gamma > 0) = {:.3}, true gamma = {}", ev.prob_positive(&x), scenario.true_gamma(&x));
    }
    Ok(())
}
