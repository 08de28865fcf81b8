//! One adaptive enrichment trial per method on the same scenario and seed.

use enrichment::scenario::ScenarioId;
use enrichment::study::StudyConfig;
use enrichment::trial::{run_trial, Method};

fn main() -> enrichment::Result<()> {
    for method in [Method::Cutoff, Method::Fk, Method::FkBma] {
        let cfg = StudyConfig { scenario: ScenarioId::Main(4), method, ..StudyConfig::default() };
        let result = run_trial(&cfg.design(), &cfg.scenario_spec(), 2024)?;
        println!(
            "{:>7}: {:?} after {} patients, p_eff {:?}, enriched prevalence {:.2}",
            method.label(),
            result.decision,
            result.n_enrolled,
            result.p_eff_history.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>(),
            result.subspace.prevalence,
        );
    }
    Ok(())
}
