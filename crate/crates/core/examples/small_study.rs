//! A short replicated study and its operating-characteristics table.

use enrichment::scenario::ScenarioId;
use enrichment::study::{characteristics_table, run_study, StudyConfig};
use enrichment::trial::Method;

fn main() -> enrichment::Result<()> {
    let mut rows = Vec::new();
    for scenario in [ScenarioId::Main(1), ScenarioId::Main(6)] {
        let cfg = StudyConfig { scenario, method: Method::Cutoff, replications: 40, ..StudyConfig::default() };
        let out = run_study(&cfg)?;
        rows.push(out.characteristics);
    }
    characteristics_table(&rows).write(std::io::stdout())?;
    Ok(())
}
