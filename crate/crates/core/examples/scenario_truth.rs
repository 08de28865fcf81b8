//! Monte Carlo prevalence of the effective subspace and mean effect inside
//! it for every scenario.

use enrichment::scenario::{monte_carlo_truth, ScenarioId, ScenarioSpec};

fn main() {
    println!("scenario  prevalence  delta");
    for id in ScenarioId::all_main().chain([ScenarioId::A1, ScenarioId::A2]) {
        let (p, d) = monte_carlo_truth(&ScenarioSpec::new(id), 200_000, 1);
        println!("{id:>8?}  {p:>10.3}  {d:>5.2}");
    }
}
