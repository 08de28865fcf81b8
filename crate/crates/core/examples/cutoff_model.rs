//! The dichotomised-biomarker model: conjugate draws and the effect in
//! each of the four biomarker cells.

use enrichment::dist::stream;
use enrichment::regression::{CutoffSpec, PriorSpec};
use enrichment::sampler::fit_cutoff;
use enrichment::scenario::{generate_patients, ScenarioId, ScenarioSpec};

fn main() -> enrichment::Result<()> {
    let data = generate_patients(400, &ScenarioSpec::new(ScenarioId::Main(2)), None, &mut stream(8));
    let spec = CutoffSpec::two_biomarker();
    let draws = fit_cutoff(&data, &spec, &PriorSpec::default(), 2000, 9)?;
    let ev = draws.evaluator();
    for (hb, dhr) in [(30.0, 5.0), (30.0, 12.0), (90.0, 5.0), (90.0, 12.0)] {
        let g = ev.gamma_draws(&[hb, dhr]);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        println!("HB {hb:>4} dHR {dhr:>4}: mean effect {mean:>5.2}, P(> 0) = {:.3}", ev.prob_positive(&[hb, dhr]));
    }
    Ok(())
}
