//! Degree-1 spline bases: hat functions for a knot subset and the design
//! columns a structure produces.

use enrichment::dist::stream;
use enrichment::scenario::{generate_patients, ScenarioId, ScenarioSpec};
use enrichment::spline::{basis_eval, design_matrix, standard_covariates, KnotState, ModelStructure, SplineSpace};

fn main() -> enrichment::Result<()> {
    let data = generate_patients(200, &ScenarioSpec::new(ScenarioId::Main(4)), None, &mut stream(3));
    let space = SplineSpace::from_data(&data, standard_covariates(2), 5)?;
    for cb in &space.covariates {
        println!("{:>6} candidates {:?}", cb.covariate.name, cb.knots.positions().iter().map(|k| k.round()).collect::<Vec<_>>());
    }

    let hb = &space.covariates[0].knots;
    let state = KnotState::from_indices(&[1, 3]);
    for x in [5.0, 25.0, 45.0, 90.0] {
        let b = basis_eval(x, state, hb);
        println!("HB {x:>5}: {:?}", b.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }

    let mut s = ModelStructure::saturated(space.len());
    s.prognostic[0] = Some(state);
    s.predictive[0] = Some(KnotState::from_indices(&[2]));
    s.predictive[2] = None;
    let x = design_matrix(&data, &space, &s);
    println!("structure with {} terms -> {} x {} design", s.term_count(), x.nrows(), x.ncols());
    Ok(())
}
