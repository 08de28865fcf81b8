//! Structural invariants checked over randomly generated inputs.

use enrichment::dist::{
    derive_seed, sample_truncated_normal, sample_truncated_t, stream, TruncatedNormalSpec, TruncatedPoissonSpec,
    TruncatedTSpec,
};
use enrichment::regression::{
    conjugate_posterior, gamma_at, CoefficientPrior, CoefficientState, CutoffSpec, Formulation, GaussianConditional,
    PatientRecord, PriorSpec,
};
use enrichment::sampler::{
    apply_knot_move, feasible_term_moves, ln_knot_proposal, reverse_knot_move, ln_term_proposal, run_sampler, FitMode,
    KnotMove, SamplerConfig, StructurePrior, TermMove,
};
use enrichment::scenario::{generate_patients, ScenarioId, ScenarioSpec};
use enrichment::spline::{design_matrix, standard_covariates, treatment_column, KnotState, ModelStructure, SplineSpace};
use enrichment::study::StudyConfig;
use enrichment::trial::{run_trial, Method};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn patients(n: usize, seed: u64) -> Vec<PatientRecord> {
    generate_patients(n, &ScenarioSpec::new(ScenarioId::Main(4)), None, &mut stream(seed))
}

fn space_for(data: &[PatientRecord]) -> SplineSpace {
    SplineSpace::from_data(data, standard_covariates(2), 5).unwrap()
}

/// Random hierarchy-respecting structure over `c` covariates with 5 candidates.
fn arb_structure(c: usize) -> impl Strategy<Value = ModelStructure> {
    prop::collection::vec((0u8..3, 0u32..32, 0u32..32), c).prop_map(|terms| {
        let mut s = ModelStructure::empty(terms.len());
        for (i, (level, h, f)) in terms.into_iter().enumerate() {
            if level >= 1 {
                s.prognostic[i] = Some(KnotState::from_indices(&bits(h)));
            }
            if level == 2 {
                s.predictive[i] = Some(KnotState::from_indices(&bits(f)));
            }
        }
        s
    })
}

fn bits(b: u32) -> Vec<usize> {
    (0..5).filter(|i| b & (1 << i) != 0).collect()
}

proptest! {
    #[test]
    fn truncated_t_stays_in_bounds(
        seed in any::<u64>(),
        df in 0.5f64..30.0,
        scale in 0.1f64..60.0,
        shift in -50.0f64..50.0,
        lower in -100.0f64..100.0,
        width in 0.01f64..300.0,
    ) {
        let spec = TruncatedTSpec { df, scale, shift, lower, upper: lower + width };
        let mut rng = stream(seed);
        for _ in 0..20 {
            let v = sample_truncated_t(&spec, &mut rng).unwrap();
            prop_assert!(v >= spec.lower && v <= spec.upper);
        }
    }

    #[test]
    fn truncated_normal_stays_in_bounds(
        seed in any::<u64>(),
        mean in -50.0f64..50.0,
        sd in 0.1f64..30.0,
        lower in -100.0f64..100.0,
        width in prop_oneof![Just(f64::INFINITY), 0.01f64..200.0],
    ) {
        let spec = TruncatedNormalSpec { mean, sd, lower, upper: lower + width };
        let mut rng = stream(seed);
        for _ in 0..20 {
            let v = sample_truncated_normal(&spec, &mut rng).unwrap();
            prop_assert!(v >= spec.lower && v <= spec.upper);
        }
    }

    #[test]
    fn truncated_poisson_pmf_normalised(rate in 0.05f64..12.0, max in 0usize..15) {
        let tp = TruncatedPoissonSpec::new(rate, max).unwrap();
        let total: f64 = (0..=max).map(|k| tp.pmf(k).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn streams_reproduce(seed in any::<u64>(), index in any::<u64>()) {
        let a: Vec<u64> = (0..8).map({ let mut r = stream(seed); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = stream(seed); move |_| r.random() }).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(derive_seed(seed, index), derive_seed(seed, index));
        prop_assert_ne!(derive_seed(seed, index), derive_seed(seed, index.wrapping_add(1)));
    }

    #[test]
    fn cutoff_indicators_idempotent(x in prop::collection::vec(0.0f64..150.0, 3)) {
        let spec = CutoffSpec::three_biomarker();
        let z = spec.indicators(&x);
        let as_values: Vec<f64> = z.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let unit = CutoffSpec { thresholds: vec![0.5; 3] };
        prop_assert_eq!(unit.indicators(&as_values), z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn design_width_matches_structure(seed in any::<u64>(), s in arb_structure(3)) {
        let data = patients(40, seed);
        let space = space_for(&data);
        let x = design_matrix(&data, &space, &s);
        let expected = 2 + s.prognostic.iter().chain(&s.predictive).flatten().map(|k| k.count() + 1).sum::<usize>();
        prop_assert_eq!(x.ncols(), expected);
        prop_assert_eq!(x.nrows(), 40);
    }

    #[test]
    fn knot_birth_then_death_restores_design(seed in any::<u64>(), s in arb_structure(3), pick in any::<prop::sample::Index>()) {
        let data = patients(30, seed);
        let space = space_for(&data);
        let terms: Vec<(bool, usize, KnotState)> = s.active_terms().filter(|t| t.2.count() < 5).collect();
        prop_assume!(!terms.is_empty());
        let (pred, c, st) = *pick.get(&terms);
        let slot = st.inactive(5).next().unwrap();
        let mut grown = s.clone();
        *grown.term_mut(pred, c) = Some(apply_knot_move(st, KnotMove::Birth(slot)));
        let mut back = grown.clone();
        *back.term_mut(pred, c) = Some(apply_knot_move(grown.term(pred, c).unwrap(), KnotMove::Death(slot)));
        prop_assert_eq!(&back, &s);
        let a = design_matrix(&data, &space, &s);
        let b = design_matrix(&data, &space, &back);
        prop_assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn marginal_likelihood_ignores_row_order(seed in any::<u64>(), s in arb_structure(3)) {
        let data = patients(50, seed);
        let space = space_for(&data);
        let mut shuffled = data.clone();
        let mut rng = stream(derive_seed(seed, 9));
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let x1 = design_matrix(&data, &space, &s);
        let x2 = design_matrix(&shuffled, &space, &s);
        let y1: Vec<f64> = data.iter().map(|p| p.y).collect();
        let y2: Vec<f64> = shuffled.iter().map(|p| p.y).collect();
        let nig = PriorSpec { coef_prior: CoefficientPrior::NoiseScaled, ..PriorSpec::default() };
        let a = conjugate_posterior(&x1, &y1, &nig).unwrap().log_marginal;
        let b = conjugate_posterior(&x2, &y2, &nig).unwrap().log_marginal;
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));

        let cond = |x: &DMatrix<f64>, y: &[f64]| {
            let yv = nalgebra::DVector::from_column_slice(y);
            GaussianConditional::from_gram(&(x.transpose() * x), &(x.transpose() * &yv), yv.dot(&yv), y.len(), 60.0, &PriorSpec::default())
                .unwrap()
                .log_marginal
        };
        let (a, b) = (cond(&x1, &y1), cond(&x2, &y2));
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
    }

    #[test]
    fn no_treatment_coefficients_no_effect(
        seed in any::<u64>(),
        s in arb_structure(3),
        x in (0.0f64..150.0, 2.0f64..20.0),
        scale in 0.1f64..20.0,
    ) {
        let data = patients(30, seed);
        let space = space_for(&data);
        let p = s.column_count();
        let t = treatment_column(&s);
        let mut rng = stream(seed);
        let beta: Vec<f64> = (0..p).map(|j| if j < t { scale * (rng.random::<f64>() - 0.5) } else { 0.0 }).collect();
        let coef = CoefficientState { beta, sigma2: 1.0 };
        let point = [x.0, x.1];
        prop_assert_eq!(gamma_at(&point, Formulation::Spline { space: &space, structure: &s }, &coef), 0.0);

        let cut = CutoffSpec::two_biomarker();
        let half = cut.column_count() / 2;
        let beta: Vec<f64> = (0..cut.column_count()).map(|j| if j < half { 1.0 + j as f64 } else { 0.0 }).collect();
        prop_assert_eq!(gamma_at(&point, Formulation::Cutoff(&cut), &CoefficientState { beta, sigma2: 1.0 }), 0.0);
    }
}

// Exact move reversibility: the Metropolis-Hastings log ratio of a move and
// of its reverse must cancel, so ln q(A->B) + ln q(B->A) terms add to zero.

fn knot_ln_q(st: KnotState, total: usize, mv: KnotMove) -> f64 {
    let next = apply_knot_move(st, mv);
    ln_knot_proposal(next, total, reverse_knot_move(mv)) - ln_knot_proposal(st, total, mv)
}

/// The proposal correction of a term move, with the prior draw of an
/// added term's knots folded in.
fn term_ln_q(prior: &StructurePrior, s: &ModelStructure, mv: TermMove, knots: KnotState) -> (ModelStructure, f64) {
    let mut next = s.clone();
    match mv {
        TermMove::Add { predictive, covariate } => {
            *next.term_mut(predictive, covariate) = Some(knots);
            let rev = TermMove::Remove { predictive, covariate };
            let q = ln_term_proposal(&next, rev) - ln_term_proposal(s, mv) - prior.ln_knots(covariate, knots);
            (next, q)
        }
        TermMove::Remove { predictive, covariate } => {
            let old = s.term(predictive, covariate).unwrap();
            *next.term_mut(predictive, covariate) = None;
            let rev = TermMove::Add { predictive, covariate };
            let q = ln_term_proposal(&next, rev) + prior.ln_knots(covariate, old) - ln_term_proposal(s, mv);
            (next, q)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knot_moves_reverse_exactly(bits_in in 0u32..32, a in 0usize..5, b in 0usize..5) {
        let st = KnotState::from_indices(&bits(bits_in));
        let moves = [
            (!st.contains(a)).then_some(KnotMove::Birth(a)),
            st.contains(a).then_some(KnotMove::Death(a)),
            (st.contains(a) && !st.contains(b)).then_some(KnotMove::Relocate { from: a, to: b }),
        ];
        for mv in moves.into_iter().flatten() {
            let next = apply_knot_move(st, mv);
            let back = knot_ln_q(next, 5, reverse_knot_move(mv));
            prop_assert!((knot_ln_q(st, 5, mv) + back).abs() < 1e-10);
            prop_assert_eq!(apply_knot_move(next, reverse_knot_move(mv)), st);
        }
    }

    #[test]
    fn term_moves_reverse_exactly(s in arb_structure(3), pick in any::<prop::sample::Index>(), fresh in 0u32..32) {
        let data = patients(30, 1);
        let space = space_for(&data);
        let prior = StructurePrior::new(&space, &PriorSpec::default(), FitMode::FreeKnotBma).unwrap();
        let (add, remove) = feasible_term_moves(&s);
        let all: Vec<TermMove> = add.into_iter().chain(remove).collect();
        let mv = *pick.get(&all);
        let knots = KnotState::from_indices(&bits(fresh));
        let (next, forward) = term_ln_q(&prior, &s, mv, knots);
        prop_assert!(next.satisfies_hierarchy());
        let (rev, removed) = match mv {
            TermMove::Add { predictive, covariate } => (TermMove::Remove { predictive, covariate }, knots),
            TermMove::Remove { predictive, covariate } => {
                (TermMove::Add { predictive, covariate }, s.term(predictive, covariate).unwrap())
            }
        };
        let (back, backward) = term_ln_q(&prior, &next, rev, removed);
        prop_assert_eq!(&back, &s);
        prop_assert!((forward + backward).abs() < 1e-10, "{} + {}", forward, backward);
        // with the priors included the acceptance ratios are reciprocal
        let ln_r = prior.ln_prior(&next) - prior.ln_prior(&s) + forward;
        let ln_r_back = prior.ln_prior(&s) - prior.ln_prior(&next) + backward;
        prop_assert!((ln_r + ln_r_back).abs() < 1e-10);
    }
}

#[test]
fn model_averaged_draws_respect_hierarchy() {
    let data = patients(80, 5);
    let space = space_for(&data);
    let cfg = SamplerConfig {
        n_samples: 150,
        burn_in: 100,
        thin: 2,
        chains: 3,
        mode: FitMode::FreeKnotBma,
        ..SamplerConfig::default()
    };
    let draws = run_sampler(&data, &space, &PriorSpec::default(), &cfg, 3).unwrap();
    assert_eq!(draws.len(), cfg.chains * cfg.n_samples);
    for d in &draws.draws {
        let s = d.structure.as_ref().unwrap();
        assert!(s.satisfies_hierarchy());
        assert_eq!(d.coef.beta.len(), s.column_count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trial_sizes_follow_stopping(seed in any::<u64>(), scenario in 1u8..=8) {
        let cfg = StudyConfig { method: Method::Cutoff, scenario: ScenarioId::Main(scenario), ..StudyConfig::default() };
        let design = cfg.design();
        let a = run_trial(&design, &cfg.scenario_spec(), seed).unwrap();
        prop_assume!(!a.aborted);
        if a.stopped_early {
            prop_assert_eq!(a.n_enrolled, 300);
            prop_assert_eq!(a.p_eff_history.len(), 1);
        } else {
            prop_assert_eq!(a.n_enrolled, 500);
            prop_assert_eq!(a.p_eff_history.len(), 2);
        }
        let b = run_trial(&design, &cfg.scenario_spec(), seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
