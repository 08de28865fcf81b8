//! Two-stage adaptive enrichment trial: effective-subspace estimation,
//! interim efficacy/futility stopping, enrichment of the remaining
//! enrollment and the final analysis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{derive_seed, sample_bernoulli, stream};
use crate::error::{config, Error, Result};
use crate::posterior::{inclusion_probabilities, prune, GammaEvaluator, PosteriorDraws};
use crate::regression::{CutoffSpec, PatientRecord, PriorSpec};
use crate::sampler::{fit_cutoff, run_sampler, FitMode, SamplerConfig};
use crate::spline::{standard_covariates, SplineSpace};

/// Candidate interior knots per spline term.
pub const CANDIDATE_KNOTS: usize = 5;
/// Inclusion-probability threshold for keeping a predictive variable.
pub const PRUNE_THRESHOLD: f64 = 0.10;
/// Enrichment gives up when fewer than this fraction of a window is accepted.
pub const MIN_ENRICH_ACCEPTANCE: f64 = 1e-3;
pub const ENRICH_WINDOW: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cutoff,
    Fk,
    #[serde(alias = "fkbma")]
    FkBma,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Cutoff => "Cutoff",
            Method::Fk => "FK",
            Method::FkBma => "FK-BMA",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cutoff" => Ok(Method::Cutoff),
            "fk" => Ok(Method::Fk),
            "fkbma" | "fk-bma" => Ok(Method::FkBma),
            other => config(format!("method: unknown method {other:?} (expected cutoff, fk or fkbma)")),
        }
    }
}

/// How the futility cutoff `B2` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FutilityRule {
    /// Stop when `p_eff <= 1 - B2`.
    Complement,
    /// Stop when `p_eff < B2`.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n_max: usize,
    pub interim_at: Vec<usize>,
    pub b1: f64,
    pub b2: f64,
    pub alpha: f64,
    pub prevalence_bounds: (f64, f64),
    pub method: Method,
    pub randomization: f64,
    pub futility_rule: FutilityRule,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_max: 500,
            interim_at: vec![300],
            b1: 0.98,
            b2: 0.8,
            alpha: 0.05,
            prevalence_bounds: (0.05, 0.95),
            method: Method::Fk,
            randomization: 0.5,
            futility_rule: FutilityRule::Complement,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.b1) || !open(self.b2) {
            return config("trial.b1 and trial.b2 must lie in (0, 1)");
        }
        if !open(self.alpha) || !open(self.randomization) {
            return config("trial.alpha and trial.randomization must lie in (0, 1)");
        }
        let (lo, hi) = self.prevalence_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return config("trial.prevalence_bounds must satisfy 0 < lower < upper < 1");
        }
        if self.interim_at.windows(2).any(|w| w[0] >= w[1]) {
            return config("trial.interim_at must be strictly increasing");
        }
        if self.interim_at.first().is_some_and(|&n| n == 0) || self.interim_at.last().is_some_and(|&n| n >= self.n_max) {
            return config("trial.interim_at must lie strictly between 0 and trial.n_max");
        }
        if self.interim_at.len() > 1 {
            return config("trial.interim_at: only one interim analysis is supported");
        }
        Ok(())
    }
}

/// Everything needed to run one trial besides the patient source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    pub trial: TrialConfig,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    /// Biomarkers entering the fitted model (2, or 3 with VCB).
    pub biomarkers: usize,
    /// Conjugate draws used by the cutoff model.
    pub cutoff_draws: usize,
}

impl Default for TrialDesign {
    fn default() -> Self {
        Self {
            trial: TrialConfig::default(),
            sampler: SamplerConfig::default(),
            prior: PriorSpec::default(),
            biomarkers: 2,
            cutoff_draws: 2000,
        }
    }
}

impl TrialDesign {
    pub fn validate(&self) -> Result<()> {
        self.trial.validate()?;
        self.sampler.validate()?;
        self.prior.validate()?;
        if !(2..=3).contains(&self.biomarkers) {
            return config("design.biomarkers must be 2 or 3");
        }
        if self.cutoff_draws == 0 {
            return config("design.cutoff_draws must be positive");
        }
        Ok(())
    }
}

/// Source of trial candidates.
pub trait PatientSource {
    /// Biomarker vector of the next screened candidate.
    fn biomarkers(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    /// Outcome of an enrolled patient.
    fn outcome(&self, x: &[f64], treated: bool, rng: &mut dyn rand::RngCore) -> f64;
}

/// Posterior membership rule `P(gamma(x) > 0 | D) > 1 - alpha`.
#[derive(Debug, Clone)]
pub struct MembershipRule {
    evaluator: GammaEvaluator,
    alpha: f64,
    widened: bool,
}

impl MembershipRule {
    pub fn new(evaluator: GammaEvaluator, alpha: f64) -> Self {
        Self { evaluator, alpha, widened: false }
    }

    pub fn widened(&self) -> bool {
        self.widened
    }

    pub fn evaluator(&self) -> &GammaEvaluator {
        &self.evaluator
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.widened || self.evaluator.prob_positive(x) > 1.0 - self.alpha
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceEstimate {
    /// Member fraction of the reference sample before any widening.
    pub prevalence: f64,
    pub widened: bool,
    /// Membership of each reference point (all true when widened).
    #[serde(skip)]
    pub members: Vec<bool>,
    #[serde(skip)]
    pub rule: Option<MembershipRule>,
}

impl SubspaceEstimate {
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.rule {
            Some(r) => r.contains(x),
            None => self.widened,
        }
    }
}

/// Effective subspace over `reference`, widened when its
/// prevalence leaves the open interval `bounds`.
pub fn effective_subspace(
    draws: &PosteriorDraws,
    reference: &[Vec<f64>],
    alpha: f64,
    bounds: (f64, f64),
) -> SubspaceEstimate {
    let mut rule = MembershipRule::new(draws.evaluator(), alpha);
    let members: Vec<bool> = reference.iter().map(|x| rule.contains(x)).collect();
    let prevalence = if reference.is_empty() {
        0.0
    } else {
        members.iter().filter(|&&m| m).count() as f64 / reference.len() as f64
    };
    let widened = !(prevalence > bounds.0 && prevalence < bounds.1);
    rule.widened = widened;
    let members = if widened { vec![true; reference.len()] } else { members };
    SubspaceEstimate { prevalence, widened, members, rule: Some(rule) }
}

/// Fraction of draws whose effect averaged over the member reference points
/// is positive.
pub fn posterior_efficacy_prob(subspace: &SubspaceEstimate, reference: &[Vec<f64>]) -> f64 {
    let Some(rule) = &subspace.rule else {
        return 0.0;
    };
    let ev = rule.evaluator();
    let mut sums = vec![0.0; ev.n_draws()];
    let mut count = 0usize;
    for (x, &m) in reference.iter().zip(&subspace.members) {
        if m {
            for (s, g) in sums.iter_mut().zip(ev.gamma_draws(x)) {
                *s += g;
            }
            count += 1;
        }
    }
    if count == 0 || sums.is_empty() {
        return 0.0;
    }
    sums.iter().filter(|&&s| s > 0.0).count() as f64 / sums.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterimAction {
    Continue,
    StopEfficacy,
    StopFutility,
}

pub fn interim_decision(p_eff: f64, config: &TrialConfig) -> InterimAction {
    let futile = match config.futility_rule {
        // tolerance keeps 0.2 <= 1 - 0.8 true in floating point
        FutilityRule::Complement => p_eff <= 1.0 - config.b2 + 1e-12,
        FutilityRule::Below => p_eff < config.b2,
    };
    if p_eff >= config.b1 {
        InterimAction::StopEfficacy
    } else if futile {
        InterimAction::StopFutility
    } else {
        InterimAction::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Efficacy,
    Futility,
    NoEffect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub decision: Decision,
    pub stopped_early: bool,
    pub n_enrolled: usize,
    pub subspace: SubspaceEstimate,
    /// Pruned predictive variables (FK-BMA only).
    pub selected_variables: Option<Vec<String>>,
    pub p_eff_history: Vec<f64>,
    /// Enrichment starved: the replication is flagged and excluded.
    pub aborted: bool,
}

impl TrialResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Whether `x` should be treated under the trial's conclusion.
pub fn recommend(x: &[f64], result: &TrialResult) -> bool {
    result.decision == Decision::Efficacy && !result.aborted && result.subspace.contains(x)
}

/// Screening counts over the current window of candidates.
#[derive(Debug, Clone, Default)]
pub struct EnrichWindow {
    screened: usize,
    accepted: usize,
}

/// Screens candidates until one satisfies `subspace`. `None` once a full
/// window of candidates has an acceptance rate below the floor.
pub fn enrich<S: PatientSource + ?Sized, R: Rng>(
    source: &S,
    subspace: &SubspaceEstimate,
    window: &mut EnrichWindow,
    rng: &mut R,
) -> Option<Vec<f64>> {
    loop {
        let x = source.biomarkers(rng);
        let ok = subspace.widened || subspace.contains(&x);
        window.screened += 1;
        window.accepted += ok as usize;
        if window.screened == ENRICH_WINDOW {
            if (window.accepted as f64) < MIN_ENRICH_ACCEPTANCE * ENRICH_WINDOW as f64 {
                return None;
            }
            *window = EnrichWindow::default();
        }
        if ok {
            return Some(x);
        }
    }
}

fn enroll<S: PatientSource + ?Sized, R: Rng>(source: &S, x: Vec<f64>, p_treat: f64, rng: &mut R) -> PatientRecord {
    let t = sample_bernoulli(p_treat, rng);
    let y = source.outcome(&x, t, rng);
    PatientRecord { y, t, x }
}

/// Fits the configured model to `data`.
pub fn fit_model(data: &[PatientRecord], design: &TrialDesign, seed: u64) -> Result<PosteriorDraws> {
    match design.trial.method {
        Method::Cutoff => {
            let spec = if design.biomarkers == 3 { CutoffSpec::three_biomarker() } else { CutoffSpec::two_biomarker() };
            fit_cutoff(data, &spec, &design.prior, design.cutoff_draws, seed)
        }
        Method::Fk | Method::FkBma => {
            let space = SplineSpace::from_data(data, standard_covariates(design.biomarkers), CANDIDATE_KNOTS)?;
            let mut sampler = design.sampler.clone();
            sampler.mode = if design.trial.method == Method::Fk { FitMode::FreeKnot } else { FitMode::FreeKnotBma };
            run_sampler(data, &space, &design.prior, &sampler, seed)
        }
    }
}

struct Analysis {
    draws: PosteriorDraws,
    subspace: SubspaceEstimate,
    p_eff: f64,
    selected: Option<Vec<String>>,
}

fn analyse(data: &[PatientRecord], design: &TrialDesign, seed: u64) -> Result<Analysis> {
    let draws = fit_model(data, design, seed)?;
    let reference: Vec<Vec<f64>> = data.iter().map(|p| p.x.clone()).collect();
    let subspace = effective_subspace(&draws, &reference, design.trial.alpha, design.trial.prevalence_bounds);
    let p_eff = posterior_efficacy_prob(&subspace, &reference);
    let selected = (design.trial.method == Method::FkBma)
        .then(|| prune(&inclusion_probabilities(&draws), PRUNE_THRESHOLD));
    Ok(Analysis { draws, subspace, p_eff, selected })
}

/// Runs one replication.
///
/// Enrollment, interim fit and final fit each use their own stream derived
/// from `seed`, so the result depends only on `(design, source, seed)`.
pub fn run_trial<S: PatientSource + ?Sized>(design: &TrialDesign, source: &S, seed: u64) -> Result<TrialResult> {
    run_trial_detailed(design, source, seed).map(|run| run.result)
}

/// A replication together with the enrolled data and the last model fit.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub result: TrialResult,
    pub data: Vec<PatientRecord>,
    pub fit: PosteriorDraws,
}

/// As [`run_trial`], keeping the data and the draws of the last analysis.
pub fn run_trial_detailed<S: PatientSource + ?Sized>(design: &TrialDesign, source: &S, seed: u64) -> Result<TrialRun> {
    design.validate()?;
    let cfg = &design.trial;
    let mut rng = stream(derive_seed(seed, 0));
    let n_interim = cfg.interim_at.first().copied().unwrap_or(cfg.n_max);
    let mut data: Vec<PatientRecord> = (0..n_interim)
        .map(|_| {
            let x = source.biomarkers(&mut rng);
            enroll(source, x, cfg.randomization, &mut rng)
        })
        .collect();
    let mut history = Vec::new();

    if n_interim < cfg.n_max {
        let interim = analyse(&data, design, derive_seed(seed, 1))?;
        history.push(interim.p_eff);
        let action = interim_decision(interim.p_eff, cfg);
        if action != InterimAction::Continue {
            let result = TrialResult {
                decision: if action == InterimAction::StopEfficacy { Decision::Efficacy } else { Decision::Futility },
                stopped_early: true,
                n_enrolled: data.len(),
                subspace: interim.subspace,
                selected_variables: interim.selected,
                p_eff_history: history,
                aborted: false,
            };
            return Ok(TrialRun { result, data, fit: interim.draws });
        }
        let mut window = EnrichWindow::default();
        while data.len() < cfg.n_max {
            let Some(x) = enrich(source, &interim.subspace, &mut window, &mut rng) else {
                let result = TrialResult {
                    decision: Decision::NoEffect,
                    stopped_early: false,
                    n_enrolled: data.len(),
                    subspace: interim.subspace,
                    selected_variables: interim.selected,
                    p_eff_history: history,
                    aborted: true,
                };
                return Ok(TrialRun { result, data, fit: interim.draws });
            };
            data.push(enroll(source, x, cfg.randomization, &mut rng));
        }
    }

    let last = analyse(&data, design, derive_seed(seed, 2))?;
    history.push(last.p_eff);
    let decision = if last.p_eff >= cfg.b1 { Decision::Efficacy } else { Decision::NoEffect };
    let result = TrialResult {
        decision,
        stopped_early: false,
        n_enrolled: data.len(),
        subspace: last.subspace,
        selected_variables: last.selected,
        p_eff_history: history,
        aborted: false,
    };
    Ok(TrialRun { result, data, fit: last.draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{Draw, EffectModel, MoveStats};
    use crate::regression::CoefficientState;

    /// Cutoff draws with a given per-cell effect in every draw.
    fn cutoff_draws(cells: [[f64; 4]; 1], jitter: &[f64]) -> PosteriorDraws {
        let spec = CutoffSpec::two_biomarker();
        // beta layout: 4 prognostic, then phi, z1, z2, z1z2 effects
        let c = cells[0];
        let draws = jitter
            .iter()
            .enumerate()
            .map(|(i, &j)| Draw {
                chain: 0,
                iteration: i,
                structure: None,
                coef: CoefficientState {
                    beta: vec![0.0, 0.0, 0.0, 0.0, c[0] + j, c[1] - c[0], c[2] - c[0], c[3] - c[1] - c[2] + c[0]],
                    sigma2: 1.0,
                },
            })
            .collect();
        PosteriorDraws { model: EffectModel::Cutoff(spec), chains: 1, draws, stats: MoveStats::default() }
    }

    fn grid() -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for hb in [20.0, 50.0, 70.0, 100.0] {
            for hr in [4.0, 7.0, 9.0, 12.0, 15.0] {
                out.push(vec![hb, hr]);
            }
        }
        out
    }

    #[test]
    fn constant_positive_effect_widens() {
        let d = cutoff_draws([[5.0; 4]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        assert_eq!(s.prevalence, 1.0);
        assert!(s.widened);
        assert!(s.members.iter().all(|&m| m));
        assert_eq!(posterior_efficacy_prob(&s, &grid()), 1.0);
    }

    #[test]
    fn constant_negative_effect_widens() {
        let d = cutoff_draws([[-5.0; 4]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        assert_eq!(s.prevalence, 0.0);
        assert!(s.widened);
        assert_eq!(posterior_efficacy_prob(&s, &grid()), 0.0);
    }

    #[test]
    fn rectangle_subspace_is_recovered() {
        // effect only where HB > 60 and dHR > 8
        let d = cutoff_draws([[-1.0, -1.0, -1.0, 5.0]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        assert!(!s.widened);
        for (x, &m) in grid().iter().zip(&s.members) {
            assert_eq!(m, x[0] > 60.0 && x[1] > 8.0);
        }
        assert_eq!(posterior_efficacy_prob(&s, &grid()), 1.0);
    }

    #[test]
    fn symmetric_draws_give_half() {
        let jitter: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = cutoff_draws([[0.0; 4]], &jitter);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        assert!((posterior_efficacy_prob(&s, &grid()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn higher_alpha_gives_superset() {
        let jitter: Vec<f64> = (0..200).map(|i| i as f64 / 200.0 * 6.0 - 1.0).collect();
        let d = cutoff_draws([[-2.0, 0.0, 0.5, 3.0]], &jitter);
        let narrow = effective_subspace(&d, &grid(), 0.01, (0.0001, 0.9999));
        let wide = effective_subspace(&d, &grid(), 0.2, (0.0001, 0.9999));
        for (a, b) in narrow.members.iter().zip(&wide.members) {
            assert!(!a | b);
        }
    }

    #[test]
    fn interim_rule_examples() {
        let cfg = TrialConfig::default();
        assert_eq!(interim_decision(0.99, &cfg), InterimAction::StopEfficacy);
        assert_eq!(interim_decision(0.15, &cfg), InterimAction::StopFutility);
        assert_eq!(interim_decision(0.2, &cfg), InterimAction::StopFutility);
        assert_eq!(interim_decision(0.5, &cfg), InterimAction::Continue);
        let below = TrialConfig { futility_rule: FutilityRule::Below, ..cfg };
        assert_eq!(interim_decision(0.5, &below), InterimAction::StopFutility);
    }

    #[test]
    fn config_validation() {
        assert!(TrialConfig::default().validate().is_ok());
        let bad = TrialConfig { interim_at: vec![500], ..TrialConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrialConfig { b1: 1.0, ..TrialConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!("fkbma".parse::<Method>().unwrap(), Method::FkBma);
        assert!("lasso".parse::<Method>().is_err());
    }

    struct Uniform;

    impl PatientSource for Uniform {
        fn biomarkers(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
            vec![rng.random_range(0.0..120.0), rng.random_range(2.0..20.0)]
        }
        fn outcome(&self, _x: &[f64], _t: bool, rng: &mut dyn rand::RngCore) -> f64 {
            rng.random_range(-1.0..1.0)
        }
    }

    #[test]
    fn enrichment_only_admits_members() {
        let d = cutoff_draws([[-1.0, -1.0, -1.0, 5.0]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        let mut rng = stream(3);
        for _ in 0..200 {
            let x = enrich(&Uniform, &s, &mut EnrichWindow::default(), &mut rng).unwrap();
            assert!(x[0] > 60.0 && x[1] > 8.0);
        }
    }

    #[test]
    fn widened_enrichment_passes_through() {
        let d = cutoff_draws([[5.0; 4]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        let mut a = stream(4);
        let mut b = stream(4);
        for _ in 0..50 {
            assert_eq!(enrich(&Uniform, &s, &mut EnrichWindow::default(), &mut a).unwrap(), Uniform.biomarkers(&mut b));
        }
    }

    #[test]
    fn recommendation_rules() {
        let d = cutoff_draws([[-1.0, -1.0, -1.0, 5.0]], &[0.0; 10]);
        let s = effective_subspace(&d, &grid(), 0.05, (0.05, 0.95));
        let mut r = TrialResult {
            decision: Decision::Efficacy,
            stopped_early: true,
            n_enrolled: 300,
            subspace: s,
            selected_variables: None,
            p_eff_history: vec![0.99],
            aborted: false,
        };
        assert!(recommend(&[70.0, 9.0], &r));
        assert!(!recommend(&[50.0, 9.0], &r));
        r.decision = Decision::Futility;
        assert!(!recommend(&[70.0, 9.0], &r));
    }

    #[test]
    fn cutoff_trial_is_deterministic_and_sized() {
        let design = TrialDesign { trial: TrialConfig { method: Method::Cutoff, ..TrialConfig::default() }, ..TrialDesign::default() };
        let a = run_trial(&design, &Uniform, 17).unwrap();
        let b = run_trial(&design, &Uniform, 17).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.n_enrolled, if a.stopped_early { 300 } else { 500 });
    }
}
