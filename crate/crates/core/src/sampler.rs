//! Reversible-jump sampler over knot configurations (free-knot model) and
//! biomarker-term inclusion (free-knot with model averaging).
//!
//! Coefficients are integrated out of every structure move, so a move is
//! accepted with
//!
//! ```text
//! min(1, [p(y | S') p(S') q(S' -> S)] / [p(y | S) p(S) q(S -> S')])
//! ```
//!
//! and no Jacobian appears. Under the noise-scaled coefficient prior
//! `p(y | S)` also integrates out `sigma2` and `(beta, sigma2)` are drawn
//! exactly when a draw is retained. Under the independent prior the
//! likelihood is `p(y | S, sigma2)` and each sweep ends with a Gibbs update
//! of `beta` and then `sigma2`.
//!
//! Structure priors: per active spline term, a truncated Poisson on the knot
//! count with a uniform choice of locations; in averaging mode, a truncated
//! Poisson on the number of active terms normalised over
//! hierarchy-respecting structures, uniform within each size.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{derive_seed, sample_standard_normal, stream, RandomStream, TruncatedPoissonSpec};
use crate::error::{config, Result};
use crate::posterior::{Draw, EffectModel, MoveStats, PosteriorDraws};
use crate::regression::{
    cutoff_design, sample_coefficients, sample_conditional_beta, sample_sigma2_given_beta, CoefficientPrior,
    CoefficientState, CutoffSpec, GaussianConditional, NigPosterior, PatientRecord, PriorSpec,
};
use crate::spline::{KnotGrid, KnotState, ModelStructure, SplineSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// Knot moves only; every term stays in the model.
    FreeKnot,
    /// Knot moves plus term add/remove moves.
    FreeKnotBma,
}

/// How `(beta, sigma2)` are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientUpdate {
    /// Exact conjugate draw at every retained iteration.
    Collapsed,
    /// Exact refresh after accepted structure moves, Gaussian random-walk
    /// Metropolis on `beta` (variance `proposal_variance` per coordinate)
    /// and a Gibbs step for `sigma2` every sweep.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub proposal_variance: f64,
    pub mode: FitMode,
    pub coefficient_update: CoefficientUpdate,
    /// Off freezes the starting structure (used for oracle checks).
    pub structure_moves: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            burn_in: 5000,
            thin: 5,
            chains: 4,
            proposal_variance: 0.1,
            mode: FitMode::FreeKnot,
            coefficient_update: CoefficientUpdate::Collapsed,
            structure_moves: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.thin == 0 || self.chains == 0 {
            return config("sampler.n_samples, sampler.thin and sampler.chains must be positive");
        }
        if !(self.proposal_variance > 0.0) {
            return config("sampler.proposal_variance must be positive");
        }
        Ok(())
    }

    pub fn sweeps_per_chain(&self) -> usize {
        self.burn_in + self.thin * self.n_samples
    }
}

/// Sufficient statistics of the design on every candidate knot.
///
/// Full columns: intercept, treatment, then for each covariate all hats of
/// its full grid, then treatment times those hats. Any structure's design is
/// this matrix times a sparse map, so its Gram matrix follows from this one.
#[derive(Debug, Clone)]
pub struct FullGram {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
    grids: Vec<KnotGrid>,
    prognostic_offset: Vec<usize>,
    predictive_offset: Vec<usize>,
}

impl FullGram {
    pub fn new(data: &[PatientRecord], space: &SplineSpace) -> Self {
        let grids: Vec<KnotGrid> = space.covariates.iter().map(|c| c.knots.full_grid()).collect();
        let mut off = 2;
        let mut prognostic_offset = Vec::new();
        for g in &grids {
            prognostic_offset.push(off);
            off += g.len();
        }
        let mut predictive_offset = Vec::new();
        for g in &grids {
            predictive_offset.push(off);
            off += g.len();
        }
        let dim = off;
        let mut gram = DMatrix::zeros(dim, dim);
        let mut xty = DVector::zeros(dim);
        let mut yty = 0.0;
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 + 4 * grids.len());
        for p in data {
            row.clear();
            row.push((0, 1.0));
            if p.t {
                row.push((1, 1.0));
            }
            for (c, (cb, g)) in space.covariates.iter().zip(&grids).enumerate() {
                let (i, w) = g.locate(cb.covariate.value(&p.x));
                row.push((prognostic_offset[c] + i, 1.0 - w));
                row.push((prognostic_offset[c] + i + 1, w));
                if p.t {
                    row.push((predictive_offset[c] + i, 1.0 - w));
                    row.push((predictive_offset[c] + i + 1, w));
                }
            }
            for &(a, va) in &row {
                xty[a] += va * p.y;
                for &(b, vb) in &row {
                    gram[(a, b)] += va * vb;
                }
            }
            yty += p.y * p.y;
        }
        Self { gram, xty, yty, n: data.len(), grids, prognostic_offset, predictive_offset }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sparse map from a structure's design columns to full columns.
    fn column_map(&self, space: &SplineSpace, s: &ModelStructure) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![vec![(0, 1.0)]];
        let push_block = |cols: &mut Vec<Vec<(usize, f64)>>, c: usize, state: KnotState, offset: usize| {
            let r = space.covariates[c].knots.grid(state).refinement(&self.grids[c]);
            for j in 1..state.count() + 2 {
                cols.push(
                    r.iter()
                        .enumerate()
                        .filter(|(_, row)| row[j] != 0.0)
                        .map(|(i, row)| (offset + i, row[j]))
                        .collect(),
                );
            }
        };
        for (c, st) in s.prognostic.iter().enumerate() {
            if let Some(st) = st {
                push_block(&mut cols, c, *st, self.prognostic_offset[c]);
            }
        }
        cols.push(vec![(1, 1.0)]);
        for (c, st) in s.predictive.iter().enumerate() {
            if let Some(st) = st {
                push_block(&mut cols, c, *st, self.predictive_offset[c]);
            }
        }
        cols
    }

    /// `(X'X, X'y)` for the structure's design.
    pub fn reduced(&self, space: &SplineSpace, s: &ModelStructure) -> (DMatrix<f64>, DVector<f64>) {
        let cols = self.column_map(space, s);
        let p = cols.len();
        let full = self.gram.nrows();
        // H = G_full M, then M' H
        let mut h = DMatrix::<f64>::zeros(full, p);
        for (j, col) in cols.iter().enumerate() {
            for &(k, v) in col {
                for i in 0..full {
                    h[(i, j)] += self.gram[(i, k)] * v;
                }
            }
        }
        let mut g = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        for (a, col) in cols.iter().enumerate() {
            for &(k, v) in col {
                b[a] += self.xty[k] * v;
                for j in 0..p {
                    g[(a, j)] += v * h[(k, j)];
                }
            }
        }
        (g, b)
    }

    /// Noise-scaled-prior posterior of a structure.
    pub fn posterior(&self, space: &SplineSpace, s: &ModelStructure, prior: &PriorSpec) -> Result<NigPosterior> {
        let (g, b) = self.reduced(space, s);
        NigPosterior::from_gram(&g, &b, self.yty, self.n, prior)
    }
}

/// Log prior of a structure.
#[derive(Debug, Clone)]
pub struct StructurePrior {
    knot_priors: Vec<TruncatedPoissonSpec>,
    /// `ln p(m) - ln #{feasible structures with m terms}`, by `m`.
    term_weight: Option<Vec<f64>>,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

impl StructurePrior {
    pub fn new(space: &SplineSpace, prior: &PriorSpec, mode: FitMode) -> Result<Self> {
        let knot_priors = space
            .covariates
            .iter()
            .map(|c| TruncatedPoissonSpec::new(prior.lambda_knots, c.knots.len()))
            .collect::<Result<Vec<_>>>()?;
        let term_weight = match mode {
            FitMode::FreeKnot => None,
            FitMode::FreeKnotBma => {
                let c = space.len();
                // each covariate contributes 0, 1 (h) or 2 (h and f) terms:
                // counts are the coefficients of (1 + z + z^2)^c
                let mut counts = vec![1.0f64];
                for _ in 0..c {
                    let mut next = vec![0.0; counts.len() + 2];
                    for (m, &v) in counts.iter().enumerate() {
                        next[m] += v;
                        next[m + 1] += v;
                        next[m + 2] += v;
                    }
                    counts = next;
                }
                let pois = TruncatedPoissonSpec::new(prior.lambda_terms, 2 * c)?;
                Some(
                    counts
                        .iter()
                        .enumerate()
                        .map(|(m, &n)| pois.ln_pmf(m).unwrap() - n.ln())
                        .collect(),
                )
            }
        };
        Ok(Self { knot_priors, term_weight })
    }

    /// Knot-count and location prior of one term.
    pub fn ln_knots(&self, c: usize, state: KnotState) -> f64 {
        let spec = &self.knot_priors[c];
        let k = state.count();
        spec.ln_pmf(k).unwrap_or(f64::NEG_INFINITY) - ln_choose(spec.support_max, k)
    }

    pub fn ln_prior(&self, s: &ModelStructure) -> f64 {
        if !s.satisfies_hierarchy() {
            return f64::NEG_INFINITY;
        }
        let knots: f64 = s.active_terms().map(|(_, c, st)| self.ln_knots(c, st)).sum();
        let terms = self.term_weight.as_ref().map_or(0.0, |w| w[s.term_count()]);
        knots + terms
    }

    /// Knot set for a newly added term, drawn from its prior.
    fn sample_knots<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> KnotState {
        let spec = &self.knot_priors[c];
        let k = spec.sample(rng);
        let mut pool: Vec<usize> = (0..spec.support_max).collect();
        let mut st = KnotState::EMPTY;
        for _ in 0..k {
            let i = rng.random_range(0..pool.len());
            st = st.with(pool.swap_remove(i));
        }
        st
    }
}

/// Feasible knot-move kinds for a term with `k` of `total` knots active.
fn knot_kinds(k: usize, total: usize) -> usize {
    (k < total) as usize + (k > 0) as usize + (k > 0 && k < total) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotMove {
    Birth(usize),
    Death(usize),
    Relocate { from: usize, to: usize },
}

/// Proposal log-probability of a knot move on one term, excluding the
/// uniform choice of term (identical in both directions).
pub fn ln_knot_proposal(state: KnotState, total: usize, mv: KnotMove) -> f64 {
    let k = state.count();
    let kinds = knot_kinds(k, total) as f64;
    let ln = match mv {
        KnotMove::Birth(_) => -((total - k) as f64).ln(),
        KnotMove::Death(_) => -(k as f64).ln(),
        KnotMove::Relocate { .. } => -(k as f64).ln() - ((total - k) as f64).ln(),
    };
    ln - kinds.ln()
}

pub fn apply_knot_move(state: KnotState, mv: KnotMove) -> KnotState {
    match mv {
        KnotMove::Birth(i) => state.with(i),
        KnotMove::Death(i) => state.without(i),
        KnotMove::Relocate { from, to } => state.without(from).with(to),
    }
}

pub fn reverse_knot_move(mv: KnotMove) -> KnotMove {
    match mv {
        KnotMove::Birth(i) => KnotMove::Death(i),
        KnotMove::Death(i) => KnotMove::Birth(i),
        KnotMove::Relocate { from, to } => KnotMove::Relocate { from: to, to: from },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermMove {
    Add { predictive: bool, covariate: usize },
    Remove { predictive: bool, covariate: usize },
}

/// Terms that may be added / removed without breaking hierarchy.
pub fn feasible_term_moves(s: &ModelStructure) -> (Vec<TermMove>, Vec<TermMove>) {
    let mut add = Vec::new();
    let mut remove = Vec::new();
    for c in 0..s.prognostic.len() {
        match (s.prognostic[c].is_some(), s.predictive[c].is_some()) {
            (false, _) => add.push(TermMove::Add { predictive: false, covariate: c }),
            (true, false) => {
                add.push(TermMove::Add { predictive: true, covariate: c });
                remove.push(TermMove::Remove { predictive: false, covariate: c });
            }
            (true, true) => remove.push(TermMove::Remove { predictive: true, covariate: c }),
        }
    }
    (add, remove)
}

/// Proposal log-probability of choosing `mv` from `s` (knot draw for an
/// added term excluded).
pub fn ln_term_proposal(s: &ModelStructure, mv: TermMove) -> f64 {
    let (add, remove) = feasible_term_moves(s);
    let kinds = (!add.is_empty()) as usize + (!remove.is_empty()) as usize;
    let pool = match mv {
        TermMove::Add { .. } => add.len(),
        TermMove::Remove { .. } => remove.len(),
    };
    -(kinds as f64).ln() - (pool as f64).ln()
}

/// A structure scored under the configured coefficient prior.
struct Fit {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    /// Noise-scaled prior: `(beta, sigma2)` integrated out.
    collapsed: Option<NigPosterior>,
    /// Independent prior: `beta` integrated out given the current `sigma2`.
    conditional: Option<GaussianConditional>,
    log_marginal: f64,
}

impl FullGram {
    fn fit(&self, space: &SplineSpace, s: &ModelStructure, prior: &PriorSpec, sigma2: f64) -> Result<Fit> {
        let (gram, xty) = self.reduced(space, s);
        let (collapsed, conditional, log_marginal) = match prior.coef_prior {
            CoefficientPrior::NoiseScaled => {
                let post = NigPosterior::from_gram(&gram, &xty, self.yty, self.n, prior)?;
                let lm = post.log_marginal;
                (Some(post), None, lm)
            }
            CoefficientPrior::Independent => {
                let cond = GaussianConditional::from_gram(&gram, &xty, self.yty, self.n, sigma2, prior)?;
                let lm = cond.log_marginal;
                (None, Some(cond), lm)
            }
        };
        Ok(Fit { gram, xty, collapsed, conditional, log_marginal })
    }
}

struct Chain<'a> {
    space: &'a SplineSpace,
    gram: &'a FullGram,
    prior: &'a PriorSpec,
    structure_prior: &'a StructurePrior,
    config: &'a SamplerConfig,
    rng: RandomStream,
    state: ModelStructure,
    fit: Fit,
    ln_target: f64,
    /// Current noise variance (independent prior, or random-walk mode).
    sigma2: f64,
    /// Current coefficients when they are part of the chain state.
    beta: Option<DVector<f64>>,
    stats: MoveStats,
}

impl<'a> Chain<'a> {
    fn carries_beta(&self) -> bool {
        self.config.coefficient_update == CoefficientUpdate::RandomWalk
            || self.prior.coef_prior == CoefficientPrior::Independent
    }

    /// Exact draw of the coefficients (and, when collapsed, `sigma2`) for
    /// the current structure.
    fn refresh_coefficients(&mut self) -> Result<()> {
        match (&self.fit.collapsed, &self.fit.conditional) {
            (Some(post), _) => {
                let c = sample_coefficients(post, &mut self.rng)?;
                self.sigma2 = c.sigma2;
                self.beta = Some(DVector::from_vec(c.beta));
            }
            (None, Some(cond)) => self.beta = Some(sample_conditional_beta(cond, &mut self.rng)?),
            (None, None) => unreachable!("every fit carries a posterior"),
        }
        Ok(())
    }

    fn rescore(&mut self) -> Result<()> {
        if self.prior.coef_prior == CoefficientPrior::Independent {
            self.fit = self.gram.fit(self.space, &self.state, self.prior, self.sigma2)?;
            self.ln_target = self.fit.log_marginal + self.structure_prior.ln_prior(&self.state);
        }
        Ok(())
    }

    fn try_accept(&mut self, proposal: ModelStructure, ln_q_ratio: f64) -> Result<bool> {
        let ln_prior = self.structure_prior.ln_prior(&proposal);
        if ln_prior == f64::NEG_INFINITY {
            return Ok(false);
        }
        let fit = self.gram.fit(self.space, &proposal, self.prior, self.sigma2)?;
        let ln_target = fit.log_marginal + ln_prior;
        let ln_alpha = ln_target - self.ln_target + ln_q_ratio;
        let u: f64 = self.rng.random();
        if u.ln() < ln_alpha {
            self.state = proposal;
            self.fit = fit;
            self.ln_target = ln_target;
            if self.config.coefficient_update == CoefficientUpdate::RandomWalk {
                self.refresh_coefficients()?;
            } else if self.beta.is_some() {
                // dimension changed; the Gibbs step redraws it
                self.beta = None;
            }
            return Ok(true);
        }
        Ok(false)
    }

    fn knot_step(&mut self) -> Result<()> {
        let movable: Vec<(bool, usize, KnotState)> = self
            .state
            .active_terms()
            .filter(|&(_, c, _)| !self.space.covariates[c].knots.is_empty())
            .collect();
        if movable.is_empty() {
            return Ok(());
        }
        let (pred, c, st) = movable[self.rng.random_range(0..movable.len())];
        let total = self.space.covariates[c].knots.len();
        let k = st.count();
        let mut kinds = Vec::with_capacity(3);
        if k < total {
            kinds.push(0);
        }
        if k > 0 {
            kinds.push(1);
        }
        if k > 0 && k < total {
            kinds.push(2);
        }
        let active: Vec<usize> = st.iter().collect();
        let inactive: Vec<usize> = st.inactive(total).collect();
        let mv = match kinds[self.rng.random_range(0..kinds.len())] {
            0 => KnotMove::Birth(inactive[self.rng.random_range(0..inactive.len())]),
            1 => KnotMove::Death(active[self.rng.random_range(0..active.len())]),
            _ => KnotMove::Relocate {
                from: active[self.rng.random_range(0..active.len())],
                to: inactive[self.rng.random_range(0..inactive.len())],
            },
        };
        let new_state = apply_knot_move(st, mv);
        let ln_q = ln_knot_proposal(new_state, total, reverse_knot_move(mv)) - ln_knot_proposal(st, total, mv);
        let mut proposal = self.state.clone();
        *proposal.term_mut(pred, c) = Some(new_state);
        self.stats.knot_proposed += 1;
        if self.try_accept(proposal, ln_q)? {
            self.stats.knot_accepted += 1;
        }
        Ok(())
    }

    fn term_step(&mut self) -> Result<()> {
        let (add, remove) = feasible_term_moves(&self.state);
        let use_add = match (add.is_empty(), remove.is_empty()) {
            (true, true) => return Ok(()),
            (false, true) => true,
            (true, false) => false,
            (false, false) => self.rng.random_bool(0.5),
        };
        let mv = if use_add {
            add[self.rng.random_range(0..add.len())]
        } else {
            remove[self.rng.random_range(0..remove.len())]
        };
        let mut proposal = self.state.clone();
        // a new term's knots come from their prior; the reverse of a removal
        // must redraw the removed knots
        let ln_q = match mv {
            TermMove::Add { predictive, covariate } => {
                let knots = self.structure_prior.sample_knots(covariate, &mut self.rng);
                *proposal.term_mut(predictive, covariate) = Some(knots);
                let rev = TermMove::Remove { predictive, covariate };
                ln_term_proposal(&proposal, rev)
                    - ln_term_proposal(&self.state, mv)
                    - self.structure_prior.ln_knots(covariate, knots)
            }
            TermMove::Remove { predictive, covariate } => {
                let knots = self.state.term(predictive, covariate).expect("removing inactive term");
                *proposal.term_mut(predictive, covariate) = None;
                let rev = TermMove::Add { predictive, covariate };
                ln_term_proposal(&proposal, rev) + self.structure_prior.ln_knots(covariate, knots)
                    - ln_term_proposal(&self.state, mv)
            }
        };
        self.stats.term_proposed += 1;
        if self.try_accept(proposal, ln_q)? {
            self.stats.term_accepted += 1;
        }
        Ok(())
    }

    /// Gibbs update of `(beta, sigma2)` given the structure (independent
    /// prior with collapsed structure moves).
    fn gibbs_step(&mut self) -> Result<()> {
        let cond = self.fit.conditional.as_ref().expect("independent prior");
        let beta = sample_conditional_beta(cond, &mut self.rng)?;
        self.sigma2 = sample_sigma2_given_beta(
            &self.fit.gram,
            &self.fit.xty,
            self.gram.yty,
            self.gram.n,
            &beta,
            self.prior,
            &mut self.rng,
        )?;
        self.beta = Some(beta);
        self.rescore()
    }

    /// Random-walk Metropolis on `beta` (variance `proposal_variance` per
    /// coordinate), then Gibbs on `sigma2`.
    fn random_walk_step(&mut self) -> Result<()> {
        if self.beta.is_none() {
            self.refresh_coefficients()?;
        }
        let beta = self.beta.take().expect("refreshed above");
        let (g, b, v, s2) = (&self.fit.gram, &self.fit.xty, self.prior.coef_variance, self.sigma2);
        let energy = |x: &DVector<f64>| {
            let quad = x.dot(&(g * x));
            match self.prior.coef_prior {
                CoefficientPrior::Independent => 0.5 * quad / s2 + 0.5 * x.dot(x) / v - b.dot(x) / s2,
                CoefficientPrior::NoiseScaled => (quad + x.dot(x) / v - 2.0 * b.dot(x)) / (2.0 * s2),
            }
        };
        let step = self.config.proposal_variance.sqrt();
        let p = beta.len();
        let prop = &beta + DVector::from_iterator(p, (0..p).map(|_| step * sample_standard_normal(&mut self.rng)));
        let ln_alpha = energy(&beta) - energy(&prop);
        let u: f64 = self.rng.random();
        let beta = if u.ln() < ln_alpha { prop } else { beta };
        self.sigma2 = sample_sigma2_given_beta(g, b, self.gram.yty, self.gram.n, &beta, self.prior, &mut self.rng)?;
        self.beta = Some(beta);
        self.rescore()
    }

    fn current_draw(&mut self) -> Result<CoefficientState> {
        match (&self.beta, &self.fit.collapsed) {
            (Some(beta), _) => Ok(CoefficientState { beta: beta.iter().copied().collect(), sigma2: self.sigma2 }),
            (None, Some(post)) => sample_coefficients(post, &mut self.rng),
            (None, None) => {
                let beta = sample_conditional_beta(self.fit.conditional.as_ref().unwrap(), &mut self.rng)?;
                Ok(CoefficientState { beta: beta.iter().copied().collect(), sigma2: self.sigma2 })
            }
        }
    }
}

/// Starting noise variance: the sample variance of the responses.
fn initial_sigma2(data: &[PatientRecord]) -> f64 {
    let n = data.len();
    if n < 2 {
        return 1.0;
    }
    let mean = data.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let var = data.iter().map(|p| (p.y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var > 0.0 { var } else { 1.0 }
}

fn initial_structure(space: &SplineSpace) -> ModelStructure {
    ModelStructure::saturated(space.len())
}

/// Runs every chain and merges the retained draws in chain order.
///
/// Chain `c` uses the stream seeded by `derive_seed(seed, c)`.
pub fn run_sampler(
    data: &[PatientRecord],
    space: &SplineSpace,
    prior: &PriorSpec,
    config: &SamplerConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    run_sampler_from(data, space, prior, config, seed, initial_structure(space))
}

/// As [`run_sampler`] with an explicit starting structure.
pub fn run_sampler_from(
    data: &[PatientRecord],
    space: &SplineSpace,
    prior: &PriorSpec,
    config: &SamplerConfig,
    seed: u64,
    start: ModelStructure,
) -> Result<PosteriorDraws> {
    config.validate()?;
    prior.validate()?;
    if start.prognostic.len() != space.len() || start.predictive.len() != space.len() || !start.satisfies_hierarchy() {
        return config_err("starting structure does not match the spline space or breaks hierarchy");
    }
    let gram = FullGram::new(data, space);
    let structure_prior = StructurePrior::new(space, prior, config.mode)?;
    let mut draws = Vec::with_capacity(config.chains * config.n_samples);
    let mut stats = MoveStats::default();
    for chain_index in 0..config.chains {
        let rng = stream(derive_seed(seed, chain_index as u64));
        let sigma2 = initial_sigma2(data);
        let fit = gram.fit(space, &start, prior, sigma2)?;
        let ln_target = fit.log_marginal + structure_prior.ln_prior(&start);
        let mut chain = Chain {
            space,
            gram: &gram,
            prior,
            structure_prior: &structure_prior,
            config,
            rng,
            state: start.clone(),
            fit,
            ln_target,
            sigma2,
            beta: None,
            stats: MoveStats::default(),
        };
        for sweep in 0..config.sweeps_per_chain() {
            if config.structure_moves {
                chain.knot_step()?;
                if config.mode == FitMode::FreeKnotBma {
                    chain.term_step()?;
                }
            }
            if config.coefficient_update == CoefficientUpdate::RandomWalk {
                chain.random_walk_step()?;
            } else if chain.carries_beta() {
                chain.gibbs_step()?;
            }
            if sweep >= config.burn_in && (sweep - config.burn_in + 1) % config.thin == 0 {
                let coef = chain.current_draw()?;
                draws.push(Draw { chain: chain_index, iteration: sweep, structure: Some(chain.state.clone()), coef });
            }
        }
        stats.knot_proposed += chain.stats.knot_proposed;
        stats.knot_accepted += chain.stats.knot_accepted;
        stats.term_proposed += chain.stats.term_proposed;
        stats.term_accepted += chain.stats.term_accepted;
    }
    Ok(PosteriorDraws { model: EffectModel::Spline(space.clone()), chains: config.chains, draws, stats })
}

fn config_err<T>(msg: &str) -> Result<T> {
    config(msg)
}

/// Burn-in of the cutoff model's Gibbs sampler (independent prior).
pub const CUTOFF_BURN_IN: usize = 200;

/// Posterior draws for the cutoff model: independent conjugate draws under
/// the noise-scaled prior, a two-block Gibbs sampler under the independent
/// prior.
pub fn fit_cutoff(
    data: &[PatientRecord],
    spec: &CutoffSpec,
    prior: &PriorSpec,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    let x = cutoff_design(data, spec)?;
    let yv = DVector::from_iterator(data.len(), data.iter().map(|p| p.y));
    let gram = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let yty = yv.dot(&yv);
    let n = data.len();
    let mut rng = stream(seed);
    let mut draws = Vec::with_capacity(n_draws);
    match prior.coef_prior {
        CoefficientPrior::NoiseScaled => {
            let post = NigPosterior::from_gram(&gram, &xty, yty, n, prior)?;
            for i in 0..n_draws {
                draws.push(Draw { chain: 0, iteration: i, structure: None, coef: sample_coefficients(&post, &mut rng)? });
            }
        }
        CoefficientPrior::Independent => {
            let mut sigma2 = initial_sigma2(data);
            for i in 0..CUTOFF_BURN_IN + n_draws {
                let cond = GaussianConditional::from_gram(&gram, &xty, yty, n, sigma2, prior)?;
                let beta = sample_conditional_beta(&cond, &mut rng)?;
                sigma2 = sample_sigma2_given_beta(&gram, &xty, yty, n, &beta, prior, &mut rng)?;
                if i >= CUTOFF_BURN_IN {
                    let coef = CoefficientState { beta: beta.iter().copied().collect(), sigma2 };
                    draws.push(Draw { chain: 0, iteration: i, structure: None, coef });
                }
            }
        }
    }
    Ok(PosteriorDraws { model: EffectModel::Cutoff(spec.clone()), chains: 1, draws, stats: MoveStats::default() })
}
