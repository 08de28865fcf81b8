//! Retained posterior draws and the summaries built on them: blip-effect
//! evaluation over many points, inclusion probabilities, pruning, traces
//! and the split potential-scale-reduction diagnostic.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::regression::{CoefficientState, CutoffSpec, Formulation};
use crate::spline::{treatment_column, KnotGrid, ModelStructure, SplineSpace};

/// The fitted model family the draws belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EffectModel {
    Cutoff(CutoffSpec),
    Spline(SplineSpace),
}

/// One retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    /// Spline structure; `None` for the cutoff model.
    pub structure: Option<ModelStructure>,
    pub coef: CoefficientState,
}

/// Move acceptance bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub knot_proposed: u64,
    pub knot_accepted: u64,
    pub term_proposed: u64,
    pub term_accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub model: EffectModel,
    pub chains: usize,
    pub draws: Vec<Draw>,
    pub stats: MoveStats,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn formulation<'a>(&'a self, draw: &'a Draw) -> Formulation<'a> {
        match (&self.model, &draw.structure) {
            (EffectModel::Cutoff(spec), _) => Formulation::Cutoff(spec),
            (EffectModel::Spline(space), Some(structure)) => Formulation::Spline { space, structure },
            (EffectModel::Spline(_), None) => panic!("spline draw without a structure"),
        }
    }

    pub fn evaluator(&self) -> GammaEvaluator {
        GammaEvaluator::new(self)
    }
}

/// Compact per-draw representation of the blip effect.
///
/// Spline draws are stored as values at every candidate knot of each
/// predictive covariate, so evaluation is a two-point interpolation per
/// covariate regardless of which knots were active.
#[derive(Debug, Clone)]
pub struct GammaEvaluator {
    kind: EvalKind,
}

#[derive(Debug, Clone)]
enum EvalKind {
    Cutoff {
        spec: CutoffSpec,
        /// `cells[d][mask]`: effect in indicator cell `mask` for draw `d`.
        cells: Vec<Vec<f64>>,
    },
    Spline {
        space: SplineSpace,
        grids: Vec<KnotGrid>,
        phi: Vec<f64>,
        /// `values[d][c]`: predictive term of covariate `c` at its full
        /// candidate grid, if active.
        values: Vec<Vec<Option<Vec<f64>>>>,
    },
}

impl GammaEvaluator {
    pub fn new(draws: &PosteriorDraws) -> Self {
        let kind = match &draws.model {
            EffectModel::Cutoff(spec) => {
                let subsets = spec.subsets();
                let offset = subsets.len();
                let k = spec.thresholds.len();
                let cells = draws
                    .draws
                    .iter()
                    .map(|d| {
                        (0u32..1 << k)
                            .map(|mask| {
                                subsets
                                    .iter()
                                    .enumerate()
                                    .filter(|(_, s)| s.iter().all(|&j| mask & (1 << j) != 0))
                                    .map(|(i, _)| d.coef.beta[offset + i])
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                EvalKind::Cutoff { spec: spec.clone(), cells }
            }
            EffectModel::Spline(space) => {
                let grids: Vec<KnotGrid> = space.covariates.iter().map(|c| c.knots.full_grid()).collect();
                let mut phi = Vec::with_capacity(draws.len());
                let mut values = Vec::with_capacity(draws.len());
                for d in &draws.draws {
                    let st = d.structure.as_ref().expect("spline draw without a structure");
                    let mut col = treatment_column(st);
                    phi.push(d.coef.beta[col]);
                    col += 1;
                    let mut per_cov = vec![None; space.len()];
                    for (c, s) in st.predictive.iter().enumerate() {
                        let Some(s) = s else { continue };
                        let kn = &space.covariates[c].knots;
                        let r = kn.grid(*s).refinement(&grids[c]);
                        let width = s.count() + 1;
                        let coefs = &d.coef.beta[col..col + width];
                        col += width;
                        // hats 1.. carry coefficients; hat 0 was dropped
                        let v: Vec<f64> = r
                            .iter()
                            .map(|row| row[1..].iter().zip(coefs).map(|(a, b)| a * b).sum())
                            .collect();
                        per_cov[c] = Some(v);
                    }
                    values.push(per_cov);
                }
                EvalKind::Spline { space: space.clone(), grids, phi, values }
            }
        };
        Self { kind }
    }

    pub fn n_draws(&self) -> usize {
        match &self.kind {
            EvalKind::Cutoff { cells, .. } => cells.len(),
            EvalKind::Spline { phi, .. } => phi.len(),
        }
    }

    /// `gamma_d(x)` for every draw `d`, in draw order.
    pub fn gamma_draws(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            EvalKind::Cutoff { spec, cells } => {
                let mask = spec
                    .indicators(x)
                    .iter()
                    .enumerate()
                    .fold(0usize, |m, (j, &z)| if z { m | (1 << j) } else { m });
                cells.iter().map(|c| c[mask]).collect()
            }
            EvalKind::Spline { space, grids, phi, values } => {
                let loc: Vec<(usize, f64)> = space
                    .covariates
                    .iter()
                    .zip(grids)
                    .map(|(cb, g)| g.locate(cb.covariate.value(x)))
                    .collect();
                phi.iter()
                    .zip(values)
                    .map(|(&p, per_cov)| {
                        p + per_cov
                            .iter()
                            .zip(&loc)
                            .filter_map(|(v, &(i, w))| v.as_ref().map(|v| (1.0 - w) * v[i] + w * v[i + 1]))
                            .sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    /// Fraction of draws with `gamma(x) > 0`.
    pub fn prob_positive(&self, x: &[f64]) -> f64 {
        let g = self.gamma_draws(x);
        if g.is_empty() {
            return 0.0;
        }
        g.iter().filter(|&&v| v > 0.0).count() as f64 / g.len() as f64
    }
}

/// `gamma` draws on a grid: `out[point][draw]`.
pub fn gamma_surface(draws: &PosteriorDraws, grid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ev = draws.evaluator();
    grid.iter().map(|x| ev.gamma_draws(x)).collect()
}

/// Fraction of draws in which each predictive term is active, keyed by
/// covariate name. Cutoff draws report nothing.
pub fn inclusion_probabilities(draws: &PosteriorDraws) -> BTreeMap<String, f64> {
    let EffectModel::Spline(space) = &draws.model else {
        return BTreeMap::new();
    };
    let n = draws.len().max(1) as f64;
    space
        .covariates
        .iter()
        .enumerate()
        .map(|(c, cb)| {
            let k = draws
                .draws
                .iter()
                .filter(|d| d.structure.as_ref().is_some_and(|s| s.predictive[c].is_some()))
                .count();
            (cb.covariate.name.clone(), k as f64 / n)
        })
        .collect()
}

/// Predictive variables whose inclusion probability is at least `threshold`.
pub fn prune(probabilities: &BTreeMap<String, f64>, threshold: f64) -> Vec<String> {
    probabilities
        .iter()
        .filter(|(_, &p)| p >= threshold)
        .map(|(k, _)| k.clone())
        .collect()
}

/// Per-chain, per-pattern blip-effect series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub patterns: Vec<Vec<f64>>,
    /// `series[chain][pattern]` in iteration order.
    pub series: Vec<Vec<Vec<f64>>>,
    /// Iteration index of each retained draw, per chain.
    pub iterations: Vec<Vec<usize>>,
}

impl Trace {
    /// Split potential-scale reduction per pattern; `None` with one chain.
    pub fn rhat(&self) -> Vec<Option<f64>> {
        (0..self.patterns.len())
            .map(|p| {
                let chains: Vec<&[f64]> = self.series.iter().map(|s| s[p].as_slice()).collect();
                split_rhat(&chains)
            })
            .collect()
    }

    /// CSV with columns `chain,iteration,pattern_id,gamma`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "chain,iteration,pattern_id,gamma")?;
        for (c, per_pattern) in self.series.iter().enumerate() {
            for (p, s) in per_pattern.iter().enumerate() {
                for (it, g) in self.iterations[c].iter().zip(s) {
                    writeln!(w, "{c},{it},{p},{g}")?;
                }
            }
        }
        Ok(())
    }
}

pub fn trace_extract(draws: &PosteriorDraws, patterns: &[Vec<f64>]) -> Trace {
    let ev = draws.evaluator();
    let per_pattern: Vec<Vec<f64>> = patterns.iter().map(|x| ev.gamma_draws(x)).collect();
    let mut series = vec![vec![Vec::new(); patterns.len()]; draws.chains];
    let mut iterations = vec![Vec::new(); draws.chains];
    for (d, draw) in draws.draws.iter().enumerate() {
        iterations[draw.chain].push(draw.iteration);
        for (p, g) in per_pattern.iter().enumerate() {
            series[draw.chain][p].push(g[d]);
        }
    }
    Trace { patterns: patterns.to_vec(), series, iterations }
}

/// Gelman-Rubin statistic on chains split into halves.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let half = chains.iter().map(|c| c.len()).min()? / 2;
    if half < 2 {
        return None;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let m = parts.len() as f64;
    let grand = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = vars.iter().sum::<f64>() / m;
    if w == 0.0 {
        return Some(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}
