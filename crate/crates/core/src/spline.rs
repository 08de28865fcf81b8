//! Degree-1 (piecewise-linear) B-spline bases on data-adaptive candidate
//! knots, and design-matrix assembly for the free-knot treatment-effect
//! model.
//!
//! A spline term on covariate `c` with active knot set `S` uses the hat
//! functions on the grid `{min, S..., max}`. The first hat is dropped so the
//! block stays identifiable next to the global intercept, leaving `|S| + 1`
//! columns.
//!
//! Because every active set is a subset of the candidate grid, any coarse
//! hat is an exact linear combination of the hats on the full candidate grid
//! (the "fine" basis). [`KnotGrid::refinement`] gives those weights; the
//! sampler uses them to assemble Gram matrices without touching patient rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::regression::PatientRecord;

/// Maximum number of candidate knots per covariate (bitmask width).
pub const MAX_CANDIDATES: usize = 32;

/// Interior candidate knots of one covariate plus its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateKnots {
    positions: Vec<f64>,
    boundary: (f64, f64),
}

impl CandidateKnots {
    /// Candidates at the `q / (count + 1)` quantiles, `q = 1..=count`.
    ///
    /// Tied quantiles collapse and quantiles equal to a boundary value are
    /// discarded, so fewer than `count` knots may come back.
    pub fn from_values(values: &[f64], count: usize) -> Result<Self> {
        if values.is_empty() {
            return config("candidate knots need at least one covariate value");
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if !(lo < hi) {
            return config("all covariate values identical; no interior knots possible");
        }
        let probs: Vec<f64> = (1..=count).map(|q| q as f64 / (count + 1) as f64).collect();
        let raw: Vec<f64> = probs
            .iter()
            .map(|&p| crate::dist::quantile_sorted(&sorted, p))
            .collect();
        Self::new(raw, (lo, hi))
    }

    /// Builds from explicit positions; sorts, deduplicates and drops any
    /// position not strictly inside the boundary.
    pub fn new(mut positions: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        if !(boundary.0 < boundary.1) {
            return config(format!("degenerate boundary {boundary:?}"));
        }
        positions.retain(|&k| k > boundary.0 && k < boundary.1);
        positions.sort_by(f64::total_cmp);
        positions.dedup();
        if positions.len() > MAX_CANDIDATES {
            return config(format!("at most {MAX_CANDIDATES} candidate knots supported"));
        }
        Ok(Self { positions, boundary })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Grid for an active subset: boundary min, active knots, boundary max.
    pub fn grid(&self, state: KnotState) -> KnotGrid {
        let mut g = Vec::with_capacity(state.count() + 2);
        g.push(self.boundary.0);
        g.extend(state.iter().map(|i| self.positions[i]));
        g.push(self.boundary.1);
        KnotGrid(g)
    }

    /// Grid using every candidate.
    pub fn full_grid(&self) -> KnotGrid {
        self.grid(KnotState::full(self.len()))
    }
}

/// Active subset of a covariate's candidate knots, as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct KnotState(u32);

impl KnotState {
    pub const EMPTY: KnotState = KnotState(0);

    pub fn full(candidates: usize) -> Self {
        if candidates >= 32 {
            KnotState(u32::MAX)
        } else {
            KnotState((1u32 << candidates) - 1)
        }
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        KnotState(indices.iter().fold(0, |m, &i| m | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn with(self, i: usize) -> Self {
        KnotState(self.0 | (1 << i))
    }

    pub fn without(self, i: usize) -> Self {
        KnotState(self.0 & !(1 << i))
    }

    /// Active candidate indices, ascending.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }

    /// Inactive indices among `candidates`.
    pub fn inactive(self, candidates: usize) -> impl Iterator<Item = usize> {
        (0..candidates).filter(move |&i| !self.contains(i))
    }
}

/// Strictly increasing knot grid including both boundary knots.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid(Vec<f64>);

impl KnotGrid {
    pub fn knots(&self) -> &[f64] {
        &self.0
    }

    /// Number of hats (= number of grid knots).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Locates `x` (clamped into the grid) as `(i, w)`: hats `i` and `i + 1`
    /// take values `1 - w` and `w`, all others are zero.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let g = &self.0;
        let last = g.len() - 1;
        let x = x.clamp(g[0], g[last]);
        // last index with g[i] <= x, kept below `last`
        let i = g.partition_point(|&k| k <= x).saturating_sub(1).min(last - 1);
        let w = (x - g[i]) / (g[i + 1] - g[i]);
        (i, w.clamp(0.0, 1.0))
    }

    /// All hats at `x`, first one included (partition of unity).
    pub fn hats(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let (i, w) = self.locate(x);
        out[i] += 1.0 - w;
        out[i + 1] += w;
        out
    }

    /// `r[i][j]`: value of this grid's hat `j` at knot `i` of `fine`.
    ///
    /// `fine` must contain every knot of `self`; then hat `j` equals
    /// `sum_i r[i][j] * fine_hat_i` exactly.
    pub fn refinement(&self, fine: &KnotGrid) -> Vec<Vec<f64>> {
        fine.0.iter().map(|&k| self.hats(k)).collect()
    }
}

/// Basis values at `x` for an active knot set, first hat dropped.
/// Length is `state.count() + 1`.
pub fn basis_eval(x: f64, state: KnotState, knots: &CandidateKnots) -> Vec<f64> {
    let mut h = knots.grid(state).hats(x);
    h.remove(0);
    h
}

/// A covariate entering the spline model: a single biomarker or the raw
/// product of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    /// Biomarker indices multiplied together.
    pub factors: Vec<usize>,
}

impl Covariate {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.factors.iter().map(|&j| x[j]).product()
    }
}

/// Biomarker names used for labels, in column order.
pub const BIOMARKER_NAMES: [&str; 3] = ["HB", "dHR", "VCB"];

/// Main effects, then pairwise products, then the triple product.
pub fn standard_covariates(n_biomarkers: usize) -> Vec<Covariate> {
    let name = |f: &[usize]| {
        f.iter()
            .map(|&j| BIOMARKER_NAMES.get(j).copied().unwrap_or("X").to_string())
            .collect::<Vec<_>>()
            .join("x")
    };
    let mut sets: Vec<Vec<usize>> = (0..n_biomarkers).map(|j| vec![j]).collect();
    for a in 0..n_biomarkers {
        for b in a + 1..n_biomarkers {
            sets.push(vec![a, b]);
        }
    }
    if n_biomarkers == 3 {
        sets.push(vec![0, 1, 2]);
    }
    sets.into_iter()
        .map(|f| Covariate { name: name(&f), factors: f })
        .collect()
}

/// One covariate with its candidate knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBasis {
    pub covariate: Covariate,
    pub knots: CandidateKnots,
}

/// Covariates and candidate knots for one fitting dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpace {
    pub covariates: Vec<CovariateBasis>,
}

impl SplineSpace {
    /// Candidates from the fitting data; boundaries are the observed ranges.
    pub fn from_data(
        data: &[PatientRecord],
        covariates: Vec<Covariate>,
        knot_count: usize,
    ) -> Result<Self> {
        let covariates = covariates
            .into_iter()
            .map(|c| {
                let values: Vec<f64> = data.iter().map(|p| c.value(&p.x)).collect();
                let knots = CandidateKnots::from_values(&values, knot_count)
                    .map_err(|e| crate::Error::Config(format!("covariate {}: {e}", c.name)))?;
                Ok(CovariateBasis { covariate: c, knots })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { covariates })
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }
}

/// Which spline terms are active and their knot sets.
///
/// Index `c` of both vectors refers to covariate `c` of the [`SplineSpace`].
/// The intercept and treatment main effect are always present.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelStructure {
    pub prognostic: Vec<Option<KnotState>>,
    pub predictive: Vec<Option<KnotState>>,
}

impl ModelStructure {
    /// Every term active with no interior knots.
    pub fn saturated(covariates: usize) -> Self {
        Self {
            prognostic: vec![Some(KnotState::EMPTY); covariates],
            predictive: vec![Some(KnotState::EMPTY); covariates],
        }
    }

    pub fn empty(covariates: usize) -> Self {
        Self {
            prognostic: vec![None; covariates],
            predictive: vec![None; covariates],
        }
    }

    /// A predictive term requires the prognostic term of the same covariate.
    pub fn satisfies_hierarchy(&self) -> bool {
        self.predictive
            .iter()
            .zip(&self.prognostic)
            .all(|(f, h)| f.is_none() || h.is_some())
    }

    /// Number of active biomarker terms.
    pub fn term_count(&self) -> usize {
        self.prognostic.iter().chain(&self.predictive).filter(|t| t.is_some()).count()
    }

    /// Number of design columns: intercept, treatment, `k + 1` per term.
    pub fn column_count(&self) -> usize {
        2 + self
            .prognostic
            .iter()
            .chain(&self.predictive)
            .flatten()
            .map(|s| s.count() + 1)
            .sum::<usize>()
    }

    /// `(is_predictive, covariate)` for each active term in column order.
    pub fn active_terms(&self) -> impl Iterator<Item = (bool, usize, KnotState)> + '_ {
        let h = self.prognostic.iter().enumerate().filter_map(|(c, s)| s.map(|s| (false, c, s)));
        let f = self.predictive.iter().enumerate().filter_map(|(c, s)| s.map(|s| (true, c, s)));
        h.chain(f)
    }

    pub fn term_mut(&mut self, predictive: bool, c: usize) -> &mut Option<KnotState> {
        if predictive {
            &mut self.predictive[c]
        } else {
            &mut self.prognostic[c]
        }
    }

    pub fn term(&self, predictive: bool, c: usize) -> Option<KnotState> {
        if predictive {
            self.predictive[c]
        } else {
            self.prognostic[c]
        }
    }
}

/// Design row for biomarkers `x` and treatment `t`.
///
/// Columns: intercept, prognostic blocks, treatment, treatment times
/// predictive blocks.
pub fn design_row(x: &[f64], t: bool, space: &SplineSpace, structure: &ModelStructure) -> Vec<f64> {
    let tv = if t { 1.0 } else { 0.0 };
    let mut row = Vec::with_capacity(structure.column_count());
    row.push(1.0);
    for (c, s) in structure.prognostic.iter().enumerate() {
        if let Some(s) = s {
            let cb = &space.covariates[c];
            row.extend(basis_eval(cb.covariate.value(x), *s, &cb.knots));
        }
    }
    row.push(tv);
    for (c, s) in structure.predictive.iter().enumerate() {
        if let Some(s) = s {
            let cb = &space.covariates[c];
            row.extend(basis_eval(cb.covariate.value(x), *s, &cb.knots).into_iter().map(|v| v * tv));
        }
    }
    row
}

/// Index of the treatment main-effect column for `structure`.
pub fn treatment_column(structure: &ModelStructure) -> usize {
    1 + structure.prognostic.iter().flatten().map(|s| s.count() + 1).sum::<usize>()
}

pub fn design_matrix(data: &[PatientRecord], space: &SplineSpace, structure: &ModelStructure) -> DMatrix<f64> {
    let p = structure.column_count();
    let mut m = DMatrix::zeros(data.len(), p);
    for (i, pt) in data.iter().enumerate() {
        let row = design_row(&pt.x, pt.t, space, structure);
        assert_eq!(row.len(), p, "design row width");
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}
