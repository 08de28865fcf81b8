//! Ground-truth scenarios: biomarker generation, treatment-effect surfaces,
//! outcomes and the scoring of trial conclusions against the truth.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dist::{
    sample_bernoulli, sample_standard_normal, sample_truncated_normal, sample_truncated_t, stream, TruncatedNormalSpec,
    TruncatedTSpec,
};
use crate::error::{config, Error, Result};
use crate::regression::PatientRecord;
use crate::trial::{recommend, Decision, PatientSource, SubspaceEstimate, TrialResult};

/// Outcome noise of the simulation study.
pub const STUDY_NOISE_SD: f64 = 8.4;
/// Outcome noise of the single-dataset illustration: variance 5, in the same
/// N(mean, variance) convention as every other noise term.
pub const ILLUSTRATION_NOISE_SD: f64 = 2.236_067_977_499_79;
/// Size of the sample the reference distribution functions are built from.
pub const ECDF_REFERENCE_SIZE: usize = 100_000;
const ECDF_SEED: u64 = 0x5eed_ecdf;

/// Empirical distribution function of a fixed sample.
#[derive(Debug, Clone)]
pub struct Ecdf(Vec<f64>);

impl Ecdf {
    pub fn new(mut sample: Vec<f64>) -> Self {
        sample.sort_by(f64::total_cmp);
        Self(sample)
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.0.partition_point(|&v| v <= x) as f64 / self.0.len() as f64
    }
}

struct ReferenceEcdfs {
    hb: Ecdf,
    dhr: Ecdf,
}

fn reference_ecdfs() -> &'static ReferenceEcdfs {
    static CELL: OnceLock<ReferenceEcdfs> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = stream(ECDF_SEED);
        let mut hb = Vec::with_capacity(ECDF_REFERENCE_SIZE);
        let mut dhr = Vec::with_capacity(ECDF_REFERENCE_SIZE);
        for _ in 0..ECDF_REFERENCE_SIZE {
            hb.push(sample_truncated_t(&TruncatedTSpec::HYPOXIC_BURDEN, &mut rng).expect("valid spec"));
            dhr.push(sample_truncated_t(&TruncatedTSpec::HEART_RATE_RESPONSE, &mut rng).expect("valid spec"));
        }
        ReferenceEcdfs { hb: Ecdf::new(hb), dhr: Ecdf::new(dhr) }
    })
}

/// Frozen distribution function of HB.
pub fn hb_ecdf(x: f64) -> f64 {
    reference_ecdfs().hb.eval(x)
}

/// Frozen distribution function of dHR.
pub fn dhr_ecdf(x: f64) -> f64 {
    reference_ecdfs().dhr.eval(x)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioId {
    /// Two-biomarker scenarios 1 to 8.
    Main(u8),
    /// Three-biomarker null.
    A1,
    /// Three-biomarker, HB logistic surface.
    A2,
}

impl ScenarioId {
    pub fn main(i: u8) -> Result<Self> {
        if (1..=8).contains(&i) {
            Ok(ScenarioId::Main(i))
        } else {
            config(format!("scenario: {i} is not a valid scenario id (expected 1..8, A1 or A2)"))
        }
    }

    pub fn all_main() -> impl Iterator<Item = ScenarioId> {
        (1..=8).map(ScenarioId::Main)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioId::Main(i) => write!(f, "{i}"),
            ScenarioId::A1 => f.write_str("A1"),
            ScenarioId::A2 => f.write_str("A2"),
        }
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A1" | "a1" => Ok(ScenarioId::A1),
            "A2" | "a2" => Ok(ScenarioId::A2),
            other => match other.parse::<u8>() {
                Ok(i) => ScenarioId::main(i),
                Err(_) => config(format!("scenario: {other:?} is not a valid scenario id (expected 1..8, A1 or A2)")),
            },
        }
    }
}

impl Serialize for ScenarioId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScenarioId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(n) => n.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One data-generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId) -> Self {
        Self { id, noise_sd: STUDY_NOISE_SD }
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Self {
        self.noise_sd = sd;
        self
    }

    /// Biomarkers per patient: HB, dHR and, for the appendix scenarios, VCB.
    pub fn biomarkers(&self) -> usize {
        match self.id {
            ScenarioId::Main(_) => 2,
            ScenarioId::A1 | ScenarioId::A2 => 3,
        }
    }

    pub fn true_gamma(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        match self.id {
            ScenarioId::Main(1) | ScenarioId::A1 => 0.0,
            ScenarioId::Main(2) => 5.0 * ind(x1 > 60.0 && x2 > 8.0),
            ScenarioId::Main(3) => 5.0 * ind(x1 > 30.0 && x1 < 100.0),
            ScenarioId::Main(4) | ScenarioId::A2 => 6.5 * logistic(30.0 * (hb_ecdf(x1) - 0.5)) - 0.5,
            ScenarioId::Main(5) => {
                let f = hb_ecdf(x1);
                let s = if f <= 0.5 { logistic(30.0 * (f - 0.2)) } else { 1.0 - logistic(30.0 * (f - 0.8)) };
                7.5 * s - 1.0
            }
            ScenarioId::Main(6) => 5.0 * ind(x2 > 8.0),
            ScenarioId::Main(7) => 7.5 * ind(x2 > 12.0),
            ScenarioId::Main(8) => {
                let f = dhr_ecdf(x2);
                let s = if f <= 0.5 { 1.0 - logistic(100.0 * (f - 0.2)) } else { logistic(100.0 * (f - 0.8)) };
                6.5 * s - 0.5
            }
            ScenarioId::Main(_) => unreachable!("scenario ids are validated on construction"),
        }
    }

    pub fn prognostic(&self, x: &[f64]) -> f64 {
        3.0 * ind(x[0] >= 60.0)
    }

    /// Biomarkers with a non-zero treatment interaction, by model name.
    pub fn predictive_variables(&self) -> BTreeSet<String> {
        let names: &[&str] = match self.id {
            ScenarioId::Main(1) | ScenarioId::A1 => &[],
            ScenarioId::Main(2) => &["HB", "dHR"],
            ScenarioId::Main(3..=5) | ScenarioId::A2 => &["HB"],
            _ => &["dHR"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Tabulated prevalence of the region where the effect is positive.
    pub fn true_prevalence(&self) -> f64 {
        match self.id {
            ScenarioId::Main(1) | ScenarioId::A1 => 0.0,
            ScenarioId::Main(2) => 0.18,
            ScenarioId::Main(3) => 0.52,
            ScenarioId::Main(4) | ScenarioId::A2 => 0.58,
            ScenarioId::Main(5) => 0.73,
            ScenarioId::Main(6) => 0.54,
            ScenarioId::Main(7) => 0.15,
            _ => 0.45,
        }
    }

    /// Tabulated mean effect over the region where it is positive.
    pub fn true_delta(&self) -> f64 {
        match self.id {
            ScenarioId::Main(1) | ScenarioId::A1 => 0.0,
            ScenarioId::Main(5) => 5.1,
            ScenarioId::Main(7) => 7.5,
            ScenarioId::Main(8) => 5.3,
            _ => 5.0,
        }
    }

    pub fn sample_biomarkers<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = Vec::with_capacity(3);
        x.push(sample_truncated_t(&TruncatedTSpec::HYPOXIC_BURDEN, rng).expect("valid spec"));
        x.push(sample_truncated_t(&TruncatedTSpec::HEART_RATE_RESPONSE, rng).expect("valid spec"));
        if self.biomarkers() == 3 {
            x.push(sample_truncated_normal(&TruncatedNormalSpec::VASOCONSTRICTIVE_BURDEN, rng).expect("valid spec"));
        }
        x
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, x: &[f64], treated: bool, rng: &mut R) -> f64 {
        let effect = if treated { self.true_gamma(x) } else { 0.0 };
        self.prognostic(x) + effect + self.noise_sd * sample_standard_normal(rng)
    }
}

impl PatientSource for ScenarioSpec {
    fn biomarkers(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_biomarkers(rng)
    }

    fn outcome(&self, x: &[f64], treated: bool, rng: &mut dyn RngCore) -> f64 {
        self.sample_outcome(x, treated, rng)
    }
}

/// `n` patients, screened through `filter` when given, randomised 1:1.
pub fn generate_patients<R: Rng + ?Sized>(
    n: usize,
    scenario: &ScenarioSpec,
    filter: Option<&SubspaceEstimate>,
    rng: &mut R,
) -> Vec<PatientRecord> {
    (0..n)
        .map(|_| {
            let x = loop {
                let x = scenario.sample_biomarkers(rng);
                if filter.is_none_or(|s| s.contains(&x)) {
                    break x;
                }
            };
            let t = sample_bernoulli(0.5, rng);
            let y = scenario.sample_outcome(&x, t, rng);
            PatientRecord { y, t, x }
        })
        .collect()
}

/// Biomarker vectors of an external population.
pub fn external_population(scenario: &ScenarioSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed);
    (0..n).map(|_| scenario.sample_biomarkers(&mut rng)).collect()
}

/// Fraction of `external` for which the trial's recommendation matches the
/// optimal action (treat iff the true effect is positive).
pub fn external_accuracy(result: &TrialResult, external: &[Vec<f64>], scenario: &ScenarioSpec) -> f64 {
    if external.is_empty() {
        return 0.0;
    }
    let treat_none = result.decision != Decision::Efficacy || result.aborted;
    let correct = external
        .iter()
        .filter(|x| {
            let optimal = scenario.true_gamma(x) > 0.0;
            let rec = !treat_none && recommend(x, result);
            rec == optimal
        })
        .count();
    correct as f64 / external.len() as f64
}

/// `(exact, inclusive)` detection rates of selected predictive sets.
pub fn detection_rates(selected: &[BTreeSet<String>], truth: &BTreeSet<String>) -> (f64, f64) {
    if selected.is_empty() {
        return (0.0, 0.0);
    }
    let n = selected.len() as f64;
    let exact = selected.iter().filter(|s| *s == truth).count() as f64 / n;
    let inclusive = selected.iter().filter(|s| truth.is_subset(s)).count() as f64 / n;
    (exact, inclusive)
}

/// Monte Carlo prevalence and mean effect of the positive region.
pub fn monte_carlo_truth(scenario: &ScenarioSpec, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed);
    let mut count = 0usize;
    let mut sum = 0.0;
    for _ in 0..n {
        let g = scenario.true_gamma(&scenario.sample_biomarkers(&mut rng));
        if g > 0.0 {
            count += 1;
            sum += g;
        }
    }
    let prevalence = count as f64 / n as f64;
    let delta = if count == 0 { 0.0 } else { sum / count as f64 };
    (prevalence, delta)
}

/// HB value where the scenario-4 surface crosses zero.
pub fn scenario4_threshold() -> f64 {
    // 6.5 L(30 (F - 0.5)) = 0.5  =>  F = 0.5 - ln(12) / 30
    let target = 0.5 - 12f64.ln() / 30.0;
    let (mut lo, mut hi) = (0.0, 265.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if hb_ecdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
