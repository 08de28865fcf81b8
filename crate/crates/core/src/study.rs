//! Replicated trial studies: configuration, the replication fan-out,
//! operating-characteristic aggregation and the on-disk record formats.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::derive_seed;
use crate::error::{config, Error, Result};
use crate::regression::PriorSpec;
use crate::sampler::SamplerConfig;
use crate::scenario::{detection_rates, external_accuracy, external_population, ScenarioId, ScenarioSpec, STUDY_NOISE_SD};
use crate::trial::{run_trial, Decision, Method, TrialConfig, TrialDesign, TrialResult};

/// Stream index reserved for the external population.
const EXTERNAL_STREAM: u64 = u64::MAX;

/// Sampler settings for replicated studies: shorter than the single-fit
/// default so that a 200-replication cell runs in minutes on one core.
pub fn study_sampler() -> SamplerConfig {
    SamplerConfig { n_samples: 500, burn_in: 1000, thin: 2, chains: 2, ..SamplerConfig::default() }
}

/// A full study description, usually read from JSON. Missing fields take
/// their defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Overrides `trial.method`.
    pub method: Method,
    pub scenario: ScenarioId,
    pub replications: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub trial: TrialConfig,
    pub prior: PriorSpec,
    pub cutoff_draws: usize,
    pub external_size: usize,
    pub output_dir: PathBuf,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            method: Method::Fk,
            scenario: ScenarioId::Main(1),
            replications: 200,
            seed: 20240601,
            sampler: study_sampler(),
            trial: TrialConfig::default(),
            prior: PriorSpec::default(),
            cutoff_draws: 1000,
            external_size: 10_000,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return config("replications must be at least 1");
        }
        if self.external_size == 0 {
            return config("external_size must be at least 1");
        }
        self.design().validate()
    }

    /// Studies always use the simulation noise level.
    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec::new(self.scenario).with_noise_sd(STUDY_NOISE_SD)
    }

    pub fn design(&self) -> TrialDesign {
        TrialDesign {
            trial: TrialConfig { method: self.method, ..self.trial.clone() },
            sampler: self.sampler.clone(),
            prior: self.prior,
            biomarkers: self.scenario_spec().biomarkers(),
            cutoff_draws: self.cutoff_draws,
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// One line of the audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub decision: Decision,
    pub stopped_early: bool,
    pub n_enrolled: usize,
    pub p_eff_history: Vec<f64>,
    pub prevalence: f64,
    pub widened: bool,
    pub selected_variables: Option<Vec<String>>,
    pub accuracy: f64,
    pub aborted: bool,
}

/// Aggregated results of one (scenario, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub scenario: ScenarioId,
    pub method: Method,
    pub lambda_terms: f64,
    pub lambda_knots: f64,
    /// Power, or type I error for a null scenario.
    pub efficacy_rate: f64,
    pub accuracy: f64,
    pub edr: Option<f64>,
    pub idr: Option<f64>,
    pub expected_n: f64,
    /// Replications aggregated (aborted ones excluded).
    pub replications: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub characteristics: OperatingCharacteristics,
    pub records: Vec<ReplicationRecord>,
    /// Replications that failed with an error, with the message.
    pub failures: Vec<(usize, String)>,
}

impl StudyOutcome {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn record(rep: usize, seed: u64, r: &TrialResult, accuracy: f64) -> ReplicationRecord {
    ReplicationRecord {
        replication: rep,
        seed,
        decision: r.decision,
        stopped_early: r.stopped_early,
        n_enrolled: r.n_enrolled,
        p_eff_history: r.p_eff_history.clone(),
        prevalence: r.subspace.prevalence,
        widened: r.subspace.widened,
        selected_variables: r.selected_variables.clone(),
        accuracy,
        aborted: r.aborted,
    }
}

/// Aggregates per-replication records; aborted ones are counted apart.
pub fn aggregate(config: &StudyConfig, records: &[ReplicationRecord]) -> OperatingCharacteristics {
    let kept: Vec<&ReplicationRecord> = records.iter().filter(|r| !r.aborted).collect();
    let n = kept.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ReplicationRecord) -> f64| kept.iter().map(|r| f(r)).sum::<f64>() / n;
    let (edr, idr) = if config.method == Method::FkBma {
        let truth = config.scenario_spec().predictive_variables();
        let selected: Vec<BTreeSet<String>> = kept
            .iter()
            .map(|r| r.selected_variables.clone().unwrap_or_default().into_iter().collect())
            .collect();
        let (e, i) = detection_rates(&selected, &truth);
        (Some(e), Some(i))
    } else {
        (None, None)
    };
    OperatingCharacteristics {
        scenario: config.scenario,
        method: config.method,
        lambda_terms: config.prior.lambda_terms,
        lambda_knots: config.prior.lambda_knots,
        efficacy_rate: mean(&|r| (r.decision == Decision::Efficacy) as u8 as f64),
        accuracy: mean(&|r| r.accuracy),
        edr,
        idr,
        expected_n: mean(&|r| r.n_enrolled as f64),
        replications: kept.len(),
        aborted: records.len() - kept.len(),
    }
}

/// Runs every replication of one cell. Replication `r` uses
/// `derive_seed(config.seed, r)`, so results do not depend on scheduling.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let scenario = config.scenario_spec();
    let design = config.design();
    let external = external_population(&scenario, config.external_size, derive_seed(config.seed, EXTERNAL_STREAM));
    let results: Vec<(usize, Result<ReplicationRecord>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(config.seed, rep as u64);
            let out = run_trial(&design, &scenario, seed).map(|r| {
                let acc = external_accuracy(&r, &external, &scenario);
                record(rep, seed, &r, acc)
            });
            (rep, out)
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (rep, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    Ok(StudyOutcome { characteristics: aggregate(config, &records), records, failures })
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Domain(format!("csv: {other:?}")),
    }
}

/// A table with a fixed header; rows are checked against it before writing.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn check(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.header.len() {
                return Err(Error::Domain(format!(
                    "row {i} has {} fields, header has {}",
                    r.len(),
                    self.header.len()
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        self.check()?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            out.write_record(r).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.check()?;
        self.write(BufWriter::new(fs::File::create(path)?))
    }
}

pub const CHARACTERISTICS_HEADER: [&str; 11] = [
    "scenario",
    "method",
    "lambda_terms",
    "lambda_knots",
    "efficacy_rate",
    "accuracy",
    "edr",
    "idr",
    "expected_n",
    "replications",
    "aborted",
];

pub fn characteristics_table(rows: &[OperatingCharacteristics]) -> CsvTable {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
    let mut t = CsvTable::new(&CHARACTERISTICS_HEADER);
    for oc in rows {
        t.push(vec![
            oc.scenario.to_string(),
            oc.method.label().to_string(),
            format!("{}", oc.lambda_terms),
            format!("{}", oc.lambda_knots),
            format!("{:.4}", oc.efficacy_rate),
            format!("{:.4}", oc.accuracy),
            opt(oc.edr),
            opt(oc.idr),
            format!("{:.2}", oc.expected_n),
            oc.replications.to_string(),
            oc.aborted.to_string(),
        ]);
    }
    t
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Provenance written next to every output set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub files: Vec<String>,
    pub complete: bool,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64, files: Vec<String>, complete: bool) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(config),
            seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files,
            complete,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let f = fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

/// Writes the CSV row, the audit lines and the manifest of one study.
pub fn write_study(dir: &Path, command: &str, config: &StudyConfig, outcomes: &[StudyOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<OperatingCharacteristics> = outcomes.iter().map(|o| o.characteristics.clone()).collect();
    characteristics_table(&rows).write_file(&dir.join("operating_characteristics.csv"))?;
    let mut audit = BufWriter::new(fs::File::create(dir.join("replications.jsonl"))?);
    for o in outcomes {
        #[derive(Serialize)]
        struct Line<'a> {
            scenario: ScenarioId,
            method: Method,
            #[serde(flatten)]
            record: &'a ReplicationRecord,
        }
        let lines: Vec<Line> = o
            .records
            .iter()
            .map(|r| Line { scenario: o.characteristics.scenario, method: o.characteristics.method, record: r })
            .collect();
        write_jsonl(&lines, &mut audit)?;
    }
    audit.flush()?;
    let complete = outcomes.iter().all(StudyOutcome::complete);
    if !complete {
        let failures: Vec<_> = outcomes.iter().flat_map(|o| o.failures.iter()).collect();
        serde_json::to_writer_pretty(fs::File::create(dir.join("failures.json"))?, &failures)?;
    }
    let files = vec!["operating_characteristics.csv".to_string(), "replications.jsonl".to_string()];
    Manifest::new(command, config, config.seed, files, complete).write(dir)
}

/// Runs each `(scenario, method)` cell with the base configuration.
pub fn run_cells(base: &StudyConfig, cells: &[(ScenarioId, Method)]) -> Result<Vec<StudyOutcome>> {
    cells
        .iter()
        .map(|&(scenario, method)| run_study(&StudyConfig { scenario, method, ..base.clone() }))
        .collect()
}

/// Cutoff and FK over scenarios 1 to 8.
pub fn sweep_cells(methods: &[Method]) -> Vec<(ScenarioId, Method)> {
    ScenarioId::all_main().flat_map(|s| methods.iter().map(move |&m| (s, m))).collect()
}

/// The three-biomarker study: both appendix scenarios with Cutoff and the
/// given spline method.
pub fn appendix_cells(spline: Method) -> Vec<(ScenarioId, Method)> {
    let mut out = Vec::new();
    for s in [ScenarioId::A1, ScenarioId::A2] {
        for m in [Method::Cutoff, spline] {
            out.push((s, m));
        }
    }
    out
}

/// Spline model of the three-biomarker study. The raised term-count rate
/// only acts when terms are selected, so the study runs the model-averaged
/// fit; with every term forced in, the null type I error roughly quadruples.
pub const APPENDIX_SPLINE_METHOD: Method = Method::FkBma;

/// Term-count rate used with three biomarkers.
pub const APPENDIX_LAMBDA_TERMS: f64 = 5.0;
