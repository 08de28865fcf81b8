//! Command-line front end for trial simulations and studies.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enrichment::illustrate::{illustrate, IllustrationConfig};
use enrichment::posterior::{gamma_surface, trace_extract};
use enrichment::sampler::FitMode;
use enrichment::scenario::ScenarioId;
use enrichment::study::{
    appendix_cells, run_cells, run_study, sweep_cells, write_study, CsvTable, Manifest, StudyConfig,
    APPENDIX_LAMBDA_TERMS, APPENDIX_SPLINE_METHOD,
};
use enrichment::trial::{run_trial_detailed, Method};
use enrichment::{dist, Error, Result};

#[derive(Parser)]
#[command(name = "enrichment", version, about = "Adaptive enrichment trial simulator")]
struct Cli {
    /// JSON study configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// cutoff, fk or fkbma
    #[arg(long, global = true)]
    method: Option<Method>,
    /// 1..8, or A1 / A2 for the three-biomarker scenarios
    #[arg(long, global = true)]
    scenario: Option<ScenarioId>,
    #[arg(long, global = true)]
    lambda_terms: Option<f64>,
    #[arg(long, global = true)]
    lambda_knots: Option<f64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One replication with its result, effect surface and traces.
    RunTrial,
    /// Operating characteristics of one scenario and method.
    Study,
    /// Scenarios 1 to 8 under Cutoff and FK (or only --method).
    Sweep,
    /// The single-dataset example with credible bands and traces.
    Illustrate,
    /// Three-biomarker scenarios under Cutoff and a spline model (FK-BMA,
    /// or the spline method given by --method).
    AppendixStudy,
}

impl Cli {
    fn study_config(&self) -> Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(p) => StudyConfig::load(p)?,
            None => StudyConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(l) = self.lambda_terms {
            cfg.prior.lambda_terms = l;
        }
        if let Some(l) = self.lambda_knots {
            cfg.prior.lambda_knots = l;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn run_trial_cmd(cfg: &StudyConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let run = run_trial_detailed(&cfg.design(), &cfg.scenario_spec(), cfg.seed)?;
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(&run.result)? + "\n")?;

    // Effect surface over the observed HB x dHR range, other biomarkers at their median.
    let column = |j: usize| -> Vec<f64> { run.data.iter().map(|p| p.x[j]).collect() };
    let q = |j: usize, p: f64| dist::quantiles(&column(j), &[p])[0];
    let extra: Vec<f64> = (2..cfg.scenario_spec().biomarkers()).map(|j| q(j, 0.5)).collect();
    let point = |hb: f64, dhr: f64| {
        let mut x = vec![hb, dhr];
        x.extend(&extra);
        x
    };
    let hb = linspace(q(0, 0.01), q(0, 0.99), 41);
    let dhr = linspace(q(1, 0.01), q(1, 0.99), 41);
    let grid: Vec<Vec<f64>> = hb.iter().flat_map(|&h| dhr.iter().map(move |&d| point(h, d))).collect();
    let surface = gamma_surface(&run.fit, &grid);
    let mut table = CsvTable::new(&["hb", "dhr", "mean", "lower", "upper", "prob_positive"]);
    for (x, g) in grid.iter().zip(&surface) {
        let n = g.len() as f64;
        let b = dist::quantiles(g, &[0.025, 0.975]);
        table.push(vec![
            format!("{:.4}", x[0]),
            format!("{:.4}", x[1]),
            format!("{:.5}", g.iter().sum::<f64>() / n),
            format!("{:.5}", b[0]),
            format!("{:.5}", b[1]),
            format!("{:.4}", g.iter().filter(|&&v| v > 0.0).count() as f64 / n),
        ]);
    }
    table.write_file(&dir.join("gamma_surface.csv"))?;

    let patterns: Vec<Vec<f64>> = [20.0, 80.0].iter().flat_map(|&h| [5.0, 15.0].map(|d| point(h, d))).collect();
    let trace = trace_extract(&run.fit, &patterns);
    trace.write_csv(BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;

    let files = ["result.json", "gamma_surface.csv", "trace.csv"].map(String::from).to_vec();
    Manifest::new("run-trial", cfg, cfg.seed, files, true).write(dir)?;
    println!("{}", serde_json::to_string(&run.result)?);
    Ok(())
}

fn report(dir: &Path, outcomes: &[enrichment::study::StudyOutcome]) -> Result<()> {
    print!("{}", fs::read_to_string(dir.join("operating_characteristics.csv"))?);
    let failed: usize = outcomes.iter().map(|o| o.failures.len()).sum();
    if failed > 0 {
        eprintln!("{failed} replications failed; study marked incomplete (see failures.json)");
    }
    Ok(())
}

fn illustrate_cmd(cli: &Cli) -> Result<()> {
    let mut cfg = IllustrationConfig::default();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = cli.lambda_knots {
        cfg.prior.lambda_knots = l;
    }
    if let Some(l) = cli.lambda_terms {
        cfg.prior.lambda_terms = l;
    }
    match cli.method {
        Some(Method::Fk) => cfg.mode = FitMode::FreeKnot,
        Some(Method::FkBma) | None => cfg.mode = FitMode::FreeKnotBma,
        Some(Method::Cutoff) => return Err(Error::Config("method: illustrate fits a spline model (fk or fkbma)".into())),
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/illustrate"));
    fs::create_dir_all(&dir)?;
    let out = illustrate(&cfg)?;

    let mut bands = CsvTable::new(&["dhr", "hb", "mean", "lower", "upper", "prob_positive"]);
    for b in &out.bands {
        bands.push(vec![
            format!("{}", b.dhr),
            format!("{}", b.hb),
            format!("{:.5}", b.mean),
            format!("{:.5}", b.lower),
            format!("{:.5}", b.upper),
            format!("{:.4}", b.prob_positive),
        ]);
    }
    bands.write_file(&dir.join("bands.csv"))?;
    out.trace.write_csv(BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;

    let summary = serde_json::json!({
        "thresholds": out.thresholds,
        "threshold_interval": out.threshold_interval,
        "true_threshold": out.true_threshold,
        "max_level_gap": out.max_level_gap,
        "trace_patterns": out.trace.patterns,
        "rhat": out.rhat,
        "knot_acceptance": out.knot_acceptance,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let files = ["bands.csv", "trace.csv", "summary.json"].map(String::from).to_vec();
    Manifest::new("illustrate", &cfg, cfg.seed, files, true).write(&dir)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::RunTrial => run_trial_cmd(&cli.study_config()?),
        Command::Study => {
            let cfg = cli.study_config()?;
            let out = run_study(&cfg)?;
            write_study(&cfg.output_dir, "study", &cfg, std::slice::from_ref(&out))?;
            report(&cfg.output_dir, std::slice::from_ref(&out))
        }
        Command::Sweep => {
            let cfg = cli.study_config()?;
            let methods = match cli.method {
                Some(m) => vec![m],
                None => vec![Method::Cutoff, Method::Fk],
            };
            let outs = run_cells(&cfg, &sweep_cells(&methods))?;
            write_study(&cfg.output_dir, "sweep", &cfg, &outs)?;
            report(&cfg.output_dir, &outs)
        }
        Command::AppendixStudy => {
            let mut cfg = cli.study_config()?;
            if cli.lambda_terms.is_none() {
                cfg.prior.lambda_terms = APPENDIX_LAMBDA_TERMS;
            }
            let spline = match cli.method {
                Some(m) if m != Method::Cutoff => m,
                _ => APPENDIX_SPLINE_METHOD,
            };
            let outs = run_cells(&cfg, &appendix_cells(spline))?;
            write_study(&cfg.output_dir, "appendix-study", &cfg, &outs)?;
            report(&cfg.output_dir, &outs)
        }
        Command::Illustrate => illustrate_cmd(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
