use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::Value;

use super::evaluate::{EvaluationReport, Evaluator, Method, QuestionFraming};
use super::{ExperimentConfig, HarnessError};
use crate::de::{self, init_population, random_search, GenerationRecord, SoftPrompt};
use crate::respondents::Respondent;
use crate::vsm::{CulturalDimensions, Dimension};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const BEST_PROMPT_FILE: &str = "best_prompt.bin";
pub const RADAR_FILE: &str = "radar.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint_best_prompt.bin";

#[derive(Debug, Clone)]
pub struct DeRun {
    pub best: SoftPrompt,
    /// Best fitness seen by the optimizer.
    pub best_fitness: f64,
    pub initial_best_fitness: f64,
    /// Evaluation of `best` after the run.
    pub report: EvaluationReport,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub cache_hits: usize,
    pub stopped_early: bool,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

fn load_seeds(cfg: &ExperimentConfig) -> Result<Vec<SoftPrompt>, HarnessError> {
    let mut seeds = Vec::new();
    if cfg.resume {
        let path = cfg.output_dir.join(CHECKPOINT_FILE);
        if path.exists() {
            let p = SoftPrompt::load(&path)?;
            if p.shape() == (cfg.token_count, cfg.embed_dim) {
                info!("resuming from checkpoint {}", path.display());
                seeds.push(p);
            } else {
                warn!("ignoring checkpoint {} with shape {:?}", path.display(), p.shape());
            }
        }
    }
    for path in &cfg.seed_prompts {
        seeds.push(SoftPrompt::load(path)?);
    }
    seeds.truncate(cfg.de.population_size);
    Ok(seeds)
}

/// Runs differential evolution with the survey loss as the black-box
/// fitness, writing `history.jsonl`, checkpoints, `best_prompt.bin`,
/// `report.json` and `radar.csv` under `cfg.output_dir`.
pub fn run_de_experiment(cfg: &ExperimentConfig, respondent: &dyn Respondent) -> Result<DeRun, HarnessError> {
    run_de_experiment_observed(cfg, respondent, |_| {})
}

/// [`run_de_experiment`] with a callback per generation record.
pub fn run_de_experiment_observed(
    cfg: &ExperimentConfig,
    respondent: &dyn Respondent,
    mut on_generation: impl FnMut(&GenerationRecord) + Send,
) -> Result<DeRun, HarnessError> {
    cfg.de.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let seeds = load_seeds(cfg)?;
    let population = init_population(&cfg.de, cfg.token_count, cfg.embed_dim, &seeds)?;
    let evaluator = Evaluator::new(cfg, respondent, QuestionFraming::Plain)?;

    let history_path = cfg.output_dir.join(HISTORY_FILE);
    let checkpoint_path = cfg.output_dir.join(CHECKPOINT_FILE);
    let mut history_out = BufWriter::new(File::create(&history_path)?);
    let mut io_error: Option<std::io::Error> = None;
    let mut last_digest = String::new();

    let pool = thread_pool(cfg.workers)?;
    let outcome = pool.install(|| {
        de::evolve(
            population,
            |v: &SoftPrompt| evaluator.fitness(v),
            &cfg.de,
            |record, pop| {
                on_generation(record);
                let mut write = || -> std::io::Result<()> {
                    serde_json::to_writer(&mut history_out, record)?;
                    history_out.write_all(b"\n")?;
                    history_out.flush()?;
                    if record.best_member_digest != last_digest {
                        pop.best().0.save(&checkpoint_path)?;
                        last_digest.clone_from(&record.best_member_digest);
                    }
                    Ok(())
                };
                if let Err(e) = write() {
                    io_error.get_or_insert(e);
                }
            },
        )
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }

    let (final_loss, report) = pool.install(|| evaluator.evaluate(&outcome.best, Method::DeOptimized))?;
    if respondent.is_deterministic() && final_loss != outcome.best_fitness {
        warn!(
            "re-evaluated loss {final_loss} differs from training best {}",
            outcome.best_fitness
        );
    }

    let run = DeRun {
        best: outcome.best,
        best_fitness: outcome.best_fitness,
        initial_best_fitness: outcome.initial_best_fitness,
        report,
        history: outcome.history,
        evaluations: outcome.evaluations,
        cache_hits: evaluator.cache_hits(),
        stopped_early: outcome.stopped_early,
    };
    run.best.save(cfg.output_dir.join(BEST_PROMPT_FILE))?;
    write_json(
        &cfg.output_dir.join(REPORT_FILE),
        &RunReport::for_de(cfg, &run, respondent.describe()),
    )?;
    write_radar_csv(
        &cfg.output_dir.join(RADAR_FILE),
        &cfg.dataset.target,
        &[&run.report],
    )?;
    Ok(run)
}

/// Equal-budget baseline: `budget` uniform random candidates.
pub fn run_random_search(
    cfg: &ExperimentConfig,
    respondent: &dyn Respondent,
    budget: usize,
) -> Result<(SoftPrompt, f64), HarnessError> {
    let evaluator = Evaluator::new(cfg, respondent, QuestionFraming::Plain)?;
    let pool = thread_pool(cfg.workers)?;
    let out = pool.install(|| {
        random_search(&cfg.de, cfg.token_count, cfg.embed_dim, budget, |v: &SoftPrompt| {
            evaluator.fitness(v)
        })
    })?;
    Ok((out.best, out.best_fitness))
}

/// Contents of `report.json`.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub backend: String,
    pub reports: Vec<&'a EvaluationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSummary>,
    pub overrides: &'a [String],
    pub config: &'a Value,
}

#[derive(Debug, Serialize)]
pub struct OptimizationSummary {
    pub training_best_fitness: f64,
    pub initial_best_fitness: f64,
    pub final_vsm13_loss: f64,
    pub generations_run: usize,
    pub evaluations: usize,
    pub cache_hits: usize,
    pub stopped_early: bool,
    pub best_prompt_digest: String,
}

impl<'a> RunReport<'a> {
    pub fn for_de(cfg: &'a ExperimentConfig, run: &'a DeRun, backend: String) -> Self {
        Self {
            backend,
            reports: vec![&run.report],
            optimization: Some(OptimizationSummary {
                training_best_fitness: run.best_fitness,
                initial_best_fitness: run.initial_best_fitness,
                final_vsm13_loss: run.report.vsm13_loss,
                generations_run: run.history.len(),
                evaluations: run.evaluations,
                cache_hits: run.cache_hits,
                stopped_early: run.stopped_early,
                best_prompt_digest: run.best.digest(),
            }),
            overrides: &cfg.overrides,
            config: &cfg.resolved,
        }
    }

    pub fn for_evaluations(cfg: &'a ExperimentConfig, reports: Vec<&'a EvaluationReport>, backend: String) -> Self {
        Self {
            backend,
            reports,
            optimization: None,
            overrides: &cfg.overrides,
            config: &cfg.resolved,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// One row per method plus a `Target` row, six dimension columns.
pub fn write_radar_csv(path: &Path, target: &CulturalDimensions, reports: &[&EvaluationReport]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string()];
    header.extend(Dimension::ALL.iter().map(|d| d.name().to_string()));
    w.write_record(&header)?;
    let mut row = |name: String, d: &CulturalDimensions| -> Result<(), csv::Error> {
        let mut rec = vec![name];
        rec.extend(d.to_array().iter().map(|x| x.to_string()));
        w.write_record(&rec)
    };
    row("Target".into(), target)?;
    for r in reports {
        row(r.method.to_string(), &r.dimensions)?;
    }
    w.flush()?;
    Ok(())
}

/// `output_dir` itself, or a per-row subdirectory for sweeps.
pub fn row_output_dir(base: &Path, exp_no: usize) -> PathBuf {
    base.join("ablation").join(format!("exp_{exp_no:02}"))
}
