//! `cultalign` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 validation failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde_json::json;

use cultalign::harness::{
    self, run_ablation, run_de_experiment_observed, run_icl_baseline, run_naive_baseline,
    write_ablation_csv, write_json, write_radar_csv, EvaluationReport, Evaluator, ExperimentConfig,
    HarnessError, Method, QuestionFraming, RunReport,
};
use cultalign::respondents::RespondentError;
use cultalign::vsm::Dimension;
use cultalign::SoftPrompt;

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cultalign", version, about = "Align a respondent with target VSM13 cultural dimensions by evolving soft prompts")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config file, its dataset and DE settings.
    Validate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Also check that the backend answers.
        #[arg(long)]
        ping: bool,
    },
    /// Evaluate the Naive and ICL baselines (and optionally a saved prompt).
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// A soft prompt to score alongside the baselines.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Run differential evolution and write the run artifacts.
    Optimize {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run the hyperparameter sweep and write ablation.csv.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Summarize a soft prompt file.
    Inspect {
        prompt_path: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `de.rng_seed=42`. Repeatable; last wins.
    #[arg(long = "set", visible_alias = "overrides", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; replaces `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Validation(Vec<String>),
    Runtime(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Validation(d) => Failure::Validation(d),
            HarnessError::Config(msg) => Failure::Validation(vec![msg]),
            other => Failure::Runtime(other),
        }
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config, &args.set)?;
    if let Some(out) = &args.output {
        cfg.output_dir = out.clone();
        if let Some(obj) = cfg.resolved.as_object_mut() {
            obj.insert("output_dir".into(), json!(out));
        }
    }
    Ok(cfg)
}

fn print_validation(diags: &[String]) {
    println!(
        "{}",
        json!({ "ok": diags.is_empty(), "diagnostics": diags })
    );
}

fn cmd_validate(args: &ConfigArgs, ping: bool) -> Result<(), Failure> {
    let mut diags = ExperimentConfig::diagnose(&args.config, &args.set);
    if diags.is_empty() && ping {
        let cfg = load(args)?;
        match cfg.build_backend().and_then(|b| b.ping().map_err(HarnessError::from)) {
            Ok(()) => {}
            Err(e) => diags.push(format!("BackendUnreachable: {e}")),
        }
    }
    print_validation(&diags);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(Vec::new()))
    }
}

fn print_report_table(target: &cultalign::CulturalDimensions, reports: &[&EvaluationReport]) {
    print!("{:<12}", "method");
    for d in Dimension::ALL {
        print!("{:>10}", d.name());
    }
    println!("{:>12}{:>12}", "vsm13_loss", "unparsed");
    let row = |name: &str, vals: [f64; 6]| {
        print!("{name:<12}");
        for v in vals {
            print!("{v:>10.2}");
        }
    };
    row("Target", target.to_array());
    println!();
    for r in reports {
        row(&r.method.to_string(), r.dimensions.to_array());
        println!("{:>12.4}{:>12}", r.vsm13_loss, r.unparseable_count);
    }
}

fn cmd_eval(args: &ConfigArgs, prompt: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(args)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(HarnessError::from)?;
    let backend = cfg.build_backend()?;
    let mut reports = vec![run_naive_baseline(&cfg, backend.as_ref())?];
    match run_icl_baseline(&cfg, backend.as_ref()) {
        Ok(r) => reports.push(r),
        Err(HarnessError::Respondent(RespondentError::UnknownCountry(c))) => {
            warn!("no in-context examples registered for {c:?}; skipping the ICL baseline");
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(path) = prompt {
        let v = SoftPrompt::load(path).map_err(HarnessError::from)?;
        let evaluator = Evaluator::new(&cfg, backend.as_ref(), QuestionFraming::Plain)?;
        reports.push(evaluator.evaluate(&v, Method::DeOptimized)?.1);
    }
    let refs: Vec<&EvaluationReport> = reports.iter().collect();
    print_report_table(&cfg.dataset.target, &refs);
    write_json(
        &cfg.output_dir.join(harness::REPORT_FILE),
        &RunReport::for_evaluations(&cfg, refs.clone(), backend.describe()),
    )?;
    write_radar_csv(&cfg.output_dir.join(harness::RADAR_FILE), &cfg.dataset.target, &refs)?;
    Ok(())
}

fn cmd_optimize(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let backend = cfg.build_backend()?;
    let run = run_de_experiment_observed(&cfg, backend.as_ref(), |r| {
        println!(
            "generation {:>4}  best {:>12.6}  mean {:>12.6}",
            r.generation, r.best_fitness, r.mean_fitness
        );
    })?;
    println!(
        "initial best {:.6} -> final vsm13_loss {:.6} ({} generations, {} evaluations{})",
        run.initial_best_fitness,
        run.report.vsm13_loss,
        run.history.len(),
        run.evaluations,
        if run.stopped_early { ", stopped by tolerance" } else { "" }
    );
    println!("best prompt digest {}", run.best.digest());
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_ablate(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let grid = cfg.ablation.clone().unwrap_or_default();
    std::fs::create_dir_all(&cfg.output_dir).map_err(HarnessError::from)?;
    let rows = run_ablation(&grid, &cfg, |row| row.build_backend())?;
    let path = cfg.output_dir.join("ablation.csv");
    let file = File::create(&path).map_err(HarnessError::from)?;
    write_ablation_csv(&rows, BufWriter::new(file))?;
    write_ablation_csv(&rows, std::io::stdout().lock())?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        warn!("{failed} of {} sweep rows failed", rows.len());
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let p = SoftPrompt::load(path).map_err(HarnessError::from)?;
    println!("token_count: {}", p.token_count());
    println!("embed_dim: {}", p.embed_dim());
    if p.is_empty() {
        println!("min: -\nmax: -\nmean: -");
    } else {
        println!("min: {}", p.min());
        println!("max: {}", p.max());
        println!("mean: {}", p.mean());
    }
    println!("digest: {}", p.digest());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();

    let result = match &cli.command {
        Command::Validate { common, ping } => cmd_validate(common, *ping),
        Command::Eval { common, prompt } => cmd_eval(common, prompt.as_deref()),
        Command::Optimize { common } => cmd_optimize(common),
        Command::Ablate { common } => cmd_ablate(common),
        Command::Inspect { prompt_path } => cmd_inspect(prompt_path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(diags)) => {
            if !diags.is_empty() {
                print_validation(&diags);
            }
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
