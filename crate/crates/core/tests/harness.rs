mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;

use common::{model_info, text, FakeServer};
use cultalign::de::DEConfig;
use cultalign::harness::{
    evaluate_candidate, run_ablation, run_de_experiment, run_icl_baseline, run_naive_baseline,
    write_ablation_csv, AblationGrid, BackendConfig, ExperimentConfig, HarnessError,
    PlantedOptimum, RemoteBackendConfig, Sampling, UnparseablePolicy, BEST_PROMPT_FILE,
    CHECKPOINT_FILE, HISTORY_FILE, RADAR_FILE, REPORT_FILE,
};
use cultalign::respondents::{
    AnswerMode, InstructionPrompt, Respondent, RespondentError, SyntheticRespondentConfig,
};
use cultalign::vsm::{
    aggregate_responses, compute_dimensions, l1_fitness, CulturalDimensions, DimensionConstants,
    SurveyDataset, SurveyQuestion,
};
use cultalign::{GenerationRecord, SoftPrompt};

fn synthetic() -> BackendConfig {
    BackendConfig::Synthetic {
        projection_seed: 42,
        mode: AnswerMode::Continuous,
        planted_optimum: Some(PlantedOptimum::Random {
            seed: 42,
            half_width: 1.0,
        }),
    }
}

fn remote(url: &str) -> BackendConfig {
    BackendConfig::Remote(RemoteBackendConfig {
        base_url: url.into(),
        model_name: "fake".into(),
        timeout_ms: 2000,
        max_retries: 0,
        max_new_tokens: 16,
        temperature: 0.0,
        max_in_flight: 4,
        backoff_ms: 1,
        auth_token_env: "CULTALIGN_TEST_UNSET_TOKEN".into(),
        skip_handshake: false,
    })
}

fn config(backend: BackendConfig, out: &Path, de: DEConfig) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_parts(SurveyDataset::placeholder(), backend, de, 2, 8);
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn quick_de(generations: usize, seed: u64) -> DEConfig {
    DEConfig {
        max_generations: generations,
        rng_seed: seed,
        ..DEConfig::default()
    }
}

fn planted() -> SoftPrompt {
    SyntheticRespondentConfig::random_optimum(42, 2, 8, 1.0)
}

/// Counts calls into another respondent.
struct Counting(Arc<dyn Respondent>, AtomicUsize);

impl Respondent for Counting {
    fn answer(&self, v: &SoftPrompt, i: &InstructionPrompt, q: &SurveyQuestion) -> Result<f64, RespondentError> {
        self.1.fetch_add(1, Ordering::Relaxed);
        self.0.answer(v, i, q)
    }
    fn describe(&self) -> String {
        format!("counting({})", self.0.describe())
    }
}

#[test]
fn planted_optimum_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(synthetic(), dir.path(), DEConfig::default());
    let backend = cfg.build_backend().unwrap();
    let (f, report) = evaluate_candidate(&planted(), &cfg, backend.as_ref()).unwrap();
    assert_eq!(f, 0.0);
    assert_eq!(report.vsm13_loss, 0.0);

    let far = SoftPrompt::from_fn(2, 8, |t, d| planted().row(t)[d] + if (t + d) % 2 == 0 { 3.0 } else { -3.0 });
    let (f, _) = evaluate_candidate(&far, &cfg, backend.as_ref()).unwrap();
    assert!(f > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reports_are_self_consistent(values in prop::collection::vec(-5.0f32..=5.0, 16), k in 1usize..3) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(synthetic(), dir.path(), DEConfig::default());
        cfg.samples_per_question = k;
        cfg.dataset.constants = DimensionConstants::from_array([1.0, -2.0, 3.5, 0.0, 10.0, -7.25]);
        cfg.dataset.target = CulturalDimensions::from_array([20.0, -10.0, 5.0, 60.0, -30.0, 0.0]);
        let backend = cfg.build_backend().unwrap();
        let v = SoftPrompt::new(2, 8, values).unwrap();
        let (f, report) = evaluate_candidate(&v, &cfg, backend.as_ref()).unwrap();

        let raw: Vec<(u8, f64)> = report
            .responses
            .per_question()
            .iter()
            .flat_map(|(&q, vs)| vs.iter().map(move |&x| (q, x)))
            .collect();
        prop_assert_eq!(raw.len(), 24 * k);
        let rebuilt = aggregate_responses(cfg.dataset.questions(), raw).unwrap();
        let dims = compute_dimensions(&rebuilt, &cfg.dataset.constants);
        prop_assert_eq!(dims, report.dimensions);
        prop_assert_eq!(l1_fitness(&report.dimensions, &cfg.dataset.target), report.vsm13_loss);
        prop_assert_eq!(f, report.vsm13_loss);
        prop_assert!(raw_in_scale(&report.responses));
    }
}

fn raw_in_scale(rs: &cultalign::ResponseSet) -> bool {
    rs.per_question().values().flatten().all(|&x| (1.0..=5.0).contains(&x))
}

#[test]
fn naive_over_fake_remote() {
    let dir = tempfile::tempdir().unwrap();
    let threes = FakeServer::start(|_, _| text("Numerical Answer: 3"));
    let mut cfg = config(remote(&threes.url), dir.path(), DEConfig::default());
    cfg.dataset.target = CulturalDimensions::from_array([12.0, -6.0, 0.0, 30.0, 0.0, -6.0]);
    let backend = cfg.build_backend().unwrap();
    let report = run_naive_baseline(&cfg, backend.as_ref()).unwrap();
    assert_eq!(report.dimensions.to_array(), [0.0; 6]);
    assert_eq!(report.vsm13_loss, (12.0 + 6.0 + 30.0 + 6.0) / 6.0);
    // Empty prompt: no handshake, empty token array.
    for req in threes.requests() {
        assert_eq!(req.path, "/v1/embedded-completion");
        assert_eq!(req.json()["virtual_tokens"], serde_json::json!([]));
    }
    assert_eq!(threes.requests().len(), 24);

    let fives = FakeServer::start(|_, _| text("5"));
    let cfg = config(remote(&fives.url), dir.path(), DEConfig::default());
    let backend = cfg.build_backend().unwrap();
    let report = run_naive_baseline(&cfg, backend.as_ref()).unwrap();
    let all_fives = aggregate_responses(cfg.dataset.questions(), (1..=24u8).map(|q| (q, 5.0))).unwrap();
    assert_eq!(report.dimensions, compute_dimensions(&all_fives, &DimensionConstants::ZERO));
}

#[test]
fn icl_wraps_each_question() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(|_, _| text("3"));
    let mut cfg = config(remote(&server.url), dir.path(), DEConfig::default());
    cfg.dataset.country_code = "SA".into();
    let backend = cfg.build_backend().unwrap();
    let report = run_icl_baseline(&cfg, backend.as_ref()).unwrap();
    assert_eq!(report.vsm13_loss, 0.0);
    let posts = server.completions();
    assert_eq!(posts.len(), 24);
    for req in posts {
        let q = req.json()["question"].as_str().unwrap().to_string();
        assert!(q.starts_with("Example 1: "), "{q}");
        assert!(q.contains("Hospitality is a key cultural value in Saudi Arabia"), "{q}");
        assert!(q.contains("Placeholder for VSM13 content question"), "{q}");
    }

    let mut us = cfg.clone();
    us.dataset.country_code = "US".into();
    run_icl_baseline(&us, backend.as_ref()).unwrap();
    assert!(server.completions().iter().any(|r| r.json()["question"].as_str().unwrap().contains("individualism is highly valued")));

    let mut unknown = cfg.clone();
    unknown.dataset.country_code = "XX".into();
    assert!(matches!(
        run_icl_baseline(&unknown, backend.as_ref()),
        Err(HarnessError::Respondent(RespondentError::UnknownCountry(_)))
    ));
}

#[test]
fn unparseable_policies() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(|_, _| text("Numerical Answer: Unclear"));
    let mut cfg = config(remote(&server.url), dir.path(), DEConfig::default());
    cfg.unparseable_policy = UnparseablePolicy::Strict;
    let backend = cfg.build_backend().unwrap();
    match run_naive_baseline(&cfg, backend.as_ref()) {
        Err(e @ HarnessError::Unparseable { .. }) => {
            assert_eq!(e.category(), "UnparseableAnswer");
            let HarnessError::Unparseable { questions, sample } = e else { unreachable!() };
            assert_eq!(questions, (1..=24).collect::<Vec<u8>>());
            assert_eq!(sample, "Numerical Answer: Unclear");
        }
        other => panic!("expected Unparseable, got {other:?}"),
    }

    cfg.unparseable_policy = UnparseablePolicy::RetryThenNeutral;
    let before = server.completions().len();
    let report = run_naive_baseline(&cfg, backend.as_ref()).unwrap();
    assert_eq!(report.unparseable_count, 24);
    assert_eq!(report.dimensions.to_array(), [0.0; 6]);
    assert_eq!(server.completions().len() - before, 48);
}

#[test]
fn retry_then_neutral_uses_a_good_second_answer() {
    let dir = tempfile::tempdir().unwrap();
    // Every other completion is garbage, so each question's retry succeeds.
    let server = FakeServer::start(|_, seen| if seen % 2 == 0 { text("no idea") } else { text("4") });
    let mut cfg = config(remote(&server.url), dir.path(), DEConfig::default());
    cfg.workers = 1;
    let backend = cfg.build_backend().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let report = pool.install(|| run_naive_baseline(&cfg, backend.as_ref())).unwrap();
    assert_eq!(report.unparseable_count, 0);
    assert!(report.responses.per_question().values().flatten().all(|&x| x == 4.0));
}

#[test]
fn strict_unparseable_candidates_lose() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(|req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(8),
        _ => text("Unclear"),
    });
    let mut cfg = config(remote(&server.url), dir.path(), quick_de(2, 1));
    cfg.unparseable_policy = UnparseablePolicy::Strict;
    let backend = cfg.build_backend().unwrap();
    let err = run_de_experiment(&cfg, backend.as_ref()).unwrap_err();
    // Every member scores +inf, the run finishes, and the final re-evaluation
    // reports the unparseable answers.
    assert_eq!(err.category(), "UnparseableAnswer");
    let history = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert!(history.lines().count() >= 1);
}

#[test]
fn backend_errors_carry_the_question() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(|req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(4096),
        _ => text("3"),
    });
    let cfg = config(remote(&server.url), dir.path(), quick_de(2, 1));
    let backend = cfg.build_backend().unwrap();
    let err = evaluate_candidate(&planted(), &cfg, backend.as_ref()).unwrap_err();
    assert_eq!(err.category(), "DimMismatch");
    assert!(matches!(err, HarnessError::Backend { .. }));
    let err = run_de_experiment(&cfg, backend.as_ref()).unwrap_err();
    assert_eq!(err.category(), "DimMismatch");
}

#[test]
fn constant_landscape_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let server = FakeServer::start(|req, _| match req.path.as_str() {
        "/v1/model-info" => model_info(8),
        _ => text("Numerical Answer: 2"),
    });
    let cfg = config(remote(&server.url), dir.path(), DEConfig::default());
    let backend = cfg.build_backend().unwrap();
    let run = run_de_experiment(&cfg, backend.as_ref()).unwrap();
    assert!(run.stopped_early);
    assert_eq!(run.history.len(), 1);
    assert!(run.history.iter().all(|r| r.best_fitness == run.initial_best_fitness));
    assert_eq!(run.report.vsm13_loss, run.initial_best_fitness);
}

#[test]
fn de_run_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(synthetic(), dir.path(), DEConfig::default());
    let backend = cfg.build_backend().unwrap();
    let run = run_de_experiment(&cfg, backend.as_ref()).unwrap();

    let lines: Vec<GenerationRecord> = std::fs::read_to_string(dir.path().join(HISTORY_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() <= 50);
    assert_eq!(lines, run.history);
    for (i, r) in lines.iter().enumerate() {
        assert_eq!(r.generation, i + 1);
    }
    assert_eq!(lines.last().unwrap().best_member_digest, run.best.digest());

    let best = SoftPrompt::load(dir.path().join(BEST_PROMPT_FILE)).unwrap();
    assert_eq!(best, run.best);
    assert_eq!(SoftPrompt::load(dir.path().join(CHECKPOINT_FILE)).unwrap(), run.best);
    assert_eq!(run.report.vsm13_loss, run.best_fitness);
    assert!(run.best_fitness <= run.initial_best_fitness);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["method"], "DEOptimized");
    assert_eq!(report["reports"][0]["vsm13_loss"], run.report.vsm13_loss);
    assert_eq!(report["optimization"]["best_prompt_digest"], run.best.digest());
    assert_eq!(report["optimization"]["generations_run"], run.history.len());

    let radar = std::fs::read_to_string(dir.path().join(RADAR_FILE)).unwrap();
    let rows: Vec<&str> = radar.lines().collect();
    assert_eq!(rows[0], "method,PDI,IDV,MAS,UAI,LTO,IVR");
    assert!(rows[1].starts_with("Target,"));
    assert!(rows[2].starts_with("DEOptimized,"));
}

#[test]
fn de_runs_are_reproducible_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: u64, workers: usize| {
        let mut cfg = config(synthetic(), &dir.path().join(name), quick_de(20, seed));
        cfg.workers = workers;
        let backend = cfg.build_backend().unwrap();
        run_de_experiment(&cfg, backend.as_ref()).unwrap()
    };
    let a = run("a", 42, 1);
    let b = run("b", 42, 4);
    let c = run("c", 43, 4);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.history, b.history);
    assert_ne!(a.best.digest(), c.best.digest());
}

#[test]
fn improves_over_initial_population_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut strictly_better = 0;
    for seed in 0..5 {
        let cfg = config(synthetic(), &dir.path().join(seed.to_string()), quick_de(50, seed));
        let backend = cfg.build_backend().unwrap();
        let run = run_de_experiment(&cfg, backend.as_ref()).unwrap();
        assert!(run.report.vsm13_loss <= run.initial_best_fitness);
        strictly_better += usize::from(run.report.vsm13_loss < run.initial_best_fitness);
    }
    assert!(strictly_better >= 4, "{strictly_better}/5");
}

#[test]
fn cache_skips_duplicate_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.bin");
    SoftPrompt::zeros(2, 8).save(&seed_path).unwrap();
    let mut cfg = config(synthetic(), &dir.path().join("cached"), quick_de(30, 5));
    // Two identical seeds guarantee a repeated candidate in generation 0.
    cfg.seed_prompts = vec![seed_path.clone(), seed_path];
    let counter = Counting(cfg.build_backend().unwrap(), AtomicUsize::new(0));
    let run = run_de_experiment(&cfg, &counter).unwrap();
    assert!(run.cache_hits >= 1);
    // Each candidate is asked 24 questions; cached ones ask none. The final
    // re-evaluation of the best bypasses the cache.
    let asked = counter.1.load(Ordering::Relaxed);
    assert_eq!(asked, 24 * (run.evaluations - run.cache_hits) + 24);

    let uncached = Counting(cfg.build_backend().unwrap(), AtomicUsize::new(0));
    cfg.cache_fitness = Some(false);
    cfg.output_dir = dir.path().join("nocache");
    let again = run_de_experiment(&cfg, &uncached).unwrap();
    assert_eq!(again.cache_hits, 0);
    assert_eq!(uncached.1.load(Ordering::Relaxed), 24 * again.evaluations + 24);
    assert_eq!(again.best, run.best);
}

#[test]
fn resume_seeds_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(synthetic(), dir.path(), quick_de(30, 42));
    let backend = cfg.build_backend().unwrap();
    let first = run_de_experiment(&cfg, backend.as_ref()).unwrap();

    let mut resumed = cfg.clone();
    resumed.resume = true;
    resumed.de.rng_seed = 7;
    resumed.de.max_generations = 1;
    let second = run_de_experiment(&resumed, backend.as_ref()).unwrap();
    // The checkpointed best is member 0 of the new population.
    assert!(second.initial_best_fitness <= first.best_fitness);
}

#[test]
fn seed_prompts_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let seed_path = dir.path().join("seed.bin");
    planted().save(&seed_path).unwrap();
    let mut cfg = config(synthetic(), &dir.path().join("out"), quick_de(1, 3));
    cfg.seed_prompts = vec![seed_path];
    let backend = cfg.build_backend().unwrap();
    let run = run_de_experiment(&cfg, backend.as_ref()).unwrap();
    assert_eq!(run.initial_best_fitness, 0.0);
    assert_eq!(run.report.vsm13_loss, 0.0);
}

fn one_setting_grid(tokens: usize) -> AblationGrid {
    AblationGrid {
        token_counts: vec![tokens],
        mutation_rates: vec![0.5],
        recombination_rates: vec![0.7],
        population_sizes: vec![5],
        trials: 1,
        sampling: Sampling::Exhaustive,
        sweep_seed: 1,
    }
}

#[test]
fn single_setting_sweep_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(synthetic(), dir.path(), quick_de(10, 9));
    let rows = run_ablation(&one_setting_grid(3), &cfg, |row| row.build_backend()).unwrap();
    assert_eq!(rows.len(), 1);

    let mut direct = cfg.clone();
    direct.token_count = 3;
    direct.de.mutation_rate = 0.5;
    direct.de.recombination_rate = 0.7;
    direct.de.population_size = 5;
    direct.output_dir = dir.path().join("direct");
    let backend = direct.build_backend().unwrap();
    let run = run_de_experiment(&direct, backend.as_ref()).unwrap();
    assert_eq!(rows[0].outcome, Ok(run.report.vsm13_loss));
}

#[test]
fn failed_rows_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(synthetic(), dir.path(), quick_de(2, 9));
    let grid = AblationGrid {
        token_counts: vec![1, 2, 3],
        ..one_setting_grid(1)
    };
    let rows = run_ablation(&grid, &cfg, |row| {
        if row.token_count == 2 {
            Err(HarnessError::Respondent(RespondentError::Transport {
                attempts: 4,
                message: "connection refused".into(),
            }))
        } else {
            row.build_backend()
        }
    })
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].outcome.is_ok() && rows[2].outcome.is_ok());
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf).unwrap();
    let csv = String::from_utf8(buf).unwrap();
    let line = csv.lines().nth(2).unwrap();
    assert!(line.starts_with("2,2,0.5,0.7,5,"), "{line}");
    assert!(line.contains("ERROR: "), "{line}");
}
