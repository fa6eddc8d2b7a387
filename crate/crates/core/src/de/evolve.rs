use std::error::Error as StdError;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{crossover_traced, mutate, select, Selection};
use super::streams::{stream, TAG_GENERATION, TAG_INIT, TAG_RANDOM_SEARCH};
use super::{DEConfig, DeError, SoftPrompt};

/// The evolving candidate set. A NaN fitness marks a member that has not
/// been evaluated yet.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    members: Vec<SoftPrompt>,
    fitnesses: Vec<f64>,
    best_index: usize,
    generation: usize,
}

impl Population {
    pub fn new(members: Vec<SoftPrompt>) -> Self {
        let n = members.len();
        Self {
            members,
            fitnesses: vec![f64::NAN; n],
            best_index: 0,
            generation: 0,
        }
    }

    pub fn members(&self) -> &[SoftPrompt] {
        &self.members
    }

    pub fn fitnesses(&self) -> &[f64] {
        &self.fitnesses
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn best(&self) -> (&SoftPrompt, f64) {
        (&self.members[self.best_index], self.fitnesses[self.best_index])
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_evaluated(&self) -> bool {
        !self.fitnesses.iter().any(|f| f.is_nan())
    }

    /// `max - min` over fitnesses. Infinite while any member is infinite.
    pub fn spread(&self) -> f64 {
        let max = self.fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.fitnesses[self.best_index];
        if max.is_infinite() {
            return f64::INFINITY;
        }
        max - min
    }

    /// Lowest fitness wins; ties go to the lowest index.
    fn refresh_best(&mut self) {
        let mut best = 0;
        for (i, &f) in self.fitnesses.iter().enumerate() {
            if f < self.fitnesses[best] {
                best = i;
            }
        }
        self.best_index = best;
    }

    fn record(&self) -> GenerationRecord {
        let (best_member, best_fitness) = self.best();
        // Averaging offsets from the best keeps mean >= best under rounding.
        let mean_offset = self
            .fitnesses
            .iter()
            .map(|f| f - best_fitness)
            .sum::<f64>()
            / self.fitnesses.len() as f64;
        let mean_fitness = if best_fitness.is_infinite() {
            best_fitness
        } else {
            best_fitness + mean_offset
        };
        GenerationRecord {
            generation: self.generation,
            best_fitness,
            mean_fitness,
            best_member_digest: best_member.digest(),
        }
    }
}

/// One line of the optimization history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_member_digest: String,
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub best: SoftPrompt,
    pub best_fitness: f64,
    /// Best fitness of the evaluated initial population (generation 0).
    pub initial_best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub population: Population,
    pub evaluations: usize,
    pub stopped_early: bool,
}

/// Seeds first, then uniform random matrices in the bounds until there are
/// `population_size` members. Seeds outside the bounds are clamped.
pub fn init_population(
    cfg: &DEConfig,
    token_count: usize,
    embed_dim: usize,
    seeds: &[SoftPrompt],
) -> Result<Population, DeError> {
    cfg.validate()?;
    if token_count == 0 || embed_dim == 0 {
        return Err(DeError::ShapeMismatch {
            expected: (1, 1),
            actual: (token_count, embed_dim),
        });
    }
    if seeds.len() > cfg.population_size {
        return Err(DeError::TooManySeeds {
            seeds: seeds.len(),
            population_size: cfg.population_size,
        });
    }
    let (lo, hi) = cfg.bounds_f32();
    let mut members = Vec::with_capacity(cfg.population_size);
    for seed in seeds {
        if seed.shape() != (token_count, embed_dim) {
            return Err(DeError::ShapeMismatch {
                expected: (token_count, embed_dim),
                actual: seed.shape(),
            });
        }
        let clamped: Vec<f32> = seed.values().iter().map(|v| v.clamp(lo, hi)).collect();
        if clamped != seed.values() {
            warn!("seed prompt {} clamped into bounds", members.len());
        }
        members.push(SoftPrompt::from_parts_unchecked(token_count, embed_dim, clamped));
    }
    for i in members.len()..cfg.population_size {
        let mut rng = stream(cfg.rng_seed, TAG_INIT, i as u64, 0);
        members.push(random_member(&mut rng, token_count, embed_dim, lo, hi));
    }
    Ok(Population::new(members))
}

fn random_member<R: Rng>(rng: &mut R, token_count: usize, embed_dim: usize, lo: f32, hi: f32) -> SoftPrompt {
    let values = (0..token_count * embed_dim)
        .map(|_| rng.random_range(lo..=hi))
        .collect();
    SoftPrompt::from_parts_unchecked(token_count, embed_dim, values)
}

/// Two distinct indices, both different from `target`, drawn uniformly
/// without replacement from `0..n`.
pub fn pick_donors<R: Rng + ?Sized>(rng: &mut R, n: usize, target: usize) -> (usize, usize) {
    assert!(n >= 3 && target < n, "need target plus two donors");
    // Sample from the n-1 non-target slots, then shift past the target.
    let skip = |k: usize| if k >= target { k + 1 } else { k };
    let first = rng.random_range(0..n - 1);
    let mut second = rng.random_range(0..n - 2);
    if second >= first {
        second += 1;
    }
    (skip(first), skip(second))
}

fn sanitize(f: f64, generation: usize, member: usize) -> f64 {
    if f.is_finite() {
        f
    } else {
        warn!("non-finite fitness {f} at generation {generation}, member {member}; treated as +inf");
        f64::INFINITY
    }
}

fn evaluate_all<F, E>(
    members: &[SoftPrompt],
    fitness_fn: &F,
    generation: usize,
) -> Result<Vec<f64>, DeError>
where
    F: Fn(&SoftPrompt) -> Result<f64, E> + Sync,
    E: Into<Box<dyn StdError + Send + Sync>> + Send,
{
    let results: Vec<Result<f64, E>> = members.par_iter().map(fitness_fn).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(member, r)| {
            r.map(|f| sanitize(f, generation, member))
                .map_err(|e| DeError::FitnessEvaluationFailed {
                    generation,
                    member,
                    source: e.into(),
                })
        })
        .collect()
}

/// Builds the trial vector for `member` in `generation` from its own stream.
pub fn make_trial(
    population: &Population,
    best: &SoftPrompt,
    member: usize,
    generation: usize,
    cfg: &DEConfig,
) -> Result<(SoftPrompt, TrialTrace), DeError> {
    let mut rng = stream(cfg.rng_seed, TAG_GENERATION, generation as u64, member as u64);
    let (b, c) = pick_donors(&mut rng, population.len(), member);
    let target = &population.members[member];
    let mutant = mutate(target, best, &population.members[b], &population.members[c], cfg)?;
    let (trial, forced_index) = crossover_traced(target, &mutant, cfg, &mut rng)?;
    Ok((
        trial,
        TrialTrace {
            donors: (b, c),
            forced_index,
            mutant,
        },
    ))
}

/// What went into one trial vector; exposed for instrumentation.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub donors: (usize, usize),
    pub forced_index: usize,
    pub mutant: SoftPrompt,
}

/// Minimizes `fitness_fn` starting from `initial`.
///
/// Unevaluated members are scored first (generation 0). Each generation then
/// builds one trial per member against the generation-start best, scores
/// all trials, and keeps a trial only when strictly better than its target.
/// Stops after `max_generations`, or as soon as the population's fitness
/// spread falls to `abs_tolerance`. `on_generation` sees every record.
pub fn evolve<F, E, O>(
    initial: Population,
    fitness_fn: F,
    cfg: &DEConfig,
    mut on_generation: O,
) -> Result<EvolveOutcome, DeError>
where
    F: Fn(&SoftPrompt) -> Result<f64, E> + Sync,
    E: Into<Box<dyn StdError + Send + Sync>> + Send,
    O: FnMut(&GenerationRecord, &Population),
{
    cfg.validate()?;
    let mut pop = initial;
    if pop.len() != cfg.population_size {
        return Err(DeError::InvalidConfig(format!(
            "population has {} members but population_size is {}",
            pop.len(),
            cfg.population_size
        )));
    }
    let shape = pop.members[0].shape();
    if let Some(bad) = pop.members.iter().find(|m| m.shape() != shape) {
        return Err(DeError::ShapeMismatch {
            expected: shape,
            actual: bad.shape(),
        });
    }

    let pending: Vec<usize> = (0..pop.len()).filter(|&i| pop.fitnesses[i].is_nan()).collect();
    let pending_members: Vec<SoftPrompt> = pending.iter().map(|&i| pop.members[i].clone()).collect();
    let scores = evaluate_all(&pending_members, &fitness_fn, pop.generation)?;
    for (&i, f) in pending.iter().zip(scores) {
        pop.fitnesses[i] = f;
    }
    let mut evaluations = pending.len();
    pop.refresh_best();
    let initial_best_fitness = pop.fitnesses[pop.best_index];

    let mut history = Vec::with_capacity(cfg.max_generations);
    let mut stopped_early = false;
    let start = pop.generation;
    for generation in start + 1..=start + cfg.max_generations {
        let best = pop.members[pop.best_index].clone();
        let trials = (0..pop.len())
            .into_par_iter()
            .map(|i| make_trial(&pop, &best, i, generation, cfg).map(|(t, _)| t))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = evaluate_all(&trials, &fitness_fn, generation)?;
        evaluations += trials.len();

        for (i, (trial, f)) in trials.into_iter().zip(scores).enumerate() {
            if select(pop.fitnesses[i], f) == Selection::Trial {
                pop.members[i] = trial;
                pop.fitnesses[i] = f;
            }
        }
        pop.generation = generation;
        pop.refresh_best();

        let record = pop.record();
        on_generation(&record, &pop);
        history.push(record);

        if pop.spread() <= cfg.abs_tolerance {
            stopped_early = generation < start + cfg.max_generations;
            break;
        }
    }

    let (best, best_fitness) = pop.best();
    Ok(EvolveOutcome {
        best: best.clone(),
        best_fitness,
        initial_best_fitness,
        history,
        evaluations,
        stopped_early,
        population: pop,
    })
}

#[derive(Debug, Clone)]
pub struct RandomSearchOutcome {
    pub best: SoftPrompt,
    pub best_fitness: f64,
    pub evaluations: usize,
}

/// Uniform random sampling of `budget` candidates inside the bounds; the
/// baseline DE is compared against.
pub fn random_search<F, E>(
    cfg: &DEConfig,
    token_count: usize,
    embed_dim: usize,
    budget: usize,
    fitness_fn: F,
) -> Result<RandomSearchOutcome, DeError>
where
    F: Fn(&SoftPrompt) -> Result<f64, E> + Sync,
    E: Into<Box<dyn StdError + Send + Sync>> + Send,
{
    cfg.validate()?;
    if budget == 0 {
        return Err(DeError::InvalidConfig("random search budget must be ≥ 1".into()));
    }
    let (lo, hi) = cfg.bounds_f32();
    let candidates: Vec<SoftPrompt> = (0..budget)
        .map(|i| {
            let mut rng = stream(cfg.rng_seed, TAG_RANDOM_SEARCH, i as u64, 0);
            random_member(&mut rng, token_count, embed_dim, lo, hi)
        })
        .collect();
    let scores = evaluate_all(&candidates, &fitness_fn, 0)?;
    let mut best = 0;
    for (i, &f) in scores.iter().enumerate() {
        if f < scores[best] {
            best = i;
        }
    }
    Ok(RandomSearchOutcome {
        best_fitness: scores[best],
        best: candidates.into_iter().nth(best).expect("budget >= 1"),
        evaluations: budget,
    })
}
