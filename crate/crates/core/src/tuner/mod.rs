//! Genetic search over mapping options. Candidates are compiled and
//! emulated by a two-stage worker pipeline; breeding uses fitness-
//! proportional selection of three parents, uniform crossover, per-gene
//! mutation and elitism.

mod space;

pub use space::{Genome, TuningSpace, GENE_NAMES};

use std::collections::BTreeMap;
use std::thread;

use crossbeam_channel::unbounded;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{emit_cuda_text, run_reference, Bindings, Tensor};
use crate::cache::{Cache, CacheEntry, CacheError, LookupKey, Origin};
use crate::pipeline::{compare_outputs, compile, random_inputs, run, Compiled};
use crate::schedule::MappingOptions;
use crate::semantics::InstantiatedDef;

pub const DEFAULT_POPULATION: usize = 100;
pub const DEFAULT_GENERATIONS: usize = 25;
pub const DEFAULT_MUTATION_RATE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("every candidate has zero fitness")]
    DegeneratePopulation,
    #[error("no candidate compiled and ran in any generation")]
    NoViableCandidate,
    #[error("reference execution failed: {0}")]
    Reference(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub generations: usize,
    pub population: usize,
    pub mutation_rate: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { generations: DEFAULT_GENERATIONS, population: DEFAULT_POPULATION, mutation_rate: DEFAULT_MUTATION_RATE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Status {
    Pending,
    Compiled,
    Evaluated,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: MappingOptions,
    pub cost: Option<u64>,
    /// `1 / cost` once evaluated, 0 on failure.
    pub fitness: f64,
    pub status: Status,
}

impl Candidate {
    pub fn pending(genome: MappingOptions) -> Self {
        Candidate { genome, cost: None, fitness: 0.0, status: Status::Pending }
    }

    fn failed(genome: MappingOptions, why: String) -> Self {
        Candidate { genome, cost: None, fitness: 0.0, status: Status::Failed(why) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub population: Vec<Candidate>,
    pub best: Candidate,
    pub rng_digest: String,
}

impl GenerationLog {
    /// One line-delimited record: generation, best cost and genome.
    pub fn record(&self) -> String {
        serde_json::json!({
            "generation": self.generation,
            "best_cost": self.best.cost,
            "genome": self.best.genome,
            "evaluated": self.population.iter().filter(|c| c.status == Status::Evaluated).count(),
            "rng": self.rng_digest,
        })
        .to_string()
    }
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_word_pos().to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Starting configurations followed by uniform random genomes, `size` in total.
pub fn seed_population(space: &TuningSpace, starts: &[MappingOptions], size: usize, rng: &mut impl Rng) -> Vec<MappingOptions> {
    let mut pop: Vec<MappingOptions> = starts.iter().take(size).cloned().collect();
    while pop.len() < size {
        pop.push(space.random(rng).to_options(&space.template));
    }
    pop
}

/// Inputs and reference outputs shared by every candidate of a session.
pub struct EvalContext<'a> {
    pub inst: &'a InstantiatedDef,
    pub inputs: Bindings,
    pub reference: BTreeMap<String, Tensor>,
    pub workers: usize,
}

impl<'a> EvalContext<'a> {
    pub fn new(inst: &'a InstantiatedDef, inputs: Bindings) -> Result<Self, TunerError> {
        let reference = run_reference(inst, &inputs).map_err(|e| TunerError::Reference(e.to_string()))?;
        let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).clamp(1, 8);
        Ok(EvalContext { inst, inputs, reference, workers })
    }

    pub fn sequential(mut self) -> Self {
        self.workers = 1;
        self
    }

    fn emulate(&self, genome: MappingOptions, c: &Compiled) -> Candidate {
        match run(self.inst, c, &self.inputs) {
            Err(e) => Candidate::failed(genome, e.to_string()),
            Ok(r) if !r.races.is_empty() => Candidate::failed(genome, format!("{} race(s)", r.races.len())),
            Ok(r) => match compare_outputs(&self.reference, &r.outputs, 1e-4) {
                Some(d) => Candidate::failed(genome, format!("wrong result: {d}")),
                None => Candidate { genome, cost: Some(r.cost), fitness: 1.0 / r.cost.max(1) as f64, status: Status::Evaluated },
            },
        }
    }

    fn one(&self, genome: MappingOptions) -> Candidate {
        match compile(self.inst, &genome) {
            Err(e) => Candidate::failed(genome, e.to_string()),
            Ok(c) => self.emulate(genome, &c),
        }
    }
}

/// Compile workers feed an evaluation queue; results are collected by
/// population index, so they equal a sequential evaluation.
pub fn evaluate(ctx: &EvalContext, population: &[MappingOptions]) -> Vec<Candidate> {
    if ctx.workers <= 1 {
        return population.iter().cloned().map(|g| ctx.one(g)).collect();
    }
    let (job_tx, job_rx) = unbounded::<(usize, MappingOptions)>();
    let (eval_tx, eval_rx) = unbounded::<(usize, MappingOptions, Box<Compiled>)>();
    let (done_tx, done_rx) = unbounded::<(usize, Candidate)>();
    for (k, g) in population.iter().enumerate() {
        job_tx.send((k, g.clone())).expect("job queue open");
    }
    drop(job_tx);
    let compilers = ctx.workers.div_ceil(2).max(1);
    let evaluators = (ctx.workers - compilers).max(1);
    let mut out: Vec<Option<Candidate>> = vec![None; population.len()];
    thread::scope(|s| {
        for _ in 0..compilers {
            let (job_rx, eval_tx, done_tx) = (job_rx.clone(), eval_tx.clone(), done_tx.clone());
            s.spawn(move || {
                for (k, g) in job_rx {
                    match compile(ctx.inst, &g) {
                        Ok(c) => eval_tx.send((k, g, Box::new(c))).expect("evaluation queue open"),
                        Err(e) => done_tx.send((k, Candidate::failed(g, e.to_string()))).expect("collector open"),
                    }
                }
            });
        }
        drop(eval_tx);
        for _ in 0..evaluators {
            let (eval_rx, done_tx) = (eval_rx.clone(), done_tx.clone());
            s.spawn(move || {
                for (k, g, c) in eval_rx {
                    done_tx.send((k, ctx.emulate(g, &c))).expect("collector open");
                }
            });
        }
        drop(done_tx);
        for (k, c) in done_rx {
            out[k] = Some(c);
        }
    });
    out.into_iter().map(|c| c.expect("every candidate evaluated")).collect()
}

/// Index of the cheapest evaluated candidate; the first one wins ties.
pub fn best_index(pop: &[Candidate]) -> Option<usize> {
    let mut best: Option<(usize, u64)> = None;
    for (k, c) in pop.iter().enumerate() {
        if let Some(cost) = c.cost {
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((k, cost));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn roulette<'a>(pop: &'a [Candidate], total: f64, rng: &mut impl Rng) -> &'a Candidate {
    let mut r = rng.gen::<f64>() * total;
    for c in pop {
        if c.fitness > 0.0 {
            if r < c.fitness {
                return c;
            }
            r -= c.fitness;
        }
    }
    pop.iter().rev().find(|c| c.fitness > 0.0).expect("positive total fitness")
}

/// Next population of the same size: the best candidate unchanged, then
/// children of three roulette-selected parents (with replacement).
pub fn breed(space: &TuningSpace, pop: &[Candidate], mutation_rate: f64, rng: &mut impl Rng) -> Result<Vec<MappingOptions>, TunerError> {
    let total: f64 = pop.iter().map(|c| c.fitness).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(TunerError::DegeneratePopulation);
    }
    let elite = best_index(pop).ok_or(TunerError::DegeneratePopulation)?;
    let mut next = vec![pop[elite].genome.clone()];
    while next.len() < pop.len() {
        let parents: Vec<Genome> = (0..3).map(|_| space.genome_of(&roulette(pop, total, rng).genome)).collect();
        let mut child = parents[0].clone();
        for g in 0..space.gene_count() {
            let p = rng.gen_range(0..3);
            child.copy_gene(&parents[p], g);
            if rng.gen::<f64>() < mutation_rate {
                space.mutate_gene(&mut child, g, rng);
            }
        }
        next.push(child.to_options(&space.template));
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub best: Candidate,
    pub logs: Vec<GenerationLog>,
}

/// Everything a tuning session needs besides the program.
pub struct TuneConfig<'a> {
    pub budget: Budget,
    pub seed: u64,
    pub starts: Vec<MappingOptions>,
    pub cache: Option<(&'a Cache, LookupKey)>,
    pub session: String,
    /// Overrides the worker count (1 forces sequential evaluation).
    pub workers: Option<usize>,
}

impl TuneConfig<'_> {
    pub fn new(budget: Budget, seed: u64) -> Self {
        TuneConfig { budget, seed, starts: vec![], cache: None, session: format!("seed-{seed}"), workers: None }
    }
}

fn write_best(inst: &InstantiatedDef, best: &Candidate, cache: &Cache, key: &LookupKey, session: &str) -> Result<(), TunerError> {
    let (Some(cost), Ok(c)) = (best.cost, compile(inst, &best.genome)) else { return Ok(()) };
    let stored_is_better = cache.lookup(key).is_some_and(|e| e.cost <= cost);
    if !stored_is_better {
        let entry = CacheEntry::new(key, best.genome.clone(), emit_cuda_text(inst, &c.ir), cost, Origin::Tuned);
        cache.update(entry, session)?;
    }
    Ok(())
}

/// Seed, then alternate evaluation and breeding; the best candidate so far
/// is offered to the cache after every generation.
pub fn tune(inst: &InstantiatedDef, cfg: &TuneConfig) -> Result<TuneResult, TunerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7463_696e_7075_7473);
    let mut ctx = EvalContext::new(inst, random_inputs(inst, &mut input_rng))?;
    if let Some(w) = cfg.workers {
        ctx.workers = w.max(1);
    }
    let mut space = TuningSpace::new(inst);
    if let Some(t) = cfg.starts.first() {
        space.template.shared_memory_budget = t.shared_memory_budget;
    }
    let size = cfg.budget.population.max(1);
    let mut starts = cfg.starts.clone();
    if let Some((cache, key)) = &cfg.cache {
        if let Some(e) = cache.lookup(key) {
            starts.insert(0, e.options);
        }
    }
    let mut population = seed_population(&space, &starts, size, &mut rng);
    let mut best: Option<Candidate> = None;
    let mut logs = Vec::new();
    for generation in 0..=cfg.budget.generations {
        if generation > 0 {
            let prev = &logs.last().map(|l: &GenerationLog| l.population.clone()).unwrap_or_default();
            population = match breed(&space, prev, cfg.budget.mutation_rate, &mut rng) {
                Ok(p) => p,
                Err(TunerError::DegeneratePopulation) => seed_population(&space, &[], size, &mut rng),
                Err(e) => return Err(e),
            };
        }
        let evaluated = evaluate(&ctx, &population);
        if let Some(k) = best_index(&evaluated) {
            if best.as_ref().is_none_or(|b| evaluated[k].cost < b.cost) {
                best = Some(evaluated[k].clone());
            }
        }
        if let (Some(b), Some((cache, key))) = (&best, &cfg.cache) {
            write_best(inst, b, cache, key, &cfg.session)?;
        }
        let shown = best.clone().unwrap_or_else(|| Candidate::failed(population[0].clone(), "no viable candidate yet".into()));
        logs.push(GenerationLog { generation, population: evaluated, best: shown, rng_digest: rng_digest(&rng) });
    }
    let best = best.ok_or(TunerError::NoViableCandidate)?;
    Ok(TuneResult { best, logs })
}
