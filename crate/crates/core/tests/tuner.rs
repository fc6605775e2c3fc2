use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tc_core::cache::{Cache, CacheEntry, LookupKey, Origin};
use tc_core::corpus;
use tc_core::frontend::check_program;
use tc_core::pipeline::random_inputs;
use tc_core::schedule::MappingOptions;
use tc_core::semantics::{instantiate, InstantiatedDef};
use tc_core::tuner::{best_index, breed, evaluate, seed_population, tune, Budget, Candidate, EvalContext, Status, TuneConfig, TuningSpace};

fn sgemm(n: i64) -> (tc_core::frontend::CheckedDef, InstantiatedDef) {
    let c = check_program(corpus::source("sgemm").unwrap()).unwrap().remove(0);
    let i = instantiate(&c, &[("N", n), ("M", n), ("K", n)].iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap();
    (c, i)
}

fn budget(population: usize, generations: usize) -> Budget {
    Budget { generations, population, mutation_rate: 0.1 }
}

fn costs(r: &tc_core::tuner::TuneResult) -> Vec<Option<u64>> {
    r.logs.iter().map(|l| l.best.cost).collect()
}

#[test]
fn same_seed_same_trajectory() {
    let (_, i) = sgemm(8);
    let a = tune(&i, &TuneConfig::new(budget(10, 3), 5)).unwrap();
    let b = tune(&i, &TuneConfig::new(budget(10, 3), 5)).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.logs, b.logs);
    let c = tune(&i, &TuneConfig::new(budget(10, 3), 6)).unwrap();
    assert_ne!(a.logs.iter().map(|l| &l.rng_digest).collect::<Vec<_>>(), c.logs.iter().map(|l| &l.rng_digest).collect::<Vec<_>>());
}

#[test]
fn best_cost_never_increases() {
    let (_, i) = sgemm(8);
    let r = tune(&i, &TuneConfig::new(budget(12, 4), 9)).unwrap();
    assert_eq!(r.logs.len(), 5);
    let cs: Vec<u64> = costs(&r).into_iter().flatten().collect();
    assert!(cs.windows(2).all(|w| w[1] <= w[0]), "{cs:?}");
    assert_eq!(r.best.cost, cs.last().copied());
}

#[test]
fn zero_generations_evaluates_only_the_seed() {
    let (_, i) = sgemm(8);
    let r = tune(&i, &TuneConfig::new(budget(6, 0), 1)).unwrap();
    assert_eq!(r.logs.len(), 1);
    assert_eq!(r.logs[0].population.len(), 6);
}

#[test]
fn seed_population_keeps_starts_first() {
    let (_, i) = sgemm(8);
    let space = TuningSpace::new(&i);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let starts = vec![MappingOptions::naive()];
    let pop = seed_population(&space, &starts, 100, &mut rng);
    assert_eq!(pop.len(), 100);
    assert_eq!(pop[0], MappingOptions::naive());
    assert!(pop.iter().all(|o| o.validate().is_ok() || o.thread_shape.iter().product::<i64>() > 1024));
    assert!(pop[1..].iter().filter(|o| **o == pop[1]).count() < 10, "random genomes should vary");
}

#[test]
fn oversized_blocks_get_zero_fitness() {
    let (_, i) = sgemm(8);
    let ctx = EvalContext::new(&i, random_inputs(&i, &mut ChaCha8Rng::seed_from_u64(2))).unwrap();
    let bad = MappingOptions { thread_shape: vec![64, 32], ..MappingOptions::default() };
    let out = evaluate(&ctx, &[bad, MappingOptions::naive()]);
    assert_eq!(out[0].fitness, 0.0);
    assert!(matches!(&out[0].status, Status::Failed(m) if m.contains("2048")), "{:?}", out[0].status);
    assert_eq!(out[1].status, Status::Evaluated);
    assert!(out[1].fitness > 0.0);
    assert_eq!(best_index(&out), Some(1));
}

#[test]
fn identical_genomes_cost_the_same_and_parallel_matches_sequential() {
    let (_, i) = sgemm(8);
    let space = TuningSpace::new(&i);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pop = seed_population(&space, &[], 16, &mut rng);
    pop.push(pop[0].clone());
    let inputs = random_inputs(&i, &mut ChaCha8Rng::seed_from_u64(4));
    let par = EvalContext::new(&i, inputs.clone()).unwrap();
    let seq = EvalContext::new(&i, inputs).unwrap().sequential();
    let a = evaluate(&par, &pop);
    let b = evaluate(&seq, &pop);
    assert_eq!(a, b);
    assert_eq!(a[0], a[16]);
}

fn scored(genome: MappingOptions, cost: u64) -> Candidate {
    Candidate { genome, cost: Some(cost), fitness: 1.0 / cost as f64, status: Status::Evaluated }
}

#[test]
fn breeding_keeps_elite_and_draws_genes_from_parents() {
    let (_, i) = sgemm(16);
    let space = TuningSpace::new(&i);
    let a = MappingOptions { tile_sizes: vec![4, 4, 4], block_shape: vec![2, 2], thread_shape: vec![4, 4], ..MappingOptions::default() };
    let b = MappingOptions { tile_sizes: vec![8, 8, 8], block_shape: vec![4, 4], thread_shape: vec![8, 8], use_shared: false, ..MappingOptions::default() };
    let pop = vec![scored(a.clone(), 20), scored(b.clone(), 10), Candidate::pending(MappingOptions::naive())];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let next = breed(&space, &pop, 0.0, &mut rng).unwrap();
        assert_eq!(next.len(), 3);
        assert_eq!(next[0], b);
        for child in &next[1..] {
            for (k, t) in child.tile_sizes.iter().enumerate() {
                assert!(*t == a.tile_sizes[k] || *t == b.tile_sizes[k]);
            }
            assert!(child.use_shared == a.use_shared || child.use_shared == b.use_shared);
        }
    }
}

#[test]
fn full_mutation_still_yields_valid_options() {
    let (_, i) = sgemm(16);
    let space = TuningSpace::new(&i);
    let pop = vec![scored(MappingOptions::default(), 5), scored(MappingOptions::naive(), 9)];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let next = breed(&space, &[pop.clone(), pop.clone(), pop].concat(), 1.0, &mut rng).unwrap();
    assert!(next.iter().all(|o| o.validate().is_ok() || o.thread_shape.iter().product::<i64>() > 1024));
    assert!(next[1..].iter().any(|o| *o != MappingOptions::default() && *o != MappingOptions::naive()));
}

#[test]
fn degenerate_population_is_an_error_for_breeding() {
    let (_, i) = sgemm(8);
    let space = TuningSpace::new(&i);
    let pop = vec![Candidate::pending(MappingOptions::naive()); 4];
    assert!(breed(&space, &pop, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn half_invalid_seed_population_still_completes() {
    let (_, i) = sgemm(8);
    let bad = MappingOptions { thread_shape: vec![64, 64], ..MappingOptions::default() };
    let mut cfg = TuneConfig::new(budget(10, 2), 4);
    cfg.starts = vec![bad; 5];
    let r = tune(&i, &cfg).unwrap();
    let failed = r.logs[0].population.iter().filter(|c| matches!(c.status, Status::Failed(_))).count();
    assert!(failed >= 5);
    assert!(r.best.cost.is_some());
}

#[test]
fn tuning_writes_best_to_cache_and_keeps_a_better_entry() {
    let (c, i) = sgemm(8);
    let cache = Cache::new();
    let key = LookupKey::for_instance(&c, &i, MappingOptions::default().shared_memory_budget);
    let mut cfg = TuneConfig::new(budget(8, 1), 2);
    cfg.cache = Some((&cache, key.clone()));
    let r = tune(&i, &cfg).unwrap();
    let stored = cache.lookup(&key).unwrap();
    assert_eq!(stored.cost, r.best.cost.unwrap());
    assert_eq!(stored.origin, Origin::Tuned);

    let superior = CacheEntry::new(&key, MappingOptions::naive(), "kernel".into(), 1, Origin::Injected);
    assert!(cache.update(superior.clone(), "inject").unwrap());
    let mut cfg = TuneConfig::new(budget(8, 1), 3);
    cfg.cache = Some((&cache, key.clone()));
    let r2 = tune(&i, &cfg).unwrap();
    assert_eq!(r2.logs[0].population[0].genome, MappingOptions::naive(), "cached options seed the population");
    assert_eq!(cache.lookup(&key).unwrap(), superior);
}
