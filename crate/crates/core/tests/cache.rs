use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tc_core::cache::{canonicalize, read_history, Cache, CacheEntry, CacheError, CacheKey, LookupKey, Origin, DEFAULT_CACHE_FILE, DEFAULT_HISTORY_FILE};
use tc_core::corpus;
use tc_core::frontend::{check_program, Builtin, CheckedDef, ScalarType};
use tc_core::pipeline::{random_options, sample_sizes};
use tc_core::schedule::MappingOptions;
use tc_core::semantics::instantiate;

const BUDGET: usize = 49152;

fn reserved(w: &str) -> bool {
    matches!(w, "def" | "where" | "in" | "max" | "min") || ScalarType::from_keyword(w).is_some() || Builtin::from_name(w).is_some() || w.starts_with(|c: char| c.is_ascii_digit())
}

/// Apply `f` to every identifier of the source text.
fn rename_words(src: &str, f: &mut dyn FnMut(&str) -> String) -> String {
    let mut out = String::new();
    let mut word = String::new();
    for ch in src.chars().chain(std::iter::once('\0')) {
        if ch.is_ascii_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push_str(&if reserved(&word) { word.clone() } else { f(&word) });
            word.clear();
        }
        if ch != '\0' {
            out.push(ch);
        }
    }
    out
}

fn rot13(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'a'..='z' => (((c as u8 - b'a' + 13) % 26) + b'a') as char,
            'A'..='Z' => (((c as u8 - b'A' + 13) % 26) + b'A') as char,
            _ => c,
        })
        .collect()
}

fn checked(src: &str) -> CheckedDef {
    check_program(src).unwrap().remove(0)
}

fn key_at(c: &CheckedDef, sizes: &BTreeMap<String, i64>) -> LookupKey {
    LookupKey::for_instance(c, &instantiate(c, sizes).unwrap(), BUDGET)
}

#[test]
fn rot13_renaming_gives_identical_canonical_text() {
    let src = corpus::source("mv").unwrap();
    let renamed = rename_words(src, &mut |w| rot13(w));
    assert_ne!(src, renamed);
    assert_eq!(canonicalize(&checked(src)), canonicalize(&checked(&renamed)));
}

#[test]
fn random_renamings_hit_the_same_entry_across_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (stem, _, src) in corpus::CORPUS {
        let c = checked(src);
        let (sizes, inst) = sample_sizes(&c, &mut rng, 6, 100_000).unwrap();
        let cache = Cache::new();
        let key = LookupKey::for_instance(&c, &inst, BUDGET);
        let entry = CacheEntry::new(&key, MappingOptions::naive(), format!("kernel for {stem}"), 10, Origin::Baseline);
        cache.update(entry.clone(), "t").unwrap();
        for round in 0..5 {
            let mut names: BTreeMap<String, String> = BTreeMap::new();
            let renamed = rename_words(src, &mut |w| {
                let n = names.len();
                names.entry(w.to_string()).or_insert_with(|| format!("q{n}_{}", rng.gen_range(0..1000))).clone()
            });
            let rc = checked(&renamed);
            let rsizes: BTreeMap<String, i64> = sizes.iter().map(|(k, v)| (names.get(k).cloned().unwrap_or_else(|| k.clone()), *v)).collect();
            let rkey = key_at(&rc, &rsizes);
            assert_eq!(rkey, key, "{stem} round {round}:\n{renamed}");
            assert_eq!(cache.lookup(&rkey), Some(entry.clone()));
        }
    }
}

#[test]
fn different_shapes_or_programs_miss() {
    let c = checked(corpus::source("sgemm").unwrap());
    let sizes = |n: i64| [("N", n), ("M", 8), ("K", 8)].iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
    let cache = Cache::new();
    let key = key_at(&c, &sizes(8));
    cache.update(CacheEntry::new(&key, MappingOptions::naive(), String::new(), 5, Origin::Tuned), "t").unwrap();
    assert!(cache.lookup(&key_at(&c, &sizes(9))).is_none());
    let tmm = checked(corpus::source("tmm").unwrap());
    let tsizes = [("N", 8), ("M", 8), ("K", 8)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    assert!(cache.lookup(&key_at(&tmm, &tsizes)).is_none());
    let other_target = LookupKey::for_instance(&c, &instantiate(&c, &sizes(8)).unwrap(), 1024);
    assert!(cache.lookup(&other_target).is_none());
}

#[test]
fn update_keeps_minimum_and_first_of_equals() {
    let c = checked(corpus::source("mv").unwrap());
    let key = key_at(&c, &[("M", 4), ("K", 4)].iter().map(|(k, v)| (k.to_string(), *v)).collect());
    let cache = Cache::new();
    let mk = |cost, tag: &str| CacheEntry::new(&key, MappingOptions { unroll_factor: 2, ..MappingOptions::naive() }, tag.to_string(), cost, Origin::Tuned);
    assert!(cache.update(mk(50, "a"), "s").unwrap());
    assert!(!cache.update(mk(60, "b"), "s").unwrap());
    assert!(!cache.update(mk(50, "c"), "s").unwrap());
    assert_eq!(cache.lookup(&key).unwrap().kernel, "a");
    assert!(cache.update(mk(40, "d"), "s").unwrap());
    assert_eq!(cache.lookup(&key).unwrap().kernel, "d");
    let injected = CacheEntry::new(&key, MappingOptions::naive(), "manual".into(), 1, Origin::Injected);
    assert!(cache.update(injected, "s").unwrap());
    assert_eq!(cache.lookup(&key).unwrap().origin, Origin::Injected);
    assert_eq!(cache.len(), 1);
    assert_eq!(cache.history().iter().map(|h| h.cost).collect::<Vec<_>>(), vec![50, 60, 50, 40, 1]);
}

#[test]
fn eight_concurrent_writers_keep_the_global_minimum() {
    let c = checked(corpus::source("sgemm").unwrap());
    let key = key_at(&c, &[("N", 4), ("M", 4), ("K", 4)].iter().map(|(k, v)| (k.to_string(), *v)).collect());
    for trial in 0..10u64 {
        let cache = Arc::new(Cache::new());
        let mut all = Vec::new();
        let handles: Vec<_> = (0..8u64)
            .map(|w| {
                let costs: Vec<u64> = {
                    let mut r = ChaCha8Rng::seed_from_u64(trial * 100 + w);
                    (0..50).map(|_| r.gen_range(10..100_000)).collect()
                };
                all.extend(costs.iter().copied());
                let (cache, key) = (cache.clone(), key.clone());
                thread::spawn(move || {
                    for cost in costs {
                        let e = CacheEntry::new(&key, MappingOptions::naive(), format!("w{w}"), cost, Origin::Tuned);
                        cache.update(e, &format!("writer-{w}")).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(cache.lookup(&key).unwrap().cost, *all.iter().min().unwrap());
        assert_eq!(cache.history().len(), 400);
    }
}

fn random_entry(rng: &mut ChaCha8Rng) -> CacheEntry {
    let n = rng.gen_range(1..4);
    let key = LookupKey {
        canonical_tc: format!("def f(float(S0) T0) -> (T1) {{\n  T1(i0) = T0(i0) * {}\n}}\n", rng.gen_range(0..1_000_000)),
        input_shapes: (0..n).map(|_| (0..rng.gen_range(0..4)).map(|_| rng.gen_range(1..512)).collect()).collect(),
        bound_scalars: (0..rng.gen_range(0..2)).map(|_| rng.gen_range(-5..5)).collect(),
        target: format!("tc-emu-1.0;threads<=1024;shared<={}", rng.gen_range(0..100_000)),
    };
    let origin = *[Origin::Tuned, Origin::Injected, Origin::Baseline].choose(rng).unwrap();
    let mut e = CacheEntry::new(&key, random_options(rng), format!("// kernel \"{}\"\n\t\\ ü", rng.gen::<u32>()), rng.gen(), origin);
    e.created = rng.gen();
    e
}

#[test]
fn hundred_random_entries_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cache = Cache::new();
    let mut originals = Vec::new();
    while originals.len() < 100 {
        let e = random_entry(&mut rng);
        if cache.lookup(&e.key.lookup()).is_none() {
            originals.push(e.clone());
            cache.update(e, "gen").unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(DEFAULT_CACHE_FILE);
    cache.save(&path).unwrap();
    let back = Cache::load(&path).unwrap();
    assert_eq!(back.len(), 100);
    for e in &originals {
        assert_eq!(back.lookup(&e.key.lookup()).as_ref(), Some(e));
    }
    assert_eq!(back.to_bytes(), cache.to_bytes());
}

#[test]
fn empty_store_round_trips() {
    let back = Cache::from_bytes(&Cache::new().to_bytes()).unwrap();
    assert!(back.is_empty());
    let dir = tempfile::tempdir().unwrap();
    assert!(Cache::open_dir(dir.path()).unwrap().is_empty());
}

#[test]
fn damaged_stores_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cache = Cache::new();
    for _ in 0..3 {
        cache.update(random_entry(&mut rng), "gen").unwrap();
    }
    let bytes = cache.to_bytes();
    for cut in [1, bytes.len() / 2, bytes.len() - 2] {
        assert!(matches!(Cache::from_bytes(&bytes[..cut]), Err(CacheError::CorruptStore(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] = if flipped[mid] == b'a' { b'b' } else { b'a' };
    assert!(matches!(Cache::from_bytes(&flipped), Err(CacheError::CorruptStore(_))));
    assert!(matches!(Cache::from_bytes(b"not a cache"), Err(CacheError::CorruptStore(_))));
}

fn store_with_body(version_line: &str, json: &str) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let sum = hex::encode(Sha256::digest(json.as_bytes()));
    format!("{version_line}\n{}\n{json}\n{sum}\n", json.len()).into_bytes()
}

#[test]
fn future_versions_and_fields_are_version_errors() {
    assert!(matches!(Cache::from_bytes(&store_with_body("TCCACHE 2", "{\"version\":2,\"entries\":[]}")), Err(CacheError::UnsupportedVersion { .. })));
    assert!(matches!(Cache::from_bytes(&store_with_body("TCCACHE 1", "{\"version\":1,\"entries\":[],\"shards\":4}")), Err(CacheError::UnsupportedVersion { .. })));
    assert!(Cache::from_bytes(&store_with_body("TCCACHE 1", "{\"version\":1,\"entries\":[]}")).unwrap().is_empty());
}

#[test]
fn history_file_collects_every_version() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = random_entry(&mut rng);
    {
        let cache = Cache::open_dir(dir.path()).unwrap();
        cache.update(e.clone(), "one").unwrap();
        let worse = CacheEntry { cost: e.cost.saturating_add(1), ..e.clone() };
        cache.update(worse, "one").unwrap();
        cache.save(&dir.path().join(DEFAULT_CACHE_FILE)).unwrap();
    }
    let cache = Cache::open_dir(dir.path()).unwrap();
    assert_eq!(cache.len(), 1);
    cache.update(e.clone(), "two").unwrap();
    let h = read_history(&dir.path().join(DEFAULT_HISTORY_FILE)).unwrap();
    assert_eq!(h.iter().map(|r| r.session.as_str()).collect::<Vec<_>>(), vec!["one", "one", "two"]);
    assert_eq!(h[0].key, CacheKey::new(&e.key.lookup(), &e.options));
}

#[test]
fn purge_removes_matching_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cache = Cache::new();
    for _ in 0..10 {
        cache.update(random_entry(&mut rng), "gen").unwrap();
    }
    let n = cache.len();
    let injected = cache.entries().iter().filter(|e| e.origin == Origin::Injected).count();
    assert_eq!(cache.purge(|e| e.origin != Origin::Injected), injected);
    assert_eq!(cache.len(), n - injected);
    assert_eq!(cache.purge(|_| false), n - injected);
    assert!(cache.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn options_digest_separates_options(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_options(&mut rng), random_options(&mut rng));
        let key = random_entry(&mut rng).key.lookup();
        prop_assert_eq!(CacheKey::new(&key, &a) == CacheKey::new(&key, &b), a == b);
    }
}
