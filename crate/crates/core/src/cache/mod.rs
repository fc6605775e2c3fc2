//! Persistent store of the cheapest known kernel per canonical definition,
//! input shapes and target, plus an append-only history of every version.

mod canon;

pub use canon::canonicalize;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frontend::{CheckedDef, TensorRole};
use crate::schedule::{MappingOptions, MAX_THREADS_PER_BLOCK};
use crate::semantics::InstantiatedDef;

pub const STORE_VERSION: u32 = 1;
pub const STORE_MAGIC: &str = "TCCACHE";
pub const DEFAULT_CACHE_FILE: &str = "tc-cache.json";
pub const DEFAULT_HISTORY_FILE: &str = "tc-history.log";
pub const EMULATOR_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("corrupt cache store: {0}")]
    CorruptStore(String),
    #[error("cache store version {found} is not supported (expected {STORE_VERSION})")]
    UnsupportedVersion { found: String },
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Machine descriptor: emulator version and resource limits.
pub fn target_descriptor(shared_budget: usize) -> String {
    format!("tc-emu-{EMULATOR_VERSION};threads<={MAX_THREADS_PER_BLOCK};shared<={shared_budget}")
}

/// Stable hex digest of a genome.
pub fn options_digest(o: &MappingOptions) -> String {
    let text = serde_json::to_string(o).expect("options serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupKey {
    pub canonical_tc: String,
    pub input_shapes: Vec<Vec<usize>>,
    /// Values of integer scalars bound at instantiation, in declaration order.
    pub bound_scalars: Vec<i64>,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheKey {
    pub canonical_tc: String,
    pub input_shapes: Vec<Vec<usize>>,
    pub bound_scalars: Vec<i64>,
    pub target: String,
    pub options_digest: String,
}

impl CacheKey {
    pub fn new(lookup: &LookupKey, opts: &MappingOptions) -> Self {
        CacheKey {
            canonical_tc: lookup.canonical_tc.clone(),
            input_shapes: lookup.input_shapes.clone(),
            bound_scalars: lookup.bound_scalars.clone(),
            target: lookup.target.clone(),
            options_digest: options_digest(opts),
        }
    }

    pub fn lookup(&self) -> LookupKey {
        LookupKey {
            canonical_tc: self.canonical_tc.clone(),
            input_shapes: self.input_shapes.clone(),
            bound_scalars: self.bound_scalars.clone(),
            target: self.target.clone(),
        }
    }
}

impl LookupKey {
    pub fn for_instance(c: &CheckedDef, inst: &InstantiatedDef, shared_budget: usize) -> Self {
        let input_shapes = inst.tensors.iter().filter(|t| t.role == TensorRole::Input).map(|t| t.shape.clone()).collect();
        let bound_scalars = c.scalars.iter().filter(|(_, t)| t.is_integer()).filter_map(|(n, _)| inst.sizes.get(n).copied()).collect();
        LookupKey { canonical_tc: canonicalize(c), input_shapes, bound_scalars, target: target_descriptor(shared_budget) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Tuned,
    Injected,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub options: MappingOptions,
    pub kernel: String,
    pub cost: u64,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub origin: Origin,
}

impl CacheEntry {
    pub fn new(lookup: &LookupKey, options: MappingOptions, kernel: String, cost: u64, origin: Origin) -> Self {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        CacheEntry { key: CacheKey::new(lookup, &options), options, kernel, cost, created, origin }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub key: CacheKey,
    pub options: MappingOptions,
    pub cost: u64,
    pub session: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreBody {
    version: u32,
    entries: Vec<CacheEntry>,
}

#[derive(Default)]
struct History {
    path: Option<PathBuf>,
    records: Vec<HistoryRecord>,
}

/// Concurrent readers; updates go through one writer lock, so a lookup never
/// observes a cost above an earlier one.
#[derive(Default)]
pub struct Cache {
    entries: RwLock<BTreeMap<LookupKey, CacheEntry>>,
    history: Mutex<History>,
}

impl Cache {
    pub fn new() -> Self {
        Cache::default()
    }

    /// Append history records to `path` as they arrive.
    pub fn with_history_file(self, path: impl Into<PathBuf>) -> Self {
        self.history.lock().expect("history lock").path = Some(path.into());
        self
    }

    /// Cache file and history file inside `dir`; a missing cache file is an empty store.
    pub fn open_dir(dir: &Path) -> Result<Self, CacheError> {
        let file = dir.join(DEFAULT_CACHE_FILE);
        let cache = if file.exists() { Cache::load(&file)? } else { Cache::new() };
        Ok(cache.with_history_file(dir.join(DEFAULT_HISTORY_FILE)))
    }

    pub fn lookup(&self, key: &LookupKey) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    /// Store `entry` iff there is none for its key or it is strictly cheaper.
    /// The version is appended to the history either way.
    pub fn update(&self, entry: CacheEntry, session: &str) -> Result<bool, CacheError> {
        let record = HistoryRecord { key: entry.key.clone(), options: entry.options.clone(), cost: entry.cost, session: session.to_string() };
        let stored = {
            let mut map = self.entries.write().expect("cache lock");
            let k = entry.key.lookup();
            match map.get(&k) {
                Some(old) if old.cost <= entry.cost => false,
                _ => {
                    map.insert(k, entry);
                    true
                }
            }
        };
        let mut h = self.history.lock().expect("history lock");
        if let Some(p) = &h.path {
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        h.records.push(record);
        Ok(stored)
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries.read().expect("cache lock").values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// History records of this session's process, oldest first.
    pub fn history(&self) -> Vec<HistoryRecord> {
        self.history.lock().expect("history lock").records.clone()
    }

    /// Remove entries whose key matches; returns the number removed.
    pub fn purge(&self, keep: impl Fn(&CacheEntry) -> bool) -> usize {
        let mut map = self.entries.write().expect("cache lock");
        let before = map.len();
        map.retain(|_, e| keep(e));
        before - map.len()
    }

    /// `TCCACHE <version>\n<length>\n<json>\n<sha256 hex>\n`
    pub fn to_bytes(&self) -> Vec<u8> {
        let body = StoreBody { version: STORE_VERSION, entries: self.entries() };
        let json = serde_json::to_string(&body).expect("store serializes");
        let sum = hex::encode(Sha256::digest(json.as_bytes()));
        format!("{STORE_MAGIC} {STORE_VERSION}\n{}\n{json}\n{sum}\n", json.len()).into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CacheError> {
        let corrupt = |m: &str| CacheError::CorruptStore(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        let (header, rest) = text.split_once('\n').ok_or_else(|| corrupt("missing header"))?;
        let version = header.strip_prefix(STORE_MAGIC).map(str::trim).ok_or_else(|| corrupt("bad magic"))?;
        if version != STORE_VERSION.to_string() {
            return Err(CacheError::UnsupportedVersion { found: version.to_string() });
        }
        let (len, rest) = rest.split_once('\n').ok_or_else(|| corrupt("missing length"))?;
        let len: usize = len.trim().parse().map_err(|_| corrupt("bad length"))?;
        if rest.len() < len || !rest.is_char_boundary(len) {
            return Err(corrupt("truncated body"));
        }
        let (json, tail) = rest.split_at(len);
        let sum = tail.strip_prefix('\n').and_then(|t| t.strip_suffix('\n')).ok_or_else(|| corrupt("missing checksum"))?;
        if sum != hex::encode(Sha256::digest(json.as_bytes())) {
            return Err(corrupt("checksum mismatch"));
        }
        let value: serde_json::Value = serde_json::from_str(json).map_err(|e| CacheError::CorruptStore(e.to_string()))?;
        if value.get("version").and_then(|v| v.as_u64()) != Some(STORE_VERSION as u64) {
            return Err(CacheError::UnsupportedVersion { found: value.get("version").map(|v| v.to_string()).unwrap_or_default() });
        }
        let body: StoreBody = serde_json::from_value(value).map_err(|e| CacheError::UnsupportedVersion { found: format!("{STORE_VERSION} with unknown layout ({e})") })?;
        let cache = Cache::new();
        {
            let mut map = cache.entries.write().expect("cache lock");
            for e in body.entries {
                map.insert(e.key.lookup(), e);
            }
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CacheError> {
        Cache::from_bytes(&fs::read(path)?)
    }
}

/// Read a line-delimited history file.
pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>, CacheError> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(|e| CacheError::CorruptStore(e.to_string()))).collect()
}
