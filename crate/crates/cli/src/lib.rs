//! `tc` command-line driver: every verb composes library operations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tc_core::backend::{emit_cuda_text, read_tensor, run_reference, write_tensor, BackendError, Bindings, Tensor, Value};
use tc_core::cache::{Cache, CacheEntry, CacheError, LookupKey, Origin, DEFAULT_CACHE_FILE};
use tc_core::frontend::{check_program, diagnostic, CheckedDef, FrontendError, Span, TensorRole};
use tc_core::pipeline::{compile, random_inputs, run, CompileError};
use tc_core::polyir::{compute_dependences, dataflow, dump as dump_deps, flow_text};
use tc_core::promotion::insert_copies_and_syncs;
use tc_core::schedule::{canonical_tree, fuse, map_to_gpu, sink_point_loops, tile, unroll_mark, FusionStrategy, MappingOptions, ScheduleError};
use tc_core::semantics::{check_symbolic, instantiate, InstantiatedDef, SemanticError, SizeBinding};
use tc_core::tuner::{tune, Budget, TuneConfig, TunerError};

#[derive(Parser, Debug)]
#[command(name = "tc", about = "Compile, run and tune tensor comprehensions on an emulated GPU", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, resolve names and infer ranges.
    Check(CheckArgs),
    /// Lower to kernel text and a schedule tree dump.
    Compile(CompileArgs),
    /// Execute on the emulator or the reference interpreter.
    Run(RunArgs),
    /// Genetic search over mapping options.
    Tune(TuneArgs),
    /// Inspect or edit the compilation cache.
    Cache {
        #[command(subcommand)]
        action: CacheCommand,
    },
    /// Print the schedule tree after each transformation.
    DumpTree(TreeArgs),
    /// Print iteration domains, accesses and dependences.
    DumpDeps(ProgramArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProgramArgs {
    /// TC source file.
    pub file: PathBuf,
    /// Definition to use; defaults to the only (or first) one.
    #[arg(long)]
    pub def: Option<String>,
    /// Size bindings, e.g. `N=128,M=32`.
    #[arg(long, value_parser = parse_sizes)]
    pub sizes: Option<SizeBinding>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct OptionArgs {
    /// Tile sizes, outermost first.
    #[arg(long, value_delimiter = ',')]
    pub tile: Option<Vec<i64>>,
    /// Grid extents (blocks per dimension).
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<i64>>,
    /// Block extents (threads per dimension).
    #[arg(long, value_delimiter = ',')]
    pub threads: Option<Vec<i64>>,
    /// max, min or preserve3.
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<FusionStrategy>,
    #[arg(long)]
    pub shared: Option<bool>,
    #[arg(long)]
    pub private: Option<bool>,
    #[arg(long)]
    pub unroll: Option<u32>,
    #[arg(long)]
    pub unroll_copies: Option<bool>,
    /// Shared memory budget in bytes.
    #[arg(long)]
    pub shared_budget: Option<usize>,
    /// Start from options stored as JSON.
    #[arg(long)]
    pub options: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub opts: OptionArgs,
    /// Output directory for `<def>.cu` and `<def>.tree`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Cache directory to consult.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub opts: OptionArgs,
    /// Input tensor files, `name=path`.
    #[arg(long = "input", value_parser = parse_named_path)]
    pub inputs: Vec<(String, PathBuf)>,
    /// Generate missing inputs from this seed.
    #[arg(long)]
    pub random_inputs: Option<u64>,
    /// Scalar parameter values, `name=value`.
    #[arg(long = "scalar", value_parser = parse_named_value)]
    pub scalars: Vec<(String, f64)>,
    /// Output directory for `<tensor>.tctn` files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Use the reference interpreter instead of the emulator.
    #[arg(long)]
    pub reference: bool,
    /// Run both and report the largest absolute difference.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = tc_core::tuner::DEFAULT_POPULATION)]
    pub pop: usize,
    #[arg(long, default_value_t = tc_core::tuner::DEFAULT_GENERATIONS)]
    pub gens: usize,
    #[arg(long, default_value_t = tc_core::tuner::DEFAULT_MUTATION_RATE)]
    pub mutation: f64,
    /// Cache directory; updated with the best version found.
    #[arg(long, default_value = ".")]
    pub cache: PathBuf,
    /// Also write the generation records to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Evaluate candidates on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Subcommand, Debug)]
pub enum CacheCommand {
    /// One line per entry.
    List {
        #[arg(long, default_value = ".")]
        cache: PathBuf,
    },
    /// Full contents of one entry, by list index.
    Inspect {
        index: usize,
        #[arg(long, default_value = ".")]
        cache: PathBuf,
    },
    /// Compile with the given options and store the result.
    Inject {
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        opts: OptionArgs,
        /// Stored cost; 0 marks a hand-injected version.
        #[arg(long, default_value_t = 0)]
        cost: u64,
        #[arg(long, default_value = ".")]
        cache: PathBuf,
    },
    /// Remove one entry by list index, or all of them.
    Purge {
        index: Option<usize>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value = ".")]
        cache: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TreeArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub opts: OptionArgs,
}

/// Error the user can fix: bad input, arguments or program.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

/// 1 for user and input errors, 2 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.is::<UserError>() || cause.is::<FrontendError>() || cause.is::<SemanticError>() || cause.is::<std::io::Error>() || cause.is::<CacheError>() {
            return 1;
        }
        if let Some(b) = cause.downcast_ref::<BackendError>() {
            return backend_code(b);
        }
        if let Some(c) = cause.downcast_ref::<CompileError>() {
            return match c {
                CompileError::Semantic(_) | CompileError::Schedule(_) => 1,
                CompileError::Backend(b) => backend_code(b),
                CompileError::Invalid(_) => 2,
            };
        }
        if let Some(t) = cause.downcast_ref::<TunerError>() {
            return match t {
                TunerError::NoViableCandidate | TunerError::Cache(_) | TunerError::Reference(_) => 1,
                TunerError::DegeneratePopulation => 2,
            };
        }
        if cause.is::<ScheduleError>() {
            return 1;
        }
    }
    2
}

fn backend_code(b: &BackendError) -> i32 {
    match b {
        BackendError::BarrierDivergence { .. } | BackendError::PromotionOutOfTile { .. } => 2,
        _ => 1,
    }
}

/// Module that produced the error, for diagnostics.
pub fn provenance(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<FrontendError>() {
            return "frontend";
        }
        if cause.is::<SemanticError>() {
            return "semantics";
        }
        if cause.is::<ScheduleError>() {
            return "schedule";
        }
        if cause.is::<BackendError>() {
            return "backend";
        }
        if cause.is::<CacheError>() {
            return "cache";
        }
        if cause.is::<TunerError>() {
            return "tuner";
        }
        if let Some(c) = cause.downcast_ref::<CompileError>() {
            return match c {
                CompileError::Semantic(_) => "semantics",
                CompileError::Schedule(_) => "schedule",
                CompileError::Invalid(_) => "polyir",
                CompileError::Backend(_) => "backend",
            };
        }
    }
    "cli"
}

fn variant_name(debug: String) -> String {
    debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("").to_string()
}

/// Variant name of the library error behind `e`, such as `UnderConstrained`.
pub fn kind(e: &anyhow::Error) -> Option<String> {
    for cause in e.chain() {
        if let Some(x) = cause.downcast_ref::<FrontendError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<SemanticError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<ScheduleError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<BackendError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<TunerError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<CacheError>() {
            return Some(variant_name(format!("{x:?}")));
        }
        if let Some(x) = cause.downcast_ref::<CompileError>() {
            return Some(match x {
                CompileError::Semantic(i) => variant_name(format!("{i:?}")),
                CompileError::Schedule(i) => variant_name(format!("{i:?}")),
                CompileError::Backend(i) => variant_name(format!("{i:?}")),
                CompileError::Invalid(_) => "InvalidSchedule".into(),
            });
        }
    }
    None
}

pub fn parse_sizes(s: &str) -> Result<SizeBinding, String> {
    let mut out = SizeBinding::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("`{part}` is not NAME=VALUE"))?;
        let v: i64 = v.trim().parse().map_err(|_| format!("`{v}` is not an integer"))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn parse_fusion(s: &str) -> Result<FusionStrategy, String> {
    FusionStrategy::parse(s).ok_or_else(|| format!("unknown fusion strategy `{s}` (max, min, preserve3)"))
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not NAME=PATH"))?;
    Ok((k.to_string(), PathBuf::from(v)))
}

fn parse_named_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not NAME=VALUE"))?;
    Ok((k.to_string(), v.parse().map_err(|_| format!("`{v}` is not a number"))?))
}

impl OptionArgs {
    pub fn resolve(&self) -> Result<MappingOptions> {
        let mut o = match &self.options {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| user(format!("{}: {e}", p.display())))?,
            None => MappingOptions::default(),
        };
        if let Some(t) = &self.tile {
            o.tile_sizes = t.clone();
        }
        if let Some(b) = &self.blocks {
            o.block_shape = b.clone();
        }
        if let Some(t) = &self.threads {
            o.thread_shape = t.clone();
        }
        if let Some(f) = self.fusion {
            o.fusion = f;
        }
        if let Some(s) = self.shared {
            o.use_shared = s;
        }
        if let Some(p) = self.private {
            o.use_private = p;
        }
        if let Some(u) = self.unroll {
            o.unroll_factor = u;
        }
        if let Some(u) = self.unroll_copies {
            o.unroll_copy_shared = u;
        }
        if let Some(b) = self.shared_budget {
            o.shared_memory_budget = b;
        }
        o.validate()?;
        Ok(o)
    }
}

/// Checked definitions of a file, with `file:line:col` diagnostics.
fn load_defs(file: &Path) -> Result<Vec<CheckedDef>> {
    let src = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let name = file.display().to_string();
    check_program(&src).map_err(|e| {
        let at = location(&name, e.span());
        anyhow::Error::new(e).context(at)
    })
}

/// `file:line:col`, the prefix of a diagnostic.
fn location(file: &str, span: Span) -> String {
    let d = diagnostic(file, span, "");
    d.trim_end_matches(": ").to_string()
}

fn select_def(defs: Vec<CheckedDef>, name: Option<&str>) -> Result<CheckedDef> {
    match name {
        Some(n) => defs.into_iter().find(|d| d.def.name.name == n).ok_or_else(|| user(format!("no definition named `{n}`"))),
        None => defs.into_iter().next().ok_or_else(|| user("file contains no definition")),
    }
}

fn semantic_context(file: &Path, e: SemanticError) -> anyhow::Error {
    match e.span() {
        Some(s) => {
            let at = location(&file.display().to_string(), s);
            anyhow::Error::new(e).context(at)
        }
        None => anyhow::Error::new(e),
    }
}

fn load_instance(p: &ProgramArgs) -> Result<(CheckedDef, InstantiatedDef)> {
    let c = select_def(load_defs(&p.file)?, p.def.as_deref())?;
    let sizes = p.sizes.clone().unwrap_or_default();
    let inst = instantiate(&c, &sizes).map_err(|e| semantic_context(&p.file, e))?;
    Ok((c, inst))
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<()> {
    let defs = load_defs(&a.program.file)?;
    let defs: Vec<CheckedDef> = match &a.program.def {
        Some(_) => vec![select_def(defs, a.program.def.as_deref())?],
        None => defs,
    };
    for c in &defs {
        let r = check_symbolic(c).map_err(|e| semantic_context(&a.program.file, e))?;
        writeln!(out, "{}: ok", c.def.name.name)?;
        for (s, st) in r.stmts.iter().enumerate() {
            let ranges: Vec<String> = st.iters.iter().map(|it| format!("{} in [{}, {})", it.name, it.lo, it.hi)).collect();
            writeln!(out, "  S{s}: {}", ranges.join(", "))?;
        }
        if let Some(sizes) = &a.program.sizes {
            instantiate(c, sizes).map_err(|e| semantic_context(&a.program.file, e))?;
            writeln!(out, "  bounds ok for {}", sizes_text(sizes))?;
        }
    }
    Ok(())
}

fn sizes_text(s: &SizeBinding) -> String {
    s.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

fn cache_file(dir: &Path) -> PathBuf {
    dir.join(DEFAULT_CACHE_FILE)
}

fn cmd_compile(a: &CompileArgs, out: &mut dyn Write) -> Result<()> {
    let (c, inst) = load_instance(&a.program)?;
    let opts = a.opts.resolve()?;
    fs::create_dir_all(&a.out)?;
    let cu = a.out.join(format!("{}.cu", inst.name));
    if let Some(dir) = &a.cache {
        let cache = Cache::open_dir(dir)?;
        let key = LookupKey::for_instance(&c, &inst, opts.shared_memory_budget);
        if let Some(e) = cache.lookup(&key) {
            fs::write(&cu, &e.kernel)?;
            writeln!(out, "cache hit ({:?}, cost {}): wrote {} without recompiling", e.origin, e.cost, cu.display())?;
            return Ok(());
        }
        writeln!(out, "cache miss: compiling")?;
    }
    let compiled = compile(&inst, &opts)?;
    fs::write(&cu, emit_cuda_text(&inst, &compiled.ir))?;
    let tree = a.out.join(format!("{}.tree", inst.name));
    fs::write(&tree, compiled.tree.dump())?;
    writeln!(out, "wrote {} and {}", cu.display(), tree.display())?;
    writeln!(out, "promoted {} buffer(s), {} shared bytes, {} barrier(s)", compiled.plan.buffers.len(), compiled.plan.shared_bytes, compiled.ir.barrier_count())?;
    Ok(())
}

fn read_inputs(inst: &InstantiatedDef, a: &RunArgs) -> Result<Bindings> {
    let mut b = match a.random_inputs {
        Some(seed) => random_inputs(inst, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => Bindings::default(),
    };
    for (name, path) in &a.inputs {
        let Some(decl) = inst.tensors.iter().find(|t| &t.name == name) else { return Err(user(format!("`{name}` is not a tensor of {}", inst.name))) };
        let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let t = read_tensor(&mut f)?;
        if t.shape != decl.shape {
            return Err(BackendError::ShapeMismatch { tensor: name.clone(), expected: decl.shape.clone(), got: t.shape }.into());
        }
        b.tensors.insert(name.clone(), Tensor { ty: decl.ty, ..t }.narrowed());
    }
    for (name, v) in &a.scalars {
        let Some(decl) = inst.scalars.iter().find(|s| &s.name == name) else { return Err(user(format!("`{name}` is not a scalar of {}", inst.name))) };
        let v = if decl.ty.is_integer() { Value::I(*v as i64) } else { Value::F(*v) };
        b.scalars.insert(name.clone(), v);
    }
    for t in &inst.tensors {
        if (t.role == TensorRole::Input || t.inout) && !b.tensors.contains_key(&t.name) {
            return Err(BackendError::MissingInput(t.name.clone()).into());
        }
    }
    for s in &inst.scalars {
        if !b.scalars.contains_key(&s.name) {
            return Err(BackendError::MissingInput(s.name.clone()).into());
        }
    }
    Ok(b)
}

fn max_abs_diff(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> f64 {
    let mut m: f64 = 0.0;
    for (name, x) in a {
        if let Some(y) = b.get(name) {
            for (p, q) in x.data.iter().zip(&y.data) {
                m = m.max((p.as_f64() - q.as_f64()).abs());
            }
        }
    }
    m
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (_, inst) = load_instance(&a.program)?;
    let b = read_inputs(&inst, a)?;
    let outputs = if a.reference && !a.compare {
        run_reference(&inst, &b)?
    } else {
        let opts = a.opts.resolve()?;
        let c = compile(&inst, &opts)?;
        let r = run(&inst, &c, &b)?;
        writeln!(out, "emulated cost {} ({} barrier(s)), {} race(s)", r.cost, r.barriers, r.races.len())?;
        for race in &r.races {
            writeln!(out, "  race: {race:?}")?;
        }
        if a.compare {
            let reference = run_reference(&inst, &b)?;
            writeln!(out, "max abs diff vs reference: {:e}", max_abs_diff(&reference, &r.outputs))?;
        }
        r.outputs
    };
    fs::create_dir_all(&a.out)?;
    for (name, t) in &outputs {
        let path = a.out.join(format!("{name}.tctn"));
        let mut f = fs::File::create(&path)?;
        write_tensor(&mut f, t)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn cmd_tune(a: &TuneArgs, out: &mut dyn Write) -> Result<()> {
    let (c, inst) = load_instance(&a.program)?;
    if !(0.0..=1.0).contains(&a.mutation) {
        return Err(user(format!("mutation rate {} must lie in [0, 1]", a.mutation)));
    }
    fs::create_dir_all(&a.cache)?;
    let cache = Cache::open_dir(&a.cache)?;
    let base = MappingOptions::default();
    let key = LookupKey::for_instance(&c, &inst, base.shared_memory_budget);
    let mut cfg = TuneConfig::new(Budget { generations: a.gens, population: a.pop, mutation_rate: a.mutation }, a.seed);
    cfg.starts = vec![base, MappingOptions::naive()];
    cfg.cache = Some((&cache, key.clone()));
    if a.sequential {
        cfg.workers = Some(1);
    }
    if cache.lookup(&key).is_some() {
        writeln!(out, "starting from the cached best version")?;
    }
    let r = tune(&inst, &cfg)?;
    let mut log = String::new();
    for l in &r.logs {
        log.push_str(&l.record());
        log.push('\n');
    }
    out.write_all(log.as_bytes())?;
    if let Some(p) = &a.log {
        fs::write(p, &log)?;
    }
    cache.save(&cache_file(&a.cache))?;
    writeln!(out, "best cost {}: {}", r.best.cost.unwrap_or(0), serde_json::to_string(&r.best.genome)?)?;
    Ok(())
}

fn entry_line(k: usize, e: &CacheEntry) -> String {
    let first = e.key.canonical_tc.lines().next().unwrap_or("");
    format!("{k}\t{:?}\tcost {}\tshapes {:?}\t{}", e.origin, e.cost, e.key.input_shapes, first)
}

fn load_cache(dir: &Path) -> Result<Cache> {
    Ok(Cache::open_dir(dir)?)
}

fn cmd_cache(a: &CacheCommand, out: &mut dyn Write) -> Result<()> {
    match a {
        CacheCommand::List { cache } => {
            let c = load_cache(cache)?;
            for (k, e) in c.entries().iter().enumerate() {
                writeln!(out, "{}", entry_line(k, e))?;
            }
            writeln!(out, "{} entr{}", c.len(), if c.len() == 1 { "y" } else { "ies" })?;
        }
        CacheCommand::Inspect { index, cache } => {
            let c = load_cache(cache)?;
            let e = c.entries().into_iter().nth(*index).ok_or_else(|| user(format!("no entry {index}")))?;
            writeln!(out, "{}", serde_json::to_string_pretty(&e)?)?;
        }
        CacheCommand::Inject { program, opts, cost, cache } => {
            let (c, inst) = load_instance(program)?;
            let o = opts.resolve()?;
            let compiled = compile(&inst, &o)?;
            let key = LookupKey::for_instance(&c, &inst, o.shared_memory_budget);
            let store = load_cache(cache)?;
            let entry = CacheEntry::new(&key, o, emit_cuda_text(&inst, &compiled.ir), *cost, Origin::Injected);
            let stored = store.update(entry, "inject")?;
            fs::create_dir_all(cache)?;
            store.save(&cache_file(cache))?;
            writeln!(out, "{}", if stored { "injected" } else { "kept cheaper existing entry" })?;
        }
        CacheCommand::Purge { index, all, cache } => {
            let c = load_cache(cache)?;
            let removed = match (index, all) {
                (_, true) => c.purge(|_| false),
                (Some(k), false) => {
                    let target = c.entries().into_iter().nth(*k).ok_or_else(|| user(format!("no entry {k}")))?;
                    c.purge(|e| e.key != target.key)
                }
                (None, false) => bail!(UserError("give an entry index or --all".into())),
            };
            c.save(&cache_file(cache))?;
            writeln!(out, "removed {removed} entr{}", if removed == 1 { "y" } else { "ies" })?;
        }
    }
    Ok(())
}

fn cmd_dump_tree(a: &TreeArgs, out: &mut dyn Write) -> Result<()> {
    let (_, inst) = load_instance(&a.program)?;
    let o = a.opts.resolve()?;
    let g = compute_dependences(&inst);
    let canonical = canonical_tree(&inst, &g);
    let fused = fuse(&inst, &g, o.fusion);
    let tiled = tile(&fused, &g, &o.tile_sizes)?;
    let sunk = sink_point_loops(&tiled, &g);
    let mapped = unroll_mark(&map_to_gpu(&sunk, &g, &o.block_shape, &o.thread_shape)?, o.unroll_factor);
    let c = compile(&inst, &o)?;
    let promoted = insert_copies_and_syncs(&mapped, &c.plan);
    for (name, t) in [("canonical", &canonical), ("fused", &fused), ("tiled", &tiled), ("sunk", &sunk), ("mapped", &mapped), ("promoted", &promoted)] {
        writeln!(out, "== {name}")?;
        write!(out, "{}", t.dump())?;
    }
    Ok(())
}

fn cmd_dump_deps(a: &ProgramArgs, out: &mut dyn Write) -> Result<()> {
    let (_, inst) = load_instance(a)?;
    let g = compute_dependences(&inst);
    write!(out, "{}", dump_deps(&inst, &g))?;
    match dataflow(&inst) {
        Some(edges) => {
            writeln!(out, "dataflow:")?;
            for e in &edges {
                writeln!(out, "  {}", flow_text(&inst, e))?;
            }
        }
        None => writeln!(out, "dataflow: not exact (indirect accesses)")?,
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Check(a) => cmd_check(a, out),
        Command::Compile(a) => cmd_compile(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Tune(a) => cmd_tune(a, out),
        Command::Cache { action } => cmd_cache(action, out),
        Command::DumpTree(a) => cmd_dump_tree(a, out),
        Command::DumpDeps(a) => cmd_dump_deps(a, out),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}

/// Parse `args`, run, print diagnostics to `err`; returns the exit code.
pub fn main_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            match kind(&e) {
                Some(k) => {
                    let _ = writeln!(err, "error[{}::{k}]: {e:#}", provenance(&e));
                }
                None => {
                    let _ = writeln!(err, "error[{}]: {e:#}", provenance(&e));
                }
            }
            exit_code(&e)
        }
    }
}

