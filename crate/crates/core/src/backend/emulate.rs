//! GPU emulator: blocks run one after another; the threads of a block run
//! round-robin between barriers while every memory access is checked for
//! conflicts with other threads in the same barrier phase.

use std::collections::{BTreeMap, HashMap};

use crate::schedule::CopyDir;
use crate::semantics::InstantiatedDef;

use super::interp::{collect_outputs, out_of_range};
use super::ir::{KStmt, KernelIR, BLOCK_VAR, THREAD_VAR};
use super::value::{initial_memory, linear, Bindings, Instance, Reader, Tensor, Value};
use super::BackendError;

/// Cycles charged per barrier.
pub const BARRIER_COST: u64 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Race {
    pub block: Vec<i64>,
    pub phase: usize,
    /// Tensor or buffer name.
    pub memory: String,
    pub index: usize,
    pub threads: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmulationResult {
    pub outputs: BTreeMap<String, Tensor>,
    pub races: Vec<Race>,
    /// Modeled cycles of the slowest block.
    pub cost: u64,
    pub barriers: u64,
}

#[derive(Clone, Debug)]
enum Event {
    Compute { stmt: usize, iters: Vec<i64>, offsets: Vec<Option<(usize, Vec<i64>)>> },
    /// Move one cell between a buffer and global memory.
    Copy { buffer: usize, dir: CopyDir, local: usize, global: usize },
    Barrier,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Space {
    Global(usize),
    Shared(usize),
}

#[derive(Default)]
struct CellUse {
    writer: Option<usize>,
    reader: Option<usize>,
    multi_reader: bool,
}

struct Tracker {
    cells: HashMap<(Space, usize), CellUse>,
    races: Vec<Race>,
    block: Vec<i64>,
    phase: usize,
}

const MAX_REPORTED_RACES: usize = 64;

impl Tracker {
    fn record(&mut self, space: Space, index: usize, thread: usize, write: bool, names: &dyn Fn(Space) -> String) {
        let c = self.cells.entry((space, index)).or_default();
        let other = if write {
            c.writer.filter(|w| *w != thread).or(c.reader.filter(|r| *r != thread)).or(if c.multi_reader { c.reader } else { None })
        } else {
            c.writer.filter(|w| *w != thread)
        };
        if write {
            c.writer = Some(thread);
        } else {
            match c.reader {
                None => c.reader = Some(thread),
                Some(r) if r != thread => c.multi_reader = true,
                _ => {}
            }
        }
        if let Some(o) = other {
            if self.races.len() < MAX_REPORTED_RACES {
                self.races.push(Race { block: self.block.clone(), phase: self.phase, memory: names(space), index, threads: (o, thread) });
            }
        }
    }
}

struct Walker<'a> {
    inst: &'a InstantiatedDef,
    ir: &'a KernelIR,
    mem: &'a [Tensor],
    scalars: &'a [Value],
    tid: usize,
    nthreads: usize,
    events: Vec<Event>,
    cost: u64,
}

impl Walker<'_> {
    fn walk(&mut self, body: &[KStmt], env: &mut Vec<i64>) -> Result<(), BackendError> {
        for s in body {
            match s {
                KStmt::Loop { var, lo, hi, step, unroll, body } => {
                    let (lo, hi) = (lo.eval(env), hi.eval(env));
                    let mut v = lo;
                    let mut k: u64 = 0;
                    while v < hi {
                        if k % *unroll as u64 == 0 {
                            self.cost += 1;
                        }
                        env[*var] = v;
                        self.walk(body, env)?;
                        v += step;
                        k += 1;
                    }
                }
                KStmt::If { conds, body } => {
                    if conds.iter().all(|c| c.holds(env)) {
                        self.walk(body, env)?;
                    }
                }
                KStmt::Compute { stmt, iters } => {
                    let iters: Vec<i64> = iters.iter().map(|e| e.eval(env)).collect();
                    let st = &self.inst.stmts[*stmt];
                    let offsets = (0..st.accesses.len())
                        .map(|k| self.ir.redirect.get(&(*stmt, k)).map(|b| (*b, self.ir.buffers[*b].offsets.iter().map(|o| o.eval(env)).collect())))
                        .collect();
                    self.cost += 1;
                    self.events.push(Event::Compute { stmt: *stmt, iters, offsets });
                }
                KStmt::Copy { buffer, dir } => self.copy(*buffer, *dir, env)?,
                KStmt::Barrier => {
                    self.cost += BARRIER_COST;
                    self.events.push(Event::Barrier);
                }
            }
        }
        Ok(())
    }

    fn copy(&mut self, b: usize, dir: CopyDir, env: &[i64]) -> Result<(), BackendError> {
        let buf = &self.ir.buffers[b];
        let spec = &buf.spec;
        let shape = spec.shape();
        let cells: usize = shape.iter().product::<i64>() as usize;
        let offsets: Vec<i64> = buf.offsets.iter().map(|o| o.eval(env)).collect();
        if spec.private && spec.thread_guards.iter().any(|(d, bound)| env[THREAD_VAR + d] >= *bound) {
            return Ok(());
        }
        let (start, stride) = if spec.private { (0, 1) } else { (self.tid, self.nthreads) };
        let mut c = start;
        while c < cells {
            let mut local = vec![0i64; shape.len()];
            let mut rest = c as i64;
            for d in (0..shape.len()).rev() {
                local[d] = rest % shape[d];
                rest /= shape[d];
            }
            if let Some(global) = self.global_cell(b, &local, &offsets)? {
                let ok = match (&spec.write_box, dir) {
                    (Some(bx), CopyDir::Out) => {
                        let idx = self.direct_coords(b, &local, &offsets);
                        idx.iter().zip(bx).all(|(i, (lo, hi))| *i >= *lo && *i < *hi)
                    }
                    _ => true,
                };
                if ok {
                    self.events.push(Event::Copy { buffer: b, dir, local: c, global });
                    self.cost += 1;
                }
            }
            if !self.ir.unroll_copies {
                self.cost += 1;
            }
            c += stride;
        }
        Ok(())
    }

    fn direct_coords(&self, b: usize, local: &[i64], offsets: &[i64]) -> Vec<i64> {
        use crate::promotion::BufferDim;
        self.ir.buffers[b]
            .spec
            .dims
            .iter()
            .enumerate()
            .filter(|(_, d)| matches!(d, BufferDim::Direct { .. }))
            .map(|(k, _)| offsets[k] + local[k])
            .collect()
    }

    /// Linear tensor offset of a buffer cell, or `None` when the cell lies
    /// outside the tensor or outside the statement's domain.
    fn global_cell(&self, b: usize, local: &[i64], offsets: &[i64]) -> Result<Option<usize>, BackendError> {
        use crate::promotion::BufferDim;
        let spec = &self.ir.buffers[b].spec;
        let t = &self.inst.tensors[spec.tensor];
        let Some((s, a)) = spec.source else {
            let idx: Vec<i64> = (0..local.len()).map(|k| offsets[k] + local[k]).collect();
            return Ok(linear(&t.shape, &idx));
        };
        let st = &self.inst.stmts[s];
        let mut iters: Vec<i64> = st.iters.iter().map(|i| i.lo).collect();
        let mut direct = BTreeMap::new();
        for (k, d) in spec.dims.iter().enumerate() {
            let v = offsets[k] + local[k];
            match d {
                BufferDim::Iter { iter, .. } => {
                    if v < st.iters[*iter].lo || v >= st.iters[*iter].hi {
                        return Ok(None);
                    }
                    iters[*iter] = v;
                }
                BufferDim::Direct { dim, .. } => {
                    direct.insert(*dim, v);
                }
            }
        }
        let ins = Instance { inst: self.inst, stmt: st, iters: &iters, scalars: self.scalars };
        let mut r = PlainReader { inst: self.inst, stmt: s, mem: self.mem };
        let mut idx = ins.subscripts(&st.accesses[a], &mut r)?;
        for (d, v) in direct {
            idx[d] = v;
        }
        match linear(&t.shape, &idx) {
            Some(off) => Ok(Some(off)),
            None if st.accesses[a].subs.iter().enumerate().all(|(d, sub)| sub.as_affine().is_none() || (idx[d] >= 0 && (idx[d] as usize) < t.shape[d])) => {
                Err(out_of_range(self.inst, s, spec.tensor, &idx))
            }
            None => Ok(None),
        }
    }
}

struct PlainReader<'a> {
    inst: &'a InstantiatedDef,
    stmt: usize,
    mem: &'a [Tensor],
}

impl Reader for PlainReader<'_> {
    fn read(&mut self, access: usize, idx: &[i64]) -> Result<Value, BackendError> {
        let t = self.inst.stmts[self.stmt].accesses[access].tensor;
        let off = self.mem[t].offset(idx).ok_or_else(|| out_of_range(self.inst, self.stmt, t, idx))?;
        Ok(self.mem[t].data[off])
    }
}

struct BlockState<'a> {
    inst: &'a InstantiatedDef,
    ir: &'a KernelIR,
    mem: &'a mut Vec<Tensor>,
    shared: Vec<Vec<Value>>,
    private: HashMap<(usize, usize), Vec<Value>>,
    tracker: Tracker,
}

struct ComputeReader<'a, 'b> {
    st: &'b mut BlockState<'a>,
    stmt: usize,
    thread: usize,
    offsets: &'b [Option<(usize, Vec<i64>)>],
}

impl ComputeReader<'_, '_> {
    /// Resolve an access to a memory space and linear index.
    fn locate(&self, access: usize, idx: &[i64], iters: &[i64]) -> Result<(Space, bool, usize), BackendError> {
        use crate::promotion::BufferDim;
        let inst = self.st.inst;
        match &self.offsets[access] {
            None => {
                let t = inst.stmts[self.stmt].accesses[access].tensor;
                let off = self.st.mem[t].offset(idx).ok_or_else(|| out_of_range(inst, self.stmt, t, idx))?;
                Ok((Space::Global(t), false, off))
            }
            Some((b, offs)) => {
                let spec = &self.st.ir.buffers[*b].spec;
                let t = &inst.tensors[spec.tensor];
                if linear(&t.shape, idx).is_none() {
                    return Err(out_of_range(inst, self.stmt, spec.tensor, idx));
                }
                let local: Vec<i64> = spec
                    .dims
                    .iter()
                    .zip(offs)
                    .map(|(d, o)| match d {
                        BufferDim::Direct { dim, .. } => idx[*dim] - o,
                        BufferDim::Iter { iter, .. } => iters[*iter] - o,
                    })
                    .collect();
                let shape: Vec<usize> = spec.shape().iter().map(|x| *x as usize).collect();
                let off = linear(&shape, &local).ok_or_else(|| BackendError::PromotionOutOfTile { buffer: spec.name.clone(), index: local.clone() })?;
                Ok((Space::Shared(*b), spec.private, off))
            }
        }
    }
}

struct IterReader<'a, 'b, 'c> {
    inner: &'c mut ComputeReader<'a, 'b>,
    iters: &'c [i64],
}

impl Reader for IterReader<'_, '_, '_> {
    fn read(&mut self, access: usize, idx: &[i64]) -> Result<Value, BackendError> {
        let (space, private, off) = self.inner.locate(access, idx, self.iters)?;
        self.inner.st.load(space, private, off, self.inner.thread)
    }
}

impl BlockState<'_> {
    fn load(&mut self, space: Space, private: bool, off: usize, thread: usize) -> Result<Value, BackendError> {
        Ok(match space {
            Space::Global(t) => {
                self.track(space, off, thread, false);
                self.mem[t].data[off]
            }
            Space::Shared(b) if private => self.private_buf(b, thread)[off],
            Space::Shared(b) => {
                self.track(space, off, thread, false);
                self.shared[b][off]
            }
        })
    }

    fn store(&mut self, space: Space, private: bool, off: usize, thread: usize, v: Value) {
        match space {
            Space::Global(t) => {
                self.track(space, off, thread, true);
                self.mem[t].data[off] = v;
            }
            Space::Shared(b) if private => self.private_buf(b, thread)[off] = v,
            Space::Shared(b) => {
                self.track(space, off, thread, true);
                self.shared[b][off] = v;
            }
        }
    }

    fn track(&mut self, space: Space, off: usize, thread: usize, write: bool) {
        let inst = self.inst;
        let ir = self.ir;
        let names = move |s: Space| match s {
            Space::Global(t) => inst.tensors[t].name.clone(),
            Space::Shared(b) => ir.buffers[b].spec.name.clone(),
        };
        self.tracker.record(space, off, thread, write, &names);
    }

    fn private_buf(&mut self, b: usize, thread: usize) -> &mut Vec<Value> {
        let spec = &self.ir.buffers[b].spec;
        let n = spec.cells() as usize;
        let z = Value::zero(spec.ty);
        self.private.entry((b, thread)).or_insert_with(|| vec![z; n])
    }

    fn run_event(&mut self, e: &Event, thread: usize, scalars: &[Value]) -> Result<(), BackendError> {
        match e {
            Event::Barrier => Ok(()),
            Event::Copy { buffer, dir, local, global } => {
                let spec = &self.ir.buffers[*buffer].spec;
                let (t, private) = (spec.tensor, spec.private);
                match dir {
                    CopyDir::In => {
                        let v = self.load(Space::Global(t), false, *global, thread)?;
                        self.store(Space::Shared(*buffer), private, *local, thread, v);
                    }
                    CopyDir::Out => {
                        let v = self.load(Space::Shared(*buffer), private, *local, thread)?;
                        self.store(Space::Global(t), false, *global, thread, v);
                    }
                }
                Ok(())
            }
            Event::Compute { stmt, iters, offsets } => {
                let inst = self.inst;
                let st = &inst.stmts[*stmt];
                let ins = Instance { inst, stmt: st, iters, scalars };
                let mut cr = ComputeReader { st: self, stmt: *stmt, thread, offsets };
                let mut r = IterReader { inner: &mut cr, iters };
                let v = ins.execute(&mut r)?;
                let idx = ins.subscripts(st.write(), &mut r)?;
                let (space, private, off) = cr.locate(0, &idx, iters)?;
                cr.st.store(space, private, off, thread, v);
                Ok(())
            }
        }
    }
}

fn grid_points(ext: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for e in ext {
        out = out.into_iter().flat_map(|p| (0..*e).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    out
}

/// Thread coordinates in linear order, x fastest.
fn thread_coords(block: &[i64]) -> Vec<Vec<i64>> {
    let mut rev: Vec<i64> = block.to_vec();
    rev.reverse();
    grid_points(&rev)
        .into_iter()
        .map(|mut p| {
            p.reverse();
            p
        })
        .collect()
}

/// Execute the kernel on the inputs and compare nothing: returns outputs,
/// detected races and the modeled cost.
pub fn emulate(inst: &InstantiatedDef, ir: &KernelIR, b: &Bindings) -> Result<EmulationResult, BackendError> {
    let (mut mem, scalars) = initial_memory(inst, b)?;
    let threads = thread_coords(&ir.block);
    let nthreads = threads.len();
    let mut races = Vec::new();
    let mut cost = 0;
    let mut barriers = 0;
    for bid in grid_points(&ir.grid) {
        let mut lists = Vec::with_capacity(nthreads);
        let mut block_cost = 0;
        for (tid, tc) in threads.iter().enumerate() {
            let mut env = vec![0i64; ir.n_vars()];
            for (d, v) in bid.iter().enumerate() {
                env[BLOCK_VAR + d] = *v;
            }
            for (d, v) in tc.iter().enumerate() {
                env[THREAD_VAR + d] = *v;
            }
            let mut w = Walker { inst, ir, mem: &mem, scalars: &scalars, tid, nthreads, events: Vec::new(), cost: 0 };
            w.walk(&ir.body, &mut env)?;
            block_cost = block_cost.max(w.cost);
            lists.push(w.events);
        }
        let counts: Vec<usize> = lists.iter().map(|l| l.iter().filter(|e| matches!(e, Event::Barrier)).count()).collect();
        if counts.iter().any(|c| *c != counts[0]) {
            return Err(BackendError::BarrierDivergence { block: bid.clone() });
        }
        barriers = barriers.max(counts[0] as u64);
        cost = cost.max(block_cost);
        let shared = ir.buffers.iter().map(|buf| if buf.spec.private { vec![] } else { vec![Value::zero(buf.spec.ty); buf.spec.cells() as usize] }).collect();
        let mut state = BlockState {
            inst,
            ir,
            mem: &mut mem,
            shared,
            private: HashMap::new(),
            tracker: Tracker { cells: HashMap::new(), races: Vec::new(), block: bid.clone(), phase: 0 },
        };
        let mut pos = vec![0usize; nthreads];
        for phase in 0..=counts[0] {
            state.tracker.phase = phase;
            state.tracker.cells.clear();
            let mut live = true;
            while live {
                live = false;
                for t in 0..nthreads {
                    let Some(e) = lists[t].get(pos[t]) else { continue };
                    if matches!(e, Event::Barrier) {
                        continue;
                    }
                    state.run_event(e, t, &scalars)?;
                    pos[t] += 1;
                    live = true;
                }
            }
            for (t, p) in pos.iter_mut().enumerate() {
                if matches!(lists[t].get(*p), Some(Event::Barrier)) {
                    *p += 1;
                }
            }
        }
        races.extend(state.tracker.races);
    }
    Ok(EmulationResult { outputs: collect_outputs(inst, &mem), races, cost, barriers })
}
