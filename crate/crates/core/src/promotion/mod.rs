//! Array tiles, reference groups and promotion of tensor tiles to shared or
//! private buffers, with the copies and barriers that keep them coherent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use num_integer::Integer;
use thiserror::Error;

use crate::frontend::ScalarType;
use crate::polyir::for_each_box_point;
use crate::schedule::{CopyDir, ExtStmt, FilterSet, MapTag, MappingOptions, Node, SchedFn, ScheduleTree, Step};
use crate::semantics::{Affine, InstantiatedDef, Subscript, VExpr};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PromotionError {
    #[error("tensor `{0}` cannot be promoted: indirect promotion needs read-only outer and index arrays")]
    NotPromotable(String),
}

/// Quantity an offset depends on: the value of the band member at a depth
/// of the member stack, or a thread coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OffsetTerm {
    Member(usize),
    Thread(usize),
}

/// `c + Σ coeff·term` with a constant extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileDim {
    pub terms: Vec<(OffsetTerm, i64)>,
    pub c: i64,
    pub extent: i64,
}

impl TileDim {
    fn constant(lo: i64, extent: i64) -> Self {
        TileDim { terms: vec![], c: lo, extent }
    }

    pub fn text(&self) -> String {
        let mut s = Vec::new();
        for (t, a) in &self.terms {
            let name = match t {
                OffsetTerm::Member(d) => format!("m{d}"),
                OffsetTerm::Thread(d) => MapTag::Thread(*d).name().to_string(),
            };
            s.push(if *a == 1 { name } else { format!("{a}*{name}") });
        }
        if self.c != 0 || s.is_empty() {
            s.push(self.c.to_string());
        }
        format!("{} +[0,{})", s.join(" + "), self.extent)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayTile {
    pub tensor: usize,
    pub dims: Vec<TileDim>,
}

impl ArrayTile {
    pub fn extents(&self) -> Vec<i64> {
        self.dims.iter().map(|d| d.extent).collect()
    }

    pub fn cells(&self) -> i64 {
        self.dims.iter().map(|d| d.extent).product()
    }
}

/// One dimension of a promoted buffer: a tensor dimension shifted by its
/// tile offset, or, for indirect accesses, an iterator of the index
/// expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BufferDim {
    Direct { dim: usize, tile: TileDim },
    Iter { iter: usize, tile: TileDim },
}

impl BufferDim {
    pub fn tile(&self) -> &TileDim {
        match self {
            BufferDim::Direct { tile, .. } | BufferDim::Iter { tile, .. } => tile,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceGroup {
    pub tensor: usize,
    /// (statement, access index)
    pub accesses: Vec<(usize, usize)>,
    pub has_write: bool,
    pub indirect: bool,
    /// Band node (pre-order id) below which the group's copies are placed.
    pub scope_node: usize,
    /// Member-stack depth at that point.
    pub scope_depth: usize,
    pub tile: Option<ArrayTile>,
    /// Largest number of accesses to one element within one scope instance.
    pub reuse: u64,
    pub coalesced: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Shared,
    Private,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferSpec {
    pub name: String,
    pub tensor: usize,
    pub group: usize,
    pub private: bool,
    pub ty: ScalarType,
    pub dims: Vec<BufferDim>,
    pub copy_in: bool,
    pub copy_out: bool,
    /// Cells written back must lie in this box of tensor coordinates.
    pub write_box: Option<Vec<(i64, i64)>>,
    /// Indirect buffers: the access whose subscripts the copy evaluates.
    pub source: Option<(usize, usize)>,
    /// Private buffers: thread coordinate d owns a point only when below the bound.
    pub thread_guards: Vec<(usize, i64)>,
    pub scope_node: usize,
    pub scope_depth: usize,
}

impl BufferSpec {
    pub fn shape(&self) -> Vec<i64> {
        self.dims.iter().map(|d| d.tile().extent).collect()
    }

    pub fn cells(&self) -> i64 {
        self.shape().iter().product()
    }

    pub fn bytes(&self) -> usize {
        self.cells() as usize * elem_bytes(self.ty)
    }
}

pub fn elem_bytes(ty: ScalarType) -> usize {
    match ty {
        ScalarType::Float | ScalarType::Int | ScalarType::Uint32 => 4,
        ScalarType::Double | ScalarType::Long => 8,
        ScalarType::Half => 2,
        ScalarType::Byte => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PromotionPlan {
    pub groups: Vec<ReferenceGroup>,
    pub targets: Vec<Target>,
    pub buffers: Vec<BufferSpec>,
    /// (statement, access) → buffer
    pub redirect: BTreeMap<(usize, usize), usize>,
    pub shared_bytes: usize,
}

impl PromotionPlan {
    pub fn dump(&self, inst: &InstantiatedDef) -> String {
        let mut out = String::new();
        for (k, g) in self.groups.iter().enumerate() {
            let t = &inst.tensors[g.tensor];
            let tile = g.tile.as_ref().map(|t| format!("{:?}", t.extents())).unwrap_or_else(|| "none".into());
            let _ = writeln!(
                out,
                "group {k}: {} accesses={} write={} indirect={} tile={} reuse={} coalesced={} -> {:?}",
                t.name,
                g.accesses.len(),
                g.has_write,
                g.indirect,
                tile,
                g.reuse,
                g.coalesced,
                self.targets[k]
            );
        }
        for b in &self.buffers {
            let dims: Vec<String> = b.dims.iter().map(|d| d.tile().text()).collect();
            let _ = writeln!(
                out,
                "buffer {} ({}) {:?} bytes={} copy_in={} copy_out={} scope=m{} dims=[{}]",
                b.name,
                if b.private { "private" } else { "shared" },
                b.shape(),
                b.bytes(),
                b.copy_in,
                b.copy_out,
                b.scope_depth,
                dims.join(", ")
            );
        }
        let _ = writeln!(out, "shared bytes: {}", self.shared_bytes);
        out
    }
}

#[derive(Clone, Debug)]
struct PathMember {
    node: usize,
    index: usize,
    f: SchedFn,
    tag: Option<MapTag>,
}

fn member_paths(tree: &ScheduleTree) -> Vec<Vec<PathMember>> {
    tree.paths()
        .into_iter()
        .map(|p| {
            p.into_iter()
                .filter_map(|s| match s {
                    Step::Member { node, index, f, tag } => Some(PathMember { node, index, f, tag }),
                    Step::Child { .. } => None,
                })
                .collect()
        })
        .collect()
}

/// Scope of a set of statements: below the innermost band of Tile members
/// common to all of them and above every thread-mapped member, else below
/// the block-mapped outer band.
fn find_scope(paths: &[Vec<PathMember>], stmts: &BTreeSet<usize>) -> Option<(usize, usize)> {
    let first = *stmts.iter().next()?;
    let p0 = &paths[first];
    let mut common = p0.len();
    for s in stmts {
        let p = &paths[*s];
        let mut k = 0;
        while k < common && k < p.len() && p[k].node == p0[k].node && p[k].index == p0[k].index {
            k += 1;
        }
        common = k;
    }
    let thread_limit = stmts
        .iter()
        .map(|s| paths[*s].iter().position(|m| matches!(m.tag, Some(MapTag::Thread(_)))).unwrap_or(paths[*s].len()))
        .min()
        .unwrap_or(0);
    let outer_end = p0.iter().take_while(|m| m.node == p0[0].node).count();
    if outer_end == 0 || outer_end > common {
        return None;
    }
    let mut best = (p0[0].node, outer_end);
    let mut k = outer_end;
    while k < common {
        let node = p0[k].node;
        let end = k + p0[k..].iter().take_while(|m| m.node == node).count();
        if end > common || end > thread_limit {
            break;
        }
        let all_tile = stmts.iter().all(|s| paths[*s][k..end].iter().all(|m| matches!(m.f, SchedFn::Tile(..))));
        if all_tile {
            best = (node, end);
        }
        k = end;
    }
    Some(best)
}

/// Range of one iterator within one scope instance.
fn iter_tile(path: &[PathMember], depth: usize, i: usize, lo: i64, hi: i64) -> TileDim {
    let outer = &path[..depth.min(path.len())];
    let mut tile = None;
    let mut point = None;
    for (d, m) in outer.iter().enumerate() {
        match m.f {
            SchedFn::Iter(j) if j == i => return TileDim { terms: vec![(OffsetTerm::Member(d), 1)], c: 0, extent: 1 },
            SchedFn::Tile(j, ts) if j == i => tile = Some((d, ts)),
            SchedFn::Point(j, _) if j == i => point = Some(d),
            _ => {}
        }
    }
    match (tile, point) {
        (Some((t, _)), Some(p)) => TileDim { terms: vec![(OffsetTerm::Member(t), 1), (OffsetTerm::Member(p), 1)], c: 0, extent: 1 },
        (Some((t, ts)), None) => {
            let single = Integer::div_floor(&lo, &ts) == Integer::div_floor(&(hi - 1), &ts);
            let extent = if single { hi - ts * Integer::div_floor(&lo, &ts) } else { ts };
            TileDim { terms: vec![(OffsetTerm::Member(t), 1)], c: 0, extent }
        }
        _ => TileDim::constant(lo, hi - lo),
    }
}

/// Offset and extent of an affine subscript given per-iterator tiles.
fn affine_tile(f: &Affine, iters: &[TileDim]) -> TileDim {
    let mut terms: BTreeMap<OffsetTerm, i64> = BTreeMap::new();
    let mut c = f.c;
    let mut extent = 1;
    for (i, a) in f.coeffs.iter().enumerate() {
        if *a == 0 {
            continue;
        }
        let t = &iters[i];
        for (term, b) in &t.terms {
            *terms.entry(*term).or_insert(0) += a * b;
        }
        c += a * t.c;
        if *a < 0 {
            c += a * (t.extent - 1);
        }
        extent += a.abs() * (t.extent - 1);
    }
    TileDim { terms: terms.into_iter().filter(|(_, a)| *a != 0).collect(), c, extent }
}

/// Hull of tiles with equal variable parts.
fn hull(dims: &[TileDim]) -> Option<TileDim> {
    let first = dims.first()?;
    if dims.iter().any(|d| d.terms != first.terms) {
        return None;
    }
    let lo = dims.iter().map(|d| d.c).min().unwrap();
    let hi = dims.iter().map(|d| d.c + d.extent).max().unwrap();
    Some(TileDim { terms: first.terms.clone(), c: lo, extent: hi - lo })
}

/// Per-iterator tiles of a statement at a scope depth.
fn stmt_iter_tiles(inst: &InstantiatedDef, path: &[PathMember], s: usize, depth: usize) -> Vec<TileDim> {
    inst.stmts[s].iters.iter().enumerate().map(|(i, it)| iter_tile(path, depth, i, it.lo, it.hi)).collect()
}

/// Array tile of one affine access; `None` for indirect accesses.
pub fn compute_array_tile(inst: &InstantiatedDef, tree: &ScheduleTree, stmt: usize, access: usize, depth: usize) -> Option<ArrayTile> {
    let paths = member_paths(tree);
    access_tile(inst, &paths[stmt], stmt, access, depth)
}

fn access_tile(inst: &InstantiatedDef, path: &[PathMember], stmt: usize, access: usize, depth: usize) -> Option<ArrayTile> {
    let tiles = stmt_iter_tiles(inst, path, stmt, depth);
    let a = &inst.stmts[stmt].accesses[access];
    let dims = a.subs.iter().map(|s| s.as_affine().map(|f| affine_tile(f, &tiles))).collect::<Option<Vec<_>>>()?;
    Some(ArrayTile { tensor: a.tensor, dims })
}

fn pure_iter_plus_const(f: &Affine) -> Option<usize> {
    let mut nz = f.coeffs.iter().enumerate().filter(|(_, a)| **a != 0);
    match (nz.next(), nz.next()) {
        (Some((i, 1)), None) => Some(i),
        _ => None,
    }
}

/// Box of tensor coordinates written or read by an access over the whole
/// domain, for accesses whose subscripts are distinct `iterator + c`.
fn image_box(inst: &InstantiatedDef, s: usize, a: usize) -> Option<Vec<(i64, i64)>> {
    let st = &inst.stmts[s];
    let mut seen = BTreeSet::new();
    st.accesses[a]
        .subs
        .iter()
        .map(|sub| {
            let f = sub.as_affine()?;
            let i = pure_iter_plus_const(f)?;
            if !seen.insert(i) {
                return None;
            }
            Some((st.iters[i].lo + f.c, st.iters[i].hi + f.c))
        })
        .collect()
}

/// Iterators an indirect subscript depends on, in first-use order.
fn indirect_iters(inst: &InstantiatedDef, s: usize, e: &VExpr, out: &mut Vec<usize>) {
    let st = &inst.stmts[s];
    e.walk(&mut |x| match x {
        VExpr::Iter(i) => {
            if !out.contains(i) {
                out.push(*i);
            }
        }
        VExpr::Access(k) => {
            for sub in &st.accesses[*k].subs {
                match sub {
                    Subscript::Affine(f) => {
                        for (i, a) in f.coeffs.iter().enumerate() {
                            if *a != 0 && !out.contains(&i) {
                                out.push(i);
                            }
                        }
                    }
                    Subscript::Indirect(inner) => indirect_iters(inst, s, inner, out),
                }
            }
        }
        _ => {}
    });
}

/// Tensors read through indirect subscripts, with the tensors serving as
/// index arrays.
fn indirect_tensors(inst: &InstantiatedDef, s: usize, a: usize) -> Vec<usize> {
    let st = &inst.stmts[s];
    let mut out = vec![st.accesses[a].tensor];
    for sub in &st.accesses[a].subs {
        if let Subscript::Indirect(e) = sub {
            e.walk(&mut |x| {
                if let VExpr::Access(k) = x {
                    out.push(st.accesses[*k].tensor);
                }
            });
        }
    }
    out
}

/// Accesses whose value feeds another access's subscript are index reads.
fn nested_accesses(inst: &InstantiatedDef, s: usize) -> BTreeSet<usize> {
    let st = &inst.stmts[s];
    let mut out = BTreeSet::new();
    for a in &st.accesses {
        for sub in &a.subs {
            if let Subscript::Indirect(e) = sub {
                e.walk(&mut |x| {
                    if let VExpr::Access(k) = x {
                        out.insert(*k);
                    }
                });
            }
        }
    }
    out
}

/// Representative scope instance: outer member values taken at the first
/// instance of the group's first statement.
fn reuse_count(inst: &InstantiatedDef, paths: &[Vec<PathMember>], g: &ReferenceGroup) -> u64 {
    let s0 = g.accesses[0].0;
    let x0: Vec<i64> = inst.stmts[s0].iters.iter().map(|i| i.lo).collect();
    let vals: Vec<i64> = paths[s0][..g.scope_depth].iter().map(|m| m.f.eval(&x0)).collect();
    let mut counts: HashMap<Vec<i64>, u64> = HashMap::new();
    let mut budget: u64 = 1 << 20;
    for (s, a) in &g.accesses {
        let st = &inst.stmts[*s];
        let tiles = stmt_iter_tiles(inst, &paths[*s], *s, g.scope_depth);
        let boxes: Vec<(i64, i64)> = tiles
            .iter()
            .zip(&st.iters)
            .map(|(t, it)| {
                let off: i64 = t.c
                    + t.terms
                        .iter()
                        .map(|(term, c)| match term {
                            OffsetTerm::Member(d) => c * vals[*d],
                            OffsetTerm::Thread(_) => 0,
                        })
                        .sum::<i64>();
                (off.max(it.lo), (off + t.extent).min(it.hi))
            })
            .collect();
        let acc = &st.accesses[*a];
        for_each_box_point(&boxes, &mut |p| {
            let key: Vec<i64> = acc.subs.iter().map(|sub| sub.as_affine().map(|f| f.eval(p)).unwrap_or(i64::MIN)).collect();
            *counts.entry(key).or_insert(0) += 1;
            budget -= 1;
            budget > 0
        });
        if budget == 0 {
            return 2;
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

fn thread_x_iter(path: &[PathMember]) -> Option<usize> {
    path.iter().find(|m| m.tag == Some(MapTag::Thread(0))).map(|m| m.f.iter())
}

/// Group all accesses of each tensor; compute scope, tile, reuse and
/// coalescing for each group.
pub fn group_references(inst: &InstantiatedDef, tree: &ScheduleTree) -> Vec<ReferenceGroup> {
    let paths = member_paths(tree);
    let mut by_tensor: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (s, st) in inst.stmts.iter().enumerate() {
        let nested = nested_accesses(inst, s);
        for (k, a) in st.accesses.iter().enumerate() {
            if nested.contains(&k) {
                continue;
            }
            by_tensor.entry(a.tensor).or_default().push((s, k));
        }
    }
    let mut groups = Vec::new();
    for (tensor, accesses) in by_tensor {
        let stmts: BTreeSet<usize> = accesses.iter().map(|(s, _)| *s).collect();
        let Some((scope_node, scope_depth)) = find_scope(&paths, &stmts) else { continue };
        let has_write = accesses.iter().any(|(s, a)| inst.stmts[*s].accesses[*a].write);
        let indirect = accesses.iter().any(|(s, a)| inst.stmts[*s].accesses[*a].is_indirect());
        let tile = if indirect {
            None
        } else {
            let tiles: Option<Vec<ArrayTile>> = accesses.iter().map(|(s, a)| access_tile(inst, &paths[*s], *s, *a, scope_depth)).collect();
            tiles.and_then(|ts| {
                let rank = ts[0].dims.len();
                let dims: Option<Vec<TileDim>> = (0..rank).map(|d| hull(&ts.iter().map(|t| t.dims[d].clone()).collect::<Vec<_>>())).collect();
                dims.map(|dims| ArrayTile { tensor, dims })
            })
        };
        let coalesced = accesses.iter().all(|(s, a)| {
            let acc = &inst.stmts[*s].accesses[*a];
            match (thread_x_iter(&paths[*s]), acc.subs.last().and_then(|x| x.as_affine())) {
                (Some(ix), Some(f)) => f.uses(ix),
                _ => false,
            }
        });
        let mut g = ReferenceGroup { tensor, accesses, has_write, indirect, scope_node, scope_depth, tile, reuse: 0, coalesced };
        g.reuse = reuse_count(inst, &paths, &g);
        groups.push(g);
    }
    groups
}

/// Write groups are promotable when every access covers the same box with
/// distinct `iterator + c` subscripts.
fn write_box(inst: &InstantiatedDef, g: &ReferenceGroup) -> Option<Vec<(i64, i64)>> {
    let boxes: Option<Vec<Vec<(i64, i64)>>> = g.accesses.iter().map(|(s, a)| image_box(inst, *s, *a)).collect();
    let boxes = boxes?;
    boxes.iter().all(|b| *b == boxes[0]).then(|| boxes[0].clone())
}

/// Buffer layout of an indirect single-access group.
fn indirect_buffer(inst: &InstantiatedDef, paths: &[Vec<PathMember>], g: &ReferenceGroup) -> Result<Vec<BufferDim>, PromotionError> {
    let (s, a) = g.accesses[0];
    let name = inst.tensors[g.tensor].name.clone();
    if g.accesses.len() != 1 || g.has_write {
        return Err(PromotionError::NotPromotable(name));
    }
    let written: BTreeSet<usize> = inst.stmts.iter().map(|st| st.lhs_tensor()).collect();
    if indirect_tensors(inst, s, a).iter().any(|t| written.contains(t)) {
        return Err(PromotionError::NotPromotable(name));
    }
    let tiles = stmt_iter_tiles(inst, &paths[s], s, g.scope_depth);
    let mut dims = Vec::new();
    let mut seen = Vec::new();
    for (d, sub) in inst.stmts[s].accesses[a].subs.iter().enumerate() {
        match sub {
            Subscript::Affine(f) => dims.push(BufferDim::Direct { dim: d, tile: affine_tile(f, &tiles) }),
            Subscript::Indirect(e) => {
                let mut its = Vec::new();
                indirect_iters(inst, s, e, &mut its);
                for i in its {
                    if !seen.contains(&i) {
                        seen.push(i);
                        dims.push(BufferDim::Iter { iter: i, tile: tiles[i].clone() });
                    }
                }
            }
        }
    }
    Ok(dims)
}

/// Thread dimensions pinned to 0 on the way to each statement.
fn pinned_threads(tree: &ScheduleTree) -> Vec<BTreeSet<usize>> {
    fn walk(n: &Node, active: &BTreeSet<usize>, pinned: &BTreeSet<usize>, out: &mut Vec<BTreeSet<usize>>) {
        match n {
            Node::Filter { set: FilterSet::Residues(rs), child } => {
                let mut p = pinned.clone();
                for r in rs {
                    if let (MapTag::Thread(d), None) = (r.tag, &r.fns) {
                        p.insert(d);
                    }
                }
                walk(child, active, &p, out);
            }
            Node::Filter { set: FilterSet::Stmts(ss), child } => walk(child, &active.intersection(ss).copied().collect(), pinned, out),
            Node::Filter { set: FilterSet::Ext(_), .. } => {}
            Node::Leaf => {
                for s in active {
                    out[*s].extend(pinned.iter().copied());
                }
            }
            _ => {
                for c in n.children() {
                    walk(c, active, pinned, out);
                }
            }
        }
    }
    let mut out = vec![BTreeSet::new(); tree.stmts.len()];
    walk(&tree.root, &tree.all_stmts(), &BTreeSet::new(), &mut out);
    out
}

/// Per-thread layout for private promotion: thread-mapped point iterators
/// collapse to the thread's own point. Threads pinned to 0 for the accesses
/// must be pinned for all of them, and only thread 0 copies.
fn private_buffer(inst: &InstantiatedDef, paths: &[Vec<PathMember>], pinned: &[BTreeSet<usize>], g: &ReferenceGroup, threads: &[i64]) -> Option<(Vec<BufferDim>, Vec<(usize, i64)>)> {
    let mut per_access = Vec::new();
    let mut guards = BTreeSet::new();
    let pins = &pinned[g.accesses[0].0];
    if g.accesses.iter().any(|(s, _)| &pinned[*s] != pins) {
        return None;
    }
    guards.extend(pins.iter().map(|d| (*d, 1)));
    for (s, a) in &g.accesses {
        let path = &paths[*s];
        let mut tiles = stmt_iter_tiles(inst, path, *s, g.scope_depth);
        for m in &path[g.scope_depth..] {
            let Some(MapTag::Thread(d)) = m.tag else { continue };
            let SchedFn::Point(i, ts) = m.f else { return None };
            if ts > threads[d] {
                return None;
            }
            let t = path[..g.scope_depth].iter().position(|x| x.f == SchedFn::Tile(i, ts))?;
            tiles[i] = TileDim { terms: vec![(OffsetTerm::Member(t), 1), (OffsetTerm::Thread(d), 1)], c: 0, extent: 1 };
            guards.insert((d, ts));
        }
        let acc = &inst.stmts[*s].accesses[*a];
        let dims: Option<Vec<TileDim>> = acc.subs.iter().map(|sub| sub.as_affine().map(|f| affine_tile(f, &tiles))).collect();
        per_access.push(dims?);
    }
    let rank = per_access[0].len();
    let dims: Option<Vec<BufferDim>> =
        (0..rank).map(|d| hull(&per_access.iter().map(|t| t[d].clone()).collect::<Vec<_>>()).map(|tile| BufferDim::Direct { dim: d, tile })).collect();
    Some((dims?, guards.into_iter().collect()))
}

/// Decide a target for every group within the shared budget.
pub fn plan_promotion(inst: &InstantiatedDef, tree: &ScheduleTree, opts: &MappingOptions) -> PromotionPlan {
    let groups = group_references(inst, tree);
    let paths = member_paths(tree);
    let threads = tree.context().map(|(_, b)| b).unwrap_or_else(|| vec![1]);
    let mut targets = vec![Target::None; groups.len()];
    let mut layouts: Vec<Option<(Vec<BufferDim>, Option<Vec<(i64, i64)>>)>> = vec![None; groups.len()];
    let mut candidates = Vec::new();
    for (k, g) in groups.iter().enumerate() {
        if !opts.use_shared || g.reuse < 2 {
            continue;
        }
        let dims = if g.indirect {
            match indirect_buffer(inst, &paths, g) {
                Ok(d) => d,
                Err(_) => continue,
            }
        } else {
            if g.coalesced {
                continue;
            }
            let Some(tile) = &g.tile else { continue };
            tile.dims.iter().enumerate().map(|(d, t)| BufferDim::Direct { dim: d, tile: t.clone() }).collect()
        };
        let wb = if g.has_write {
            match write_box(inst, g) {
                Some(b) => Some(b),
                None => continue,
            }
        } else {
            None
        };
        let cells: i64 = dims.iter().map(|d| d.tile().extent).product();
        layouts[k] = Some((dims, wb));
        candidates.push((g.reuse as i64 * cells, k, cells));
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used = 0usize;
    for (_, k, cells) in candidates {
        let bytes = cells as usize * elem_bytes(inst.tensors[groups[k].tensor].ty);
        if used + bytes <= opts.shared_memory_budget {
            used += bytes;
            targets[k] = Target::Shared;
        }
    }
    let mut private_layouts: Vec<Option<(Vec<BufferDim>, Vec<(usize, i64)>, Option<Vec<(i64, i64)>>)>> = vec![None; groups.len()];
    if opts.use_private {
        let pinned = pinned_threads(tree);
        for (k, g) in groups.iter().enumerate() {
            if targets[k] != Target::None || g.indirect || g.reuse < 2 {
                continue;
            }
            let wb = if g.has_write {
                match write_box(inst, g) {
                    Some(b) => Some(b),
                    None => continue,
                }
            } else {
                None
            };
            if let Some((dims, guards)) = private_buffer(inst, &paths, &pinned, g, &threads) {
                targets[k] = Target::Private;
                private_layouts[k] = Some((dims, guards, wb));
            }
        }
    }
    let mut buffers = Vec::new();
    let mut redirect = BTreeMap::new();
    for (k, g) in groups.iter().enumerate() {
        let t = &inst.tensors[g.tensor];
        let (dims, guards, wb, private) = match targets[k] {
            Target::Shared => {
                let (dims, wb) = layouts[k].clone().unwrap();
                (dims, vec![], wb, false)
            }
            Target::Private => {
                let (dims, guards, wb) = private_layouts[k].clone().unwrap();
                (dims, guards, wb, true)
            }
            Target::None => continue,
        };
        let has_read = g.accesses.iter().any(|(s, a)| !inst.stmts[*s].accesses[*a].write);
        let id = buffers.len();
        buffers.push(BufferSpec {
            name: format!("{}_{}", if private { "private" } else { "shared" }, t.name),
            tensor: g.tensor,
            group: k,
            private,
            ty: t.ty,
            dims,
            copy_in: has_read,
            copy_out: g.has_write,
            write_box: wb,
            source: g.indirect.then(|| g.accesses[0]),
            thread_guards: guards,
            scope_node: g.scope_node,
            scope_depth: g.scope_depth,
        });
        for acc in &g.accesses {
            redirect.insert(*acc, id);
        }
    }
    PromotionPlan { groups, targets, buffers, redirect, shared_bytes: used }
}

/// Inject copy and barrier statements through Extension nodes placed below
/// each scope band: copy-in, barrier, body, barrier, copy-out, barrier.
pub fn insert_copies_and_syncs(tree: &ScheduleTree, plan: &PromotionPlan) -> ScheduleTree {
    let mut t = tree.clone();
    if plan.buffers.is_empty() {
        return t;
    }
    let mut by_scope: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, b) in plan.buffers.iter().enumerate() {
        by_scope.entry(b.scope_node).or_default().push(k);
    }
    fn go(n: &Node, counter: &mut usize, active: &BTreeSet<usize>, t: &mut ScheduleTree, plan: &PromotionPlan, by_scope: &BTreeMap<usize, Vec<usize>>) -> Node {
        let id = *counter;
        *counter += 1;
        match n {
            Node::Band { members, permutable, child } => {
                let inner = go(child, counter, active, t, plan, by_scope);
                let inner = match by_scope.get(&id) {
                    Some(bufs) => wrap_scope(inner, active, bufs, t, plan),
                    None => inner,
                };
                Node::Band { members: members.clone(), permutable: *permutable, child: Box::new(inner) }
            }
            Node::Filter { set: FilterSet::Stmts(s), child } => {
                let a = active.intersection(s).copied().collect();
                Node::Filter { set: FilterSet::Stmts(s.clone()), child: Box::new(go(child, counter, &a, t, plan, by_scope)) }
            }
            Node::Filter { set, child } => Node::Filter { set: set.clone(), child: Box::new(go(child, counter, active, t, plan, by_scope)) },
            Node::Domain(c) => Node::Domain(Box::new(go(c, counter, active, t, plan, by_scope))),
            Node::Context { grid, block, child } => Node::Context { grid: grid.clone(), block: block.clone(), child: Box::new(go(child, counter, active, t, plan, by_scope)) },
            Node::Extension { exts, child } => Node::Extension { exts: exts.clone(), child: Box::new(go(child, counter, active, t, plan, by_scope)) },
            Node::Sequence(cs) => Node::Sequence(cs.iter().map(|c| go(c, counter, &c.reaches(active), t, plan, by_scope)).collect()),
            Node::Set(cs) => Node::Set(cs.iter().map(|c| go(c, counter, &c.reaches(active), t, plan, by_scope)).collect()),
            Node::Leaf => Node::Leaf,
        }
    }
    fn wrap_scope(inner: Node, active: &BTreeSet<usize>, bufs: &[usize], t: &mut ScheduleTree, plan: &PromotionPlan) -> Node {
        let mut exts = Vec::new();
        let mut children = Vec::new();
        let push = |t: &mut ScheduleTree, e: ExtStmt, children: &mut Vec<Node>, exts: &mut Vec<usize>| {
            let id = t.exts.len();
            t.exts.push(e);
            exts.push(id);
            children.push(Node::Filter { set: FilterSet::Ext(vec![id]), child: Box::new(Node::Leaf) });
        };
        let any_shared = bufs.iter().any(|b| !plan.buffers[*b].private);
        for b in bufs {
            if plan.buffers[*b].copy_in {
                push(t, ExtStmt::Copy { buffer: *b, dir: CopyDir::In }, &mut children, &mut exts);
            }
        }
        if any_shared {
            push(t, ExtStmt::Sync, &mut children, &mut exts);
        }
        children.push(Node::Filter { set: FilterSet::Stmts(active.clone()), child: Box::new(inner) });
        let any_out = bufs.iter().any(|b| plan.buffers[*b].copy_out);
        if any_shared && bufs.iter().any(|b| plan.buffers[*b].copy_out && !plan.buffers[*b].private) {
            push(t, ExtStmt::Sync, &mut children, &mut exts);
        }
        if any_out {
            for b in bufs {
                if plan.buffers[*b].copy_out {
                    push(t, ExtStmt::Copy { buffer: *b, dir: CopyDir::Out }, &mut children, &mut exts);
                }
            }
        }
        if any_shared {
            push(t, ExtStmt::Sync, &mut children, &mut exts);
        }
        Node::Extension { exts, child: Box::new(Node::Sequence(children)) }
    }
    let mut counter = 0;
    let active = t.all_stmts();
    let root = go(&tree.root, &mut counter, &active, &mut t, plan, &by_scope);
    t.root = root;
    t
}
