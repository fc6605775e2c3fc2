//! Tree-to-tree transformations: canonical construction, fusion, tiling,
//! point-loop sinking, GPU mapping and unroll marking.

use std::collections::{BTreeMap, BTreeSet};

use super::options::{FusionStrategy, MAX_THREADS_PER_BLOCK};
use super::tree::{ExtStmt, FilterSet, MapTag, Member, Node, Residue, SchedFn, ScheduleTree};
use super::ScheduleError;
use crate::polyir::{cross_thread, refresh_band_flags, validate_schedule, DependenceGraph};
use crate::semantics::{InstantiatedDef, Subscript};

fn identity_members(stmt: usize, iters: &[usize]) -> Vec<Member> {
    iters.iter().map(|i| Member::new(BTreeMap::from([(stmt, SchedFn::Iter(*i))]))).collect()
}

fn band_or_leaf(members: Vec<Member>, child: Node) -> Node {
    if members.is_empty() {
        child
    } else {
        Node::band(members, child)
    }
}

/// Domain → Sequence of per-statement filters over identity bands; a single
/// statement gets Domain → Filter → Band.
pub fn canonical_tree(inst: &InstantiatedDef, g: &DependenceGraph) -> ScheduleTree {
    let clusters: Vec<Cluster> = (0..inst.stmts.len()).map(|s| Cluster::single(inst, s)).collect();
    build(inst, g, &clusters)
}

/// Statements fused on their outer members. `members[m][s]` is the iterator
/// of statement `s` scheduled at fused position `m`.
#[derive(Clone, Debug)]
struct Cluster {
    stmts: Vec<usize>,
    members: Vec<BTreeMap<usize, usize>>,
}

impl Cluster {
    fn single(inst: &InstantiatedDef, s: usize) -> Self {
        let n = inst.stmts[s].iters.len();
        Cluster { stmts: vec![s], members: (0..n).map(|i| BTreeMap::from([(s, i)])).collect() }
    }

    fn node(&self, inst: &InstantiatedDef) -> Node {
        if self.stmts.len() == 1 {
            let s = self.stmts[0];
            let order: Vec<usize> = self.members.iter().map(|m| m[&s]).collect();
            return band_or_leaf(identity_members(s, &order), Node::Leaf);
        }
        let fused: Vec<Member> = self
            .members
            .iter()
            .map(|m| Member::new(m.iter().map(|(s, i)| (*s, SchedFn::Iter(*i))).collect()))
            .collect();
        let branches = self
            .stmts
            .iter()
            .map(|s| {
                let used: BTreeSet<usize> = self.members.iter().map(|m| m[s]).collect();
                let rest: Vec<usize> = (0..inst.stmts[*s].iters.len()).filter(|i| !used.contains(i)).collect();
                Node::filter([*s], band_or_leaf(identity_members(*s, &rest), Node::Leaf))
            })
            .collect();
        band_or_leaf(fused, Node::Sequence(branches))
    }
}

fn build(inst: &InstantiatedDef, g: &DependenceGraph, clusters: &[Cluster]) -> ScheduleTree {
    let body = if clusters.len() == 1 {
        let c = &clusters[0];
        if c.stmts.len() == 1 {
            Node::filter([c.stmts[0]], c.node(inst))
        } else {
            c.node(inst)
        }
    } else {
        Node::Sequence(clusters.iter().map(|c| Node::filter(c.stmts.iter().copied(), c.node(inst))).collect())
    };
    let mut t = ScheduleTree::from_inst(inst, Node::Domain(Box::new(body)));
    refresh_band_flags(g, &mut t);
    t
}

/// Iterator of a subscript that is a bare iterator.
fn pure_iter(sub: &Subscript) -> Option<usize> {
    let f = sub.as_affine()?;
    if f.c != 0 {
        return None;
    }
    let mut nz = f.coeffs.iter().enumerate().filter(|(_, a)| **a != 0);
    match (nz.next(), nz.next()) {
        (Some((i, 1)), None) => Some(i),
        _ => None,
    }
}

/// For each fused member of `c`, the iterator of `t` matched to it by
/// shared-tensor subscripts (falling back to LHS positions).
fn correspondence(inst: &InstantiatedDef, c: &Cluster, t: usize) -> Vec<Option<usize>> {
    let mut map: Vec<Option<usize>> = vec![None; c.members.len()];
    let mut used = BTreeSet::new();
    let mut shared = false;
    let ts = &inst.stmts[t];
    for s in &c.stmts {
        for a in &inst.stmts[*s].accesses {
            for b in &ts.accesses {
                if a.tensor != b.tensor {
                    continue;
                }
                shared = true;
                for (sa, sb) in a.subs.iter().zip(&b.subs) {
                    if let (Some(is), Some(it)) = (pure_iter(sa), pure_iter(sb)) {
                        if let Some(m) = c.members.iter().position(|m| m.get(s) == Some(&is)) {
                            if map[m].is_none() && !used.contains(&it) {
                                map[m] = Some(it);
                                used.insert(it);
                            }
                        }
                    }
                }
            }
        }
    }
    if !shared {
        let s = c.stmts[0];
        let (la, lb) = (&inst.stmts[s].accesses[0], &ts.accesses[0]);
        for (sa, sb) in la.subs.iter().zip(&lb.subs) {
            if let (Some(is), Some(it)) = (pure_iter(sa), pure_iter(sb)) {
                if let Some(m) = c.members.iter().position(|m| m.get(&s) == Some(&is)) {
                    if map[m].is_none() && !used.contains(&it) {
                        map[m] = Some(it);
                        used.insert(it);
                    }
                }
            }
        }
    }
    map
}

fn leading_parallel(t: &ScheduleTree, cluster_index: usize, n_clusters: usize) -> usize {
    // The cluster's outermost band sits under Filter (several clusters) or
    // directly under Domain / Filter (one cluster).
    let mut n = &t.root;
    if let Node::Domain(c) = n {
        n = c;
    }
    if n_clusters > 1 {
        if let Node::Sequence(cs) = n {
            n = &cs[cluster_index];
        }
    }
    while let Node::Filter { child, .. } = n {
        n = child;
    }
    match n {
        Node::Band { members, .. } => members.iter().take_while(|m| m.parallel).count(),
        _ => 0,
    }
}

/// Greedy clustering of consecutive statements on outer dimensions.
pub fn fuse(inst: &InstantiatedDef, g: &DependenceGraph, strategy: FusionStrategy) -> ScheduleTree {
    let singles: Vec<Cluster> = (0..inst.stmts.len()).map(|s| Cluster::single(inst, s)).collect();
    if strategy == FusionStrategy::Min || singles.len() < 2 {
        return build(inst, g, &singles);
    }
    let mut clusters: Vec<Cluster> = vec![singles[0].clone()];
    for t in 1..inst.stmts.len() {
        let cur = clusters.last().unwrap().clone();
        let map = correspondence(inst, &cur, t);
        let depth = map.iter().take_while(|m| m.is_some()).count();
        let before = if strategy == FusionStrategy::PreserveThreeParallel {
            let mut probe = clusters.clone();
            probe.extend(singles[t..].iter().cloned());
            leading_parallel(&build(inst, g, &probe), clusters.len() - 1, probe.len())
        } else {
            0
        };
        let mut accepted = None;
        for k in (1..=depth).rev() {
            let mut cand = cur.clone();
            cand.members.truncate(k);
            for (m, it) in map.iter().take(k).enumerate() {
                cand.members[m].insert(t, it.unwrap());
            }
            cand.stmts.push(t);
            let mut probe = clusters[..clusters.len() - 1].to_vec();
            probe.push(cand.clone());
            probe.extend(singles[t + 1..].iter().cloned());
            let tree = build(inst, g, &probe);
            if validate_schedule(g, &tree).is_err() {
                continue;
            }
            if strategy == FusionStrategy::PreserveThreeParallel {
                let after = leading_parallel(&tree, clusters.len() - 1, probe.len());
                if after < before.min(3) {
                    continue;
                }
            }
            accepted = Some(cand);
            break;
        }
        match accepted {
            Some(c) => *clusters.last_mut().unwrap() = c,
            None => clusters.push(singles[t].clone()),
        }
    }
    build(inst, g, &clusters)
}

/// Split bands into tile and point bands. Sizes are consumed by the depth of
/// each band member along its root-to-leaf path.
pub fn tile(tree: &ScheduleTree, g: &DependenceGraph, sizes: &[i64]) -> Result<ScheduleTree, ScheduleError> {
    if let Some(t) = sizes.iter().find(|t| **t <= 0) {
        return Err(ScheduleError::InvalidTileSize(*t));
    }
    fn go(n: &Node, depth: usize, sizes: &[i64]) -> Node {
        match n {
            Node::Band { members, permutable, child } => {
                let k = members.len();
                let child = go(child, depth + k, sizes);
                let size_of = |m: usize| sizes.get(depth + m).copied();
                let tiled = |m: usize, mem: &Member| size_of(m).is_some() && mem.fns.values().all(|f| matches!(f, SchedFn::Iter(_)));
                if !*permutable || !members.iter().enumerate().any(|(m, mem)| tiled(m, mem)) {
                    return Node::Band { members: members.clone(), permutable: *permutable, child: Box::new(child) };
                }
                let mut tile_band = Vec::new();
                let mut point_band = Vec::new();
                for (m, mem) in members.iter().enumerate() {
                    if tiled(m, mem) {
                        let ts = size_of(m).unwrap();
                        let mut t = mem.clone();
                        t.fns = mem.fns.iter().map(|(s, f)| (*s, SchedFn::Tile(f.iter(), ts))).collect();
                        tile_band.push(t);
                        let mut p = mem.clone();
                        p.fns = mem.fns.iter().map(|(s, f)| (*s, SchedFn::Point(f.iter(), ts))).collect();
                        point_band.push(p);
                    } else {
                        point_band.push(mem.clone());
                    }
                }
                Node::band(tile_band, Node::band(point_band, child))
            }
            Node::Domain(c) => Node::Domain(Box::new(go(c, depth, sizes))),
            Node::Context { grid, block, child } => Node::Context { grid: grid.clone(), block: block.clone(), child: Box::new(go(child, depth, sizes)) },
            Node::Filter { set, child } => Node::Filter { set: set.clone(), child: Box::new(go(child, depth, sizes)) },
            Node::Extension { exts, child } => Node::Extension { exts: exts.clone(), child: Box::new(go(child, depth, sizes)) },
            Node::Sequence(cs) => Node::Sequence(cs.iter().map(|c| go(c, depth, sizes)).collect()),
            Node::Set(cs) => Node::Set(cs.iter().map(|c| go(c, depth, sizes)).collect()),
            Node::Leaf => Node::Leaf,
        }
    }
    let mut t = tree.clone();
    t.root = go(&tree.root, 0, sizes);
    refresh_band_flags(g, &mut t);
    Ok(t)
}

/// Insert a band restricted to the statements reaching each leaf.
fn insert_at_leaves(n: Node, active: &BTreeSet<usize>, members: &[Member]) -> Node {
    match n {
        Node::Leaf => {
            if active.is_empty() {
                return Node::Leaf;
            }
            let ms: Vec<Member> = members
                .iter()
                .map(|m| {
                    let mut r = m.clone();
                    r.fns.retain(|s, _| active.contains(s));
                    r
                })
                .collect();
            Node::band(ms, Node::Leaf)
        }
        Node::Filter { set: FilterSet::Stmts(s), child } => {
            let a = active.intersection(&s).copied().collect();
            Node::Filter { set: FilterSet::Stmts(s), child: Box::new(insert_at_leaves(*child, &a, members)) }
        }
        Node::Filter { set, child } if matches!(set, FilterSet::Ext(_)) => Node::Filter { set, child },
        Node::Filter { set, child } => Node::Filter { set, child: Box::new(insert_at_leaves(*child, active, members)) },
        Node::Band { members: ms, permutable, child } => Node::Band { members: ms, permutable, child: Box::new(insert_at_leaves(*child, active, members)) },
        Node::Sequence(cs) => Node::Sequence(cs.into_iter().map(|c| insert_at_leaves(c, active, members)).collect()),
        Node::Set(cs) => Node::Set(cs.into_iter().map(|c| insert_at_leaves(c, active, members)).collect()),
        Node::Extension { exts, child } => Node::Extension { exts, child: Box::new(insert_at_leaves(*child, active, members)) },
        Node::Context { grid, block, child } => Node::Context { grid, block, child: Box::new(insert_at_leaves(*child, active, members)) },
        Node::Domain(c) => Node::Domain(Box::new(insert_at_leaves(*c, active, members))),
    }
}

/// Move parallel point members of the band directly above a Sequence to the
/// innermost position of every branch. Non-parallel members stay in place.
pub fn sink_point_loops(tree: &ScheduleTree, g: &DependenceGraph) -> ScheduleTree {
    fn go(n: Node, active: &BTreeSet<usize>) -> Node {
        match n {
            Node::Band { members, permutable, child } if matches!(*child, Node::Sequence(_)) => {
                let (sink, keep): (Vec<Member>, Vec<Member>) =
                    members.into_iter().partition(|m| m.parallel && m.tag.is_none() && m.fns.values().all(|f| matches!(f, SchedFn::Point(..))));
                let seq = if sink.is_empty() { *child } else { insert_at_leaves(*child, active, &sink) };
                if keep.is_empty() {
                    seq
                } else {
                    Node::Band { members: keep, permutable, child: Box::new(seq) }
                }
            }
            Node::Band { members, permutable, child } => Node::Band { members, permutable, child: Box::new(go(*child, active)) },
            Node::Filter { set: FilterSet::Stmts(s), child } => {
                let a = active.intersection(&s).copied().collect();
                Node::Filter { set: FilterSet::Stmts(s), child: Box::new(go(*child, &a)) }
            }
            Node::Filter { set, child } => Node::Filter { set, child },
            Node::Domain(c) => Node::Domain(Box::new(go(*c, active))),
            Node::Context { grid, block, child } => Node::Context { grid, block, child: Box::new(go(*child, active)) },
            Node::Extension { exts, child } => Node::Extension { exts, child: Box::new(go(*child, active)) },
            other => other,
        }
    }
    let mut t = tree.clone();
    t.root = go(tree.root.clone(), &tree.all_stmts());
    refresh_band_flags(g, &mut t);
    t
}

fn residue_of(tag: MapTag, m: &Member, modulus: i64) -> Residue {
    let step = match m.fns.values().next() {
        Some(SchedFn::Tile(_, ts)) => *ts,
        _ => 1,
    };
    Residue { tag, fns: Some(m.fns.clone()), step, modulus }
}

/// Map the thread band of one branch. Returns the rewritten branch.
fn map_branch(n: Node, threads: &[i64]) -> Node {
    // Find the deepest band with an unmapped parallel member along the
    // single path; recurse into nested sequences.
    fn has_seq(n: &Node) -> bool {
        match n {
            Node::Sequence(_) | Node::Set(_) => true,
            _ => n.children().into_iter().any(has_seq),
        }
    }
    fn candidate_depth(n: &Node, depth: usize, best: &mut Option<usize>) {
        match n {
            Node::Band { members, permutable, child } => {
                if *permutable && members.iter().any(|m| m.parallel && m.tag.is_none()) {
                    *best = Some(depth);
                }
                candidate_depth(child, depth + 1, best);
            }
            Node::Filter { child, .. } | Node::Extension { child, .. } | Node::Context { child, .. } => candidate_depth(child, depth + 1, best),
            _ => {}
        }
    }
    fn rewrite(n: Node, depth: usize, target: usize, threads: &[i64]) -> Node {
        match n {
            Node::Band { mut members, permutable, child } if depth == target => {
                let mut residues = Vec::new();
                for m in members.iter_mut() {
                    if residues.len() < threads.len() && m.parallel && m.tag.is_none() {
                        let d = residues.len();
                        m.tag = Some(MapTag::Thread(d));
                        residues.push(residue_of(MapTag::Thread(d), m, threads[d]));
                    }
                }
                for d in residues.len()..threads.len() {
                    residues.push(Residue { tag: MapTag::Thread(d), fns: None, step: 1, modulus: threads[d] });
                }
                Node::Filter { set: FilterSet::Residues(residues), child: Box::new(Node::Band { members, permutable, child }) }
            }
            Node::Band { members, permutable, child } => Node::Band { members, permutable, child: Box::new(rewrite(*child, depth + 1, target, threads)) },
            Node::Filter { set, child } => Node::Filter { set, child: Box::new(rewrite(*child, depth + 1, target, threads)) },
            Node::Extension { exts, child } => Node::Extension { exts, child: Box::new(rewrite(*child, depth + 1, target, threads)) },
            Node::Context { grid, block, child } => Node::Context { grid, block, child: Box::new(rewrite(*child, depth + 1, target, threads)) },
            other => other,
        }
    }
    fn zero_filter(threads: &[i64], child: Node) -> Node {
        let residues = (0..threads.len()).map(|d| Residue { tag: MapTag::Thread(d), fns: None, step: 1, modulus: threads[d] }).collect();
        Node::Filter { set: FilterSet::Residues(residues), child: Box::new(child) }
    }
    if has_seq(&n) {
        // Descend to the sequence and map each branch separately.
        return match n {
            Node::Sequence(cs) => Node::Sequence(cs.into_iter().map(|c| map_branch(c, threads)).collect()),
            Node::Set(cs) => Node::Set(cs.into_iter().map(|c| map_branch(c, threads)).collect()),
            Node::Band { members, permutable, child } => Node::Band { members, permutable, child: Box::new(map_branch(*child, threads)) },
            Node::Filter { set, child } => Node::Filter { set, child: Box::new(map_branch(*child, threads)) },
            Node::Extension { exts, child } => Node::Extension { exts, child: Box::new(map_branch(*child, threads)) },
            other => other,
        };
    }
    if let Node::Filter { set: FilterSet::Ext(_), .. } = n {
        return n;
    }
    let mut best = None;
    candidate_depth(&n, 0, &mut best);
    match best {
        Some(d) => rewrite(n, 0, d, threads),
        None => match n {
            Node::Filter { set: FilterSet::Stmts(s), child } => Node::Filter { set: FilterSet::Stmts(s), child: Box::new(zero_filter(threads, *child)) },
            other => zero_filter(threads, other),
        },
    }
}

/// Insert sync filters between Sequence children linked by a dependence
/// whose instances may run on different threads.
fn insert_syncs(t: &mut ScheduleTree, g: &DependenceGraph) {
    fn collect(n: &Node, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if matches!(n, Node::Sequence(_)) {
            out.push(path.clone());
        }
        for (k, c) in n.children().into_iter().enumerate() {
            path.push(k);
            collect(c, path, out);
            path.pop();
        }
    }
    fn at<'a>(n: &'a mut Node, path: &[usize]) -> &'a mut Node {
        match path.split_first() {
            None => n,
            Some((k, rest)) => at(n.children_mut().into_iter().nth(*k).unwrap(), rest),
        }
    }
    let mut seqs = Vec::new();
    collect(&t.root, &mut Vec::new(), &mut seqs);
    // Deepest first so earlier paths stay valid while children are inserted.
    seqs.sort_by_key(|p| std::cmp::Reverse(p.len()));
    let all = t.all_stmts();
    for p in seqs {
        let cuts: Vec<usize> = {
            let Node::Sequence(cs) = at(&mut t.root.clone(), &p).clone() else { continue };
            let sets: Vec<Vec<usize>> = cs.iter().map(|c| c.reaches(&all).into_iter().collect()).collect();
            (0..cs.len().saturating_sub(1))
                .filter(|c| {
                    let before: Vec<usize> = sets[..=*c].concat();
                    let after: Vec<usize> = sets[c + 1..].concat();
                    cross_thread(g, t, &before, &after)
                })
                .collect()
        };
        if cuts.is_empty() {
            continue;
        }
        let mut ids = Vec::new();
        let node = at(&mut t.root, &p);
        let Node::Sequence(cs) = std::mem::replace(node, Node::Leaf) else { unreachable!() };
        let mut out = Vec::new();
        for (k, c) in cs.into_iter().enumerate() {
            out.push(c);
            if cuts.contains(&k) {
                let id = t.exts.len();
                t.exts.push(ExtStmt::Sync);
                ids.push(id);
                out.push(Node::Filter { set: FilterSet::Ext(vec![id]), child: Box::new(Node::Leaf) });
            }
        }
        *node = Node::Extension { exts: ids, child: Box::new(Node::Sequence(out)) };
    }
}

/// Map the outermost band to blocks and the innermost parallel band of each
/// branch to threads.
pub fn map_to_gpu(tree: &ScheduleTree, g: &DependenceGraph, grid: &[i64], threads: &[i64]) -> Result<ScheduleTree, ScheduleError> {
    if grid.is_empty() || threads.is_empty() || grid.iter().chain(threads).any(|x| *x < 1) || grid.len() > 3 || threads.len() > 3 {
        return Err(ScheduleError::InvalidOptions(format!("grid {grid:?} / block {threads:?} extents")));
    }
    let n_threads: i64 = threads.iter().product();
    if n_threads > MAX_THREADS_PER_BLOCK {
        return Err(ScheduleError::TooManyThreads(n_threads));
    }
    fn go(n: Node, grid: &[i64], threads: &[i64], used_grid: &mut Vec<i64>) -> Result<Node, ScheduleError> {
        match n {
            Node::Domain(c) => Ok(Node::Domain(Box::new(go(*c, grid, threads, used_grid)?))),
            Node::Filter { set: FilterSet::Stmts(s), child } => Ok(Node::Filter { set: FilterSet::Stmts(s), child: Box::new(go(*child, grid, threads, used_grid)?) }),
            Node::Band { mut members, permutable, child } => {
                let k = members.iter().take_while(|m| m.parallel).count().min(grid.len());
                if k == 0 {
                    return Err(ScheduleError::NoParallelOuterBand);
                }
                let mut residues = Vec::new();
                for (d, m) in members.iter_mut().take(k).enumerate() {
                    m.tag = Some(MapTag::Block(d));
                    residues.push(residue_of(MapTag::Block(d), m, grid[d]));
                    used_grid.push(grid[d]);
                }
                let child = map_branch(*child, threads);
                Ok(Node::Filter { set: FilterSet::Residues(residues), child: Box::new(Node::Band { members, permutable, child: Box::new(child) }) })
            }
            _ => Err(ScheduleError::NoParallelOuterBand),
        }
    }
    let mut used_grid = Vec::new();
    let root = go(tree.root.clone(), grid, threads, &mut used_grid)?;
    let Node::Domain(c) = root else { return Err(ScheduleError::NoParallelOuterBand) };
    let mut t = tree.clone();
    t.root = Node::Domain(Box::new(Node::Context { grid: used_grid, block: threads.to_vec(), child: c }));
    insert_syncs(&mut t, g);
    Ok(t)
}

/// Annotate leaf-ward band members for unrolling while the cumulative
/// unrolled iteration count stays within `factor`.
pub fn unroll_mark(tree: &ScheduleTree, factor: u32) -> ScheduleTree {
    let mut t = tree.clone();
    if factor <= 1 {
        return t;
    }
    let threads = t.context().map(|(_, b)| b).unwrap_or_default();
    let stmts = t.stmts.clone();
    let trip = |m: &Member| -> u64 {
        m.fns
            .iter()
            .map(|(s, f)| {
                let (lo, hi) = stmts[*s].bounds[f.iter()];
                let ext = (hi - lo).max(0);
                let n = match f {
                    SchedFn::Iter(_) => ext,
                    SchedFn::Tile(_, ts) => num_integer::Integer::div_floor(&(hi - 1), ts) - num_integer::Integer::div_floor(&lo, ts) + 1,
                    SchedFn::Point(_, ts) => ext.min(*ts),
                };
                let n = match m.tag {
                    Some(MapTag::Thread(d)) => num_integer::Integer::div_ceil(&n, &threads.get(d).copied().unwrap_or(1)),
                    _ => n,
                };
                n.max(1) as u64
            })
            .max()
            .unwrap_or(1)
    };
    // Returns (product of unrolled iterations below, marking stopped).
    fn mark(n: &mut Node, factor: u64, trip: &dyn Fn(&Member) -> u64) -> (u64, bool) {
        match n {
            Node::Leaf => (1, false),
            Node::Band { members, child, .. } => {
                let (mut p, mut stopped) = mark(child, factor, trip);
                for m in members.iter_mut().rev() {
                    if stopped || matches!(m.tag, Some(MapTag::Block(_))) {
                        stopped = true;
                        break;
                    }
                    let tr = trip(m);
                    if p * tr <= factor {
                        m.unroll = tr as u32;
                        p *= tr;
                    } else {
                        let mut u = 1;
                        while p * u * 2 <= factor && u * 2 < tr {
                            u *= 2;
                        }
                        if u >= 2 {
                            m.unroll = u as u32;
                        }
                        p *= u;
                        stopped = true;
                    }
                }
                (p, stopped)
            }
            Node::Filter { set: FilterSet::Ext(_), .. } => (1, false),
            other => {
                let mut p = 1;
                let mut stopped = false;
                for c in other.children_mut() {
                    let (q, s) = mark(c, factor, trip);
                    p = p.max(q);
                    stopped |= s;
                }
                (p, stopped)
            }
        }
    }
    mark(&mut t.root, factor as u64, &trip);
    t
}
