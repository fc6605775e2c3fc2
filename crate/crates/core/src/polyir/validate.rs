//! Schedule validity and band properties, decided by constraint emptiness
//! over pairs of dependent instances.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_integer::Integer;

use super::deps::{DependenceGraph, Dependence};
use super::system::{Constraint, System};
use crate::schedule::{FilterSet, MapTag, Node, SchedFn, ScheduleTree, Step};

/// Sparse affine expression over the variables of a pair system.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Lin {
    terms: BTreeMap<usize, i64>,
    c: i64,
}

impl Lin {
    fn var(v: usize, a: i64) -> Lin {
        let mut terms = BTreeMap::new();
        if a != 0 {
            terms.insert(v, a);
        }
        Lin { terms, c: 0 }
    }

    fn constant(c: i64) -> Lin {
        Lin { terms: BTreeMap::new(), c }
    }

    fn plus(&self, o: &Lin, s: i64) -> Lin {
        let mut r = self.clone();
        for (v, a) in &o.terms {
            let e = r.terms.entry(*v).or_insert(0);
            *e += s * a;
            if *e == 0 {
                r.terms.remove(v);
            }
        }
        r.c += s * o.c;
        r
    }

    fn minus(&self, o: &Lin) -> Lin {
        self.plus(o, -1)
    }

    fn shifted(&self, k: i64) -> Lin {
        let mut r = self.clone();
        r.c += k;
        r
    }

    fn neg(&self) -> Lin {
        Lin::constant(0).plus(self, -1)
    }
}

/// One dependence piece extended with auxiliary floor-division variables.
pub(crate) struct PairSystem {
    sys: System,
    n_src: usize,
    n_dst: usize,
    divs: HashMap<(Lin, i64), usize>,
}

enum Cond {
    Ge(Lin),
    Eq(Lin),
}

impl PairSystem {
    fn new(piece: &System, n_src: usize) -> Self {
        let n_dst = piece.nvars() - n_src;
        PairSystem { sys: piece.clone(), n_src, n_dst, divs: HashMap::new() }
    }

    fn dense(&self, e: &Lin) -> Vec<i64> {
        let mut v = vec![0; self.sys.nvars()];
        for (k, a) in &e.terms {
            v[*k] = *a;
        }
        v
    }

    fn range(&self, e: &Lin) -> (i64, i64) {
        let (mut lo, mut hi) = (e.c, e.c);
        for (v, a) in &e.terms {
            let (l, h) = self.sys.bounds[*v];
            let (x, y) = (a * l, a * (h - 1));
            lo += x.min(y);
            hi += x.max(y);
        }
        (lo, hi)
    }

    /// Variable equal to `floor(e / d)`.
    fn div(&mut self, e: &Lin, d: i64) -> usize {
        if let Some(v) = self.divs.get(&(e.clone(), d)) {
            return *v;
        }
        let (lo, hi) = self.range(e);
        let w = self.sys.add_var(format!("w{}", self.divs.len()), Integer::div_floor(&lo, &d), Integer::div_floor(&hi, &d) + 1);
        // e - d*w >= 0 and d*w + d - 1 - e >= 0.
        let r = e.minus(&Lin::var(w, d));
        let c1 = self.dense(&r);
        self.sys.add(Constraint::ge(c1, r.c));
        let r2 = r.neg().shifted(d - 1);
        let c2 = self.dense(&r2);
        self.sys.add(Constraint::ge(c2, r2.c));
        self.divs.insert((e.clone(), d), w);
        w
    }

    fn var(&self, dst: bool, i: usize) -> usize {
        if dst {
            self.n_src + i
        } else {
            i
        }
    }

    fn value(&mut self, dst: bool, f: SchedFn) -> Lin {
        match f {
            SchedFn::Iter(i) => Lin::var(self.var(dst, i), 1),
            SchedFn::Tile(i, ts) => {
                let x = Lin::var(self.var(dst, i), 1);
                let w = self.div(&x, ts);
                Lin::var(w, ts)
            }
            SchedFn::Point(i, ts) => {
                let x = Lin::var(self.var(dst, i), 1);
                let w = self.div(&x, ts);
                x.minus(&Lin::var(w, ts))
            }
        }
    }

    /// `(e / step) mod m` as an expression.
    fn residue(&mut self, e: &Lin, step: i64, m: i64) -> Lin {
        let q = if step == 1 { e.clone() } else { Lin::var(self.div(e, step), 1) };
        let w = self.div(&q, m);
        q.minus(&Lin::var(w, m))
    }

    fn solve(&self, conds: &[Cond]) -> Option<(Vec<i64>, Vec<i64>)> {
        let mut s = self.sys.clone();
        for c in conds {
            match c {
                Cond::Ge(e) => s.add(Constraint::ge(self.dense(e), e.c)),
                Cond::Eq(e) => s.add(Constraint::eq(self.dense(e), e.c)),
            }
        }
        let w = s.witness()?;
        Some((w[..self.n_src].to_vec(), w[self.n_src..self.n_src + self.n_dst].to_vec()))
    }

    fn differs(&self, base: &[Cond], e: &Lin) -> Option<(Vec<i64>, Vec<i64>)> {
        for side in [e.shifted(-1), e.neg().shifted(-1)] {
            let mut conds: Vec<Cond> = base.iter().map(Cond::clone_of).collect();
            conds.push(Cond::Ge(side));
            if let Some(w) = self.solve(&conds) {
                return Some(w);
            }
        }
        None
    }
}

impl Cond {
    fn clone_of(&self) -> Cond {
        match self {
            Cond::Ge(e) => Cond::Ge(e.clone()),
            Cond::Eq(e) => Cond::Eq(e.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// The sink may run before the source.
    Order,
    /// Dependent instances may be assigned to different blocks.
    CrossBlock,
    /// Dependent instances of different threads are not separated by a barrier.
    CrossThread,
    /// Dependent instances are left unordered (Set children or equal keys).
    Unordered,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub dep: usize,
    pub src: usize,
    pub dst: usize,
    pub kind: ViolationKind,
    pub witness: Option<(Vec<i64>, Vec<i64>)>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} on dependence {} (S{} -> S{})", self.kind, self.dep, self.src, self.dst)?;
        if let Some((x, y)) = &self.witness {
            write!(f, " witness {x:?} -> {y:?}")?;
        }
        Ok(())
    }
}

/// Sync children of every Sequence node, by pre-order node id.
fn sync_children(tree: &ScheduleTree) -> HashMap<usize, Vec<bool>> {
    let mut out = HashMap::new();
    let mut counter = 0;
    fn walk(t: &ScheduleTree, n: &Node, counter: &mut usize, out: &mut HashMap<usize, Vec<bool>>) {
        let id = *counter;
        *counter += 1;
        if let Node::Sequence(cs) = n {
            let flags = cs
                .iter()
                .map(|c| match c {
                    Node::Filter { set: FilterSet::Ext(e), .. } => e.iter().any(|k| matches!(t.exts[*k], crate::schedule::ExtStmt::Sync)),
                    _ => false,
                })
                .collect();
            out.insert(id, flags);
        }
        for c in n.children() {
            walk(t, c, counter, out);
        }
    }
    walk(tree, &tree.root, &mut counter, &mut out);
    out
}

fn thread_ids(ps: &mut PairSystem, dst: bool, path: &[Step], block: &[i64]) -> Vec<Lin> {
    let mut ids = vec![Lin::constant(0); block.len()];
    for s in path {
        if let Step::Member { f, tag: Some(MapTag::Thread(d)), .. } = s {
            if *d < block.len() {
                let v = ps.value(dst, *f);
                ids[*d] = ps.residue(&v, 1, block[*d]);
            }
        }
    }
    ids
}

fn check_piece(
    tree: &ScheduleTree,
    d: &Dependence,
    dep_index: usize,
    piece: &System,
    paths: &[Vec<Step>],
    syncs: &HashMap<usize, Vec<bool>>,
    block: Option<&[i64]>,
    out: &mut Vec<Violation>,
) {
    let (ps_path, pt_path) = (&paths[d.src], &paths[d.dst]);
    let mut ps = PairSystem::new(piece, d.n_src);
    let violation = |kind, witness| Violation { dep: dep_index, src: d.src, dst: d.dst, kind, witness };
    let mut eqs: Vec<Cond> = Vec::new();
    let mut separated_by_sync = false;
    let mut k = 0;
    loop {
        match (ps_path.get(k), pt_path.get(k)) {
            (Some(Step::Member { node: a, f: fs, tag, .. }), Some(Step::Member { node: b, f: ft, .. })) if a == b => {
                let vs = ps.value(false, *fs);
                let vt = ps.value(true, *ft);
                let diff = vt.minus(&vs);
                if let Some(MapTag::Block(_)) = tag {
                    if let Some(w) = ps.differs(&[], &diff) {
                        out.push(violation(ViolationKind::CrossBlock, Some(w)));
                        return;
                    }
                }
                let mut conds: Vec<Cond> = eqs.iter().map(Cond::clone_of).collect();
                conds.push(Cond::Ge(diff.neg().shifted(-1)));
                if let Some(w) = ps.solve(&conds) {
                    out.push(violation(ViolationKind::Order, Some(w)));
                    return;
                }
                eqs.push(Cond::Eq(diff));
            }
            (Some(Step::Child { node: a, index: cs, unordered }), Some(Step::Child { node: b, index: ct, .. })) if a == b => {
                if cs != ct {
                    if let Some(w) = ps.solve(&eqs) {
                        if *unordered {
                            out.push(violation(ViolationKind::Unordered, Some(w)));
                            return;
                        }
                        if cs > ct {
                            out.push(violation(ViolationKind::Order, Some(w)));
                            return;
                        }
                    }
                    if let Some(flags) = syncs.get(a) {
                        separated_by_sync = flags[cs + 1..*ct].iter().any(|f| *f);
                    }
                    break;
                }
            }
            (None, None) => {
                if let Some(w) = ps.solve(&eqs) {
                    out.push(violation(ViolationKind::Unordered, Some(w)));
                    return;
                }
                break;
            }
            _ => break,
        }
        k += 1;
    }
    if let Some(block) = block {
        if !separated_by_sync {
            let ts = thread_ids(&mut ps, false, ps_path, block);
            let tt = thread_ids(&mut ps, true, pt_path, block);
            for (a, b) in ts.iter().zip(&tt) {
                if let Some(w) = ps.differs(&[], &b.minus(a)) {
                    out.push(violation(ViolationKind::CrossThread, Some(w)));
                    return;
                }
            }
        }
    }
    let _ = tree;
}

/// Check that every dependent instance pair keeps its order under the tree.
/// On mapped trees also check block and thread assignments.
pub fn validate_schedule(g: &DependenceGraph, tree: &ScheduleTree) -> Result<(), Vec<Violation>> {
    let paths = tree.paths();
    let syncs = sync_children(tree);
    let ctx = tree.context();
    let block = ctx.as_ref().map(|(_, b)| b.as_slice());
    let mut out = Vec::new();
    for (di, d) in g.deps.iter().enumerate() {
        for piece in &d.pieces {
            let before = out.len();
            check_piece(tree, d, di, piece, &paths, &syncs, block, &mut out);
            if out.len() > before {
                break;
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Whether some dependence between instances reaching a band node may have
/// different thread ids; used to decide barrier placement.
pub fn cross_thread(g: &DependenceGraph, tree: &ScheduleTree, src_stmts: &[usize], dst_stmts: &[usize]) -> bool {
    let paths = tree.paths();
    let Some((_, block)) = tree.context() else { return true };
    for d in &g.deps {
        let fwd = src_stmts.contains(&d.src) && dst_stmts.contains(&d.dst);
        if !fwd {
            continue;
        }
        for piece in &d.pieces {
            let mut ps = PairSystem::new(piece, d.n_src);
            let ts = thread_ids(&mut ps, false, &paths[d.src], &block);
            let tt = thread_ids(&mut ps, true, &paths[d.dst], &block);
            for (a, b) in ts.iter().zip(&tt) {
                if ps.differs(&[], &b.minus(a)).is_some() {
                    return true;
                }
            }
        }
    }
    false
}

/// Position of (band node, member) in a path.
fn member_pos(path: &[Step], node: usize, member: usize) -> Option<usize> {
    path.iter().position(|s| matches!(s, Step::Member { node: n, index, .. } if *n == node && *index == member))
}

/// Parallel flag per member and permutability of one band node, from the
/// dependences among statements reaching it.
pub fn band_properties(g: &DependenceGraph, tree: &ScheduleTree, node: usize, n_members: usize) -> (Vec<bool>, bool) {
    let paths = tree.paths();
    let mut parallel = vec![true; n_members];
    let mut permutable = true;
    for d in &g.deps {
        let (ps_path, pt_path) = (&paths[d.src], &paths[d.dst]);
        let (Some(s0), Some(t0)) = (member_pos(ps_path, node, 0), member_pos(pt_path, node, 0)) else { continue };
        debug_assert_eq!(s0, t0);
        for piece in &d.pieces {
            let mut ps = PairSystem::new(piece, d.n_src);
            // Equal values on every member above the band.
            let mut outer = Vec::new();
            for k in 0..s0 {
                if let (Step::Member { f: fs, .. }, Step::Member { f: ft, .. }) = (&ps_path[k], &pt_path[k]) {
                    let diff = ps.value(true, *ft).minus(&ps.value(false, *fs));
                    outer.push(Cond::Eq(diff));
                }
            }
            let mut eqs: Vec<Cond> = outer.iter().map(Cond::clone_of).collect();
            for m in 0..n_members {
                let (Step::Member { f: fs, .. }, Step::Member { f: ft, .. }) = (&ps_path[s0 + m], &pt_path[s0 + m]) else { unreachable!() };
                let diff = ps.value(true, *ft).minus(&ps.value(false, *fs));
                if parallel[m] && ps.differs(&eqs, &diff).is_some() {
                    parallel[m] = false;
                }
                if permutable {
                    let mut conds: Vec<Cond> = outer.iter().map(Cond::clone_of).collect();
                    conds.push(Cond::Ge(diff.neg().shifted(-1)));
                    if ps.solve(&conds).is_some() {
                        permutable = false;
                    }
                }
                eqs.push(Cond::Eq(diff));
            }
        }
    }
    (parallel, permutable)
}

/// Recompute parallel and permutable flags of every band in the tree.
pub fn refresh_band_flags(g: &DependenceGraph, tree: &mut ScheduleTree) {
    let mut bands = Vec::new();
    let mut counter = 0;
    fn collect(n: &Node, counter: &mut usize, out: &mut Vec<(usize, usize)>) {
        let id = *counter;
        *counter += 1;
        if let Node::Band { members, .. } = n {
            out.push((id, members.len()));
        }
        for c in n.children() {
            collect(c, counter, out);
        }
    }
    collect(&tree.root, &mut counter, &mut bands);
    let props: HashMap<usize, (Vec<bool>, bool)> = bands.iter().map(|(id, n)| (*id, band_properties(g, tree, *id, *n))).collect();
    let mut counter = 0;
    fn apply(n: &mut Node, counter: &mut usize, props: &HashMap<usize, (Vec<bool>, bool)>) {
        let id = *counter;
        *counter += 1;
        if let Node::Band { members, permutable, .. } = n {
            let (par, perm) = &props[&id];
            for (m, p) in members.iter_mut().zip(par) {
                m.parallel = *p;
            }
            *permutable = *perm;
        }
        for c in n.children_mut() {
            apply(c, counter, props);
        }
    }
    apply(&mut tree.root, &mut counter, &props);
}
