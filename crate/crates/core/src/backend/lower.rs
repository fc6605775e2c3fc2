//! Lowering of a mapped schedule tree to kernel IR.

use std::collections::{BTreeMap, BTreeSet};

use num_integer::Integer;

use crate::promotion::{OffsetTerm, PromotionPlan};
use crate::schedule::{ExtStmt, FilterSet, MapTag, Member, Node, SchedFn, ScheduleTree};
use crate::semantics::InstantiatedDef;

use super::ir::{Cond, IExpr, KStmt, KernelIR, LoweredBuffer, BLOCK_VAR, FIRST_LOOP_VAR, THREAD_VAR};

struct Lowerer<'a> {
    inst: &'a InstantiatedDef,
    tree: &'a ScheduleTree,
    plan: &'a PromotionPlan,
    grid: Vec<i64>,
    block: Vec<i64>,
    names: Vec<String>,
    /// Loop variable and member for every band member on the current path.
    stack: Vec<(usize, Member)>,
    offsets: BTreeMap<usize, Vec<IExpr>>,
}

impl Lowerer<'_> {
    fn fresh(&mut self, hint: &str) -> usize {
        self.names.push(format!("{hint}{}", self.names.len() - FIRST_LOOP_VAR));
        self.names.len() - 1
    }

    fn extent(&self, tag: MapTag) -> i64 {
        match tag {
            MapTag::Block(d) => self.grid.get(d).copied().unwrap_or(1),
            MapTag::Thread(d) => self.block.get(d).copied().unwrap_or(1),
        }
    }

    fn tag_var(tag: MapTag) -> usize {
        match tag {
            MapTag::Block(d) => BLOCK_VAR + d,
            MapTag::Thread(d) => THREAD_VAR + d,
        }
    }

    /// Variable holding the tile value of iterator `i` of statement `s`.
    fn tile_var(&self, s: usize, i: usize) -> Option<usize> {
        self.stack.iter().rev().find(|(_, m)| matches!(m.fns.get(&s), Some(SchedFn::Tile(j, _)) if *j == i)).map(|(v, _)| *v)
    }

    fn member_bounds(&self, m: &Member, active: &BTreeSet<usize>) -> (IExpr, IExpr, i64) {
        let mut los = Vec::new();
        let mut his = Vec::new();
        let mut step = 1;
        for s in active {
            let Some(f) = m.fns.get(s) else { continue };
            let it = &self.inst.stmts[*s].iters[f.iter()];
            match *f {
                SchedFn::Iter(_) => {
                    los.push(IExpr::Const(it.lo));
                    his.push(IExpr::Const(it.hi));
                }
                SchedFn::Tile(_, ts) => {
                    los.push(IExpr::Const(ts * Integer::div_floor(&it.lo, &ts)));
                    his.push(IExpr::Const(it.hi));
                    step = ts;
                }
                SchedFn::Point(i, ts) => {
                    let t = IExpr::Var(self.tile_var(*s, i).expect("point member below its tile member"));
                    los.push(IExpr::max(vec![IExpr::Const(0), IExpr::sub(IExpr::Const(it.lo), t.clone())]));
                    his.push(IExpr::min(vec![IExpr::Const(ts), IExpr::sub(IExpr::Const(it.hi), t)]));
                }
            }
        }
        (IExpr::min(los), IExpr::max(his), step)
    }

    fn band(&mut self, members: &[Member], k: usize, child: &Node, active: &BTreeSet<usize>) -> Vec<KStmt> {
        if k == members.len() {
            let body = self.node(child, active);
            self.stack.truncate(self.stack.len() - members.len());
            return body;
        }
        let m = &members[k];
        let (lo, hi, base) = self.member_bounds(m, active);
        let var = self.fresh(match m.tag {
            Some(MapTag::Block(_)) => "bt",
            Some(MapTag::Thread(_)) => "tt",
            None => "c",
        });
        let (lo, step) = match m.tag {
            Some(tag) => {
                // floor(v / base) ≡ id (mod extent)
                let n = self.extent(tag);
                let q = IExpr::floor_div(lo, base);
                let q0 = IExpr::add(q.clone(), IExpr::modulo(IExpr::sub(IExpr::Var(Self::tag_var(tag)), q), n));
                (IExpr::mul(base, q0), base * n)
            }
            None => (lo, base),
        };
        self.stack.push((var, m.clone()));
        let body = self.band(members, k + 1, child, active);
        vec![KStmt::Loop { var, lo, hi, step, unroll: m.unroll.max(1), body }]
    }

    /// Offsets of a buffer in terms of the variables on the current stack.
    fn buffer_offsets(&mut self, b: usize) -> Vec<IExpr> {
        if let Some(o) = self.offsets.get(&b) {
            return o.clone();
        }
        let spec = &self.plan.buffers[b];
        let offs: Vec<IExpr> = spec
            .dims
            .iter()
            .map(|d| {
                let t = d.tile();
                let mut e = IExpr::Const(t.c);
                for (term, a) in &t.terms {
                    let v = match term {
                        OffsetTerm::Member(depth) => self.stack[*depth].0,
                        OffsetTerm::Thread(d) => THREAD_VAR + d,
                    };
                    e = IExpr::add(e, IExpr::mul(*a, IExpr::Var(v)));
                }
                e
            })
            .collect();
        self.offsets.insert(b, offs.clone());
        offs
    }

    fn leaf(&mut self, active: &BTreeSet<usize>) -> Vec<KStmt> {
        let mut out = Vec::new();
        for s in active {
            let st = &self.inst.stmts[*s];
            let mut iters = Vec::new();
            let mut conds = Vec::new();
            for (i, it) in st.iters.iter().enumerate() {
                let mut tile = None;
                let mut point = None;
                let mut plain = None;
                for (v, m) in &self.stack {
                    match m.fns.get(s) {
                        Some(SchedFn::Iter(j)) if *j == i => plain = Some(*v),
                        Some(SchedFn::Tile(j, _)) if *j == i => tile = Some(*v),
                        Some(SchedFn::Point(j, _)) if *j == i => point = Some(*v),
                        _ => {}
                    }
                }
                let e = match (plain, tile, point) {
                    (Some(v), _, _) => IExpr::Var(v),
                    (None, Some(t), Some(p)) => IExpr::add(IExpr::Var(t), IExpr::Var(p)),
                    _ => panic!("iterator {} of {} has no schedule member", it.name, st.name),
                };
                conds.push(Cond::Ge(e.clone(), IExpr::Const(it.lo)));
                conds.push(Cond::Lt(e.clone(), IExpr::Const(it.hi)));
                iters.push(e);
            }
            for k in 0..st.accesses.len() {
                if let Some(b) = self.plan.redirect.get(&(*s, k)) {
                    self.buffer_offsets(*b);
                }
            }
            let c = KStmt::Compute { stmt: *s, iters };
            out.push(if conds.is_empty() { c } else { KStmt::If { conds, body: vec![c] } });
        }
        out
    }

    fn node(&mut self, n: &Node, active: &BTreeSet<usize>) -> Vec<KStmt> {
        match n {
            Node::Domain(c) => self.node(c, active),
            Node::Context { child, .. } => self.node(child, active),
            Node::Extension { child, .. } => self.node(child, active),
            Node::Band { members, child, .. } => {
                if active.is_empty() {
                    return vec![];
                }
                self.band(members, 0, child, active)
            }
            Node::Filter { set: FilterSet::Stmts(s), child } => {
                let a: BTreeSet<usize> = active.intersection(s).copied().collect();
                if a.is_empty() {
                    return vec![];
                }
                self.node(child, &a)
            }
            Node::Filter { set: FilterSet::Ext(ids), .. } => ids
                .iter()
                .map(|id| match self.tree.exts[*id] {
                    ExtStmt::Sync => KStmt::Barrier,
                    ExtStmt::Copy { buffer, dir } => {
                        self.buffer_offsets(buffer);
                        KStmt::Copy { buffer, dir }
                    }
                })
                .collect(),
            Node::Filter { set: FilterSet::Residues(rs), child } => {
                let body = self.node(child, active);
                let conds: Vec<Cond> = rs
                    .iter()
                    .filter(|r| r.fns.is_none())
                    .map(|r| Cond::Eq(IExpr::Var(Self::tag_var(r.tag)), IExpr::Const(0)))
                    .collect();
                if conds.is_empty() || body.is_empty() {
                    body
                } else {
                    vec![KStmt::If { conds, body }]
                }
            }
            Node::Sequence(cs) | Node::Set(cs) => cs.iter().flat_map(|c| self.node(c, active)).collect(),
            Node::Leaf => self.leaf(active),
        }
    }
}

/// Lower a (mapped or unmapped) tree and its promotion plan.
pub fn lower(inst: &InstantiatedDef, tree: &ScheduleTree, plan: &PromotionPlan, unroll_copies: bool) -> KernelIR {
    let (grid, block) = tree.context().unwrap_or_else(|| (vec![1], vec![1]));
    let names = ["b0", "b1", "b2", "t0", "t1", "t2"].iter().map(|s| s.to_string()).collect();
    let mut l = Lowerer { inst, tree, plan, grid: grid.clone(), block: block.clone(), names, stack: Vec::new(), offsets: BTreeMap::new() };
    let body = l.node(&tree.root, &tree.all_stmts());
    let buffers = plan
        .buffers
        .iter()
        .enumerate()
        .map(|(k, spec)| LoweredBuffer { spec: spec.clone(), offsets: l.offsets.get(&k).cloned().unwrap_or_default() })
        .collect();
    KernelIR { name: inst.name.clone(), grid, block, var_names: l.names, buffers, redirect: plan.redirect.clone(), body, unroll_copies }
}
