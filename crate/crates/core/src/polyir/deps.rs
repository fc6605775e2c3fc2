//! Iteration domains, access relations and dependences on concrete boxes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::system::{affine_text, for_each_box_point, Constraint, System};
use crate::semantics::{Affine, InstantiatedDef, StmtKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterationDomain {
    pub stmt: usize,
    pub name: String,
    pub iters: Vec<String>,
    pub bounds: Vec<(i64, i64)>,
}

impl IterationDomain {
    pub fn cardinality(&self) -> u64 {
        self.bounds.iter().map(|(l, h)| (h - l) as u64).product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccessRelation {
    pub stmt: usize,
    /// Position in the statement's access list.
    pub index: usize,
    pub tensor: usize,
    pub write: bool,
    /// `None` marks an indirect (may-access) dimension.
    pub subs: Vec<Option<Affine>>,
}

impl AccessRelation {
    pub fn is_exact(&self) -> bool {
        self.subs.iter().all(|s| s.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepKind {
    Flow,
    Anti,
    Output,
}

impl fmt::Display for DepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepKind::Flow => "flow",
            DepKind::Anti => "anti",
            DepKind::Output => "output",
        })
    }
}

/// Instances of `src` (first `n_src` variables) that must precede instances
/// of `dst` (remaining variables). The relation is the union of `pieces`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dependence {
    pub src: usize,
    pub dst: usize,
    pub kind: DepKind,
    pub src_access: usize,
    pub dst_access: usize,
    pub tensor: usize,
    pub n_src: usize,
    pub pieces: Vec<System>,
    pub exact: bool,
}

impl Dependence {
    pub fn contains(&self, x: &[i64], y: &[i64]) -> bool {
        let p: Vec<i64> = x.iter().chain(y).copied().collect();
        self.pieces.iter().any(|s| s.contains(&p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependenceGraph {
    pub domains: Vec<IterationDomain>,
    pub accesses: Vec<AccessRelation>,
    pub deps: Vec<Dependence>,
}

impl DependenceGraph {
    pub fn edges_between(&self, src: usize, dst: usize) -> impl Iterator<Item = &Dependence> {
        self.deps.iter().filter(move |d| d.src == src && d.dst == dst)
    }
}

pub fn build_domains(inst: &InstantiatedDef) -> Vec<IterationDomain> {
    inst.stmts
        .iter()
        .enumerate()
        .map(|(k, s)| IterationDomain {
            stmt: k,
            name: s.name.clone(),
            iters: s.iters.iter().map(|i| i.name.clone()).collect(),
            bounds: s.instance_box(),
        })
        .collect()
}

pub fn build_accesses(inst: &InstantiatedDef) -> Vec<AccessRelation> {
    let mut out = Vec::new();
    for (k, s) in inst.stmts.iter().enumerate() {
        for (i, a) in s.accesses.iter().enumerate() {
            out.push(AccessRelation {
                stmt: k,
                index: i,
                tensor: a.tensor,
                write: a.write,
                subs: a.subs.iter().map(|x| x.as_affine().cloned()).collect(),
            });
        }
    }
    out
}

fn primed(names: &[String]) -> Vec<String> {
    names.iter().map(|n| format!("{n}'")).collect()
}

/// Memory-based dependences under textual statement order and
/// lexicographic instance order within a statement.
pub fn compute_dependences(inst: &InstantiatedDef) -> DependenceGraph {
    let domains = build_domains(inst);
    let accesses = build_accesses(inst);
    let mut deps = Vec::new();
    for a in &accesses {
        for b in &accesses {
            if a.tensor != b.tensor || !(a.write || b.write) || a.stmt > b.stmt {
                continue;
            }
            let kind = match (a.write, b.write) {
                (true, false) => DepKind::Flow,
                (false, true) => DepKind::Anti,
                _ => DepKind::Output,
            };
            let (da, db) = (&domains[a.stmt], &domains[b.stmt]);
            let (n, m) = (da.iters.len(), db.iters.len());
            let mut names = da.iters.clone();
            names.extend(primed(&db.iters));
            let mut bounds = da.bounds.clone();
            bounds.extend(db.bounds.iter().copied());
            let mut base = System::new(names, bounds);
            for (sa, sb) in a.subs.iter().zip(&b.subs) {
                if let (Some(fa), Some(fb)) = (sa, sb) {
                    let mut coeffs = fa.coeffs.clone();
                    coeffs.extend(fb.coeffs.iter().map(|c| -c));
                    base.add(Constraint::eq(coeffs, fa.c - fb.c));
                }
            }
            let mut pieces = Vec::new();
            if a.stmt < b.stmt {
                pieces.push(base);
            } else {
                // x <lex y, one piece per leading position.
                for p in 0..n {
                    let mut s = base.clone();
                    for q in 0..=p {
                        let mut coeffs = vec![0; n + m];
                        coeffs[q] = -1;
                        coeffs[n + q] = 1;
                        s.add(if q < p { Constraint::eq(coeffs, 0) } else { Constraint::ge(coeffs, -1) });
                    }
                    pieces.push(s);
                }
            }
            pieces.retain(|s| !s.is_empty());
            if !pieces.is_empty() {
                deps.push(Dependence {
                    src: a.stmt,
                    dst: b.stmt,
                    kind,
                    src_access: a.index,
                    dst_access: b.index,
                    tensor: a.tensor,
                    n_src: n,
                    pieces,
                    exact: a.is_exact() && b.is_exact(),
                });
            }
        }
    }
    DependenceGraph { domains, accesses, deps }
}

/// Exact last-writer flow pairs of one (write access, read access) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowEdge {
    pub src: usize,
    pub dst: usize,
    pub src_access: usize,
    pub dst_access: usize,
    pub tensor: usize,
    pub pairs: Vec<(Vec<i64>, Vec<i64>)>,
}

/// Data-flow refinement: every read instance is linked only to the last
/// write of the same element that precedes it. Defined for programs without
/// indirect accesses; `None` otherwise.
pub fn dataflow(inst: &InstantiatedDef) -> Option<Vec<FlowEdge>> {
    if inst.has_indirect() {
        return None;
    }
    // element → writes in execution order (statement, instance, access).
    let mut writes: HashMap<(usize, Vec<i64>), Vec<(usize, Vec<i64>, usize)>> = HashMap::new();
    for (k, s) in inst.stmts.iter().enumerate() {
        for (ai, a) in s.accesses.iter().enumerate().filter(|(_, a)| a.write) {
            let subs: Vec<&Affine> = a.subs.iter().map(|x| x.as_affine().unwrap()).collect();
            for_each_box_point(&s.instance_box(), &mut |p| {
                let e: Vec<i64> = subs.iter().map(|f| f.eval(p)).collect();
                writes.entry((a.tensor, e)).or_default().push((k, p.to_vec(), ai));
                true
            });
        }
    }
    let mut edges: BTreeMap<(usize, usize, usize, usize), FlowEdge> = BTreeMap::new();
    for (k, s) in inst.stmts.iter().enumerate() {
        for (ai, a) in s.accesses.iter().enumerate().filter(|(_, a)| !a.write) {
            let subs: Vec<&Affine> = a.subs.iter().map(|x| x.as_affine().unwrap()).collect();
            for_each_box_point(&s.instance_box(), &mut |p| {
                let e: Vec<i64> = subs.iter().map(|f| f.eval(p)).collect();
                if let Some(ws) = writes.get(&(a.tensor, e)) {
                    // Writes are stored in execution order; find the last strictly earlier one.
                    let idx = ws.partition_point(|(ws_k, wp, _)| (*ws_k, wp.as_slice()) < (k, p));
                    if idx > 0 {
                        let (wk, wp, wa) = &ws[idx - 1];
                        edges
                            .entry((*wk, *wa, k, ai))
                            .or_insert_with(|| FlowEdge { src: *wk, dst: k, src_access: *wa, dst_access: ai, tensor: a.tensor, pairs: Vec::new() })
                            .pairs
                            .push((wp.clone(), p.to_vec()));
                    }
                }
                true
            });
        }
    }
    Some(edges.into_values().collect())
}

/// Named-relation text of a domain: `{ S0(i, j) : 0 <= i < 4 and 0 <= j < 8 }`.
pub fn domain_text(d: &IterationDomain) -> String {
    let cons: Vec<String> = d.iters.iter().zip(&d.bounds).map(|(n, (l, h))| format!("{l} <= {n} < {h}")).collect();
    format!("{{ {}({}) : {} }}", d.name, d.iters.join(", "), cons.join(" and "))
}

pub fn access_text(inst: &InstantiatedDef, d: &IterationDomain, a: &AccessRelation) -> String {
    let subs: Vec<String> = a
        .subs
        .iter()
        .map(|s| match s {
            Some(f) => affine_text(&f.coeffs, f.c, &d.iters),
            None => "?".to_string(),
        })
        .collect();
    format!("{{ {}({}) -> {}({}) }}", d.name, d.iters.join(", "), inst.tensors[a.tensor].name, subs.join(", "))
}

pub fn dependence_text(g: &DependenceGraph, d: &Dependence) -> String {
    let (a, b) = (&g.domains[d.src], &g.domains[d.dst]);
    let pieces: Vec<String> = d
        .pieces
        .iter()
        .map(|s| {
            s.cons
                .iter()
                .map(|c| format!("{} {} 0", affine_text(&c.coeffs, c.c, &s.names), if c.eq { "=" } else { ">=" }))
                .collect::<Vec<_>>()
                .join(" and ")
        })
        .collect();
    format!(
        "{} {{ {}({}) -> {}({}) : {} }}{}",
        d.kind,
        a.name,
        a.iters.join(", "),
        b.name,
        primed(&b.iters).join(", "),
        pieces.join(" or "),
        if d.exact { "" } else { " (may)" }
    )
}

/// Describe a set of flow pairs as a relation when each sink coordinate is a
/// constant or a source coordinate plus a constant and the description is
/// exact; otherwise list the pair count.
pub fn flow_text(inst: &InstantiatedDef, e: &FlowEdge) -> String {
    let (s, t) = (&inst.stmts[e.src], &inst.stmts[e.dst]);
    let src: Vec<String> = s.iters.iter().map(|i| i.name.clone()).collect();
    let dst: Vec<String> = primed(&t.iters.iter().map(|i| i.name.clone()).collect::<Vec<_>>());
    let head = format!("flow {{ {}({}) -> {}({})", s.name, src.join(", "), t.name, dst.join(", "));
    let mut conds = Vec::new();
    let mut determined = vec![false; dst.len()];
    for (q, name) in dst.iter().enumerate() {
        let v0 = e.pairs[0].1[q];
        if e.pairs.iter().all(|(_, y)| y[q] == v0) {
            conds.push(format!("{name} = {v0}"));
            determined[q] = true;
            continue;
        }
        for (p, sname) in src.iter().enumerate() {
            let off = e.pairs[0].1[q] - e.pairs[0].0[p];
            if e.pairs.iter().all(|(x, y)| y[q] - x[p] == off) {
                conds.push(match off {
                    0 => format!("{name} = {sname}"),
                    o if o > 0 => format!("{name} = {sname} + {o}"),
                    o => format!("{name} = {sname} - {}", -o),
                });
                determined[q] = true;
                break;
            }
        }
    }
    // The description is exact when it determines the sink from the source
    // and the pair count equals the source box cardinality.
    if determined.iter().all(|d| *d) && e.pairs.len() as u64 == s.cardinality() {
        format!("{head} : {} }}", conds.join(" and "))
    } else {
        format!("{head} }} ({} pairs)", e.pairs.len())
    }
}

/// Plain-text dump of domains, accesses and dependences.
pub fn dump(inst: &InstantiatedDef, g: &DependenceGraph) -> String {
    let mut out = String::new();
    out.push_str("domains:\n");
    for d in &g.domains {
        out.push_str(&format!("  {}\n", domain_text(d)));
    }
    out.push_str("accesses:\n");
    for a in &g.accesses {
        let d = &g.domains[a.stmt];
        out.push_str(&format!("  {} {}\n", if a.write { "write" } else { "read " }, access_text(inst, d, a)));
    }
    out.push_str("dependences:\n");
    for d in &g.deps {
        out.push_str(&format!("  {}\n", dependence_text(g, d)));
    }
    if let Some(flows) = dataflow(inst) {
        out.push_str("dataflow:\n");
        for e in &flows {
            out.push_str(&format!("  {}\n", flow_text(inst, e)));
        }
    }
    out
}

/// Whether a statement is a reduction update (its self-dependences are
/// reorderable under an associative operator).
pub fn is_reduction(inst: &InstantiatedDef, stmt: usize) -> bool {
    matches!(inst.stmts[stmt].kind, StmtKind::Reduce(_))
}
