//! Schedule tree nodes, instance ordering and text dumps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_integer::Integer;

use crate::polyir::for_each_box_point;
use crate::semantics::InstantiatedDef;

/// One statement's contribution to a band member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedFn {
    /// The iterator itself.
    Iter(usize),
    /// `ts * floor(i / ts)`.
    Tile(usize, i64),
    /// `i mod ts`.
    Point(usize, i64),
}

impl SchedFn {
    pub fn iter(self) -> usize {
        match self {
            SchedFn::Iter(i) | SchedFn::Tile(i, _) | SchedFn::Point(i, _) => i,
        }
    }

    pub fn eval(self, p: &[i64]) -> i64 {
        match self {
            SchedFn::Iter(i) => p[i],
            SchedFn::Tile(i, ts) => ts * Integer::div_floor(&p[i], &ts),
            SchedFn::Point(i, ts) => p[i].mod_floor(&ts),
        }
    }

    pub fn text(self, iters: &[String]) -> String {
        match self {
            SchedFn::Iter(i) => iters[i].clone(),
            SchedFn::Tile(i, ts) => format!("{ts}*floor({}/{ts})", iters[i]),
            SchedFn::Point(i, ts) => format!("{} mod {ts}", iters[i]),
        }
    }

    fn short(self, iters: &[String]) -> String {
        match self {
            SchedFn::Iter(i) => iters[i].clone(),
            SchedFn::Tile(i, ts) => format!("{}/{ts}", iters[i]),
            SchedFn::Point(i, ts) => format!("{}%{ts}", iters[i]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapTag {
    Block(usize),
    Thread(usize),
}

impl MapTag {
    pub fn name(self) -> &'static str {
        match self {
            MapTag::Block(0) => "b_x",
            MapTag::Block(1) => "b_y",
            MapTag::Block(_) => "b_z",
            MapTag::Thread(0) => "t_x",
            MapTag::Thread(1) => "t_y",
            MapTag::Thread(_) => "t_z",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Member {
    pub fns: BTreeMap<usize, SchedFn>,
    pub parallel: bool,
    pub tag: Option<MapTag>,
    /// Unroll factor annotation; 1 means not unrolled.
    pub unroll: u32,
}

impl Member {
    pub fn new(fns: BTreeMap<usize, SchedFn>) -> Self {
        Member { fns, parallel: false, tag: None, unroll: 1 }
    }
}

/// Residue constraint of a mapping filter: `value / step ≡ id (mod modulus)`
/// for the mapped member, or `id = 0` for a padded thread dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Residue {
    pub tag: MapTag,
    pub fns: Option<BTreeMap<usize, SchedFn>>,
    pub step: i64,
    pub modulus: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterSet {
    Stmts(BTreeSet<usize>),
    /// Statements injected by Extension nodes (copies, barriers).
    Ext(Vec<usize>),
    Residues(Vec<Residue>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopyDir {
    In,
    Out,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtStmt {
    Sync,
    Copy { buffer: usize, dir: CopyDir },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Domain(Box<Node>),
    Context { grid: Vec<i64>, block: Vec<i64>, child: Box<Node> },
    Band { members: Vec<Member>, permutable: bool, child: Box<Node> },
    Filter { set: FilterSet, child: Box<Node> },
    Sequence(Vec<Node>),
    Set(Vec<Node>),
    Extension { exts: Vec<usize>, child: Box<Node> },
    Leaf,
}

impl Node {
    pub fn band(members: Vec<Member>, child: Node) -> Node {
        Node::Band { members, permutable: true, child: Box::new(child) }
    }

    pub fn filter(stmts: impl IntoIterator<Item = usize>, child: Node) -> Node {
        Node::Filter { set: FilterSet::Stmts(stmts.into_iter().collect()), child: Box::new(child) }
    }

    pub fn children(&self) -> Vec<&Node> {
        match self {
            Node::Domain(c) => vec![c],
            Node::Context { child, .. } | Node::Band { child, .. } | Node::Filter { child, .. } | Node::Extension { child, .. } => vec![child],
            Node::Sequence(cs) | Node::Set(cs) => cs.iter().collect(),
            Node::Leaf => vec![],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Node> {
        match self {
            Node::Domain(c) => vec![c],
            Node::Context { child, .. } | Node::Band { child, .. } | Node::Filter { child, .. } | Node::Extension { child, .. } => vec![child],
            Node::Sequence(cs) | Node::Set(cs) => cs.iter_mut().collect(),
            Node::Leaf => vec![],
        }
    }

    /// Statements of `active` reaching this node's subtree.
    pub fn reaches(&self, active: &BTreeSet<usize>) -> BTreeSet<usize> {
        match self {
            Node::Filter { set: FilterSet::Stmts(s), child } => child.reaches(&active.intersection(s).copied().collect()),
            Node::Filter { set: FilterSet::Ext(_), .. } => BTreeSet::new(),
            Node::Leaf => active.clone(),
            _ => self.children().iter().flat_map(|c| c.reaches(active)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StmtInfo {
    pub name: String,
    pub iters: Vec<String>,
    pub bounds: Vec<(i64, i64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleTree {
    pub root: Node,
    pub stmts: Vec<StmtInfo>,
    pub exts: Vec<ExtStmt>,
}

/// One step of a statement's root-to-leaf path.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Member { node: usize, index: usize, f: SchedFn, tag: Option<MapTag> },
    Child { node: usize, index: usize, unordered: bool },
}

impl Step {
    pub fn node(&self) -> usize {
        match self {
            Step::Member { node, .. } | Step::Child { node, .. } => *node,
        }
    }
}

impl ScheduleTree {
    pub fn from_inst(inst: &InstantiatedDef, root: Node) -> Self {
        let stmts = inst
            .stmts
            .iter()
            .map(|s| StmtInfo { name: s.name.clone(), iters: s.iters.iter().map(|i| i.name.clone()).collect(), bounds: s.instance_box() })
            .collect();
        ScheduleTree { root, stmts, exts: Vec::new() }
    }

    pub fn all_stmts(&self) -> BTreeSet<usize> {
        (0..self.stmts.len()).collect()
    }

    /// Paths of every statement, with nodes numbered in pre-order.
    pub fn paths(&self) -> Vec<Vec<Step>> {
        let mut out = vec![Vec::new(); self.stmts.len()];
        let mut counter = 0;
        fn walk(n: &Node, active: &BTreeSet<usize>, path: &mut Vec<Step>, counter: &mut usize, out: &mut Vec<Vec<Step>>) {
            let id = *counter;
            *counter += 1;
            match n {
                Node::Leaf => {
                    for s in active {
                        out[*s] = path.clone();
                    }
                }
                Node::Band { members, child, .. } => {
                    // Paths diverge only at statement level; push per statement below.
                    let mut by_stmt: BTreeMap<usize, Vec<Step>> = BTreeMap::new();
                    for s in active {
                        let steps = members
                            .iter()
                            .enumerate()
                            .map(|(k, m)| Step::Member { node: id, index: k, f: m.fns[s], tag: m.tag })
                            .collect();
                        by_stmt.insert(*s, steps);
                    }
                    let mut sub = vec![Vec::new(); out.len()];
                    walk(child, active, &mut Vec::new(), counter, &mut sub);
                    for s in active {
                        let mut p = path.clone();
                        p.extend(by_stmt[s].iter().cloned());
                        p.extend(sub[*s].iter().cloned());
                        out[*s] = p;
                    }
                }
                Node::Filter { set: FilterSet::Stmts(f), child } => {
                    let a = active.intersection(f).copied().collect();
                    walk(child, &a, path, counter, out);
                }
                Node::Filter { set: FilterSet::Ext(_), child } => {
                    walk(child, &BTreeSet::new(), path, counter, out);
                }
                Node::Sequence(cs) | Node::Set(cs) => {
                    let unordered = matches!(n, Node::Set(_));
                    for (k, c) in cs.iter().enumerate() {
                        let a = c.reaches(active);
                        path.push(Step::Child { node: id, index: k, unordered });
                        walk(c, &a, path, counter, out);
                        path.pop();
                    }
                }
                _ => {
                    for c in n.children() {
                        walk(c, active, path, counter, out);
                    }
                }
            }
        }
        walk(&self.root, &self.all_stmts(), &mut Vec::new(), &mut counter, &mut out);
        out
    }

    /// Schedule key of one instance: band values and child positions.
    pub fn key(path: &[Step], p: &[i64]) -> Vec<i64> {
        path.iter()
            .map(|s| match s {
                Step::Member { f, .. } => f.eval(p),
                Step::Child { index, .. } => *index as i64,
            })
            .collect()
    }

    /// All instances in the order the tree executes them sequentially.
    pub fn instance_order(&self) -> Vec<(usize, Vec<i64>)> {
        let paths = self.paths();
        let mut all: Vec<(Vec<i64>, usize, Vec<i64>)> = Vec::new();
        for (s, info) in self.stmts.iter().enumerate() {
            for_each_box_point(&info.bounds, &mut |p| {
                all.push((Self::key(&paths[s], p), s, p.to_vec()));
                true
            });
        }
        all.sort();
        all.into_iter().map(|(_, s, p)| (s, p)).collect()
    }

    /// Outermost band below Domain, Context and filters.
    pub fn outer_band(&self) -> Option<&Node> {
        let mut n = &self.root;
        loop {
            match n {
                Node::Domain(c) => n = c,
                Node::Context { child, .. } | Node::Filter { child, .. } | Node::Extension { child, .. } => n = child,
                Node::Band { .. } => return Some(n),
                _ => return None,
            }
        }
    }

    pub fn is_mapped(&self) -> bool {
        fn has_ctx(n: &Node) -> bool {
            matches!(n, Node::Context { .. }) || n.children().into_iter().any(has_ctx)
        }
        has_ctx(&self.root)
    }

    /// Grid and block extents declared by the Context node.
    pub fn context(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        fn find(n: &Node) -> Option<(Vec<i64>, Vec<i64>)> {
            if let Node::Context { grid, block, .. } = n {
                return Some((grid.clone(), block.clone()));
            }
            n.children().into_iter().find_map(find)
        }
        find(&self.root)
    }

    /// Compact structural signature: node kinds, filters and per-statement
    /// band members.
    pub fn skeleton(&self) -> String {
        fn go(t: &ScheduleTree, n: &Node, active: &BTreeSet<usize>, out: &mut String) {
            match n {
                Node::Domain(c) => {
                    out.push_str("Domain(");
                    go(t, c, active, out);
                    out.push(')');
                }
                Node::Context { child, .. } => {
                    out.push_str("Context(");
                    go(t, child, active, out);
                    out.push(')');
                }
                Node::Band { members, child, .. } => {
                    let per: Vec<String> = active
                        .iter()
                        .map(|s| {
                            let m: Vec<String> = members.iter().map(|m| m.fns[s].short(&t.stmts[*s].iters)).collect();
                            format!("{}:{}", t.stmts[*s].name, m.join(","))
                        })
                        .collect();
                    let _ = write!(out, "Band[{}]", per.join(";"));
                    if !matches!(**child, Node::Leaf) {
                        out.push('(');
                        go(t, child, active, out);
                        out.push(')');
                    }
                }
                Node::Filter { set, child } => {
                    let a: BTreeSet<usize> = match set {
                        FilterSet::Stmts(s) => {
                            let names: Vec<&str> = s.iter().map(|k| t.stmts[*k].name.as_str()).collect();
                            let _ = write!(out, "Filter[{}]", names.join(","));
                            active.intersection(s).copied().collect()
                        }
                        FilterSet::Ext(e) => {
                            let _ = write!(out, "Ext[{}]", e.iter().map(|k| ext_name(&t.exts[*k])).collect::<Vec<_>>().join(","));
                            BTreeSet::new()
                        }
                        FilterSet::Residues(r) => {
                            let tags: Vec<&str> = r.iter().map(|x| x.tag.name()).collect();
                            let _ = write!(out, "Filter<{}>", tags.join(","));
                            active.clone()
                        }
                    };
                    if !matches!(**child, Node::Leaf) {
                        out.push('(');
                        go(t, child, &a, out);
                        out.push(')');
                    }
                }
                Node::Sequence(cs) | Node::Set(cs) => {
                    out.push_str(if matches!(n, Node::Sequence(_)) { "Sequence(" } else { "Set(" });
                    for (k, c) in cs.iter().enumerate() {
                        if k > 0 {
                            out.push(',');
                        }
                        go(t, c, active, out);
                    }
                    out.push(')');
                }
                Node::Extension { child, .. } => {
                    out.push_str("Extension(");
                    go(t, child, active, out);
                    out.push(')');
                }
                Node::Leaf => out.push_str("Leaf"),
            }
        }
        let mut s = String::new();
        go(self, &self.root, &self.all_stmts(), &mut s);
        s
    }

    /// Indented text dump, one node per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(&self.root, &self.all_stmts(), 0, &mut out);
        out
    }

    fn stmt_head(&self, s: usize) -> String {
        format!("{}({})", self.stmts[s].name, self.stmts[s].iters.join(", "))
    }

    fn dump_node(&self, n: &Node, active: &BTreeSet<usize>, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match n {
            Node::Domain(c) => {
                let _ = writeln!(out, "{pad}Domain");
                for s in active {
                    let info = &self.stmts[*s];
                    let cons: Vec<String> = info.iters.iter().zip(&info.bounds).map(|(n, (l, h))| format!("{l} <= {n} < {h}")).collect();
                    let _ = writeln!(out, "{pad}  {{ {} : {} }}", self.stmt_head(*s), cons.join(" and "));
                }
                self.dump_node(c, active, depth + 1, out);
            }
            Node::Context { grid, block, child } => {
                let mut cons = Vec::new();
                for (k, g) in grid.iter().enumerate() {
                    cons.push(format!("0 <= {} < {g}", MapTag::Block(k).name()));
                }
                for (k, b) in block.iter().enumerate() {
                    cons.push(format!("0 <= {} < {b}", MapTag::Thread(k).name()));
                }
                let _ = writeln!(out, "{pad}Context {{ {} }}", cons.join(" and "));
                self.dump_node(child, active, depth + 1, out);
            }
            Node::Band { members, permutable, child } => {
                let flags: Vec<String> = members
                    .iter()
                    .map(|m| {
                        let mut f = String::from(if m.parallel { "parallel" } else { "sequential" });
                        if let Some(t) = m.tag {
                            let _ = write!(f, " -> {}", t.name());
                        }
                        if m.unroll > 1 {
                            let _ = write!(f, " unroll {}", m.unroll);
                        }
                        f
                    })
                    .collect();
                let _ = writeln!(out, "{pad}Band{} [{}]", if *permutable { " permutable" } else { "" }, flags.join(", "));
                for s in active {
                    let fs: Vec<String> = members.iter().map(|m| m.fns[s].text(&self.stmts[*s].iters)).collect();
                    let _ = writeln!(out, "{pad}  {{ {} -> ({}) }}", self.stmt_head(*s), fs.join(", "));
                }
                self.dump_node(child, active, depth + 1, out);
            }
            Node::Filter { set, child } => match set {
                FilterSet::Stmts(s) => {
                    let names: Vec<String> = s.iter().map(|k| self.stmt_head(*k)).collect();
                    let _ = writeln!(out, "{pad}Filter {{ {} }}", names.join("; "));
                    self.dump_node(child, &active.intersection(s).copied().collect(), depth + 1, out);
                }
                FilterSet::Ext(e) => {
                    let names: Vec<String> = e.iter().map(|k| ext_name(&self.exts[*k])).collect();
                    let _ = writeln!(out, "{pad}Filter {{ {} }}", names.join("; "));
                    self.dump_node(child, &BTreeSet::new(), depth + 1, out);
                }
                FilterSet::Residues(rs) => {
                    let _ = writeln!(out, "{pad}Filter");
                    for s in active {
                        let conds: Vec<String> = rs
                            .iter()
                            .map(|r| match &r.fns {
                                Some(f) => {
                                    let v = f[s].text(&self.stmts[*s].iters);
                                    if r.step == 1 {
                                        format!("({v}) - {} = 0 mod {}", r.tag.name(), r.modulus)
                                    } else {
                                        format!("({v})/{} - {} = 0 mod {}", r.step, r.tag.name(), r.modulus)
                                    }
                                }
                                None => format!("{} = 0", r.tag.name()),
                            })
                            .collect();
                        let _ = writeln!(out, "{pad}  {{ {} | {} }}", self.stmt_head(*s), conds.join(" and "));
                    }
                    self.dump_node(child, active, depth + 1, out);
                }
            },
            Node::Sequence(cs) | Node::Set(cs) => {
                let _ = writeln!(out, "{pad}{}", if matches!(n, Node::Sequence(_)) { "Sequence" } else { "Set" });
                for c in cs {
                    self.dump_node(c, &c.reaches(active).union(&BTreeSet::new()).copied().collect::<BTreeSet<_>>().union(active).copied().collect(), depth + 1, out);
                }
            }
            Node::Extension { exts, child } => {
                let names: Vec<String> = exts.iter().map(|k| ext_name(&self.exts[*k])).collect();
                let _ = writeln!(out, "{pad}Extension {{ {} }}", names.join("; "));
                self.dump_node(child, active, depth + 1, out);
            }
            Node::Leaf => {}
        }
    }
}

pub fn ext_name(e: &ExtStmt) -> String {
    match e {
        ExtStmt::Sync => "sync".to_string(),
        ExtStmt::Copy { buffer, dir: CopyDir::In } => format!("copy_in_{buffer}"),
        ExtStmt::Copy { buffer, dir: CopyDir::Out } => format!("copy_out_{buffer}"),
    }
}
