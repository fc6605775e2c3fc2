//! Round-based range inference over symbolic sizes.

use std::collections::{BTreeMap, BTreeSet};

use super::sym::Sym;
use super::SemanticError;
use crate::frontend::{BinaryOp, CheckedDef, Expr, NameKind, Number, Span, UnaryOp};

/// A subscript `offset + Σ coeff·iter`, coefficients possibly symbolic
/// (strided convolutions multiply iterators by integer scalar parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct SymAffine {
    pub coeffs: BTreeMap<String, Sym>,
    pub offset: Sym,
}

impl SymAffine {
    fn constant(s: Sym) -> Self {
        SymAffine { coeffs: BTreeMap::new(), offset: s }
    }

    fn iter(name: &str) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(name.to_string(), Sym::constant(1));
        SymAffine { coeffs, offset: Sym::constant(0) }
    }

    fn add(mut self, o: SymAffine) -> Self {
        for (k, v) in o.coeffs {
            let e = self.coeffs.remove(&k).unwrap_or_default().add(&v);
            if e.as_const() != Some(0) {
                self.coeffs.insert(k, e);
            }
        }
        self.offset = self.offset.add(&o.offset);
        self
    }

    fn scale(self, k: &Sym) -> Self {
        SymAffine {
            coeffs: self.coeffs.into_iter().map(|(n, c)| (n, c.mul(k))).filter(|(_, c)| c.as_const() != Some(0)).collect(),
            offset: self.offset.mul(k),
        }
    }

    fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Subscript of one tensor dimension as seen by inference.
#[derive(Clone, Debug, PartialEq)]
pub enum SymSubscript {
    Affine(SymAffine),
    /// Contains a nested tensor access.
    Indirect,
}

/// One textual tensor access of a statement, LHS included.
#[derive(Clone, Debug)]
pub struct SymAccess {
    pub tensor: String,
    pub subs: Vec<SymSubscript>,
    pub span: Span,
    pub is_lhs: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRange {
    pub name: String,
    pub lo: Sym,
    pub hi: Sym,
    /// Appears only on the right-hand side.
    pub rhs_only: bool,
    pub from_where: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StmtRanges {
    pub iters: Vec<IterRange>,
    /// Intervals intersected for one iterator whose nesting could not be decided
    /// symbolically; re-checked once sizes are bound.
    pub undecided: Vec<(String, Vec<(Sym, Sym)>)>,
}

impl StmtRanges {
    pub fn range(&self, name: &str) -> Option<&IterRange> {
        self.iters.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferredRanges {
    pub stmts: Vec<StmtRanges>,
    /// Extents of every tensor: inputs from their declaration, written tensors
    /// from the hull of their writes.
    pub shapes: BTreeMap<String, Vec<Sym>>,
    /// Integer scalar parameters used in subscripts; they must be bound like sizes.
    pub index_scalars: BTreeSet<String>,
}

fn stmt_location(c: &CheckedDef, s: usize) -> Span {
    c.def.stmts[s].span
}

/// Convert a subscript expression.
pub fn sym_subscript(c: &CheckedDef, e: &Expr, stmt: usize, scalars: &mut BTreeSet<String>) -> Result<SymSubscript, SemanticError> {
    let mut has_access = false;
    e.walk(&mut |x| {
        if let Expr::Call { func, .. } = x {
            if c.tensor_index(&func.name).is_some() {
                has_access = true;
            }
        }
    });
    if has_access {
        return Ok(SymSubscript::Indirect);
    }
    sym_affine(c, e, stmt, scalars).map(SymSubscript::Affine)
}

fn sym_affine(c: &CheckedDef, e: &Expr, stmt: usize, scalars: &mut BTreeSet<String>) -> Result<SymAffine, SemanticError> {
    let non_affine = || SemanticError::NonAffineSubscript { stmt, span: e.span() };
    match e {
        Expr::Num(Number::Int(v), _) => Ok(SymAffine::constant(Sym::constant(*v))),
        Expr::Num(Number::Float(_), _) => Err(non_affine()),
        Expr::Ident(id) => match c.classify(&id.name) {
            NameKind::Iterator => Ok(SymAffine::iter(&id.name)),
            NameKind::Size => Ok(SymAffine::constant(Sym::var(&id.name))),
            NameKind::Scalar(ty) if ty.is_integer() => {
                scalars.insert(id.name.clone());
                Ok(SymAffine::constant(Sym::var(&id.name)))
            }
            _ => Err(non_affine()),
        },
        Expr::DimSize { tensor, dim } => {
            let p = c.def.param(&tensor.name).ok_or_else(non_affine)?;
            let d = p.dims.as_ref().and_then(|d| d.get(*dim)).ok_or_else(non_affine)?;
            Ok(SymAffine::constant(Sym::var(&d.name)))
        }
        Expr::Unary { op: UnaryOp::Neg, operand, .. } => Ok(sym_affine(c, operand, stmt, scalars)?.scale(&Sym::constant(-1))),
        Expr::Binary { op, lhs, rhs, .. } => {
            let a = sym_affine(c, lhs, stmt, scalars)?;
            let b = sym_affine(c, rhs, stmt, scalars)?;
            match op {
                BinaryOp::Add => Ok(a.add(b)),
                BinaryOp::Sub => Ok(a.add(b.scale(&Sym::constant(-1)))),
                BinaryOp::Mul if b.is_constant() => Ok(a.scale(&b.offset)),
                BinaryOp::Mul if a.is_constant() => Ok(b.scale(&a.offset)),
                BinaryOp::Div if a.is_constant() && b.is_constant() => match b.offset.as_const() {
                    Some(d) if d > 0 => Ok(SymAffine::constant(a.offset.floor_div(&b.offset))),
                    Some(_) => Err(non_affine()),
                    None => Ok(SymAffine::constant(a.offset.floor_div(&b.offset))),
                },
                _ => Err(non_affine()),
            }
        }
        _ => Err(non_affine()),
    }
}

/// Every tensor access of statement `s`, LHS first, then RHS in pre-order.
pub fn statement_accesses(c: &CheckedDef, s: usize, scalars: &mut BTreeSet<String>) -> Result<Vec<SymAccess>, SemanticError> {
    let st = &c.def.stmts[s];
    let mut out = vec![SymAccess {
        tensor: st.lhs.name.clone(),
        subs: st.lhs_indices.iter().map(|i| SymSubscript::Affine(SymAffine::iter(&i.name))).collect(),
        span: st.lhs.span,
        is_lhs: true,
    }];
    let mut calls = Vec::new();
    st.rhs.walk(&mut |x| {
        if let Expr::Call { func, args } = x {
            if c.tensor_index(&func.name).is_some() {
                calls.push((func, args));
            }
        }
    });
    for (func, args) in calls {
        let subs = args.iter().map(|a| sym_subscript(c, a, s, scalars)).collect::<Result<Vec<_>, _>>()?;
        out.push(SymAccess { tensor: func.name.clone(), subs, span: func.span, is_lhs: false });
    }
    Ok(out)
}

fn where_bound(c: &CheckedDef, e: &Expr, s: usize, scalars: &mut BTreeSet<String>) -> Result<Sym, SemanticError> {
    let a = sym_affine(c, e, s, scalars)?;
    if !a.is_constant() {
        return Err(SemanticError::NonAffineSubscript { stmt: s, span: e.span() });
    }
    Ok(a.offset)
}

/// Sign of a coefficient: constants, or products of positive symbols.
fn sign(c: &Sym) -> Option<i64> {
    if let Some(v) = c.as_const() {
        return Some(v.signum());
    }
    if c.is_provably_positive() {
        return Some(1);
    }
    if c.neg().is_provably_positive() {
        return Some(-1);
    }
    None
}

type Ranges = BTreeMap<String, (Sym, Sym)>;

/// The maximal interval for the single unresolved iterator `x` of `sub`
/// keeping `0 <= sub < extent` for every value of the resolved iterators.
fn solve(sub: &SymAffine, x: &str, extent: &Sym, resolved: &Ranges, stmt: usize, span: Span) -> Result<(Sym, Sym), SemanticError> {
    let err = || SemanticError::NonAffineSubscript { stmt, span };
    let mut rmin = sub.offset.clone();
    let mut rmax = sub.offset.clone();
    for (y, cy) in &sub.coeffs {
        if y == x {
            continue;
        }
        let (lo, hi) = &resolved[y];
        let last = hi.add_const(-1);
        match sign(cy).ok_or_else(err)? {
            1 => {
                rmin = rmin.add(&cy.mul(lo));
                rmax = rmax.add(&cy.mul(&last));
            }
            -1 => {
                rmin = rmin.add(&cy.mul(&last));
                rmax = rmax.add(&cy.mul(lo));
            }
            _ => {}
        }
    }
    let c = &sub.coeffs[x];
    let top = extent.add_const(-1);
    let (lo_raw, hi) = match sign(c).ok_or_else(err)? {
        1 => (rmin.neg().ceil_div(c), top.sub(&rmax).floor_div(c).add_const(1)),
        -1 => {
            let d = c.neg();
            (rmax.sub(&top).ceil_div(&d), rmin.floor_div(&d).add_const(1))
        }
        _ => return Err(err()),
    };
    Ok((Sym::max_with(&lo_raw, &Sym::constant(0)), hi))
}

fn nested(a: &(Sym, Sym), b: &(Sym, Sym)) -> Option<bool> {
    let dlo = a.0.sub(&b.0).as_const();
    let dhi = a.1.sub(&b.1).as_const();
    match (dlo, dhi) {
        (Some(0), _) | (_, Some(0)) => Some(true),
        (Some(l), Some(h)) => Some((l > 0) != (h > 0)),
        _ => None,
    }
}

struct Attempt {
    ranges: Ranges,
    undecided: Vec<(String, Vec<(Sym, Sym)>)>,
}

/// Try to resolve every iterator of statement `s` with the shapes known so far.
fn attempt(
    c: &CheckedDef,
    s: usize,
    accesses: &[SymAccess],
    shapes: &BTreeMap<String, Vec<Sym>>,
    scalars: &mut BTreeSet<String>,
) -> Result<Option<Attempt>, SemanticError> {
    let st = &c.def.stmts[s];
    let mut resolved: Ranges = BTreeMap::new();
    for w in &st.wheres {
        let lo = where_bound(c, &w.lo, s, scalars)?;
        let hi = where_bound(c, &w.hi, s, scalars)?;
        resolved.insert(w.iter.name.clone(), (lo, hi));
    }
    let mut unresolved: BTreeSet<String> = c.iterators[s].iter().filter(|i| !resolved.contains_key(*i)).cloned().collect();
    let mut undecided = Vec::new();
    while !unresolved.is_empty() {
        let mut found: BTreeMap<String, Vec<(Sym, Sym)>> = BTreeMap::new();
        for acc in accesses {
            let Some(shape) = shapes.get(&acc.tensor) else { continue };
            for (d, sub) in acc.subs.iter().enumerate() {
                let SymSubscript::Affine(aff) = sub else { continue };
                let open: Vec<&String> = aff.coeffs.keys().filter(|k| unresolved.contains(*k)).collect();
                if open.len() != 1 {
                    continue;
                }
                let x = open[0].clone();
                let iv = solve(aff, &x, &shape[d], &resolved, s, acc.span)?;
                let list = found.entry(x).or_default();
                if !list.contains(&iv) {
                    list.push(iv);
                }
            }
        }
        if found.is_empty() {
            return Ok(None);
        }
        for (x, ivs) in found {
            let mut open_pair = false;
            for i in 0..ivs.len() {
                for j in i + 1..ivs.len() {
                    match nested(&ivs[i], &ivs[j]) {
                        Some(true) => {}
                        Some(false) => {
                            return Err(SemanticError::Ambiguous {
                                stmt: s,
                                iter: x.clone(),
                                first: format!("[{}, {})", ivs[i].0, ivs[i].1),
                                second: format!("[{}, {})", ivs[j].0, ivs[j].1),
                                span: stmt_location(c, s),
                            })
                        }
                        None => open_pair = true,
                    }
                }
            }
            let lo = Sym::max_all(ivs.iter().map(|v| v.0.clone()).collect());
            let hi = Sym::min_all(ivs.iter().map(|v| v.1.clone()).collect());
            if open_pair {
                undecided.push((x.clone(), ivs));
            }
            unresolved.remove(&x);
            resolved.insert(x, (lo, hi));
        }
    }
    Ok(Some(Attempt { ranges: resolved, undecided }))
}

fn hull(c: &CheckedDef, done: &[Option<StmtRanges>], tensor: &str) -> Option<Vec<Sym>> {
    let mut dims: Option<Vec<Vec<Sym>>> = None;
    for (s, st) in c.def.stmts.iter().enumerate() {
        if st.lhs.name != tensor {
            continue;
        }
        let Some(r) = &done[s] else { continue };
        let his: Vec<Sym> = st.lhs_indices.iter().map(|i| r.range(&i.name).unwrap().hi.clone()).collect();
        match &mut dims {
            None => dims = Some(his.into_iter().map(|h| vec![h]).collect()),
            Some(d) => d.iter_mut().zip(his).for_each(|(v, h)| v.push(h)),
        }
    }
    dims.map(|d| d.into_iter().map(Sym::max_all).collect())
}

pub fn infer_ranges(c: &CheckedDef) -> Result<InferredRanges, SemanticError> {
    let n = c.def.stmts.len();
    let mut scalars = BTreeSet::new();
    let accesses: Vec<Vec<SymAccess>> = (0..n).map(|s| statement_accesses(c, s, &mut scalars)).collect::<Result<_, _>>()?;
    let mut shapes: BTreeMap<String, Vec<Sym>> = BTreeMap::new();
    for t in &c.tensors {
        if let Some(d) = &t.dims {
            shapes.insert(t.name.clone(), d.iter().map(|s| Sym::var(s)).collect());
        }
    }
    let mut done: Vec<Option<StmtRanges>> = vec![None; n];
    loop {
        let mut progress = false;
        // Prefer statements whose every read tensor already has a shape, so a
        // statement is never resolved against a partial hull when a fuller one
        // is about to appear.
        for strict in [true, false] {
            for s in 0..n {
                if done[s].is_some() {
                    continue;
                }
                let lhs = &c.def.stmts[s].lhs.name;
                if strict && accesses[s].iter().any(|a| &a.tensor != lhs && !shapes.contains_key(&a.tensor)) {
                    continue;
                }
                if let Some(att) = attempt(c, s, &accesses[s], &shapes, &mut scalars)? {
                    let st = &c.def.stmts[s];
                    let lhs_set: BTreeSet<&str> = st.lhs_indices.iter().map(|i| i.name.as_str()).collect();
                    let iters = c.iterators[s]
                        .iter()
                        .map(|name| {
                            let (lo, hi) = att.ranges[name].clone();
                            IterRange {
                                name: name.clone(),
                                lo,
                                hi,
                                rhs_only: !lhs_set.contains(name.as_str()),
                                from_where: st.wheres.iter().any(|w| &w.iter.name == name),
                            }
                        })
                        .collect();
                    done[s] = Some(StmtRanges { iters, undecided: att.undecided });
                    let h = hull(c, &done, lhs).expect("just resolved");
                    shapes.insert(lhs.clone(), h);
                    progress = true;
                }
            }
            if progress {
                break;
            }
        }
        if !progress {
            break;
        }
    }
    if let Some(s) = done.iter().position(|d| d.is_none()) {
        // Report the iterators the last attempt could not bind.
        let st = &c.def.stmts[s];
        let mut bound = BTreeSet::new();
        for w in &st.wheres {
            bound.insert(w.iter.name.clone());
        }
        let mut missing: Vec<String> = Vec::new();
        for it in &c.iterators[s] {
            if !bound.contains(it) {
                missing.push(it.clone());
            }
        }
        // Narrow to iterators no access bounds on its own.
        let solely: Vec<String> = missing
            .iter()
            .filter(|it| {
                !accesses[s].iter().any(|a| {
                    shapes.contains_key(&a.tensor)
                        && a.subs.iter().any(|sub| matches!(sub, SymSubscript::Affine(aff) if aff.coeffs.len() == 1 && aff.coeffs.contains_key(*it)))
                })
            })
            .cloned()
            .collect();
        return Err(SemanticError::UnderConstrained {
            stmt: s,
            iters: if solely.is_empty() { missing } else { solely },
            span: st.span,
        });
    }
    for t in &c.tensors {
        if t.dims.is_none() {
            let h = hull(c, &done, &t.name).expect("every written tensor has a resolved writer");
            shapes.insert(t.name.clone(), h);
        }
    }
    Ok(InferredRanges { stmts: done.into_iter().map(|d| d.unwrap()).collect(), shapes, index_scalars: scalars })
}
