//! Concrete, size-specialized definitions consumed by the polyhedral layer.

use std::fmt;

use super::infer::InferredRanges;
use super::{SemanticError, SizeBinding, Sym};
use crate::frontend::{AssignOp, BinaryOp, Builtin, CheckedDef, Expr, NameKind, Number, ReduceOp, ScalarType, Span, TensorRole, UnaryOp};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorDecl {
    pub name: String,
    pub role: TensorRole,
    pub ty: ScalarType,
    pub shape: Vec<usize>,
    /// An output read before any statement writes it; its initial contents
    /// come from the caller.
    pub inout: bool,
}

impl TensorDecl {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalarDecl {
    pub name: String,
    pub ty: ScalarType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterDecl {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

impl IterDecl {
    pub fn extent(&self) -> i64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmtKind {
    Assign,
    /// Synthesized initialization of a `op=!` reduction.
    Init(ReduceOp),
    Reduce(ReduceOp),
}

/// `c + Σ coeffs[k]·iter_k` over the statement's iterators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Affine {
    pub coeffs: Vec<i64>,
    pub c: i64,
}

impl Affine {
    pub fn eval(&self, point: &[i64]) -> i64 {
        self.c + self.coeffs.iter().zip(point).map(|(a, b)| a * b).sum::<i64>()
    }

    /// Inclusive range over the iteration box.
    pub fn range(&self, iters: &[IterDecl]) -> (i64, i64) {
        let mut lo = self.c;
        let mut hi = self.c;
        for (k, it) in self.coeffs.iter().zip(iters) {
            let (a, b) = (k * it.lo, k * (it.hi - 1));
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }

    pub fn uses(&self, i: usize) -> bool {
        self.coeffs.get(i).is_some_and(|c| *c != 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Subscript {
    Affine(Affine),
    /// Data-dependent subscript; nested accesses appear as `VExpr::Access`.
    Indirect(VExpr),
}

impl Subscript {
    pub fn as_affine(&self) -> Option<&Affine> {
        match self {
            Subscript::Affine(a) => Some(a),
            Subscript::Indirect(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub tensor: usize,
    pub subs: Vec<Subscript>,
    pub write: bool,
    /// The accumulator read of a reduction.
    pub implicit: bool,
}

impl Access {
    pub fn is_indirect(&self) -> bool {
        self.subs.iter().any(|s| matches!(s, Subscript::Indirect(_)))
    }
}

/// Value expression with names resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum VExpr {
    Int(i64),
    Float(f64),
    Iter(usize),
    Scalar(usize),
    Access(usize),
    Builtin(Builtin, Vec<VExpr>),
    Unary(UnaryOp, Box<VExpr>),
    Binary(BinaryOp, Box<VExpr>, Box<VExpr>),
    Select(Box<VExpr>, Box<VExpr>, Box<VExpr>),
}

impl VExpr {
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a VExpr)) {
        f(self);
        match self {
            VExpr::Builtin(_, a) => a.iter().for_each(|x| x.walk(f)),
            VExpr::Unary(_, a) => a.walk(f),
            VExpr::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            VExpr::Select(a, b, c) => {
                a.walk(f);
                b.walk(f);
                c.walk(f);
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub name: String,
    /// Index of the source statement in the definition.
    pub source: usize,
    pub kind: StmtKind,
    /// Loop order of the canonical nest: LHS indices, then RHS-only iterators.
    pub iters: Vec<IterDecl>,
    /// Position of each LHS index in `iters`.
    pub lhs_iters: Vec<usize>,
    /// `accesses[0]` is the write; reductions end with the accumulator read.
    pub accesses: Vec<Access>,
    pub rhs: VExpr,
    pub span: Span,
}

impl Statement {
    pub fn write(&self) -> &Access {
        &self.accesses[0]
    }

    pub fn lhs_tensor(&self) -> usize {
        self.accesses[0].tensor
    }

    pub fn cardinality(&self) -> u64 {
        self.iters.iter().map(|i| i.extent().max(0) as u64).product()
    }

    pub fn instance_box(&self) -> Vec<(i64, i64)> {
        self.iters.iter().map(|i| (i.lo, i.hi)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstantiatedDef {
    pub name: String,
    pub tensors: Vec<TensorDecl>,
    pub scalars: Vec<ScalarDecl>,
    pub sizes: SizeBinding,
    pub stmts: Vec<Statement>,
}

impl InstantiatedDef {
    pub fn tensor_id(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = (usize, &TensorDecl)> {
        self.tensors.iter().enumerate().filter(|(_, t)| t.role == TensorRole::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = (usize, &TensorDecl)> {
        self.tensors.iter().enumerate().filter(|(_, t)| t.role == TensorRole::Output)
    }

    pub fn has_indirect(&self) -> bool {
        self.stmts.iter().any(|s| s.accesses.iter().any(|a| a.is_indirect()))
    }
}

impl fmt::Display for InstantiatedDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}:", self.name)?;
        for t in &self.tensors {
            writeln!(f, "  {:?} {} {}{:?}{}", t.role, t.ty.keyword(), t.name, t.shape, if t.inout { " (in/out)" } else { "" })?;
        }
        for s in &self.stmts {
            let it: Vec<String> = s.iters.iter().map(|i| format!("{} in [{}, {})", i.name, i.lo, i.hi)).collect();
            writeln!(f, "  {} {:?}: {}", s.name, s.kind, it.join(", "))?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    c: &'a CheckedDef,
    sizes: &'a SizeBinding,
    iters: Vec<String>,
    accesses: Vec<Access>,
    stmt: usize,
}

fn eval_sym(s: &Sym, sizes: &SizeBinding) -> Result<i64, SemanticError> {
    s.eval(&|n| sizes.get(n).copied()).map_err(|symbol| SemanticError::MissingBinding { symbol })
}

impl Ctx<'_> {
    fn size(&self, name: &str) -> Result<i64, SemanticError> {
        self.sizes.get(name).copied().ok_or_else(|| SemanticError::MissingBinding { symbol: name.to_string() })
    }

    fn affine(&self, e: &Expr) -> Result<Option<Affine>, SemanticError> {
        let n = self.iters.len();
        let na = || SemanticError::NonAffineSubscript { stmt: self.stmt, span: e.span() };
        Ok(Some(match e {
            Expr::Num(Number::Int(v), _) => Affine { coeffs: vec![0; n], c: *v },
            Expr::Ident(id) => match self.c.classify(&id.name) {
                NameKind::Iterator => {
                    let mut coeffs = vec![0; n];
                    coeffs[self.iters.iter().position(|x| x == &id.name).unwrap()] = 1;
                    Affine { coeffs, c: 0 }
                }
                NameKind::Size => Affine { coeffs: vec![0; n], c: self.size(&id.name)? },
                NameKind::Scalar(ty) if ty.is_integer() => Affine { coeffs: vec![0; n], c: self.size(&id.name)? },
                _ => return Err(na()),
            },
            Expr::DimSize { tensor, dim } => {
                let d = &self.c.def.param(&tensor.name).and_then(|p| p.dims.clone()).ok_or_else(na)?[*dim];
                Affine { coeffs: vec![0; n], c: self.size(&d.name)? }
            }
            Expr::Unary { op: UnaryOp::Neg, operand, .. } => {
                let Some(a) = self.affine(operand)? else { return Ok(None) };
                Affine { coeffs: a.coeffs.iter().map(|x| -x).collect(), c: -a.c }
            }
            Expr::Binary { op, lhs, rhs, .. } => {
                let (Some(a), Some(b)) = (self.affine(lhs)?, self.affine(rhs)?) else { return Ok(None) };
                let a_const = a.coeffs.iter().all(|x| *x == 0);
                let b_const = b.coeffs.iter().all(|x| *x == 0);
                match op {
                    BinaryOp::Add => Affine { coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect(), c: a.c + b.c },
                    BinaryOp::Sub => Affine { coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(), c: a.c - b.c },
                    BinaryOp::Mul if b_const => Affine { coeffs: a.coeffs.iter().map(|x| x * b.c).collect(), c: a.c * b.c },
                    BinaryOp::Mul if a_const => Affine { coeffs: b.coeffs.iter().map(|x| x * a.c).collect(), c: a.c * b.c },
                    BinaryOp::Div if a_const && b_const && b.c > 0 => {
                        Affine { coeffs: vec![0; n], c: num_integer::Integer::div_floor(&a.c, &b.c) }
                    }
                    _ => return Err(na()),
                }
            }
            Expr::Call { .. } => return Ok(None),
            _ => return Err(na()),
        }))
    }

    fn value(&mut self, e: &Expr) -> Result<VExpr, SemanticError> {
        Ok(match e {
            Expr::Num(Number::Int(v), _) => VExpr::Int(*v),
            Expr::Num(Number::Float(v), _) => VExpr::Float(*v),
            Expr::Ident(id) => match self.c.classify(&id.name) {
                NameKind::Iterator => VExpr::Iter(self.iters.iter().position(|x| x == &id.name).unwrap()),
                NameKind::Size => VExpr::Int(self.size(&id.name)?),
                NameKind::Scalar(ty) => match self.sizes.get(&id.name) {
                    Some(v) if ty.is_integer() => VExpr::Int(*v),
                    _ => VExpr::Scalar(self.c.scalars.iter().position(|(n, _)| n == &id.name).unwrap()),
                },
                NameKind::Tensor(_) => unreachable!("rank-0 tensors are not produced by the parser"),
            },
            Expr::DimSize { tensor, dim } => {
                let d = self.c.def.param(&tensor.name).and_then(|p| p.dims.clone()).expect("validated")[*dim].name.clone();
                VExpr::Int(self.size(&d)?)
            }
            Expr::Call { func, args } => {
                if let (Some(b), None) = (Builtin::from_name(&func.name), self.c.tensor_index(&func.name)) {
                    let a = args.iter().map(|x| self.value(x)).collect::<Result<Vec<_>, _>>()?;
                    VExpr::Builtin(b, a)
                } else {
                    let tensor = self.c.tensor_index(&func.name).unwrap();
                    let mut subs = Vec::new();
                    for a in args {
                        subs.push(match self.affine(a)? {
                            Some(aff) => Subscript::Affine(aff),
                            None => Subscript::Indirect(self.value(a)?),
                        });
                    }
                    self.accesses.push(Access { tensor, subs, write: false, implicit: false });
                    VExpr::Access(self.accesses.len() - 1)
                }
            }
            Expr::Unary { op, operand, .. } => VExpr::Unary(*op, Box::new(self.value(operand)?)),
            Expr::Binary { op, lhs, rhs, .. } => {
                VExpr::Binary(*op, Box::new(self.value(lhs)?), Box::new(self.value(rhs)?))
            }
            Expr::Select { cond, then, other, .. } => VExpr::Select(
                Box::new(self.value(cond)?),
                Box::new(self.value(then)?),
                Box::new(self.value(other)?),
            ),
        })
    }
}

/// Bind sizes: concrete ranges, shapes and resolved statements.
pub fn specialize(c: &CheckedDef, r: &InferredRanges, sizes: &SizeBinding) -> Result<InstantiatedDef, SemanticError> {
    for s in c.size_symbols.iter().chain(r.index_scalars.iter()) {
        let v = *sizes.get(s).ok_or_else(|| SemanticError::MissingBinding { symbol: s.clone() })?;
        if v < 1 {
            return Err(SemanticError::EmptyRange { what: s.clone(), lo: 0, hi: v, span: Span::default() });
        }
    }
    let mut tensors = Vec::new();
    for t in &c.tensors {
        let shape = r.shapes[&t.name]
            .iter()
            .map(|d| eval_sym(d, sizes))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(k) = shape.iter().position(|e| *e < 1) {
            return Err(SemanticError::EmptyRange { what: format!("{}.{}", t.name, k), lo: 0, hi: shape[k], span: Span::default() });
        }
        tensors.push(TensorDecl { name: t.name.clone(), role: t.role, ty: t.ty, shape: shape.iter().map(|e| *e as usize).collect(), inout: false });
    }
    let scalars = c
        .scalars
        .iter()
        .map(|(n, ty)| ScalarDecl { name: n.clone(), ty: *ty })
        .collect();

    let mut stmts = Vec::new();
    for (si, st) in c.def.stmts.iter().enumerate() {
        let ranges = &r.stmts[si];
        for (x, ivs) in &ranges.undecided {
            let conc: Vec<(i64, i64)> = ivs
                .iter()
                .map(|(a, b)| Ok((eval_sym(a, sizes)?.max(0), eval_sym(b, sizes)?)))
                .collect::<Result<_, SemanticError>>()?;
            for i in 0..conc.len() {
                for j in i + 1..conc.len() {
                    let (a, b) = (conc[i], conc[j]);
                    let nested = (a.0 >= b.0 && a.1 <= b.1) || (b.0 >= a.0 && b.1 <= a.1);
                    if !nested {
                        return Err(SemanticError::Ambiguous {
                            stmt: si,
                            iter: x.clone(),
                            first: format!("[{}, {})", a.0, a.1),
                            second: format!("[{}, {})", b.0, b.1),
                            span: st.span,
                        });
                    }
                }
            }
        }
        let mut iters = Vec::new();
        for ir in &ranges.iters {
            let lo = eval_sym(&ir.lo, sizes)?;
            let hi = eval_sym(&ir.hi, sizes)?;
            if hi <= lo {
                return Err(SemanticError::EmptyRange { what: format!("statement {} iterator {}", si, ir.name), lo, hi, span: st.span });
            }
            iters.push(IterDecl { name: ir.name.clone(), lo, hi });
        }
        let names: Vec<String> = iters.iter().map(|i| i.name.clone()).collect();
        let lhs_iters: Vec<usize> = st.lhs_indices.iter().map(|i| names.iter().position(|n| n == &i.name).unwrap()).collect();
        let lhs_tensor = c.tensor_index(&st.lhs.name).unwrap();
        let n = iters.len();
        let lhs_access = Access {
            tensor: lhs_tensor,
            subs: lhs_iters
                .iter()
                .map(|&p| {
                    let mut coeffs = vec![0; n];
                    coeffs[p] = 1;
                    Subscript::Affine(Affine { coeffs, c: 0 })
                })
                .collect(),
            write: true,
            implicit: false,
        };
        let mut ctx = Ctx { c, sizes, iters: names, accesses: vec![lhs_access.clone()], stmt: si };
        let rhs = ctx.value(&st.rhs)?;
        let mut accesses = ctx.accesses;
        let kind = match st.op {
            AssignOp::Assign => StmtKind::Assign,
            AssignOp::Reduce(op) | AssignOp::ReduceInit(op) => StmtKind::Reduce(op),
        };
        if let AssignOp::ReduceInit(op) = st.op {
            // Initialization over the LHS iterators only.
            let init_iters: Vec<IterDecl> = lhs_iters.iter().map(|&p| iters[p].clone()).collect();
            let m = init_iters.len();
            let init_write = Access {
                tensor: lhs_tensor,
                subs: (0..m)
                    .map(|p| {
                        let mut coeffs = vec![0; m];
                        coeffs[p] = 1;
                        Subscript::Affine(Affine { coeffs, c: 0 })
                    })
                    .collect(),
                write: true,
                implicit: false,
            };
            let neutral = match (op, tensors[lhs_tensor].ty.is_integer()) {
                (ReduceOp::Add, true) => VExpr::Int(0),
                (ReduceOp::Mul, true) => VExpr::Int(1),
                (ReduceOp::Min, true) => VExpr::Int(i32::MAX as i64),
                (ReduceOp::Max, true) => VExpr::Int(i32::MIN as i64),
                (op, false) => VExpr::Float(op.neutral()),
            };
            stmts.push(Statement {
                name: String::new(),
                source: si,
                kind: StmtKind::Init(op),
                iters: init_iters,
                lhs_iters: (0..m).collect(),
                accesses: vec![init_write],
                rhs: neutral,
                span: st.span,
            });
        }
        if matches!(kind, StmtKind::Reduce(_)) {
            accesses.push(Access { write: false, implicit: true, ..lhs_access });
        }
        stmts.push(Statement { name: String::new(), source: si, kind, iters, lhs_iters, accesses, rhs, span: st.span });
    }
    for (i, s) in stmts.iter_mut().enumerate() {
        s.name = format!("S{i}");
    }
    let mut bound = SizeBinding::new();
    for s in c.size_symbols.iter().chain(r.index_scalars.iter()) {
        bound.insert(s.clone(), sizes[s]);
    }
    Ok(InstantiatedDef { name: c.def.name.name.clone(), tensors, scalars, sizes: bound, stmts })
}
