use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::FrontendError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TensorRole {
    Input,
    Output,
    Temporary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub role: TensorRole,
    pub ty: ScalarType,
    pub rank: usize,
    /// Size symbols of an input's dimensions.
    pub dims: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NameKind {
    Tensor(usize),
    Scalar(ScalarType),
    Size,
    Iterator,
}

/// A definition whose names all resolve.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckedDef {
    pub def: TcDef,
    pub tensors: Vec<TensorInfo>,
    pub scalars: Vec<(String, ScalarType)>,
    pub size_symbols: Vec<String>,
    /// Per statement, iterator names in first-use order (LHS indices first).
    pub iterators: Vec<Vec<String>>,
}

impl CheckedDef {
    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn temporaries(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| t.role == TensorRole::Temporary).map(|t| t.name.as_str()).collect()
    }

    /// Meaning of a bare identifier. A size symbol may share its name with an
    /// input tensor, which is only ever referenced with a subscript.
    pub fn classify(&self, name: &str) -> NameKind {
        if let Some((_, ty)) = self.scalars.iter().find(|(n, _)| n == name) {
            NameKind::Scalar(*ty)
        } else if self.size_symbols.iter().any(|s| s == name) {
            NameKind::Size
        } else if let Some(i) = self.tensor_index(name) {
            NameKind::Tensor(i)
        } else {
            NameKind::Iterator
        }
    }
}

pub fn validate_program(program: &TcProgram) -> Result<Vec<CheckedDef>, FrontendError> {
    let mut seen = BTreeSet::new();
    for d in &program.defs {
        if !seen.insert(d.name.name.as_str()) {
            return Err(FrontendError::DuplicateDef { name: d.name.name.clone(), span: d.name.span });
        }
    }
    program.defs.iter().map(validate_def).collect()
}

pub fn validate_def(def: &TcDef) -> Result<CheckedDef, FrontendError> {
    let mut tensors: Vec<TensorInfo> = Vec::new();
    let mut scalars = Vec::new();
    let mut size_symbols: Vec<String> = Vec::new();
    let mut names = BTreeSet::new();
    for p in &def.params {
        if !names.insert(p.name.name.clone()) {
            return Err(FrontendError::DuplicateParam { name: p.name.name.clone(), span: p.name.span });
        }
        match &p.dims {
            None => scalars.push((p.name.name.clone(), p.ty)),
            Some(dims) => {
                for d in dims {
                    if !size_symbols.contains(&d.name) {
                        size_symbols.push(d.name.clone());
                    }
                }
                tensors.push(TensorInfo {
                    name: p.name.name.clone(),
                    role: TensorRole::Input,
                    ty: p.ty,
                    rank: dims.len(),
                    dims: Some(dims.iter().map(|d| d.name.clone()).collect()),
                });
            }
        }
    }
    for s in &size_symbols {
        if def.params.iter().any(|p| &p.name.name == s && p.dims.is_none()) {
            let span = def.params.iter().find(|p| &p.name.name == s).map(|p| p.name.span).unwrap_or_default();
            return Err(FrontendError::NameClash { name: s.clone(), what: "size symbol and parameter", span });
        }
    }
    let mut ret_seen = BTreeSet::new();
    for r in &def.returns {
        if names.contains(&r.name) || size_symbols.contains(&r.name) {
            return Err(FrontendError::NameClash { name: r.name.clone(), what: "return and parameter", span: r.span });
        }
        if !ret_seen.insert(r.name.clone()) {
            return Err(FrontendError::DuplicateParam { name: r.name.clone(), span: r.span });
        }
    }

    // Written tensors: returns keep declaration order, temporaries first-definition order.
    let mut written_rank: BTreeMap<String, (usize, Span)> = BTreeMap::new();
    for st in &def.stmts {
        let name = &st.lhs.name;
        if let Some(t) = tensors.iter().find(|t| &t.name == name) {
            if t.role == TensorRole::Input {
                return Err(FrontendError::WriteToInput { name: name.clone(), span: st.lhs.span });
            }
        }
        if scalars.iter().any(|(n, _)| n == name) {
            return Err(FrontendError::WriteToInput { name: name.clone(), span: st.lhs.span });
        }
        if size_symbols.contains(name) {
            return Err(FrontendError::NameClash { name: name.clone(), what: "size symbol and tensor", span: st.lhs.span });
        }
        match written_rank.get(name) {
            Some((r, _)) if *r != st.lhs_indices.len() => {
                return Err(FrontendError::ArityMismatch {
                    name: name.clone(),
                    expected: *r,
                    found: st.lhs_indices.len(),
                    span: st.lhs.span,
                })
            }
            Some(_) => {}
            None => {
                written_rank.insert(name.clone(), (st.lhs_indices.len(), st.lhs.span));
            }
        }
    }
    for r in &def.returns {
        let Some((rank, _)) = written_rank.get(&r.name) else {
            return Err(FrontendError::ReturnNeverWritten { name: r.name.clone(), span: r.span });
        };
        tensors.push(TensorInfo { name: r.name.clone(), role: TensorRole::Output, ty: ScalarType::Int, rank: *rank, dims: None });
    }
    for st in &def.stmts {
        if !tensors.iter().any(|t| t.name == st.lhs.name) {
            tensors.push(TensorInfo {
                name: st.lhs.name.clone(),
                role: TensorRole::Temporary,
                ty: ScalarType::Int,
                rank: st.lhs_indices.len(),
                dims: None,
            });
        }
    }

    let mut checked = CheckedDef { def: def.clone(), tensors, scalars, size_symbols, iterators: Vec::new() };

    for st in &def.stmts {
        let mut iters: Vec<String> = Vec::new();
        let mut seen_lhs = BTreeSet::new();
        for idx in &st.lhs_indices {
            if !seen_lhs.insert(idx.name.clone()) {
                return Err(FrontendError::DuplicateIndex { name: idx.name.clone(), span: idx.span });
            }
            if checked.classify(&idx.name) != NameKind::Iterator {
                return Err(FrontendError::NameClash { name: idx.name.clone(), what: "index and declared name", span: idx.span });
            }
            iters.push(idx.name.clone());
        }
        check_expr(&checked, &st.rhs, false, &mut iters)?;
        let mut where_iters = BTreeSet::new();
        for w in &st.wheres {
            if checked.classify(&w.iter.name) != NameKind::Iterator {
                return Err(FrontendError::NameClash { name: w.iter.name.clone(), what: "index and declared name", span: w.iter.span });
            }
            if !where_iters.insert(w.iter.name.clone()) {
                return Err(FrontendError::DuplicateIndex { name: w.iter.name.clone(), span: w.iter.span });
            }
            if !iters.contains(&w.iter.name) {
                return Err(FrontendError::UnusedWhere { name: w.iter.name.clone(), span: w.iter.span });
            }
            for bound in [&w.lo, &w.hi] {
                check_where_bound(&checked, bound)?;
            }
        }
        checked.iterators.push(iters);
    }

    // Element kinds of written tensors: float unless every writer is integer-valued.
    for i in 0..checked.tensors.len() {
        if checked.tensors[i].role == TensorRole::Input {
            continue;
        }
        let name = checked.tensors[i].name.clone();
        let mut ty = ScalarType::Int;
        for st in def.stmts.iter().filter(|s| s.lhs.name == name) {
            if !expr_is_integer(&checked, &st.rhs) {
                ty = ScalarType::Float;
            }
        }
        checked.tensors[i].ty = ty;
    }
    // Second pass: integer temporaries read by other integer-looking statements.
    loop {
        let mut changed = false;
        for i in 0..checked.tensors.len() {
            if checked.tensors[i].role == TensorRole::Input || checked.tensors[i].ty == ScalarType::Float {
                continue;
            }
            let name = checked.tensors[i].name.clone();
            if def.stmts.iter().filter(|s| s.lhs.name == name).any(|st| !expr_is_integer(&checked, &st.rhs)) {
                checked.tensors[i].ty = ScalarType::Float;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(checked)
}

fn check_where_bound(c: &CheckedDef, e: &Expr) -> Result<(), FrontendError> {
    let mut err = None;
    e.walk(&mut |x| {
        if err.is_some() {
            return;
        }
        match x {
            Expr::Ident(id) => match c.classify(&id.name) {
                NameKind::Size | NameKind::Scalar(ScalarType::Int | ScalarType::Long) => {}
                _ => err = Some(FrontendError::InvalidWhereBound { name: id.name.clone(), span: id.span }),
            },
            Expr::Call { func, .. } => err = Some(FrontendError::InvalidWhereBound { name: func.name.clone(), span: func.span }),
            Expr::Num(Number::Float(_), s) => err = Some(FrontendError::InvalidWhereBound { name: "float literal".into(), span: *s }),
            Expr::DimSize { .. } => {}
            Expr::Select { span, .. } => err = Some(FrontendError::InvalidWhereBound { name: "select".into(), span: *span }),
            _ => {}
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn check_expr(c: &CheckedDef, e: &Expr, in_subscript: bool, iters: &mut Vec<String>) -> Result<(), FrontendError> {
    match e {
        Expr::Num(..) => Ok(()),
        Expr::Ident(id) => match c.classify(&id.name) {
            NameKind::Tensor(t) => {
                if c.tensors[t].rank == 0 {
                    Ok(())
                } else {
                    Err(FrontendError::ArityMismatch { name: id.name.clone(), expected: c.tensors[t].rank, found: 0, span: id.span })
                }
            }
            NameKind::Scalar(_) | NameKind::Size => Ok(()),
            NameKind::Iterator => {
                if !iters.contains(&id.name) {
                    iters.push(id.name.clone());
                }
                Ok(())
            }
        },
        Expr::DimSize { tensor, dim } => {
            let Some(p) = c.def.param(&tensor.name) else {
                return Err(FrontendError::UnknownTensor { name: tensor.name.clone(), span: tensor.span });
            };
            match &p.dims {
                Some(d) if *dim < d.len() => Ok(()),
                _ => Err(FrontendError::ArityMismatch { name: tensor.name.clone(), expected: p.dims.as_ref().map_or(0, |d| d.len()), found: dim + 1, span: tensor.span }),
            }
        }
        Expr::Call { func, args } => {
            if let Some(b) = Builtin::from_name(&func.name) {
                if c.tensor_index(&func.name).is_none() {
                    if args.len() != b.arity() {
                        return Err(FrontendError::ArityMismatch { name: func.name.clone(), expected: b.arity(), found: args.len(), span: func.span });
                    }
                    for a in args {
                        check_expr(c, a, in_subscript, iters)?;
                    }
                    return Ok(());
                }
            }
            match c.tensor_index(&func.name).map(NameKind::Tensor).unwrap_or(NameKind::Iterator) {
                NameKind::Tensor(t) => {
                    let info = &c.tensors[t];
                    if info.rank != args.len() {
                        return Err(FrontendError::ArityMismatch { name: func.name.clone(), expected: info.rank, found: args.len(), span: func.span });
                    }
                    if info.role == TensorRole::Input && info.ty.is_integer() && !in_subscript {
                        return Err(FrontendError::IntTensorAsValue { name: func.name.clone(), span: func.span });
                    }
                    for a in args {
                        check_expr(c, a, true, iters)?;
                    }
                    Ok(())
                }
                NameKind::Scalar(_) => Err(FrontendError::ArityMismatch { name: func.name.clone(), expected: 0, found: args.len(), span: func.span }),
                _ => Err(FrontendError::UnknownTensor { name: func.name.clone(), span: func.span }),
            }
        }
        Expr::Unary { operand, .. } => check_expr(c, operand, in_subscript, iters),
        Expr::Binary { lhs, rhs, .. } => {
            check_expr(c, lhs, in_subscript, iters)?;
            check_expr(c, rhs, in_subscript, iters)
        }
        Expr::Select { cond, then, other, .. } => {
            check_expr(c, cond, in_subscript, iters)?;
            check_expr(c, then, in_subscript, iters)?;
            check_expr(c, other, in_subscript, iters)
        }
    }
}

/// Whether an expression evaluates to an integer under the current element kinds.
pub fn expr_is_integer(c: &CheckedDef, e: &Expr) -> bool {
    match e {
        Expr::Num(Number::Int(_), _) => true,
        Expr::Num(Number::Float(_), _) => false,
        Expr::Ident(id) => match c.classify(&id.name) {
            NameKind::Scalar(ty) => ty.is_integer(),
            NameKind::Tensor(t) => c.tensors[t].ty.is_integer(),
            _ => true,
        },
        Expr::DimSize { .. } => true,
        Expr::Call { func, args } => {
            if Builtin::from_name(&func.name).is_some() && c.tensor_index(&func.name).is_none() {
                return match Builtin::from_name(&func.name) {
                    Some(Builtin::Abs) => expr_is_integer(c, &args[0]),
                    _ => false,
                };
            }
            match c.tensor(&func.name) {
                Some(t) => t.ty.is_integer(),
                None => false,
            }
        }
        Expr::Unary { op: UnaryOp::Not, .. } => true,
        Expr::Unary { operand, .. } => expr_is_integer(c, operand),
        Expr::Binary { op, lhs, rhs, .. } => match op {
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne | BinaryOp::And | BinaryOp::Or => true,
            _ => expr_is_integer(c, lhs) && expr_is_integer(c, rhs),
        },
        Expr::Select { then, other, .. } => expr_is_integer(c, then) && expr_is_integer(c, other),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    fn check(src: &str) -> Result<CheckedDef, FrontendError> {
        let p = parse_program(src)?;
        validate_program(&p).map(|mut v| v.remove(0))
    }

    #[test]
    fn temporary_registered() {
        let c = check("def f(float(N) A) -> (B) { T(i) = A(i) * 2\n B(i) = T(i) }").unwrap();
        assert_eq!(c.temporaries(), vec!["T"]);
        assert_eq!(c.tensor("T").unwrap().ty, ScalarType::Float);
    }

    #[test]
    fn unknown_tensor() {
        let e = check("def f(float(N) A) -> (B) { B(i) = Q(i) }").unwrap_err();
        assert!(matches!(e, FrontendError::UnknownTensor { ref name, .. } if name == "Q"));
    }

    #[test]
    fn unknown_function_rejected() {
        let e = check("def f(float(N) A) -> (B) { B(i) = sqrtf(A(i)) }").unwrap_err();
        assert!(matches!(e, FrontendError::UnknownTensor { ref name, .. } if name == "sqrtf"));
        let e = check("def f(float(N) A) -> (B) { B(i) = concat(A(i)) }").unwrap_err();
        assert!(matches!(e, FrontendError::UnknownTensor { .. }));
    }

    #[test]
    fn duplicate_def() {
        let p = parse_program("def f(float(N) A) -> (B) { B(i) = A(i) }\ndef f(float(N) A) -> (B) { B(i) = A(i) }").unwrap();
        assert!(matches!(validate_program(&p), Err(FrontendError::DuplicateDef { .. })));
    }

    #[test]
    fn return_must_be_written() {
        let e = check("def f(float(N) A) -> (B, C) { B(i) = A(i) }").unwrap_err();
        assert!(matches!(e, FrontendError::ReturnNeverWritten { ref name, .. } if name == "C"));
    }

    #[test]
    fn integer_tensor_only_in_subscripts() {
        assert!(check("def g(float(N) X, int(A,B) I) -> (Z) { Z(i,j) = X(I(i,j)) }").is_ok());
        let e = check("def g(int(N) I) -> (Z) { Z(i) = I(i) }").unwrap_err();
        assert!(matches!(e, FrontendError::IntTensorAsValue { .. }));
    }

    #[test]
    fn iterators_in_first_use_order() {
        let c = check("def mv(float(M,K) A, float(K) x) -> (C) { C(i) +=! A(i,k) * x(k) }").unwrap();
        assert_eq!(c.iterators[0], vec!["i", "k"]);
        assert_eq!(c.size_symbols, vec!["M", "K"]);
    }

    #[test]
    fn integer_output_kind() {
        let c = check("def f(float(N) A) -> (B) { B(i) = i * 2 }").unwrap();
        assert_eq!(c.tensor("B").unwrap().ty, ScalarType::Int);
    }
}
