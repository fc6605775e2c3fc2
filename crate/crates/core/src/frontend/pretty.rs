use std::fmt::Write;

use super::ast::*;

pub fn pretty_print(program: &TcProgram) -> String {
    let mut out = String::new();
    for (i, d) in program.defs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&pretty_def(d));
    }
    out
}

pub fn pretty_def(d: &TcDef) -> String {
    let mut s = String::new();
    let params: Vec<String> = d.params.iter().map(param_text).collect();
    let rets: Vec<&str> = d.returns.iter().map(|r| r.name.as_str()).collect();
    let _ = writeln!(s, "def {}({}) -> ({}) {{", d.name.name, params.join(", "), rets.join(", "));
    for st in &d.stmts {
        let _ = writeln!(s, "  {}", stmt_text(st));
    }
    s.push_str("}\n");
    s
}

pub fn param_text(p: &Param) -> String {
    match &p.dims {
        None => format!("{} {}", p.ty.keyword(), p.name.name),
        Some(d) => {
            let dims: Vec<&str> = d.iter().map(|x| x.name.as_str()).collect();
            format!("{}({}) {}", p.ty.keyword(), dims.join(","), p.name.name)
        }
    }
}

pub fn stmt_text(st: &TcStmt) -> String {
    let idx: Vec<&str> = st.lhs_indices.iter().map(|x| x.name.as_str()).collect();
    let mut s = format!("{}({}) {} {}", st.lhs.name, idx.join(","), st.op, expr_text(&st.rhs));
    if !st.wheres.is_empty() {
        let w: Vec<String> = st
            .wheres
            .iter()
            .map(|w| format!("{} in {}:{}", w.iter.name, operand(&w.lo, 0, false), operand(&w.hi, 0, false)))
            .collect();
        s.push_str(" where ");
        s.push_str(&w.join(", "));
    }
    s
}

pub fn number_text(n: Number) -> String {
    match n {
        Number::Int(v) => v.to_string(),
        Number::Float(v) => {
            let t = format!("{v:?}");
            if t.contains('.') || t.contains('e') {
                t
            } else {
                format!("{t}.0")
            }
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    match e {
        Expr::Num(n, _) => number_text(*n),
        Expr::Ident(id) => id.name.clone(),
        Expr::Call { func, args } => {
            let a: Vec<String> = args.iter().map(expr_text).collect();
            format!("{}({})", func.name, a.join(", "))
        }
        Expr::DimSize { tensor, dim } => format!("{}.{}", tensor.name, dim),
        Expr::Unary { op, operand: inner, .. } => {
            let sym = match op {
                UnaryOp::Neg => "-",
                UnaryOp::Not => "!",
            };
            let body = match **inner {
                Expr::Binary { .. } | Expr::Select { .. } => format!("({})", expr_text(inner)),
                _ => expr_text(inner),
            };
            format!("{sym}{body}")
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let p = op.precedence();
            format!("{} {} {}", operand(lhs, p, false), op.symbol(), operand(rhs, p, true))
        }
        Expr::Select { cond, then, other, .. } => {
            let c = match **cond {
                Expr::Select { .. } => format!("({})", expr_text(cond)),
                _ => expr_text(cond),
            };
            format!("{} ? {} : {}", c, expr_text(then), expr_text(other))
        }
    }
}

/// Print `e` as an operand of a binary operator of precedence `parent`.
fn operand(e: &Expr, parent: u8, right: bool) -> String {
    match e {
        Expr::Select { .. } => format!("({})", expr_text(e)),
        Expr::Binary { op, .. } if op.precedence() < parent || (right && op.precedence() == parent) => {
            format!("({})", expr_text(e))
        }
        _ => expr_text(e),
    }
}
