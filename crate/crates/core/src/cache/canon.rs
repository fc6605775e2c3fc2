//! Positional renaming of a definition's identifiers.

use std::collections::BTreeMap;

use crate::frontend::{pretty_def, CheckedDef, Expr, Ident, NameKind};

struct Renamer<'a> {
    c: &'a CheckedDef,
    sizes: BTreeMap<&'a str, String>,
    scalars: BTreeMap<&'a str, String>,
    iters: BTreeMap<String, String>,
}

impl Renamer<'_> {
    fn tensor(&self, id: &mut Ident) {
        if let Some(k) = self.c.tensor_index(&id.name) {
            id.name = format!("T{k}");
        }
    }

    fn size(&self, id: &mut Ident) {
        if let Some(n) = self.sizes.get(id.name.as_str()) {
            id.name = n.clone();
        }
    }

    fn bare(&self, id: &mut Ident) {
        let new = match self.c.classify(&id.name) {
            NameKind::Scalar(_) => self.scalars.get(id.name.as_str()).cloned(),
            NameKind::Size => self.sizes.get(id.name.as_str()).cloned(),
            NameKind::Tensor(k) => Some(format!("T{k}")),
            NameKind::Iterator => self.iters.get(&id.name).cloned(),
        };
        if let Some(n) = new {
            id.name = n;
        }
    }

    fn expr(&self, e: &mut Expr) {
        match e {
            Expr::Num(..) => {}
            Expr::Ident(id) => self.bare(id),
            Expr::Call { func, args } => {
                self.tensor(func);
                for a in args {
                    self.expr(a);
                }
            }
            Expr::DimSize { tensor, .. } => self.tensor(tensor),
            Expr::Unary { operand, .. } => self.expr(operand),
            Expr::Binary { lhs, rhs, .. } => {
                self.expr(lhs);
                self.expr(rhs);
            }
            Expr::Select { cond, then, other, .. } => {
                self.expr(cond);
                self.expr(then);
                self.expr(other);
            }
        }
    }
}

/// Function `f`, tensors `T0..` in declaration order, scalars `P0..`, size
/// symbols `S0..` and iterators `i0..` per statement, pretty-printed.
pub fn canonicalize(c: &CheckedDef) -> String {
    let mut r = Renamer {
        c,
        sizes: c.size_symbols.iter().enumerate().map(|(k, s)| (s.as_str(), format!("S{k}"))).collect(),
        scalars: c.scalars.iter().enumerate().map(|(k, (s, _))| (s.as_str(), format!("P{k}"))).collect(),
        iters: BTreeMap::new(),
    };
    let mut d = c.def.clone();
    d.name.name = "f".into();
    for p in &mut d.params {
        match &mut p.dims {
            None => {
                if let Some(n) = r.scalars.get(p.name.name.as_str()) {
                    p.name.name = n.clone();
                }
            }
            Some(dims) => {
                for x in dims {
                    r.size(x);
                }
                r.tensor(&mut p.name);
            }
        }
    }
    for x in &mut d.returns {
        r.tensor(x);
    }
    for (s, st) in d.stmts.iter_mut().enumerate() {
        r.iters = c.iterators[s].iter().enumerate().map(|(k, n)| (n.clone(), format!("i{k}"))).collect();
        r.tensor(&mut st.lhs);
        for x in &mut st.lhs_indices {
            r.bare(x);
        }
        r.expr(&mut st.rhs);
        for w in &mut st.wheres {
            r.bare(&mut w.iter);
            r.expr(&mut w.lo);
            r.expr(&mut w.hi);
        }
    }
    pretty_def(&d)
}
