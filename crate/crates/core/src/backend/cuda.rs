//! CUDA-dialect text of a kernel, for inspection only.

use std::fmt::Write as _;

use crate::frontend::{BinaryOp, Builtin, UnaryOp};
use crate::promotion::BufferDim;
use crate::schedule::CopyDir;
use crate::semantics::{InstantiatedDef, StmtKind, Subscript, VExpr};

use super::ir::{IExpr, KStmt, KernelIR};

const HELPERS: &str = "__device__ inline int tc_floordiv(int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }\n\
__device__ inline int tc_mod(int a, int b) { int r = a % b; return r < 0 ? r + b : r; }\n";

struct Emitter<'a> {
    inst: &'a InstantiatedDef,
    ir: &'a KernelIR,
    names: Vec<String>,
    out: String,
}

fn builtin_name(b: Builtin) -> &'static str {
    match b {
        Builtin::Fmaxf => "fmaxf",
        Builtin::Fminf => "fminf",
        Builtin::Exp => "expf",
        Builtin::Log => "logf",
        Builtin::Tanh => "tanhf",
        Builtin::Sigmoid => "tc_sigmoid",
        Builtin::Abs => "fabsf",
    }
}

fn binop(op: BinaryOp) -> &'static str {
    use BinaryOp::*;
    match op {
        Add => "+",
        Sub => "-",
        Mul => "*",
        Div => "/",
        Rem => "%",
        Lt => "<",
        Le => "<=",
        Gt => ">",
        Ge => ">=",
        Eq => "==",
        Ne => "!=",
        And => "&&",
        Or => "||",
    }
}

impl Emitter<'_> {
    fn line(&mut self, depth: usize, s: &str) {
        let _ = writeln!(self.out, "{}{}", "  ".repeat(depth), s);
    }

    fn affine_text(&self, coeffs: &[i64], c: i64, iters: &[String]) -> String {
        let mut parts = Vec::new();
        for (k, a) in coeffs.iter().enumerate() {
            match *a {
                0 => {}
                1 => parts.push(iters[k].clone()),
                a => parts.push(format!("{a} * {}", iters[k])),
            }
        }
        if c != 0 || parts.is_empty() {
            parts.push(c.to_string());
        }
        parts.join(" + ")
    }

    fn access_text(&self, s: usize, k: usize, iters: &[String]) -> String {
        let st = &self.inst.stmts[s];
        let a = &st.accesses[k];
        let subs: Vec<String> = a
            .subs
            .iter()
            .map(|sub| match sub {
                Subscript::Affine(f) => self.affine_text(&f.coeffs, f.c, iters),
                Subscript::Indirect(e) => self.vexpr(s, e, iters),
            })
            .collect();
        match self.ir.redirect.get(&(s, k)) {
            Some(b) => {
                let buf = &self.ir.buffers[*b];
                let local: Vec<String> = buf
                    .spec
                    .dims
                    .iter()
                    .zip(&buf.offsets)
                    .map(|(d, o)| {
                        let g = match d {
                            BufferDim::Direct { dim, .. } => subs[*dim].clone(),
                            BufferDim::Iter { iter, .. } => iters[*iter].clone(),
                        };
                        format!("[{g} - {}]", o.text(&self.names))
                    })
                    .collect();
                format!("{}{}", buf.spec.name, local.concat())
            }
            None => {
                let t = &self.inst.tensors[a.tensor];
                let idx: Vec<String> = subs.iter().map(|x| format!("[{x}]")).collect();
                format!("{}{}", t.name, idx.concat())
            }
        }
    }

    fn vexpr(&self, s: usize, e: &VExpr, iters: &[String]) -> String {
        match e {
            VExpr::Int(v) => v.to_string(),
            VExpr::Float(v) => format!("{v:?}f"),
            VExpr::Iter(i) => iters[*i].clone(),
            VExpr::Scalar(k) => self.inst.scalars[*k].name.clone(),
            VExpr::Access(k) => self.access_text(s, *k, iters),
            VExpr::Builtin(b, args) => {
                let a: Vec<String> = args.iter().map(|x| self.vexpr(s, x, iters)).collect();
                format!("{}({})", builtin_name(*b), a.join(", "))
            }
            VExpr::Unary(UnaryOp::Neg, a) => format!("-({})", self.vexpr(s, a, iters)),
            VExpr::Unary(UnaryOp::Not, a) => format!("!({})", self.vexpr(s, a, iters)),
            VExpr::Binary(op, a, b) => format!("({} {} {})", self.vexpr(s, a, iters), binop(*op), self.vexpr(s, b, iters)),
            VExpr::Select(c, a, b) => format!("({} ? {} : {})", self.vexpr(s, c, iters), self.vexpr(s, a, iters), self.vexpr(s, b, iters)),
        }
    }

    fn body(&mut self, b: &[KStmt], depth: usize) {
        for s in b {
            match s {
                KStmt::Loop { var, lo, hi, step, unroll, body } => {
                    if *unroll > 1 {
                        self.line(depth, &format!("#pragma unroll {unroll}"));
                    }
                    let v = &self.names[*var];
                    let head = format!("for (int {v} = {}; {v} < {}; {v} += {step}) {{", lo.text(&self.names), hi.text(&self.names));
                    self.line(depth, &head);
                    self.body(body, depth + 1);
                    self.line(depth, "}");
                }
                KStmt::If { conds, body } => {
                    let c: Vec<String> = conds.iter().map(|c| c.text(&self.names)).collect();
                    self.line(depth, &format!("if ({}) {{", c.join(" && ")));
                    self.body(body, depth + 1);
                    self.line(depth, "}");
                }
                KStmt::Compute { stmt, iters } => {
                    let it: Vec<String> = iters.iter().map(|e| self.iexpr(e)).collect();
                    let st = &self.inst.stmts[*stmt];
                    let lhs = self.access_text(*stmt, 0, &it);
                    let text = match st.kind {
                        StmtKind::Assign => format!("{lhs} = {};", self.vexpr(*stmt, &st.rhs, &it)),
                        StmtKind::Init(op) => format!("{lhs} = {};", neutral_text(op.neutral())),
                        StmtKind::Reduce(op) => {
                            let r = self.vexpr(*stmt, &st.rhs, &it);
                            match op.symbol() {
                                "min" => format!("{lhs} = fminf({lhs}, {r});"),
                                "max" => format!("{lhs} = fmaxf({lhs}, {r});"),
                                sym => format!("{lhs} {sym}= {r};"),
                            }
                        }
                    };
                    self.line(depth, &format!("{text} // {}", st.name));
                }
                KStmt::Copy { buffer, dir } => {
                    let buf = &self.ir.buffers[*buffer];
                    let t = &self.inst.tensors[buf.spec.tensor];
                    let offs: Vec<String> = buf.offsets.iter().map(|o| o.text(&self.names)).collect();
                    let d = match dir {
                        CopyDir::In => "in",
                        CopyDir::Out => "out",
                    };
                    self.line(depth, &format!("// copy-{d} {} <-> {} tile at ({})", buf.spec.name, t.name, offs.join(", ")));
                    let cells = buf.spec.cells();
                    let (start, step) = if buf.spec.private { ("0".to_string(), "1".to_string()) } else { ("tc_tid".into(), "tc_nthreads".into()) };
                    self.line(depth, &format!("for (int c = {start}; c < {cells}; c += {step}) {{"));
                    let local = buf.spec.name.clone();
                    let stmt = match dir {
                        CopyDir::In => format!("tc_flat({local})[c] = tc_gather({}, c);", t.name),
                        CopyDir::Out => format!("tc_scatter({}, c, tc_flat({local})[c]);", t.name),
                    };
                    self.line(depth + 1, &stmt);
                    self.line(depth, "}");
                }
                KStmt::Barrier => self.line(depth, "__syncthreads();"),
            }
        }
    }

    fn iexpr(&self, e: &IExpr) -> String {
        e.text(&self.names)
    }
}

fn neutral_text(v: f64) -> String {
    if v == f64::INFINITY {
        "INFINITY".into()
    } else if v == f64::NEG_INFINITY {
        "-INFINITY".into()
    } else {
        format!("{v:?}f")
    }
}

/// Human-readable CUDA-dialect text; never compiled.
pub fn emit_cuda_text(inst: &InstantiatedDef, ir: &KernelIR) -> String {
    let mut names = ir.var_names.clone();
    for (k, n) in ["blockIdx.x", "blockIdx.y", "blockIdx.z", "threadIdx.x", "threadIdx.y", "threadIdx.z"].iter().enumerate() {
        names[k] = n.to_string();
    }
    let mut e = Emitter { inst, ir, names, out: String::new() };
    e.out.push_str(HELPERS);
    let params: Vec<String> = inst
        .tensors
        .iter()
        .map(|t| {
            let c = if t.role == crate::frontend::TensorRole::Input { "const " } else { "" };
            format!("{c}{}* {}", t.ty.keyword(), t.name)
        })
        .chain(inst.scalars.iter().map(|s| format!("{} {}", s.ty.keyword(), s.name)))
        .collect();
    let grid: Vec<String> = ir.grid.iter().map(|x| x.to_string()).collect();
    let block: Vec<String> = ir.block.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(e.out, "// grid ({}), block ({})", grid.join(", "), block.join(", "));
    let _ = writeln!(e.out, "__global__ void {}({}) {{", inst.name, params.join(", "));
    for b in &ir.buffers {
        if b.spec.private {
            continue;
        }
        let dims: Vec<String> = b.spec.shape().iter().map(|x| format!("[{x}]")).collect();
        e.line(1, &format!("__shared__ {} {}{};", b.spec.ty.keyword(), b.spec.name, dims.concat()));
    }
    for b in &ir.buffers {
        if b.spec.private {
            let dims: Vec<String> = b.spec.shape().iter().map(|x| format!("[{x}]")).collect();
            e.line(1, &format!("{} {}{};", b.spec.ty.keyword(), b.spec.name, dims.concat()));
        }
    }
    let body = ir.body.clone();
    e.body(&body, 1);
    e.out.push_str("}\n");
    e.out
}
