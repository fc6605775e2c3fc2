//! Kernel IR: the loop nest executed by every thread of every block.

use crate::promotion::BufferSpec;
use crate::schedule::CopyDir;

/// Index arithmetic over block ids, thread ids and loop variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IExpr {
    Const(i64),
    Var(usize),
    Add(Vec<IExpr>),
    Mul(i64, Box<IExpr>),
    FloorDiv(Box<IExpr>, i64),
    /// Non-negative remainder by a positive constant.
    Mod(Box<IExpr>, i64),
    Min(Vec<IExpr>),
    Max(Vec<IExpr>),
}

/// Variables 0..3 are block ids, 3..6 thread ids, loops follow.
pub const BLOCK_VAR: usize = 0;
pub const THREAD_VAR: usize = 3;
pub const FIRST_LOOP_VAR: usize = 6;

impl IExpr {
    pub fn add(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Const(x), IExpr::Const(y)) => IExpr::Const(x + y),
            (IExpr::Const(0), e) | (e, IExpr::Const(0)) => e,
            (IExpr::Add(mut xs), IExpr::Const(c)) => {
                if let Some(IExpr::Const(k)) = xs.last_mut() {
                    *k += c;
                } else {
                    xs.push(IExpr::Const(c));
                }
                IExpr::Add(xs)
            }
            (IExpr::Add(mut xs), e) => {
                xs.insert(xs.len().saturating_sub(matches!(xs.last(), Some(IExpr::Const(_))) as usize), e);
                IExpr::Add(xs)
            }
            (a, b) => IExpr::Add(vec![a, b]),
        }
    }

    pub fn sub(a: IExpr, b: IExpr) -> IExpr {
        IExpr::add(a, IExpr::mul(-1, b))
    }

    pub fn mul(k: i64, e: IExpr) -> IExpr {
        match e {
            _ if k == 0 => IExpr::Const(0),
            e if k == 1 => e,
            IExpr::Const(c) => IExpr::Const(k * c),
            e => IExpr::Mul(k, Box::new(e)),
        }
    }

    pub fn floor_div(e: IExpr, d: i64) -> IExpr {
        match e {
            e if d == 1 => e,
            IExpr::Const(c) => IExpr::Const(num_integer::Integer::div_floor(&c, &d)),
            e => IExpr::FloorDiv(Box::new(e), d),
        }
    }

    pub fn modulo(e: IExpr, d: i64) -> IExpr {
        match e {
            _ if d == 1 => IExpr::Const(0),
            IExpr::Const(c) => IExpr::Const(num_integer::Integer::mod_floor(&c, &d)),
            e => IExpr::Mod(Box::new(e), d),
        }
    }

    pub fn min(xs: Vec<IExpr>) -> IExpr {
        fold(xs, true)
    }

    pub fn max(xs: Vec<IExpr>) -> IExpr {
        fold(xs, false)
    }

    pub fn eval(&self, env: &[i64]) -> i64 {
        match self {
            IExpr::Const(c) => *c,
            IExpr::Var(v) => env[*v],
            IExpr::Add(xs) => xs.iter().map(|x| x.eval(env)).sum(),
            IExpr::Mul(k, e) => k * e.eval(env),
            IExpr::FloorDiv(e, d) => num_integer::Integer::div_floor(&e.eval(env), d),
            IExpr::Mod(e, d) => num_integer::Integer::mod_floor(&e.eval(env), d),
            IExpr::Min(xs) => xs.iter().map(|x| x.eval(env)).min().unwrap(),
            IExpr::Max(xs) => xs.iter().map(|x| x.eval(env)).max().unwrap(),
        }
    }

    /// C expression text; `Mod` assumes a floor-modulo helper `tc_mod`.
    pub fn text(&self, names: &[String]) -> String {
        match self {
            IExpr::Const(c) => c.to_string(),
            IExpr::Var(v) => names[*v].clone(),
            IExpr::Add(xs) => {
                let mut s = String::new();
                for (k, x) in xs.iter().enumerate() {
                    let t = x.text(names);
                    if k == 0 {
                        s = t;
                    } else if let Some(rest) = t.strip_prefix('-') {
                        s = format!("{s} - {rest}");
                    } else {
                        s = format!("{s} + {t}");
                    }
                }
                format!("({s})")
            }
            IExpr::Mul(k, e) if *k == -1 => format!("-{}", e.text(names)),
            IExpr::Mul(k, e) => format!("{k} * {}", e.text(names)),
            IExpr::FloorDiv(e, d) => format!("tc_floordiv({}, {d})", e.text(names)),
            IExpr::Mod(e, d) => format!("tc_mod({}, {d})", e.text(names)),
            IExpr::Min(xs) => nest("min", xs, names),
            IExpr::Max(xs) => nest("max", xs, names),
        }
    }
}

fn nest(f: &str, xs: &[IExpr], names: &[String]) -> String {
    let mut it = xs.iter().rev();
    let mut s = it.next().unwrap().text(names);
    for x in it {
        s = format!("{f}({}, {s})", x.text(names));
    }
    s
}

fn fold(xs: Vec<IExpr>, is_min: bool) -> IExpr {
    let mut out: Vec<IExpr> = Vec::new();
    let mut konst: Option<i64> = None;
    for x in xs {
        match x {
            IExpr::Const(c) => konst = Some(konst.map_or(c, |k| if is_min { k.min(c) } else { k.max(c) })),
            x if !out.contains(&x) => out.push(x),
            _ => {}
        }
    }
    if let Some(k) = konst {
        out.push(IExpr::Const(k));
    }
    match out.len() {
        1 => out.pop().unwrap(),
        _ if is_min => IExpr::Min(out),
        _ => IExpr::Max(out),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cond {
    /// `a < b`
    Lt(IExpr, IExpr),
    /// `a >= b`
    Ge(IExpr, IExpr),
    /// `a == b`
    Eq(IExpr, IExpr),
}

impl Cond {
    pub fn holds(&self, env: &[i64]) -> bool {
        match self {
            Cond::Lt(a, b) => a.eval(env) < b.eval(env),
            Cond::Ge(a, b) => a.eval(env) >= b.eval(env),
            Cond::Eq(a, b) => a.eval(env) == b.eval(env),
        }
    }

    pub fn text(&self, names: &[String]) -> String {
        match self {
            Cond::Lt(a, b) => format!("{} < {}", a.text(names), b.text(names)),
            Cond::Ge(a, b) => format!("{} >= {}", a.text(names), b.text(names)),
            Cond::Eq(a, b) => format!("{} == {}", a.text(names), b.text(names)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KStmt {
    /// `for (v = lo; v < hi; v += step)`
    Loop { var: usize, lo: IExpr, hi: IExpr, step: i64, unroll: u32, body: Vec<KStmt> },
    If { conds: Vec<Cond>, body: Vec<KStmt> },
    /// One statement instance at the given iterator values.
    Compute { stmt: usize, iters: Vec<IExpr> },
    Copy { buffer: usize, dir: CopyDir },
    Barrier,
}

/// Promoted buffer with its tile offsets in scope variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoweredBuffer {
    pub spec: BufferSpec,
    pub offsets: Vec<IExpr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelIR {
    pub name: String,
    pub grid: Vec<i64>,
    pub block: Vec<i64>,
    pub var_names: Vec<String>,
    pub buffers: Vec<LoweredBuffer>,
    /// Statement access → buffer.
    pub redirect: std::collections::BTreeMap<(usize, usize), usize>,
    pub body: Vec<KStmt>,
    pub unroll_copies: bool,
}

impl KernelIR {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn barrier_count(&self) -> usize {
        fn count(b: &[KStmt]) -> usize {
            b.iter()
                .map(|s| match s {
                    KStmt::Barrier => 1,
                    KStmt::Loop { body, .. } | KStmt::If { body, .. } => count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.body)
    }

    /// Copy of the kernel with the `k`-th barrier (pre-order) removed.
    pub fn without_barrier(&self, k: usize) -> KernelIR {
        fn go(b: &[KStmt], k: usize, seen: &mut usize) -> Vec<KStmt> {
            let mut out = Vec::new();
            for s in b {
                match s {
                    KStmt::Barrier => {
                        if *seen != k {
                            out.push(KStmt::Barrier);
                        }
                        *seen += 1;
                    }
                    KStmt::Loop { var, lo, hi, step, unroll, body } => {
                        out.push(KStmt::Loop { var: *var, lo: lo.clone(), hi: hi.clone(), step: *step, unroll: *unroll, body: go(body, k, seen) })
                    }
                    KStmt::If { conds, body } => out.push(KStmt::If { conds: conds.clone(), body: go(body, k, seen) }),
                    other => out.push(other.clone()),
                }
            }
            out
        }
        let mut ir = self.clone();
        ir.body = go(&self.body, k, &mut 0);
        ir
    }
}
