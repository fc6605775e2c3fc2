//! Scalar values, dense tensors and expression evaluation shared by the
//! reference interpreter and the emulator.

use std::collections::BTreeMap;

use crate::frontend::{BinaryOp, Builtin, ReduceOp, ScalarType, UnaryOp};
use crate::semantics::{Access, InstantiatedDef, Statement, StmtKind, Subscript, VExpr};

use super::BackendError;

/// Integers are kept as `i64` and floats as `f64` during execution; values
/// are narrowed to their element type when results are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    I(i64),
    F(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::I(v) => v as f64,
            Value::F(v) => v,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Value::I(v) => v,
            Value::F(v) => v as i64,
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Value::I(v) => v != 0,
            Value::F(v) => v != 0.0,
        }
    }

    pub fn zero(ty: ScalarType) -> Value {
        if ty.is_integer() {
            Value::I(0)
        } else {
            Value::F(0.0)
        }
    }

    /// Representation used while computing with an element of `ty`.
    pub fn convert(self, ty: ScalarType) -> Value {
        if ty.is_integer() {
            Value::I(self.as_i64())
        } else {
            Value::F(self.as_f64())
        }
    }

    /// Round to the storage precision of `ty`.
    pub fn narrow(self, ty: ScalarType) -> Value {
        match ty {
            ScalarType::Float | ScalarType::Half => Value::F(self.as_f64() as f32 as f64),
            ScalarType::Double => Value::F(self.as_f64()),
            ScalarType::Int => Value::I(self.as_i64() as i32 as i64),
            ScalarType::Long => Value::I(self.as_i64()),
            ScalarType::Byte => Value::I(self.as_i64() as u8 as i64),
            ScalarType::Uint32 => Value::I(self.as_i64() as u32 as i64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub ty: ScalarType,
    pub shape: Vec<usize>,
    pub data: Vec<Value>,
}

impl Tensor {
    pub fn zeros(ty: ScalarType, shape: &[usize]) -> Self {
        Tensor { ty, shape: shape.to_vec(), data: vec![Value::zero(ty); shape.iter().product()] }
    }

    pub fn from_f64(ty: ScalarType, shape: &[usize], data: Vec<f64>) -> Self {
        Tensor { ty, shape: shape.to_vec(), data: data.into_iter().map(|v| Value::F(v).convert(ty)).collect() }
    }

    pub fn from_i64(ty: ScalarType, shape: &[usize], data: Vec<i64>) -> Self {
        Tensor { ty, shape: shape.to_vec(), data: data.into_iter().map(|v| Value::I(v).convert(ty)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major offset, or `None` when out of bounds.
    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        linear(&self.shape, idx)
    }

    pub fn narrowed(&self) -> Tensor {
        Tensor { ty: self.ty, shape: self.shape.clone(), data: self.data.iter().map(|v| v.narrow(self.ty)).collect() }
    }
}

pub fn linear(shape: &[usize], idx: &[i64]) -> Option<usize> {
    if idx.len() != shape.len() {
        return None;
    }
    let mut off = 0usize;
    for (i, n) in idx.iter().zip(shape) {
        if *i < 0 || *i as usize >= *n {
            return None;
        }
        off = off * n + *i as usize;
    }
    Some(off)
}

/// Named inputs of one invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bindings {
    pub tensors: BTreeMap<String, Tensor>,
    pub scalars: BTreeMap<String, Value>,
}

/// Check shapes and build the initial memory image: inputs and in/out
/// tensors from the bindings, everything else zero.
pub fn initial_memory(inst: &InstantiatedDef, b: &Bindings) -> Result<(Vec<Tensor>, Vec<Value>), BackendError> {
    let mut mem = Vec::new();
    for t in &inst.tensors {
        let needed = t.role == crate::frontend::TensorRole::Input || t.inout;
        match b.tensors.get(&t.name) {
            Some(x) if needed => {
                if x.shape != t.shape {
                    return Err(BackendError::ShapeMismatch { tensor: t.name.clone(), expected: t.shape.clone(), got: x.shape.clone() });
                }
                mem.push(Tensor { ty: t.ty, shape: t.shape.clone(), data: x.data.iter().map(|v| v.convert(t.ty)).collect() });
            }
            None if needed => return Err(BackendError::MissingInput(t.name.clone())),
            _ => mem.push(Tensor::zeros(t.ty, &t.shape)),
        }
    }
    let scalars = inst
        .scalars
        .iter()
        .map(|s| b.scalars.get(&s.name).map(|v| v.convert(s.ty)).ok_or_else(|| BackendError::MissingInput(s.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((mem, scalars))
}

/// Memory reads made on behalf of one statement instance.
pub trait Reader {
    fn read(&mut self, access: usize, idx: &[i64]) -> Result<Value, BackendError>;
}

/// Evaluation context of one statement instance.
pub struct Instance<'a> {
    pub inst: &'a InstantiatedDef,
    pub stmt: &'a Statement,
    pub iters: &'a [i64],
    pub scalars: &'a [Value],
}

impl Instance<'_> {
    /// Subscripts of an access, evaluating indirect parts through `r`.
    pub fn subscripts(&self, access: &Access, r: &mut dyn Reader) -> Result<Vec<i64>, BackendError> {
        access
            .subs
            .iter()
            .map(|s| match s {
                Subscript::Affine(f) => Ok(f.eval(self.iters)),
                Subscript::Indirect(e) => Ok(self.eval(e, r)?.as_i64()),
            })
            .collect()
    }

    fn load(&self, k: usize, r: &mut dyn Reader) -> Result<Value, BackendError> {
        let idx = self.subscripts(&self.stmt.accesses[k], r)?;
        r.read(k, &idx)
    }

    pub fn eval(&self, e: &VExpr, r: &mut dyn Reader) -> Result<Value, BackendError> {
        Ok(match e {
            VExpr::Int(v) => Value::I(*v),
            VExpr::Float(v) => Value::F(*v),
            VExpr::Iter(i) => Value::I(self.iters[*i]),
            VExpr::Scalar(s) => self.scalars[*s],
            VExpr::Access(k) => self.load(*k, r)?,
            VExpr::Builtin(b, args) => {
                let vals = args.iter().map(|a| self.eval(a, r)).collect::<Result<Vec<_>, _>>()?;
                builtin(*b, &vals)
            }
            VExpr::Unary(op, a) => {
                let v = self.eval(a, r)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::I(x)) => Value::I(x.wrapping_neg()),
                    (UnaryOp::Neg, Value::F(x)) => Value::F(-x),
                    (UnaryOp::Not, v) => Value::I(!v.truthy() as i64),
                }
            }
            VExpr::Binary(op, a, b) => {
                let x = self.eval(a, r)?;
                let y = self.eval(b, r)?;
                binary(*op, x, y)
            }
            VExpr::Select(c, a, b) => {
                if self.eval(c, r)?.truthy() {
                    self.eval(a, r)?
                } else {
                    self.eval(b, r)?
                }
            }
        })
    }

    /// Value stored by the instance.
    pub fn execute(&self, r: &mut dyn Reader) -> Result<Value, BackendError> {
        let ty = self.inst.tensors[self.stmt.lhs_tensor()].ty;
        let v = match self.stmt.kind {
            StmtKind::Assign => self.eval(&self.stmt.rhs, r)?,
            StmtKind::Init(op) => Value::F(op.neutral()),
            StmtKind::Reduce(op) => {
                let acc = self.load(self.stmt.accesses.len() - 1, r)?;
                let v = self.eval(&self.stmt.rhs, r)?;
                reduce(op, acc.convert(ty), v)
            }
        };
        Ok(v.convert(ty))
    }
}

pub fn reduce(op: ReduceOp, a: Value, b: Value) -> Value {
    match (op, a, b) {
        (ReduceOp::Add, Value::I(x), Value::I(y)) => Value::I(x.wrapping_add(y)),
        (ReduceOp::Mul, Value::I(x), Value::I(y)) => Value::I(x.wrapping_mul(y)),
        (ReduceOp::Min, Value::I(x), Value::I(y)) => Value::I(x.min(y)),
        (ReduceOp::Max, Value::I(x), Value::I(y)) => Value::I(x.max(y)),
        (ReduceOp::Add, x, y) => Value::F(x.as_f64() + y.as_f64()),
        (ReduceOp::Mul, x, y) => Value::F(x.as_f64() * y.as_f64()),
        (ReduceOp::Min, x, y) => Value::F(x.as_f64().min(y.as_f64())),
        (ReduceOp::Max, x, y) => Value::F(x.as_f64().max(y.as_f64())),
    }
}

fn builtin(b: Builtin, v: &[Value]) -> Value {
    let f = |k: usize| v[k].as_f64();
    match b {
        Builtin::Fmaxf => Value::F(f(0).max(f(1))),
        Builtin::Fminf => Value::F(f(0).min(f(1))),
        Builtin::Exp => Value::F(f(0).exp()),
        Builtin::Log => Value::F(f(0).ln()),
        Builtin::Tanh => Value::F(f(0).tanh()),
        Builtin::Sigmoid => Value::F(1.0 / (1.0 + (-f(0)).exp())),
        Builtin::Abs => match v[0] {
            Value::I(x) => Value::I(x.wrapping_abs()),
            Value::F(x) => Value::F(x.abs()),
        },
    }
}

fn binary(op: BinaryOp, x: Value, y: Value) -> Value {
    use BinaryOp::*;
    let cmp = |b: bool| Value::I(b as i64);
    match (x, y) {
        (Value::I(a), Value::I(b)) => match op {
            Add => Value::I(a.wrapping_add(b)),
            Sub => Value::I(a.wrapping_sub(b)),
            Mul => Value::I(a.wrapping_mul(b)),
            Div => Value::I(if b == 0 { 0 } else { a.wrapping_div(b) }),
            Rem => Value::I(if b == 0 { 0 } else { a.wrapping_rem(b) }),
            Lt => cmp(a < b),
            Le => cmp(a <= b),
            Gt => cmp(a > b),
            Ge => cmp(a >= b),
            Eq => cmp(a == b),
            Ne => cmp(a != b),
            And => cmp(a != 0 && b != 0),
            Or => cmp(a != 0 || b != 0),
        },
        _ => {
            let (a, b) = (x.as_f64(), y.as_f64());
            match op {
                Add => Value::F(a + b),
                Sub => Value::F(a - b),
                Mul => Value::F(a * b),
                Div => Value::F(a / b),
                Rem => Value::F(a % b),
                Lt => cmp(a < b),
                Le => cmp(a <= b),
                Gt => cmp(a > b),
                Ge => cmp(a >= b),
                Eq => cmp(a == b),
                Ne => cmp(a != b),
                And => cmp(a != 0.0 && b != 0.0),
                Or => cmp(a != 0.0 || b != 0.0),
            }
        }
    }
}
