use std::fmt;

/// Source location of a node. Spans never take part in structural equality,
/// so a reparsed pretty-print compares equal to the original tree.
#[derive(Clone, Copy, Debug, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

impl Ident {
    pub fn new(name: impl Into<String>) -> Self {
        Ident { name: name.into(), span: Span::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ScalarType {
    Float,
    Double,
    Half,
    Int,
    Long,
    Byte,
    Uint32,
}

impl ScalarType {
    pub fn from_keyword(s: &str) -> Option<ScalarType> {
        Some(match s {
            "float" => ScalarType::Float,
            "double" => ScalarType::Double,
            "half" => ScalarType::Half,
            "int" => ScalarType::Int,
            "long" => ScalarType::Long,
            "byte" => ScalarType::Byte,
            "uint32" => ScalarType::Uint32,
            _ => return None,
        })
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::Float => "float",
            ScalarType::Double => "double",
            ScalarType::Half => "half",
            ScalarType::Int => "int",
            ScalarType::Long => "long",
            ScalarType::Byte => "byte",
            ScalarType::Uint32 => "uint32",
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, ScalarType::Int | ScalarType::Long | ScalarType::Byte | ScalarType::Uint32)
    }

    /// Bytes per element on the emulated machine.
    pub fn size_bytes(self) -> usize {
        match self {
            ScalarType::Double | ScalarType::Long => 8,
            ScalarType::Half => 2,
            ScalarType::Byte => 1,
            _ => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub ty: ScalarType,
    /// `None` for scalar parameters, otherwise the size symbols of each dimension.
    pub dims: Option<Vec<Ident>>,
    pub name: Ident,
}

impl Param {
    pub fn is_scalar(&self) -> bool {
        self.dims.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ReduceOp {
    Add,
    Mul,
    Min,
    Max,
}

impl ReduceOp {
    pub fn neutral(self) -> f64 {
        match self {
            ReduceOp::Add => 0.0,
            ReduceOp::Mul => 1.0,
            ReduceOp::Min => f64::INFINITY,
            ReduceOp::Max => f64::NEG_INFINITY,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ReduceOp::Add => "+",
            ReduceOp::Mul => "*",
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignOp {
    Assign,
    Reduce(ReduceOp),
    ReduceInit(ReduceOp),
}

impl AssignOp {
    pub fn reduce_op(self) -> Option<ReduceOp> {
        match self {
            AssignOp::Assign => None,
            AssignOp::Reduce(op) | AssignOp::ReduceInit(op) => Some(op),
        }
    }
}

impl fmt::Display for AssignOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignOp::Assign => write!(f, "="),
            AssignOp::Reduce(op) => write!(f, "{}=", op.symbol()),
            AssignOp::ReduceInit(op) => write!(f, "{}=!", op.symbol()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Number {
    Int(i64),
    Float(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "&&",
            BinaryOp::Or => "||",
        }
    }

    /// Binding strength, higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne => 3,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Builtin {
    Fmaxf,
    Fminf,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Abs,
}

impl Builtin {
    pub const ALL: [Builtin; 7] = [
        Builtin::Fmaxf,
        Builtin::Fminf,
        Builtin::Exp,
        Builtin::Log,
        Builtin::Tanh,
        Builtin::Sigmoid,
        Builtin::Abs,
    ];

    pub fn from_name(s: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Fmaxf => "fmaxf",
            Builtin::Fminf => "fminf",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Tanh => "tanh",
            Builtin::Sigmoid => "sigmoid",
            Builtin::Abs => "abs",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Fmaxf | Builtin::Fminf => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(Number, Span),
    /// Iterator, scalar parameter or size symbol; resolved by validation.
    Ident(Ident),
    /// `name(args)`: a tensor access or a builtin call.
    Call { func: Ident, args: Vec<Expr> },
    /// `tensor.dim`, the extent of a parameter dimension.
    DimSize { tensor: Ident, dim: usize },
    Unary { op: UnaryOp, operand: Box<Expr>, span: Span },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr>, span: Span },
    Select { cond: Box<Expr>, then: Box<Expr>, other: Box<Expr>, span: Span },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Num(_, s) => *s,
            Expr::Ident(id) => id.span,
            Expr::Call { func, .. } => func.span,
            Expr::DimSize { tensor, .. } => tensor.span,
            Expr::Unary { span, .. } | Expr::Binary { span, .. } | Expr::Select { span, .. } => *span,
        }
    }

    /// Visit every sub-expression in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Num(..) | Expr::Ident(_) | Expr::DimSize { .. } => {}
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Unary { operand, .. } => operand.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Select { cond, then, other, .. } => {
                cond.walk(f);
                then.walk(f);
                other.walk(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeConstraint {
    pub iter: Ident,
    pub lo: Expr,
    pub hi: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcStmt {
    pub lhs: Ident,
    pub lhs_indices: Vec<Ident>,
    pub op: AssignOp,
    pub rhs: Expr,
    pub wheres: Vec<RangeConstraint>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcDef {
    pub name: Ident,
    pub params: Vec<Param>,
    pub returns: Vec<Ident>,
    pub stmts: Vec<TcStmt>,
    pub span: Span,
}

impl TcDef {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TcProgram {
    pub defs: Vec<TcDef>,
}

impl TcProgram {
    pub fn def(&self, name: &str) -> Option<&TcDef> {
        self.defs.iter().find(|d| d.name.name == name)
    }
}
