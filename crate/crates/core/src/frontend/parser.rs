use super::ast::*;
use super::lexer::{Tok, Token};
use super::FrontendError;

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

pub fn parse(tokens: Vec<Token>) -> Result<TcProgram, FrontendError> {
    let mut p = Parser { toks: tokens, pos: 0 };
    let mut defs = Vec::new();
    while p.peek() != &Tok::Eof {
        defs.push(p.def()?);
    }
    Ok(TcProgram { defs })
}

fn join(span: Span, end: Span) -> Span {
    Span { start: span.start, end: end.end, line: span.line, col: span.col }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> FrontendError {
        FrontendError::Syntax {
            span: self.span(),
            message: format!("expected {}, found {}", expected.join(" or "), self.peek().describe()),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, FrontendError> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            Err(self.error(&[&format!("`{}`", tok.text())]))
        }
    }

    fn ident(&mut self) -> Result<Ident, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok(Ident { name, span })
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<Ident>, FrontendError> {
        let mut out = vec![self.ident()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn def(&mut self) -> Result<TcDef, FrontendError> {
        let start = self.expect(Tok::Def)?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            params.push(self.param()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                params.push(self.param()?);
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::Arrow)?;
        self.expect(Tok::LParen)?;
        let returns = self.ident_list()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return Err(self.error(&["`}`", "statement"]));
            }
            stmts.push(self.stmt()?);
        }
        let end = self.expect(Tok::RBrace)?;
        Ok(TcDef { name, params, returns, stmts, span: join(start, end) })
    }

    fn param(&mut self) -> Result<Param, FrontendError> {
        let ty_ident = self.ident().map_err(|_| self.error(&["scalar type"]))?;
        let Some(ty) = ScalarType::from_keyword(&ty_ident.name) else {
            return Err(FrontendError::Syntax {
                span: ty_ident.span,
                message: format!("expected scalar type, found identifier `{}`", ty_ident.name),
            });
        };
        let dims = if *self.peek() == Tok::LParen {
            self.bump();
            let d = self.ident_list()?;
            self.expect(Tok::RParen)?;
            Some(d)
        } else {
            None
        };
        let name = self.ident()?;
        Ok(Param { ty, dims, name })
    }

    fn stmt(&mut self) -> Result<TcStmt, FrontendError> {
        let start = self.span();
        // `(A,B) = f(...)` and `A = f(...)` are calls of other TC functions.
        let is_call_form = match (self.peek(), self.peek_at(1)) {
            (Tok::LParen, _) => true,
            (Tok::Ident(_), Tok::Assign | Tok::Comma) => true,
            _ => false,
        };
        if is_call_form {
            let mut depth = 0i32;
            let callee = loop {
                match self.peek().clone() {
                    Tok::LParen => depth += 1,
                    Tok::RParen => depth -= 1,
                    Tok::Assign if depth == 0 => {
                        self.bump();
                        break self.ident().ok();
                    }
                    Tok::Eof | Tok::RBrace => break None,
                    _ => {}
                }
                self.bump();
            };
            return Err(FrontendError::TcCallUnsupported {
                span: start,
                callee: callee.map(|c| c.name).unwrap_or_default(),
            });
        }
        let lhs = self.ident()?;
        self.expect(Tok::LParen)?;
        let lhs_indices = if *self.peek() == Tok::RParen { Vec::new() } else { self.ident_list()? };
        self.expect(Tok::RParen)?;
        let op = match self.peek().clone() {
            Tok::Assign => AssignOp::Assign,
            Tok::ReduceAssign(op, false) => AssignOp::Reduce(op),
            Tok::ReduceAssign(op, true) => AssignOp::ReduceInit(op),
            _ => return Err(self.error(&["`=`", "reduction operator"])),
        };
        self.bump();
        let rhs = self.expr()?;
        let mut wheres = Vec::new();
        if *self.peek() == Tok::Where {
            self.bump();
            wheres.push(self.range_constraint()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                wheres.push(self.range_constraint()?);
            }
        }
        let span = join(start, self.prev_span());
        Ok(TcStmt { lhs, lhs_indices, op, rhs, wheres, span })
    }

    fn range_constraint(&mut self) -> Result<RangeConstraint, FrontendError> {
        let iter = self.ident()?;
        // `in` is contextual: tensors may be named `in`.
        match self.peek() {
            Tok::Ident(n) if n == "in" => {
                self.bump();
            }
            _ => return Err(self.error(&["`in`"])),
        }
        let lo = self.binary(0)?;
        self.expect(Tok::Colon)?;
        let hi = self.binary(0)?;
        Ok(RangeConstraint { iter, lo, hi })
    }

    pub fn expr(&mut self) -> Result<Expr, FrontendError> {
        let cond = self.binary(0)?;
        if *self.peek() == Tok::Question {
            let span = self.bump().span;
            let then = self.expr()?;
            self.expect(Tok::Colon)?;
            // Right-nested: `a ? b : c ? d : e` is `a ? b : (c ? d : e)`.
            let other = self.expr()?;
            return Ok(Expr::Select { cond: Box::new(cond), then: Box::new(then), other: Box::new(other), span });
        }
        Ok(cond)
    }

    fn binop(&self) -> Option<BinaryOp> {
        Some(match self.peek() {
            Tok::Plus => BinaryOp::Add,
            Tok::Minus => BinaryOp::Sub,
            Tok::Star => BinaryOp::Mul,
            Tok::Slash => BinaryOp::Div,
            Tok::Percent => BinaryOp::Rem,
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            Tok::EqEq => BinaryOp::Eq,
            Tok::Ne => BinaryOp::Ne,
            Tok::AndAnd => BinaryOp::And,
            Tok::OrOr => BinaryOp::Or,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            let span = self.bump().span;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        let op = match self.peek() {
            Tok::Minus => UnaryOp::Neg,
            Tok::Bang => UnaryOp::Not,
            _ => return self.primary(),
        };
        let span = self.bump().span;
        let operand = self.unary()?;
        Ok(Expr::Unary { op, operand: Box::new(operand), span })
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Num(Number::Int(v), span))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Num(Number::Float(v), span))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let id = self.ident()?;
                match self.peek() {
                    Tok::LParen => {
                        self.bump();
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            args.push(self.expr()?);
                            while *self.peek() == Tok::Comma {
                                self.bump();
                                args.push(self.expr()?);
                            }
                        }
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Call { func: id, args })
                    }
                    Tok::Dot => {
                        self.bump();
                        match self.peek().clone() {
                            Tok::Int(d) if d >= 0 => {
                                self.bump();
                                Ok(Expr::DimSize { tensor: id, dim: d as usize })
                            }
                            _ => Err(self.error(&["dimension number"])),
                        }
                    }
                    _ => Ok(Expr::Ident(id)),
                }
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{lex, parse_program};
    use super::*;

    fn one(src: &str) -> TcDef {
        let mut p = parse_program(src).unwrap();
        assert_eq!(p.defs.len(), 1);
        p.defs.remove(0)
    }

    #[test]
    fn identity_copy() {
        let d = one("def f(float(N) A)->(B){B(i)=A(i)}");
        assert_eq!(d.stmts.len(), 1);
        assert_eq!(d.stmts[0].op, AssignOp::Assign);
    }

    #[test]
    fn precedence_mul_binds_tighter() {
        let d = one("def f(float(N) A)->(B){B(i)=A(i)+A(i)*2}");
        match &d.stmts[0].rhs {
            Expr::Binary { op: BinaryOp::Add, rhs, .. } => {
                assert!(matches!(**rhs, Expr::Binary { op: BinaryOp::Mul, .. }))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subtraction_left_assoc() {
        let d = one("def f(float(N) A)->(B){B(i)=A(i)-1-2}");
        match &d.stmts[0].rhs {
            Expr::Binary { op: BinaryOp::Sub, lhs, rhs, .. } => {
                assert!(matches!(**lhs, Expr::Binary { op: BinaryOp::Sub, .. }));
                assert!(matches!(**rhs, Expr::Num(Number::Int(2), _)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn select_right_nested() {
        let d = one("def f(float(N) A)->(B){B(i)= i < 1 ? 0 : i < 2 ? 1 : A(i)}");
        match &d.stmts[0].rhs {
            Expr::Select { other, .. } => assert!(matches!(**other, Expr::Select { .. })),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tc_call_rejected() {
        let err = parse_program("def g(float(N) A)->(B,C){ (B,C) = 2LUT(A, A) }").unwrap_err();
        assert!(matches!(err, FrontendError::TcCallUnsupported { ref callee, .. } if callee == "2LUT"), "{err:?}");
        let err = parse_program("def g(float(N) A)->(B){ B = MLP1(A) }").unwrap_err();
        assert!(matches!(err, FrontendError::TcCallUnsupported { .. }));
    }

    #[test]
    fn syntax_error_reports_expected() {
        let err = parse(lex("def f(float(N) A)->(B){B(i) A(i)}").unwrap()).unwrap_err();
        match err {
            FrontendError::Syntax { message, span } => {
                assert!(message.contains("expected `=` or reduction operator"), "{message}");
                assert_eq!(span.col, 29);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn where_and_dim_size() {
        let d = one("def f(float(N) A)->(B){B(i) +=! A(i+k) where k in 0:A.0 - 1, i in 0:1}");
        assert_eq!(d.stmts[0].wheres.len(), 2);
        assert!(matches!(d.stmts[0].op, AssignOp::ReduceInit(ReduceOp::Add)));
    }
}
