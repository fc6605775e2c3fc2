use super::ast::{ReduceOp, Span};
use super::FrontendError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Def,
    Where,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Question,
    Dot,
    Arrow,
    Bang,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Assign,
    /// `+=`, `*=`, `min=`, `max=` and their `!` forms.
    ReduceAssign(ReduceOp, bool),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Float(v) => format!("number `{v}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    pub fn text(&self) -> String {
        match self {
            Tok::Ident(s) => s.clone(),
            Tok::Int(v) => v.to_string(),
            Tok::Float(v) => format!("{v:?}"),
            Tok::Def => "def".into(),
            Tok::Where => "where".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::Comma => ",".into(),
            Tok::Colon => ":".into(),
            Tok::Question => "?".into(),
            Tok::Dot => ".".into(),
            Tok::Arrow => "->".into(),
            Tok::Bang => "!".into(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::Slash => "/".into(),
            Tok::Percent => "%".into(),
            Tok::Lt => "<".into(),
            Tok::Le => "<=".into(),
            Tok::Gt => ">".into(),
            Tok::Ge => ">=".into(),
            Tok::EqEq => "==".into(),
            Tok::Ne => "!=".into(),
            Tok::AndAnd => "&&".into(),
            Tok::OrOr => "||".into(),
            Tok::Assign => "=".into(),
            Tok::ReduceAssign(op, init) => format!("{}={}", op.symbol(), if *init { "!" } else { "" }),
            Tok::Eof => "<eof>".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&self, k: usize) -> Option<u8> {
        self.src.get(self.pos + k).copied()
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else if c & 0xC0 != 0x80 {
            self.col += 1;
        }
        c
    }
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// Length of a C-style number literal at the start of `s`, if any.
fn number_len(s: &[u8]) -> Option<(usize, bool)> {
    let mut i = 0;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i;
    let mut float = false;
    if i < s.len() && s[i] == b'.' {
        let mut j = i + 1;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if int_digits > 0 || j > i + 1 {
            float = true;
            i = j;
        }
    }
    if int_digits == 0 && !float {
        return None;
    }
    if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
        let mut j = i + 1;
        if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
            j += 1;
        }
        let d = j;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if j > d {
            float = true;
            i = j;
        }
    }
    if float && i < s.len() && (s[i] == b'f' || s[i] == b'F') {
        i += 1;
    }
    Some((i, float))
}

pub fn lex(source: &str) -> Result<Vec<Token>, FrontendError> {
    let mut cur = Cursor { src: source.as_bytes(), pos: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    loop {
        while let Some(c) = cur.peek(0) {
            if c == b'#' {
                while let Some(c) = cur.peek(0) {
                    if c == b'\n' {
                        break;
                    }
                    cur.bump();
                }
            } else if c.is_ascii_whitespace() {
                cur.bump();
            } else {
                break;
            }
        }
        let start = cur.pos;
        let (line, col) = (cur.line, cur.col);
        let Some(c) = cur.peek(0) else {
            out.push(Token { tok: Tok::Eof, span: Span { start, end: start, line, col } });
            return Ok(out);
        };
        let rest = &cur.src[cur.pos..];
        let after_ident = matches!(out.last(), Some(Token { tok: Tok::Ident(_), .. }));
        let leading_dot = c == b'.' && !after_ident && rest.get(1).is_some_and(|d| d.is_ascii_digit());
        let tok = if c.is_ascii_digit() || leading_dot {
            let (n, float) = number_len(rest).expect("digit starts a number");
            if rest.get(n).copied().is_some_and(is_ident_char) {
                // `2LUT`: identifiers may start with digits.
                let m = rest.iter().take_while(|&&b| is_ident_char(b)).count();
                for _ in 0..m {
                    cur.bump();
                }
                Tok::Ident(source[start..start + m].to_string())
            } else {
                for _ in 0..n {
                    cur.bump();
                }
                let text = &source[start..start + n];
                if float {
                    let t = text.trim_end_matches(['f', 'F']);
                    Tok::Float(t.parse().map_err(|_| FrontendError::Syntax {
                        span: Span { start, end: cur.pos, line, col },
                        message: format!("malformed number `{text}`"),
                    })?)
                } else {
                    Tok::Int(text.parse().map_err(|_| FrontendError::Syntax {
                        span: Span { start, end: cur.pos, line, col },
                        message: format!("integer literal `{text}` out of range"),
                    })?)
                }
            }
        } else if is_ident_char(c) {
            let m = rest.iter().take_while(|&&b| is_ident_char(b)).count();
            for _ in 0..m {
                cur.bump();
            }
            let word = &source[start..start + m];
            let red = match word {
                "min" => Some(ReduceOp::Min),
                "max" => Some(ReduceOp::Max),
                _ => None,
            };
            match (red, cur.peek(0), cur.peek(1)) {
                (Some(op), Some(b'='), next) if next != Some(b'=') => {
                    cur.bump();
                    let init = next == Some(b'!');
                    if init {
                        cur.bump();
                    }
                    Tok::ReduceAssign(op, init)
                }
                _ => match word {
                    "def" => Tok::Def,
                    "where" => Tok::Where,
                    _ => Tok::Ident(word.to_string()),
                },
            }
        } else {
            let two = (c, cur.peek(1));
            let (tok, n) = match two {
                (b'-', Some(b'>')) => (Tok::Arrow, 2),
                (b'<', Some(b'=')) => (Tok::Le, 2),
                (b'>', Some(b'=')) => (Tok::Ge, 2),
                (b'=', Some(b'=')) => (Tok::EqEq, 2),
                (b'!', Some(b'=')) => (Tok::Ne, 2),
                (b'&', Some(b'&')) => (Tok::AndAnd, 2),
                (b'|', Some(b'|')) => (Tok::OrOr, 2),
                (b'+', Some(b'=')) | (b'*', Some(b'=')) => {
                    let op = if c == b'+' { ReduceOp::Add } else { ReduceOp::Mul };
                    if cur.peek(2) == Some(b'!') {
                        (Tok::ReduceAssign(op, true), 3)
                    } else {
                        (Tok::ReduceAssign(op, false), 2)
                    }
                }
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b'{', _) => (Tok::LBrace, 1),
                (b'}', _) => (Tok::RBrace, 1),
                (b',', _) => (Tok::Comma, 1),
                (b':', _) => (Tok::Colon, 1),
                (b'?', _) => (Tok::Question, 1),
                (b'.', _) => (Tok::Dot, 1),
                (b'!', _) => (Tok::Bang, 1),
                (b'+', _) => (Tok::Plus, 1),
                (b'-', _) => (Tok::Minus, 1),
                (b'*', _) => (Tok::Star, 1),
                (b'/', _) => (Tok::Slash, 1),
                (b'%', _) => (Tok::Percent, 1),
                (b'<', _) => (Tok::Lt, 1),
                (b'>', _) => (Tok::Gt, 1),
                (b'=', _) => (Tok::Assign, 1),
                _ => {
                    let ch = source[start..].chars().next().unwrap_or('?');
                    return Err(FrontendError::UnknownCharacter { ch, span: Span { start, end: start + ch.len_utf8(), line, col } });
                }
            };
            for _ in 0..n {
                cur.bump();
            }
            tok
        };
        out.push(Token { tok, span: Span { start, end: cur.pos, line, col } });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn reduction_statement() {
        assert_eq!(
            toks("C(i) +=! A(i,k) * x(k)"),
            vec![
                Tok::Ident("C".into()),
                Tok::LParen,
                Tok::Ident("i".into()),
                Tok::RParen,
                Tok::ReduceAssign(ReduceOp::Add, true),
                Tok::Ident("A".into()),
                Tok::LParen,
                Tok::Ident("i".into()),
                Tok::Comma,
                Tok::Ident("k".into()),
                Tok::RParen,
                Tok::Star,
                Tok::Ident("x".into()),
                Tok::LParen,
                Tok::Ident("k".into()),
                Tok::RParen,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn keywords_and_arrow() {
        let t = toks("def mv(float(M,K) A) -> (C) {}");
        assert_eq!(t[0], Tok::Def);
        assert!(t.contains(&Tok::Arrow));
        assert!(t.contains(&Tok::LBrace));
    }

    #[test]
    fn unknown_character() {
        match lex("x @ y") {
            Err(FrontendError::UnknownCharacter { ch, span }) => {
                assert_eq!(ch, '@');
                assert_eq!((span.line, span.col), (1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_stripped() {
        assert_eq!(toks("a # comment ( @\nb"), vec![Tok::Ident("a".into()), Tok::Ident("b".into()), Tok::Eof]);
    }

    #[test]
    fn numbers_and_digit_identifiers() {
        assert_eq!(toks("2LUT"), vec![Tok::Ident("2LUT".into()), Tok::Eof]);
        assert_eq!(toks("0"), vec![Tok::Int(0), Tok::Eof]);
        assert_eq!(toks("1.5f"), vec![Tok::Float(1.5), Tok::Eof]);
        assert_eq!(toks("2e3"), vec![Tok::Float(2000.0), Tok::Eof]);
        assert_eq!(toks("A.1"), vec![Tok::Ident("A".into()), Tok::Dot, Tok::Int(1), Tok::Eof]);
    }

    #[test]
    fn min_max_reductions() {
        assert_eq!(toks("max=!")[0], Tok::ReduceAssign(ReduceOp::Max, true));
        assert_eq!(toks("min= x")[0], Tok::ReduceAssign(ReduceOp::Min, false));
        assert_eq!(toks("max == 1")[0], Tok::Ident("max".into()));
    }
}
