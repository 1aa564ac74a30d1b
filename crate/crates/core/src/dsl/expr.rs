//! Scalar expressions in the single variable `t`.
//!
//! Grammar (highest precedence last):
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" INT)*          right-associative, folded to one exponent
//! atom    := NUMBER | "t" | FUNC "(" sum ")" | "(" sum ")"
//! ```

use std::fmt;

use thiserror::Error;

/// Maximum nesting depth accepted by the parser.
pub const MAX_DEPTH: usize = 200;

/// Byte range `[start, end)` in the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

/// Parsed expression. Equality is structural and ignores source spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected {found}, expected {expected}")]
    UnexpectedToken {
        found: String,
        expected: &'static str,
    },
    #[error("unbalanced parenthesis")]
    Unbalanced,
    #[error("unknown identifier {0:?}")]
    UnknownIdentifier(String),
    #[error("exponent must be a non-negative integer literal")]
    BadExponent,
    #[error("invalid number literal {0:?}")]
    BadNumber(String),
    #[error("expression nested deeper than {MAX_DEPTH} levels")]
    TooDeep,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func}({arg}) is undefined (bytes {}..{})", span.start, span.end)]
    Domain {
        func: &'static str,
        arg: f64,
        span: Span,
    },
    #[error("division by zero (bytes {}..{})", span.start, span.end)]
    DivisionByZero { span: Span },
    #[error("non-finite result {value} (bytes {}..{})", span.start, span.end)]
    NonFinite { value: f64, span: Span },
    #[error("variable value {0} is not finite")]
    BadArgument(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(u64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Int(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            i += 1;
            out.push((tok, Span { start, end: i }));
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let span = Span { start, end: i };
            let bad = || ParseError {
                kind: ParseErrorKind::BadNumber(text.to_string()),
                offset: start,
            };
            let tok = if text.bytes().all(|b| b.is_ascii_digit()) {
                match text.parse::<u64>() {
                    Ok(v) => Tok::Int(v),
                    Err(_) => Tok::Num(text.parse::<f64>().map_err(|_| bad())?),
                }
            } else {
                Tok::Num(text.parse::<f64>().map_err(|_| bad())?)
            };
            if let Tok::Num(v) = tok {
                if !v.is_finite() {
                    return Err(bad());
                }
            }
            out.push((tok, span));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((
                Tok::Ident(src[start..i].to_string()),
                Span { start, end: i },
            ));
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('\u{fffd}');
        return Err(ParseError {
            kind: ParseErrorKind::UnexpectedChar(ch),
            offset: start,
        });
    }
    out.push((
        Tok::End,
        Span {
            start: src.len(),
            end: src.len(),
        },
    ));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    depth: usize,
    open_parens: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        let (tok, span) = &self.toks[self.pos];
        let kind = match (tok, self.open_parens.last()) {
            (Tok::End, Some(_)) => ParseErrorKind::Unbalanced,
            (Tok::RParen, None) => ParseErrorKind::Unbalanced,
            _ => ParseErrorKind::UnexpectedToken {
                found: tok.describe(),
                expected,
            },
        };
        let offset = match (tok, self.open_parens.last()) {
            (Tok::End, Some(open)) => *open,
            _ => span.start,
        };
        ParseError { kind, offset }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError {
                kind: ParseErrorKind::TooDeep,
                offset: self.span().start,
            });
        }
        Ok(())
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.product()?;
            lhs = binary(op, lhs, rhs);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.enter()?;
            let (_, span) = self.bump();
            let inner = self.unary()?;
            self.depth -= 1;
            let span = Span {
                start: span.start,
                end: inner.span.end,
            };
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        // a ^ n1 ^ n2 ^ ... ^ nk  =  a ^ (n1 ^ (n2 ^ ... nk))
        let mut exps = Vec::new();
        let mut end = base.span.end;
        while *self.peek() == Tok::Caret {
            self.bump();
            match self.bump() {
                (Tok::Int(n), span) => {
                    exps.push((n, span.start));
                    end = span.end;
                }
                (_, span) => {
                    return Err(ParseError {
                        kind: ParseErrorKind::BadExponent,
                        offset: span.start,
                    })
                }
            }
        }
        let (mut exp, _) = *exps.last().expect("at least one exponent");
        for &(n, offset) in exps.iter().rev().skip(1) {
            exp = u32::try_from(exp)
                .ok()
                .and_then(|e| n.checked_pow(e))
                .ok_or(ParseError {
                    kind: ParseErrorKind::BadExponent,
                    offset,
                })?;
        }
        let exp = u32::try_from(exp).map_err(|_| ParseError {
            kind: ParseErrorKind::BadExponent,
            offset: exps[0].1,
        })?;
        let span = Span {
            start: base.span.start,
            end,
        };
        Ok(Expr {
            kind: ExprKind::Pow(Box::new(base), exp),
            span,
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                let (_, span) = self.bump();
                Ok(Expr {
                    kind: ExprKind::Num(v),
                    span,
                })
            }
            Tok::Int(v) => {
                let (_, span) = self.bump();
                Ok(Expr {
                    kind: ExprKind::Num(v as f64),
                    span,
                })
            }
            Tok::Ident(name) => {
                let (_, span) = self.bump();
                if name == "t" {
                    return Ok(Expr {
                        kind: ExprKind::Var,
                        span,
                    });
                }
                let func = Func::from_name(&name).ok_or(ParseError {
                    kind: ParseErrorKind::UnknownIdentifier(name),
                    offset: span.start,
                })?;
                if *self.peek() != Tok::LParen {
                    return Err(self.unexpected("'(' after function name"));
                }
                let (arg, end) = self.parenthesized()?;
                Ok(Expr {
                    kind: ExprKind::Call(func, Box::new(arg)),
                    span: Span {
                        start: span.start,
                        end,
                    },
                })
            }
            Tok::LParen => {
                let start = self.span().start;
                let (mut inner, end) = self.parenthesized()?;
                inner.span = Span { start, end };
                Ok(inner)
            }
            _ => Err(self.unexpected("a number, 't', a function or '('")),
        }
    }

    fn parenthesized(&mut self) -> Result<(Expr, usize), ParseError> {
        let (_, open) = self.bump();
        self.open_parens.push(open.start);
        let inner = self.sum()?;
        if *self.peek() != Tok::RParen {
            return Err(self.unexpected("')'"));
        }
        self.open_parens.pop();
        let (_, close) = self.bump();
        Ok((inner, close.end))
    }
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    let span = Span {
        start: lhs.span.start,
        end: rhs.span.end,
    };
    Expr {
        kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
        span,
    }
}

/// Parses an expression in `t`.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        depth: 0,
        open_parens: Vec::new(),
    };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

fn powi(mut base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

impl Expr {
    /// Evaluates at `t`. Domain violations are located to the offending node.
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        if !t.is_finite() {
            return Err(EvalError::BadArgument(t));
        }
        self.eval_inner(t)
    }

    fn eval_inner(&self, t: f64) -> Result<f64, EvalError> {
        let span = self.span;
        let v = match &self.kind {
            ExprKind::Num(v) => *v,
            ExprKind::Var => t,
            ExprKind::Neg(e) => -e.eval_inner(t)?,
            ExprKind::Binary(op, a, b) => {
                let x = a.eval_inner(t)?;
                let y = b.eval_inner(t)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero { span });
                        }
                        x / y
                    }
                }
            }
            ExprKind::Pow(e, n) => powi(e.eval_inner(t)?, *n),
            ExprKind::Call(f, e) => {
                let x = e.eval_inner(t)?;
                let domain = |func: Func| EvalError::Domain {
                    func: func.name(),
                    arg: x,
                    span,
                };
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log if x <= 0.0 => return Err(domain(*f)),
                    Func::Log => x.ln(),
                    Func::Sqrt if x < 0.0 => return Err(domain(*f)),
                    Func::Sqrt => x.sqrt(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { value: v, span })
        }
    }

    /// True if the expression does not mention `t`.
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            ExprKind::Num(_) => true,
            ExprKind::Var => false,
            ExprKind::Neg(e) | ExprKind::Pow(e, _) | ExprKind::Call(_, e) => e.is_constant(),
            ExprKind::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Value of a `t`-free expression.
    pub fn constant_value(&self) -> Option<Result<f64, EvalError>> {
        self.is_constant().then(|| self.eval(0.0))
    }
}

/// Fully parenthesized form that reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Num(v) => write!(f, "{v:?}"),
            ExprKind::Var => write!(f, "t"),
            ExprKind::Neg(e) => write!(f, "(-{e})"),
            ExprKind::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a} {sym} {b})")
            }
            ExprKind::Pow(e, n) => write!(f, "({e}^{n})"),
            ExprKind::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, t: f64) -> f64 {
        parse_expr(src).unwrap().eval(t).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(parse_expr("t").unwrap().kind, ExprKind::Var);
        assert_eq!(at("-(1+t^2)", 2.0), -5.0);
        assert_eq!(at("cos(3*t)*exp(-t)", 0.0), 1.0);
        assert_eq!(at("2^10", 0.0), 1024.0);
        assert_eq!(at("1/(1+t)", 1.0), 0.5);
        assert!(matches!(
            parse_expr("log(t)").unwrap().eval(0.0),
            Err(EvalError::Domain { func: "log", .. })
        ));
    }

    #[test]
    fn precedence() {
        assert_eq!(at("1+2*3^2", 0.0), 19.0);
        assert_eq!(at("2*t+1", 3.0), 7.0);
        assert_eq!(at("-t^2", 3.0), -9.0);
        assert_eq!(at("2^3^2", 0.0), 512.0);
        assert_eq!(at("8-3-2", 0.0), 3.0);
        assert_eq!(at("8/4/2", 0.0), 1.0);
        assert_eq!(at("(t+1)^0", 5.0), 1.0);
        assert_eq!(at("1.5e1 + .5", 0.0), 15.5);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_expr("1 + (2 * t").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unbalanced);
        assert_eq!(e.offset, 4);
        let e = parse_expr("t)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unbalanced);
        assert_eq!(e.offset, 1);
        let e = parse_expr("2 * s").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("s".into()));
        assert_eq!(e.offset, 4);
        assert_eq!(
            parse_expr("t^1.5").unwrap_err().kind,
            ParseErrorKind::BadExponent
        );
        assert_eq!(
            parse_expr("t^t").unwrap_err().kind,
            ParseErrorKind::BadExponent
        );
        assert_eq!(
            parse_expr("2^99^99").unwrap_err().kind,
            ParseErrorKind::BadExponent
        );
        assert_eq!(parse_expr("t $").unwrap_err().offset, 2);
        assert!(parse_expr("").is_err());
        assert!(parse_expr("sin t").is_err());
        let deep = "(".repeat(1000) + "t" + &")".repeat(1000);
        assert_eq!(parse_expr(&deep).unwrap_err().kind, ParseErrorKind::TooDeep);
        let e = parse_expr("1é").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedChar('é'));
    }

    #[test]
    fn evaluation_errors() {
        assert!(matches!(
            parse_expr("1/(t-1)").unwrap().eval(1.0),
            Err(EvalError::DivisionByZero {
                span: Span { start: 0, end: 7 }
            })
        ));
        assert!(matches!(
            parse_expr("sqrt(t-2)").unwrap().eval(1.0),
            Err(EvalError::Domain { func: "sqrt", .. })
        ));
        assert!(matches!(
            parse_expr("exp(exp(10))").unwrap().eval(0.0),
            Err(EvalError::NonFinite { .. })
        ));
        assert!(parse_expr("t").unwrap().eval(f64::NAN).is_err());
    }

    #[test]
    fn display_reparses() {
        for src in [
            "-(1+t^2)",
            "cos(3*t)*exp(-t)",
            "1+2*3^2",
            "-t^2",
            "0.1*t/7",
            "--t",
        ] {
            let e = parse_expr(src).unwrap();
            let again = parse_expr(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
    }

    #[test]
    fn constants() {
        assert_eq!(parse_expr("2*3").unwrap().constant_value(), Some(Ok(6.0)));
        assert_eq!(parse_expr("2*t").unwrap().constant_value(), None);
    }
}
