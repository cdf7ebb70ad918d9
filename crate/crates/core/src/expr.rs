//! Expression DSL: parsing, evaluation, and symbolic differentiation.
//!
//! The grammar covers formulas over `x1..xm`, `u1..uk`, `t`, numeric
//! literals, the operators `+ - * / ^` (with unary minus), and the
//! functions `exp`, `log`, `sin`, `cos`, `tanh`. Every supported construct
//! is smooth, so differentiation is total on parsed expressions.

use std::fmt;

use crate::error::CoreError;

/// Variable kinds resolvable at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// `x1`-style state coordinate, zero-based index.
    State(usize),
    /// `u1`-style control coordinate, zero-based index.
    Control(usize),
    /// The time variable `t`.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
        }
    }
}

/// Expression AST. Construction goes through [`parse_expression`] or the
/// differentiation/simplification helpers.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Evaluates the expression at a point.
    pub fn eval(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Control(i)) => u[*i],
            Expr::Var(Var::Time) => t,
            Expr::Neg(e) => -e.eval(x, u, t),
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, u, t);
                let b = b.eval(x, u, t);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(x, u, t);
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tanh => v.tanh(),
                }
            }
        }
    }

    /// Highest state index referenced, plus one (0 if none).
    pub fn max_state_dim(&self) -> usize {
        self.fold_vars(0, |acc, v| match v {
            Var::State(i) => acc.max(i + 1),
            _ => acc,
        })
    }

    /// Highest control index referenced, plus one (0 if none).
    pub fn max_control_dim(&self) -> usize {
        self.fold_vars(0, |acc, v| match v {
            Var::Control(i) => acc.max(i + 1),
            _ => acc,
        })
    }

    fn fold_vars<T>(&self, init: T, f: fn(T, Var) -> T) -> T {
        match self {
            Expr::Num(_) => init,
            Expr::Var(v) => f(init, *v),
            Expr::Neg(e) | Expr::Call(_, e) => e.fold_vars(init, f),
            Expr::Bin(_, a, b) => b.fold_vars(a.fold_vars(init, f), f),
        }
    }

    fn num(c: f64) -> Expr {
        Expr::Num(c)
    }

    fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(c) if *c == 1.0)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Control(i)) => write!(f, "u{}", i + 1),
            Expr::Var(Var::Time) => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting byte offset; `None` at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>, CoreError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
                {
                    end += 1;
                }
                // exponent part
                if end < self.src.len() && (self.src[end] | 0x20) == b'e' {
                    let mut e = end + 1;
                    if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                        e += 1;
                    }
                    if e < self.src.len() && self.src[e].is_ascii_digit() {
                        while e < self.src.len() && self.src[e].is_ascii_digit() {
                            e += 1;
                        }
                        end = e;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..end]).unwrap();
                let val: f64 = text.parse().map_err(|_| CoreError::Syntax {
                    offset: start,
                    expected: "number".into(),
                })?;
                self.pos = end;
                return Ok(Some((Tok::Num(val), start)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[start..end]).unwrap().to_string();
                self.pos = end;
                return Ok(Some((Tok::Ident(text), start)));
            }
            _ => {
                return Err(CoreError::Syntax {
                    offset: start,
                    expected: "number, identifier, operator, or parenthesis".into(),
                })
            }
        };
        self.pos += 1;
        Ok(Some((tok, start)))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> CoreError {
        CoreError::Syntax {
            offset: self.offset(),
            expected: expected.into(),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, CoreError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := factor (('*'|'/') factor)*
    fn term(&mut self) -> Result<Expr, CoreError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // factor := '-' factor | power
    fn factor(&mut self) -> Result<Expr, CoreError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            let inner = self.factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    // power := atom ('^' factor)?   (right-associative)
    fn power(&mut self) -> Result<Expr, CoreError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            let exp = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, CoreError> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Num(c)) => Ok(Expr::Num(c)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    Some(_) => {
                        self.pos -= 1;
                        Err(self.err("`)`"))
                    }
                    None => Err(self.err("`)`")),
                }
            }
            Some(Tok::Ident(name)) => self.ident(name, offset),
            Some(_) => {
                self.pos -= 1;
                Err(self.err("number, identifier, `-`, or `(`"))
            }
            None => Err(self.err("number, identifier, `-`, or `(`")),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Expr, CoreError> {
        if let Some(func) = Func::from_name(&name) {
            if !matches!(self.peek(), Some(Tok::LParen)) {
                return Err(self.err("`(`"));
            }
            self.bump();
            let mut args = vec![self.expr()?];
            while matches!(self.peek(), Some(Tok::Comma)) {
                self.bump();
                args.push(self.expr()?);
            }
            if !matches!(self.peek(), Some(Tok::RParen)) {
                return Err(self.err("`)` or `,`"));
            }
            self.bump();
            if args.len() != 1 {
                return Err(CoreError::ArityMismatch {
                    name: name.clone(),
                    expected: 1,
                    got: args.len(),
                });
            }
            return Ok(Expr::Call(func, Box::new(args.pop().unwrap())));
        }
        if name == "t" {
            return Ok(Expr::Var(Var::Time));
        }
        if let Some(idx) = parse_indexed(&name, 'x') {
            return Ok(Expr::Var(Var::State(idx)));
        }
        if let Some(idx) = parse_indexed(&name, 'u') {
            return Ok(Expr::Var(Var::Control(idx)));
        }
        Err(CoreError::UnknownIdentifier { name, offset })
    }
}

fn parse_indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || rest.starts_with('0') {
        return None;
    }
    rest.parse::<usize>().ok().map(|n| n - 1)
}

/// Parses a formula into an AST.
pub fn parse_expression(src: &str) -> Result<Expr, CoreError> {
    let mut lexer = Lexer::new(src);
    let mut toks = Vec::new();
    while let Some(tok) = lexer.next()? {
        toks.push(tok);
    }
    let end = src.len();
    let mut parser = Parser { toks, pos: 0, end };
    let e = parser.expr()?;
    if parser.pos != parser.toks.len() {
        return Err(parser.err("end of input or operator"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

/// Exact partial derivative of `ast` with respect to `var`.
pub fn differentiate(ast: &Expr, var: Var) -> Expr {
    simplify(&diff(ast, var))
}

fn diff(e: &Expr, var: Var) -> Expr {
    match e {
        Expr::Num(_) => Expr::num(0.0),
        Expr::Var(v) => {
            if *v == var {
                Expr::num(1.0)
            } else {
                Expr::num(0.0)
            }
        }
        Expr::Neg(inner) => Expr::Neg(Box::new(diff(inner, var))),
        Expr::Bin(BinOp::Add, a, b) => Expr::Bin(
            BinOp::Add,
            Box::new(diff(a, var)),
            Box::new(diff(b, var)),
        ),
        Expr::Bin(BinOp::Sub, a, b) => Expr::Bin(
            BinOp::Sub,
            Box::new(diff(a, var)),
            Box::new(diff(b, var)),
        ),
        Expr::Bin(BinOp::Mul, a, b) => {
            // a'b + ab'
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Bin(BinOp::Mul, Box::new(diff(a, var)), b.clone())),
                Box::new(Expr::Bin(BinOp::Mul, a.clone(), Box::new(diff(b, var)))),
            )
        }
        Expr::Bin(BinOp::Div, a, b) => {
            // (a'b - ab') / b^2
            let num = Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Bin(BinOp::Mul, Box::new(diff(a, var)), b.clone())),
                Box::new(Expr::Bin(BinOp::Mul, a.clone(), Box::new(diff(b, var)))),
            );
            let den = Expr::Bin(BinOp::Pow, b.clone(), Box::new(Expr::num(2.0)));
            Expr::Bin(BinOp::Div, Box::new(num), Box::new(den))
        }
        Expr::Bin(BinOp::Pow, a, b) => {
            if let Expr::Num(c) = **b {
                // c * a^(c-1) * a'
                return Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Bin(
                        BinOp::Mul,
                        Box::new(Expr::num(c)),
                        Box::new(Expr::Bin(
                            BinOp::Pow,
                            a.clone(),
                            Box::new(Expr::num(c - 1.0)),
                        )),
                    )),
                    Box::new(diff(a, var)),
                );
            }
            // a^b * (b' log a + b a'/a)
            let term1 = Expr::Bin(
                BinOp::Mul,
                Box::new(diff(b, var)),
                Box::new(Expr::Call(Func::Log, a.clone())),
            );
            let term2 = Expr::Bin(
                BinOp::Div,
                Box::new(Expr::Bin(BinOp::Mul, b.clone(), Box::new(diff(a, var)))),
                a.clone(),
            );
            Expr::Bin(
                BinOp::Mul,
                Box::new(e.clone()),
                Box::new(Expr::Bin(BinOp::Add, Box::new(term1), Box::new(term2))),
            )
        }
        Expr::Call(f, inner) => {
            let outer = match f {
                Func::Exp => Expr::Call(Func::Exp, inner.clone()),
                Func::Log => Expr::Bin(
                    BinOp::Div,
                    Box::new(Expr::num(1.0)),
                    inner.clone(),
                ),
                Func::Sin => Expr::Call(Func::Cos, inner.clone()),
                Func::Cos => Expr::Neg(Box::new(Expr::Call(Func::Sin, inner.clone()))),
                Func::Tanh => {
                    // 1 - tanh(z)^2
                    Expr::Bin(
                        BinOp::Sub,
                        Box::new(Expr::num(1.0)),
                        Box::new(Expr::Bin(
                            BinOp::Pow,
                            Box::new(Expr::Call(Func::Tanh, inner.clone())),
                            Box::new(Expr::num(2.0)),
                        )),
                    )
                }
            };
            Expr::Bin(BinOp::Mul, Box::new(outer), Box::new(diff(inner, var)))
        }
    }
}

/// Constant folding and algebraic identity cleanup.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Num(_) | Expr::Var(_) => e.clone(),
        Expr::Neg(inner) => {
            let inner = simplify(inner);
            match inner {
                Expr::Num(c) => Expr::num(-c),
                Expr::Neg(x) => *x,
                other => Expr::Neg(Box::new(other)),
            }
        }
        Expr::Call(f, inner) => {
            let inner = simplify(inner);
            if let Expr::Num(c) = inner {
                let v = match f {
                    Func::Exp => c.exp(),
                    Func::Log => c.ln(),
                    Func::Sin => c.sin(),
                    Func::Cos => c.cos(),
                    Func::Tanh => c.tanh(),
                };
                if v.is_finite() {
                    return Expr::num(v);
                }
            }
            Expr::Call(*f, Box::new(inner))
        }
        Expr::Bin(op, a, b) => {
            let a = simplify(a);
            let b = simplify(b);
            if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(*y),
                };
                if v.is_finite() {
                    return Expr::num(v);
                }
            }
            match op {
                BinOp::Add => {
                    if a.is_zero() {
                        return b;
                    }
                    if b.is_zero() {
                        return a;
                    }
                }
                BinOp::Sub => {
                    if b.is_zero() {
                        return a;
                    }
                    if a.is_zero() {
                        return Expr::Neg(Box::new(b));
                    }
                }
                BinOp::Mul => {
                    if a.is_zero() || b.is_zero() {
                        return Expr::num(0.0);
                    }
                    if a.is_one() {
                        return b;
                    }
                    if b.is_one() {
                        return a;
                    }
                }
                BinOp::Div => {
                    if a.is_zero() {
                        return Expr::num(0.0);
                    }
                    if b.is_one() {
                        return a;
                    }
                }
                BinOp::Pow => {
                    if b.is_one() {
                        return a;
                    }
                    if b.is_zero() {
                        return Expr::num(1.0);
                    }
                }
            }
            Expr::Bin(*op, Box::new(a), Box::new(b))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn eval1(e: &Expr, x1: f64, t: f64) -> f64 {
        e.eval(&[x1], &[], t)
    }

    /// Central finite-difference oracle in a state coordinate.
    fn fd_state(e: &Expr, i: usize, x: &[f64], u: &[f64], t: f64) -> f64 {
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (e.eval(&xp, u, t) - e.eval(&xm, u, t)) / (2.0 * h)
    }

    #[test]
    fn parses_and_evaluates() {
        let e = parse_expression("x1*(x1^4 - 5)*exp(-2*t)").unwrap();
        assert_abs_diff_eq!(eval1(&e, 1.0, 0.0), -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eval1(&e, 0.0, 3.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_zero() {
        let e = parse_expression("0").unwrap();
        assert_eq!(eval1(&e, 17.0, 3.0), 0.0);
    }

    #[test]
    fn syntax_error_carries_offset() {
        let err = parse_expression("x1 +").unwrap_err();
        match err {
            CoreError::Syntax { offset, .. } => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expression("x1 + y2").unwrap_err();
        match err {
            CoreError::UnknownIdentifier { name, offset } => {
                assert_eq!(name, "y2");
                assert_eq!(offset, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch() {
        let err = parse_expression("exp(x1, t)").unwrap_err();
        match err {
            CoreError::ArityMismatch { name, expected, got } => {
                assert_eq!(name, "exp");
                assert_eq!(expected, 1);
                assert_eq!(got, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(parse_expression("x1 x2").is_err());
        assert!(parse_expression("(x1").is_err());
    }

    #[test]
    fn derivative_of_quintic() {
        let e = parse_expression("x1*(x1^4-5)").unwrap();
        let d = differentiate(&e, Var::State(0));
        for x1 in [0.0, 0.5, 1.5] {
            assert_abs_diff_eq!(
                eval1(&d, x1, 0.0),
                5.0 * x1.powi(4) - 5.0,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                eval1(&d, x1, 0.0),
                fd_state(&e, 0, &[x1], &[], 0.0),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn derivative_of_independent_variable() {
        let e = parse_expression("t").unwrap();
        let d = differentiate(&e, Var::State(0));
        assert_eq!(d, Expr::Num(0.0));
    }

    #[test]
    fn derivative_with_exponential_factor() {
        let e = parse_expression("exp(-2*t)*x1").unwrap();
        let d = differentiate(&e, Var::State(0));
        for t in [0.0, 0.7, 2.0] {
            assert_abs_diff_eq!(eval1(&d, 3.0, t), (-2.0 * t).exp(), epsilon = 1e-10);
            assert_abs_diff_eq!(
                eval1(&d, 3.0, t),
                fd_state(&e, 0, &[3.0], &[], t),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn derivatives_of_all_functions_match_fd() {
        for src in [
            "sin(x1*t)",
            "cos(x1 + u1)",
            "tanh(x1/2)",
            "log(x1 + 3)",
            "exp(x1^2 - u1)",
            "x1^u1",
        ] {
            let e = parse_expression(src).unwrap();
            let d = differentiate(&e, Var::State(0));
            for (x1, u1, t) in [(0.4, 0.3, 0.2), (1.1, 0.9, 1.5), (2.0, 0.1, 0.0)] {
                assert_abs_diff_eq!(
                    d.eval(&[x1], &[u1], t),
                    fd_state(&e, 0, &[x1], &[u1], t),
                    epsilon = 1e-5
                );
            }
        }
    }

    proptest! {
        // Differentiation is linear: d(alpha*e1 + e2) = alpha*d(e1) + d(e2).
        #[test]
        fn differentiation_is_linear(
            alpha in -3.0f64..3.0,
            x1 in -1.0f64..1.0,
            t in 0.0f64..2.0,
        ) {
            let e1 = parse_expression("sin(x1)*exp(-t)").unwrap();
            let e2 = parse_expression("x1^3 + t*x1").unwrap();
            let combined = Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Num(alpha)),
                    Box::new(e1.clone()),
                )),
                Box::new(e2.clone()),
            );
            let lhs = differentiate(&combined, Var::State(0)).eval(&[x1], &[], t);
            let rhs = alpha * differentiate(&e1, Var::State(0)).eval(&[x1], &[], t)
                + differentiate(&e2, Var::State(0)).eval(&[x1], &[], t);
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
