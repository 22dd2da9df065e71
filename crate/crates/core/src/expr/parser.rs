//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := atom ('^' atom)?
//! atom   := number | 't' | 'x' digits | func '(' expr (',' expr)* ')'
//!         | '(' expr ')' | '-' atom
//! ```
//!
//! Numbers are unsigned decimals with an optional fraction and exponent
//! (`2`, `0.5`, `1e-3`, `2.5E+4`); a leading `-` directly on a number folds
//! into a negative constant. Identifiers are case-sensitive. `pw` takes a
//! condition argument of the form `t < c`, `t >= c`, `x<i> < c`, or
//! `x<i> >= c` with `c` a (possibly negated) numeric literal.

use super::{Cond, CondVar, Expr, Func};

/// Parse failure with the byte offset into the source where it occurred.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("{message} at byte {offset}")]
pub struct ParseError {
    pub message: String,
    pub offset: usize,
}

impl ParseError {
    fn new(message: impl Into<String>, offset: usize) -> Self {
        ParseError {
            message: message.into(),
            offset,
        }
    }
}

/// Parse `src` into an [`Expr`] for a system of dimension `dim`.
///
/// State variables are `x1..x<dim>`; `x0` or any index above `dim` is
/// rejected, as is trailing input, unknown identifiers, wrong arities, and
/// malformed numbers.
pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        dim,
    };
    p.skip_ws();
    let e = p.parse_expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ParseError::new(
            format!("unexpected trailing input starting with {:?}", p.peek_char()),
            p.pos,
        ));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_char(&self) -> char {
        self.peek().map(char::from).unwrap_or('\0')
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ParseError::new(
                format!("expected '{}', found {:?}", char::from(c), self.peek_char()),
                self.pos,
            ))
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.parse_atom()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.parse_atom()?;
            Ok(Expr::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn parse_atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                // A minus directly on a number literal folds into a negative
                // constant so printed constants round-trip structurally.
                if self.peek().is_some_and(|c| c.is_ascii_digit() || c == b'.') {
                    let v = self.parse_number()?;
                    Ok(Expr::Const(-v))
                } else {
                    Ok(Expr::Neg(Box::new(self.parse_atom()?)))
                }
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.parse_expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.parse_number()?)),
            Some(c) if c.is_ascii_alphabetic() => self.parse_identifier(),
            _ => Err(ParseError::new(
                format!("expected expression, found {:?}", self.peek_char()),
                self.pos,
            )),
        }
    }

    fn parse_number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // Not an exponent after all (e.g. "2*exp(t)" tokenizes the 2
                // then sees 'e' of "exp"); back off.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map_err(|_| ParseError::new(format!("malformed number {text:?}"), start))
    }

    fn parse_identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "t" => Ok(Expr::Time),
            _ if name.starts_with('x') && name[1..].chars().all(|c| c.is_ascii_digit()) => {
                if name.len() == 1 {
                    return Err(ParseError::new("unknown identifier \"x\"", start));
                }
                let idx: usize = name[1..]
                    .parse()
                    .map_err(|_| ParseError::new(format!("malformed variable {name:?}"), start))?;
                if idx == 0 || idx > self.dim {
                    Err(ParseError::new(
                        format!(
                            "variable {name} out of range for dimension {}",
                            self.dim
                        ),
                        start,
                    ))
                } else {
                    Ok(Expr::Var(idx))
                }
            }
            "pw" => self.parse_piecewise(start),
            _ => {
                let func = match name {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "tan" => Func::Tan,
                    "exp" => Func::Exp,
                    "log" => Func::Log,
                    "sqrt" => Func::Sqrt,
                    "tanh" => Func::Tanh,
                    "abs" => Func::Abs,
                    "sign" => Func::Sign,
                    "min" => Func::Min,
                    "max" => Func::Max,
                    _ => {
                        return Err(ParseError::new(
                            format!("unknown identifier {name:?}"),
                            start,
                        ))
                    }
                };
                self.expect(b'(')?;
                let mut args = vec![self.parse_expr()?];
                while self.eat(b',') {
                    args.push(self.parse_expr()?);
                }
                self.expect(b')')?;
                if args.len() != func.arity() {
                    return Err(ParseError::new(
                        format!(
                            "{name} takes {} argument(s), found {}",
                            func.arity(),
                            args.len()
                        ),
                        start,
                    ));
                }
                Ok(Expr::Call(func, args))
            }
        }
    }

    /// `pw(<var> <op> <const>, then, else)` with `<op>` one of `<`, `>=`.
    fn parse_piecewise(&mut self, _start: usize) -> Result<Expr, ParseError> {
        self.expect(b'(')?;
        self.skip_ws();
        let cond_start = self.pos;
        let var = match self.parse_atom()? {
            Expr::Time => CondVar::Time,
            Expr::Var(i) => CondVar::Var(i),
            _ => {
                return Err(ParseError::new(
                    "pw condition must start with t or a state variable",
                    cond_start,
                ))
            }
        };
        self.skip_ws();
        let ge = if self.eat(b'<') {
            false
        } else if self.peek() == Some(b'>') {
            self.pos += 1;
            self.expect(b'=')?;
            true
        } else {
            return Err(ParseError::new(
                format!("expected '<' or '>=' in pw condition, found {:?}", self.peek_char()),
                self.pos,
            ));
        };
        self.skip_ws();
        let thr_start = self.pos;
        let threshold = match self.parse_atom()? {
            Expr::Const(c) => c,
            _ => {
                return Err(ParseError::new(
                    "pw threshold must be a numeric constant",
                    thr_start,
                ))
            }
        };
        self.expect(b',')?;
        let then = self.parse_expr()?;
        self.expect(b',')?;
        let els = self.parse_expr()?;
        self.expect(b')')?;
        Ok(Expr::Piecewise(
            Cond { var, ge, threshold },
            Box::new(then),
            Box::new(els),
        ))
    }
}
