//! Scalar expression ASTs over time `t` and state variables `x1..xn`.
//!
//! Expressions are what vector fields are written in: each component of
//! `f(t, x)` is one [`Expr`]. The module provides parsing (see [`parse`]),
//! evaluation at a point, exact symbolic differentiation with respect to a
//! state variable, algebraic simplification, and precedence-aware printing
//! that round-trips through the parser.
//!
//! Piecewise behavior comes from `pw(cond, then, else)` where `cond` is a
//! one-sided comparison `t < c`, `t >= c`, `x<i> < c`, or `x<i> >= c`. Only
//! the active branch is evaluated, and evaluation exactly at a kink takes the
//! right-limit branch (`t >= c` selects `then` at `t = c`, `t < c` selects
//! `else`). `abs`, `min`, and `max` differentiate to their active-branch
//! derivatives with the same right-limit convention at the kink.

mod parser;

pub use parser::{parse, ParseError};

use std::fmt;

/// Built-in function names accepted by the grammar.
///
/// `Sign` is produced by differentiating `abs` and accepted by the parser so
/// printed derivatives re-parse; it is not part of the surface grammar used
/// by the spec files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
    Sign,
    Min,
    Max,
}

impl Func {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub(crate) fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Left-hand side of a piecewise condition: the time variable or one state
/// variable (1-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondVar {
    Time,
    Var(usize),
}

/// One-sided comparison used by `pw`: `var < c` or `var >= c`.
///
/// The two forms select the same partition of the line; they differ only in
/// which branch is "then". At the threshold itself both forms evaluate the
/// branch that is active for arguments just above the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Cond {
    pub var: CondVar,
    /// True for `var >= c`, false for `var < c`.
    pub ge: bool,
    pub threshold: f64,
}

impl Cond {
    fn holds(&self, t: f64, x: &[f64]) -> bool {
        let v = match self.var {
            CondVar::Time => t,
            CondVar::Var(i) => x[i - 1],
        };
        if self.ge {
            v >= self.threshold
        } else {
            v < self.threshold
        }
    }
}

/// Expression tree. State variables are 1-based (`Var(1)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// `pw(cond, then, else)`: lazy two-branch selection.
    Piecewise(Cond, Box<Expr>, Box<Expr>),
}

/// Evaluation failure: every non-finite intermediate is reported as a domain
/// error at the operation that produced it.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive value {0}")]
    LogNonPositive(f64),
    #[error("sqrt of negative value {0}")]
    SqrtNegative(f64),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("state variable x{index} out of range for dimension {dim}")]
    VarOutOfRange { index: usize, dim: usize },
}

fn finite(op: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { op })
    }
}

impl Expr {
    /// Evaluate at time `t` and state `x` (`x.len()` is the dimension).
    ///
    /// Only the active branch of a `pw` node is evaluated.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Time => Ok(t),
            Expr::Var(i) => {
                if *i == 0 || *i > x.len() {
                    Err(EvalError::VarOutOfRange {
                        index: *i,
                        dim: x.len(),
                    })
                } else {
                    Ok(x[*i - 1])
                }
            }
            Expr::Neg(e) => Ok(-e.eval(t, x)?),
            Expr::Add(a, b) => finite("+", a.eval(t, x)? + b.eval(t, x)?),
            Expr::Sub(a, b) => finite("-", a.eval(t, x)? - b.eval(t, x)?),
            Expr::Mul(a, b) => finite("*", a.eval(t, x)? * b.eval(t, x)?),
            Expr::Div(a, b) => {
                let d = b.eval(t, x)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                finite("/", a.eval(t, x)? / d)
            }
            Expr::Pow(a, b) => {
                let base = a.eval(t, x)?;
                let exp = b.eval(t, x)?;
                finite("^", base.powf(exp))
            }
            Expr::Call(f, args) => {
                let u = args[0].eval(t, x)?;
                match f {
                    Func::Sin => finite("sin", u.sin()),
                    Func::Cos => finite("cos", u.cos()),
                    Func::Tan => finite("tan", u.tan()),
                    Func::Exp => finite("exp", u.exp()),
                    Func::Log => {
                        if u <= 0.0 {
                            Err(EvalError::LogNonPositive(u))
                        } else {
                            finite("log", u.ln())
                        }
                    }
                    Func::Sqrt => {
                        if u < 0.0 {
                            Err(EvalError::SqrtNegative(u))
                        } else {
                            finite("sqrt", u.sqrt())
                        }
                    }
                    Func::Tanh => finite("tanh", u.tanh()),
                    Func::Abs => Ok(u.abs()),
                    // Right-limit convention: sign(0) = +1, matching the
                    // one-sided derivative of abs at its kink.
                    Func::Sign => Ok(if u >= 0.0 { 1.0 } else { -1.0 }),
                    Func::Min => Ok(u.min(args[1].eval(t, x)?)),
                    Func::Max => Ok(u.max(args[1].eval(t, x)?)),
                }
            }
            Expr::Piecewise(cond, a, b) => {
                if cond.holds(t, x) {
                    a.eval(t, x)
                } else {
                    b.eval(t, x)
                }
            }
        }
    }

    /// Exact partial derivative with respect to `x<var>` (1-based).
    ///
    /// Kinked constructs take their active-branch derivative: `abs(u)` maps to
    /// `sign(u)*u'`, `min`/`max`/`pw` differentiate whichever branch their
    /// evaluation selects (right limit at ties), and `t` is treated as a
    /// constant.
    pub fn differentiate(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) | Time => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(e) => Neg(Box::new(e.differentiate(var))),
            Add(a, b) => Add(
                Box::new(a.differentiate(var)),
                Box::new(b.differentiate(var)),
            ),
            Sub(a, b) => Sub(
                Box::new(a.differentiate(var)),
                Box::new(b.differentiate(var)),
            ),
            Mul(a, b) => Add(
                Box::new(Mul(Box::new(a.differentiate(var)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(b.differentiate(var)))),
            ),
            Div(a, b) => {
                // (a/b)' = (a'b - ab') / b^2
                let num = Sub(
                    Box::new(Mul(Box::new(a.differentiate(var)), b.clone())),
                    Box::new(Mul(a.clone(), Box::new(b.differentiate(var)))),
                );
                Div(
                    Box::new(num),
                    Box::new(Pow(b.clone(), Box::new(Const(2.0)))),
                )
            }
            Pow(a, b) => match b.as_ref() {
                // Power rule for constant exponents keeps derivatives of
                // common fields (polynomials) free of log() domain issues.
                Const(c) => Mul(
                    Box::new(Mul(
                        Box::new(Const(*c)),
                        Box::new(Pow(a.clone(), Box::new(Const(c - 1.0)))),
                    )),
                    Box::new(a.differentiate(var)),
                ),
                _ => {
                    // d(u^v) = u^v * (v' log u + v u'/u)
                    let term1 = Mul(
                        Box::new(b.differentiate(var)),
                        Box::new(Call(Func::Log, vec![a.as_ref().clone()])),
                    );
                    let term2 = Div(
                        Box::new(Mul(b.clone(), Box::new(a.differentiate(var)))),
                        a.clone(),
                    );
                    Mul(
                        Box::new(Pow(a.clone(), b.clone())),
                        Box::new(Add(Box::new(term1), Box::new(term2))),
                    )
                }
            },
            Call(f, args) => {
                let u = &args[0];
                let du = Box::new(u.differentiate(var));
                let chain = |outer: Expr| Mul(Box::new(outer), du.clone());
                match f {
                    Func::Sin => chain(Call(Func::Cos, vec![u.clone()])),
                    Func::Cos => Neg(Box::new(chain(Call(Func::Sin, vec![u.clone()])))),
                    // (tan u)' = (1 + tan^2 u) u'
                    Func::Tan => chain(Add(
                        Box::new(Const(1.0)),
                        Box::new(Pow(
                            Box::new(Call(Func::Tan, vec![u.clone()])),
                            Box::new(Const(2.0)),
                        )),
                    )),
                    Func::Exp => chain(Call(Func::Exp, vec![u.clone()])),
                    Func::Log => Div(du.clone(), Box::new(u.clone())),
                    // (sqrt u)' = u' / (2 sqrt u)
                    Func::Sqrt => Div(
                        du,
                        Box::new(Mul(
                            Box::new(Const(2.0)),
                            Box::new(Call(Func::Sqrt, vec![u.clone()])),
                        )),
                    ),
                    // (tanh u)' = (1 - tanh^2 u) u'
                    Func::Tanh => chain(Sub(
                        Box::new(Const(1.0)),
                        Box::new(Pow(
                            Box::new(Call(Func::Tanh, vec![u.clone()])),
                            Box::new(Const(2.0)),
                        )),
                    )),
                    Func::Abs => chain(Call(Func::Sign, vec![u.clone()])),
                    // sign is piecewise constant; its kink contributes nothing
                    // under the active-branch convention.
                    Func::Sign => Const(0.0),
                    Func::Min | Func::Max => {
                        let v = &args[1];
                        let dv = v.differentiate(var);
                        branch_select(*f, u, v, du.as_ref().clone(), dv)
                    }
                }
            }
            Piecewise(cond, a, b) => Piecewise(
                cond.clone(),
                Box::new(a.differentiate(var)),
                Box::new(b.differentiate(var)),
            ),
        }
    }

    /// Largest state-variable index referenced (0 if none).
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Time => 0,
            Expr::Var(i) => *i,
            Expr::Neg(e) => e.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_var().max(b.max_var()),
            Expr::Call(_, args) => args.iter().map(Expr::max_var).max().unwrap_or(0),
            Expr::Piecewise(cond, a, b) => {
                let c = match cond.var {
                    CondVar::Time => 0,
                    CondVar::Var(i) => i,
                };
                c.max(a.max_var()).max(b.max_var())
            }
        }
    }

    /// True if the expression references `t` anywhere (including piecewise
    /// conditions).
    pub fn depends_on_time(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Time => true,
            Expr::Neg(e) => e.depends_on_time(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on_time() || b.depends_on_time(),
            Expr::Call(_, args) => args.iter().any(Expr::depends_on_time),
            Expr::Piecewise(cond, a, b) => {
                matches!(cond.var, CondVar::Time) || a.depends_on_time() || b.depends_on_time()
            }
        }
    }

    /// Thresholds of `pw` conditions on `t`, in tree order. These are the
    /// only places an expression can be discontinuous in time.
    pub fn time_breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_time_breakpoints(&mut out);
        out
    }

    fn collect_time_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Const(_) | Expr::Time | Expr::Var(_) => {}
            Expr::Neg(e) => e.collect_time_breakpoints(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_time_breakpoints(out);
                b.collect_time_breakpoints(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_time_breakpoints(out);
                }
            }
            Expr::Piecewise(cond, a, b) => {
                if matches!(cond.var, CondVar::Time) {
                    out.push(cond.threshold);
                }
                a.collect_time_breakpoints(out);
                b.collect_time_breakpoints(out);
            }
        }
    }

    /// Algebraic simplification: constant folding plus the identity rules
    /// `0+e`, `e+0`, `e-0`, `0-e`, `0*e`, `e*0`, `1*e`, `e*1`, `e/1`, `e^0`,
    /// `e^1`, and double negation. Applied bottom-up to a fixed point, so the
    /// result is idempotent; evaluation semantics are preserved (constant
    /// subtrees are folded with the same f64 operations `eval` uses, and
    /// function calls fold only when they evaluate cleanly).
    pub fn simplify(&self) -> Expr {
        let mut cur = self.clone();
        // Each pass is bottom-up; a handful of passes reaches a fixed point
        // for any tree (rules only shrink the tree).
        for _ in 0..64 {
            let next = cur.simplify_once();
            if next == cur {
                return next;
            }
            cur = next;
        }
        cur
    }

    fn simplify_once(&self) -> Expr {
        use Expr::*;
        let e = match self {
            Const(_) | Time | Var(_) => self.clone(),
            Neg(a) => Neg(Box::new(a.simplify_once())),
            Add(a, b) => Add(Box::new(a.simplify_once()), Box::new(b.simplify_once())),
            Sub(a, b) => Sub(Box::new(a.simplify_once()), Box::new(b.simplify_once())),
            Mul(a, b) => Mul(Box::new(a.simplify_once()), Box::new(b.simplify_once())),
            Div(a, b) => Div(Box::new(a.simplify_once()), Box::new(b.simplify_once())),
            Pow(a, b) => Pow(Box::new(a.simplify_once()), Box::new(b.simplify_once())),
            Call(f, args) => Call(*f, args.iter().map(|a| a.simplify_once()).collect()),
            Piecewise(c, a, b) => Piecewise(
                c.clone(),
                Box::new(a.simplify_once()),
                Box::new(b.simplify_once()),
            ),
        };
        e.rewrite_node()
    }

    fn rewrite_node(&self) -> Expr {
        use Expr::*;
        let is_zero = |e: &Expr| matches!(e, Const(c) if *c == 0.0);
        let is_one = |e: &Expr| matches!(e, Const(c) if *c == 1.0);
        match self {
            Neg(a) => match a.as_ref() {
                Const(c) => Const(-c),
                Neg(inner) => inner.as_ref().clone(),
                _ => self.clone(),
            },
            Add(a, b) => {
                if is_zero(a) {
                    b.as_ref().clone()
                } else if is_zero(b) {
                    a.as_ref().clone()
                } else if let (Const(x), Const(y)) = (a.as_ref(), b.as_ref()) {
                    Const(x + y)
                } else {
                    self.clone()
                }
            }
            Sub(a, b) => {
                if is_zero(b) {
                    a.as_ref().clone()
                } else if is_zero(a) {
                    Neg(b.clone()).rewrite_node()
                } else if let (Const(x), Const(y)) = (a.as_ref(), b.as_ref()) {
                    Const(x - y)
                } else {
                    self.clone()
                }
            }
            Mul(a, b) => {
                if is_zero(a) || is_zero(b) {
                    Const(0.0)
                } else if is_one(a) {
                    b.as_ref().clone()
                } else if is_one(b) {
                    a.as_ref().clone()
                } else if let (Const(x), Const(y)) = (a.as_ref(), b.as_ref()) {
                    Const(x * y)
                } else {
                    self.clone()
                }
            }
            Div(a, b) => match (a.as_ref(), b.as_ref()) {
                // Folding 0/e for non-constant e would erase a potential
                // division-by-zero error, so only constant denominators fold.
                (_, Const(y)) if *y == 1.0 => a.as_ref().clone(),
                (Const(x), Const(y)) if *y != 0.0 => Const(x / y),
                _ => self.clone(),
            },
            Pow(a, b) => match (a.as_ref(), b.as_ref()) {
                (_, Const(y)) if *y == 1.0 => a.as_ref().clone(),
                (_, Const(y)) if *y == 0.0 => Const(1.0),
                (Const(x), Const(y)) => {
                    let v = x.powf(*y);
                    if v.is_finite() {
                        Const(v)
                    } else {
                        self.clone()
                    }
                }
                _ => self.clone(),
            },
            Call(f, args) => {
                let consts: Option<Vec<f64>> = args
                    .iter()
                    .map(|a| match a {
                        Const(c) => Some(*c),
                        _ => None,
                    })
                    .collect();
                if let Some(vals) = consts {
                    // Fold through eval so folded calls agree bit-for-bit
                    // with unfolded evaluation; leave domain errors in place.
                    let probe = Call(*f, vals.into_iter().map(Const).collect());
                    if let Ok(v) = probe.eval(0.0, &[]) {
                        return Const(v);
                    }
                }
                self.clone()
            }
            _ => self.clone(),
        }
    }
}

/// Build the active-branch derivative of `min(u, v)` / `max(u, v)` as an
/// expression that re-evaluates the branch condition at each point:
///   min'(u,v) = (du + dv)/2 - sign(u - v)*(du - dv)/2
///   max'(u,v) = (du + dv)/2 + sign(u - v)*(du - dv)/2
/// sign(0) = +1 assigns ties the u-branch for max and the v-branch for min;
/// both branch values agree at a tie, so either one-sided choice is valid.
fn branch_select(f: Func, u: &Expr, v: &Expr, du: Expr, dv: Expr) -> Expr {
    use Expr::*;
    let half = |e: Expr| Mul(Box::new(Const(0.5)), Box::new(e));
    let sum = half(Add(Box::new(du.clone()), Box::new(dv.clone())));
    let diff = half(Sub(Box::new(du), Box::new(dv)));
    let sgn = Call(
        Func::Sign,
        vec![Sub(Box::new(u.clone()), Box::new(v.clone()))],
    );
    let swing = Mul(Box::new(sgn), Box::new(diff));
    match f {
        Func::Min => Sub(Box::new(sum), Box::new(swing)),
        Func::Max => Add(Box::new(sum), Box::new(swing)),
        _ => unreachable!("branch_select only handles min/max"),
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

// Precedence levels for parenthesization: additive < multiplicative < unary
// < power operand (the grammar only allows atoms around '^').
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 4;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => PREC_ADD,
        Expr::Mul(..) | Expr::Div(..) => PREC_MUL,
        Expr::Neg(..) => PREC_NEG,
        Expr::Pow(..) => PREC_NEG, // printed as atom^atom; binds like unary
        // A negative literal prints with a leading '-', so it binds like a
        // negation (e.g. it must be parenthesized as the base of '^').
        Expr::Const(c) if *c < 0.0 => PREC_NEG,
        _ => PREC_ATOM,
    }
}

fn fmt_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn fmt_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{}` on f64 is the shortest form that round-trips the value exactly.
    // Negative literals print as '-' + unsigned number, which the parser
    // folds straight back into a negative constant.
    if c < 0.0 {
        write!(f, "-{}", -c)
    } else {
        write!(f, "{c}")
    }
}

impl fmt::Display for Expr {
    /// Prints with minimal parentheses; `parse(&e.to_string())` returns a
    /// structurally equal tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_const(f, *c),
            Expr::Time => write!(f, "t"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                // A bare numeric child would fuse into a negative literal on
                // re-parse ("-2" parses as the constant -2, not Neg(2)), so
                // parenthesize constants to keep the tree shape.
                if matches!(e.as_ref(), Expr::Const(_)) {
                    return write!(f, "({e})");
                }
                fmt_child(f, e, PREC_NEG)
            }
            Expr::Add(a, b) => {
                fmt_child(f, a, PREC_ADD)?;
                write!(f, " + ")?;
                // Left-associative: right child of equal precedence needs parens.
                fmt_child(f, b, PREC_ADD + 1)
            }
            Expr::Sub(a, b) => {
                fmt_child(f, a, PREC_ADD)?;
                write!(f, " - ")?;
                fmt_child(f, b, PREC_ADD + 1)
            }
            Expr::Mul(a, b) => {
                fmt_child(f, a, PREC_MUL)?;
                write!(f, "*")?;
                fmt_child(f, b, PREC_MUL + 1)
            }
            Expr::Div(a, b) => {
                fmt_child(f, a, PREC_MUL)?;
                write!(f, "/")?;
                fmt_child(f, b, PREC_MUL + 1)
            }
            Expr::Pow(a, b) => {
                // The grammar allows only atoms around '^'.
                fmt_child(f, a, PREC_ATOM)?;
                write!(f, "^")?;
                fmt_child(f, b, PREC_ATOM)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Piecewise(c, a, b) => {
                let var = match c.var {
                    CondVar::Time => "t".to_string(),
                    CondVar::Var(i) => format!("x{i}"),
                };
                let op = if c.ge { ">=" } else { "<" };
                write!(f, "pw({var} {op} ")?;
                fmt_const(f, c.threshold)?;
                write!(f, ", {a}, {b})")
            }
        }
    }
}
