//! Arithmetic expressions for the perturbation h and the lid data.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | '+' unary | power
//! power := atom ('^' unary)?          right associative
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X1,
    X2,
    R,
    Theta,
    T,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::X1, Var::X2, Var::R, Var::Theta, Var::T];

    pub fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::R => "r",
            Var::Theta => "theta",
            Var::T => "t",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Var::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Pow,
}

impl Func {
    const ALL: [Func; 6] = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Abs, Func::Pow];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at position {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression at position {pos}")]
    UnexpectedEnd { pos: usize },
    #[error("expected {expected} at position {pos}, found '{found}'")]
    Expected {
        expected: &'static str,
        found: String,
        pos: usize,
    },
    #[error("malformed number '{text}' at position {pos}")]
    BadNumber { text: String, pos: usize },
    #[error("unknown identifier '{name}' at position {pos} (allowed: {allowed})")]
    UnknownIdentifier {
        name: String,
        pos: usize,
        allowed: String,
    },
    #[error("function {name} takes {expected} argument(s), got {got} at position {pos}")]
    Arity {
        name: &'static str,
        expected: usize,
        got: usize,
        pos: usize,
    },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::UnexpectedChar { pos, .. }
            | ParseError::UnexpectedEnd { pos }
            | ParseError::Expected { pos, .. }
            | ParseError::BadNumber { pos, .. }
            | ParseError::UnknownIdentifier { pos, .. }
            | ParseError::Arity { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero at {0}")]
    DivisionByZero(Bindings),
    #[error("{what} at {at}")]
    OutOfDomain { what: String, at: Bindings },
    #[error("variable {name} is not bound")]
    Unbound { name: &'static str },
}

/// Values of the variables; unbound ones are None.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub r: Option<f64>,
    pub theta: Option<f64>,
    pub t: Option<f64>,
}

impl Bindings {
    /// A point of the thin space: x1, x2, r = |x| and θ ∈ [0, 2π).
    pub fn planar(x: [f64; 2]) -> Self {
        Self {
            x1: Some(x[0]),
            x2: Some(x[1]),
            r: Some(x[0].hypot(x[1])),
            theta: Some(x[1].atan2(x[0]).rem_euclid(std::f64::consts::TAU)),
            t: None,
        }
    }

    /// A point of the unit hemisphere at elevation t and azimuth θ.
    pub fn spherical(theta: f64, t: f64) -> Self {
        Self {
            x1: Some(t.cos() * theta.cos()),
            x2: Some(t.cos() * theta.sin()),
            r: Some(1.0),
            theta: Some(theta),
            t: Some(t),
        }
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X1 => self.x1,
            Var::X2 => self.x2,
            Var::R => self.r,
            Var::Theta => self.theta,
            Var::T => self.t,
        }
    }
}

impl fmt::Display for Bindings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Var::ALL
            .iter()
            .filter_map(|&v| self.get(v).map(|x| format!("{}={x}", v.name())))
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    allowed: &'a [Var],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn found(&self) -> String {
        self.peek().map(String::from).unwrap_or_else(|| "end of input".into())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Err(ParseError::UnexpectedEnd { pos: self.pos });
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let name = &self.src[start..self.pos];
            self.skip_ws();
            if self.peek() == Some('(') {
                let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownIdentifier {
                    name: name.to_string(),
                    pos: start,
                    allowed: Func::ALL.map(Func::name).join(", "),
                })?;
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                if !self.eat(')') {
                    return Err(self.expected("')'"));
                }
                if args.len() != func.arity() {
                    return Err(ParseError::Arity {
                        name: func.name(),
                        expected: func.arity(),
                        got: args.len(),
                        pos: start,
                    });
                }
                return Ok(Expr::Call(func, args));
            }
            if name == "pi" {
                return Ok(Expr::Num(std::f64::consts::PI));
            }
            return match Var::from_name(name) {
                Some(v) if self.allowed.contains(&v) => Ok(Expr::Var(v)),
                _ => Err(ParseError::UnknownIdentifier {
                    name: name.to_string(),
                    pos: start,
                    allowed: self
                        .allowed
                        .iter()
                        .map(|v| v.name())
                        .chain(["pi"])
                        .collect::<Vec<_>>()
                        .join(", "),
                }),
            };
        }
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(self.expected("')'"));
            }
            return Ok(e);
        }
        Err(ParseError::UnexpectedChar { ch: c, pos: start })
    }

    fn expected(&self, what: &'static str) -> ParseError {
        if self.pos >= self.src.len() {
            ParseError::UnexpectedEnd { pos: self.pos }
        } else {
            ParseError::Expected {
                expected: what,
                found: self.found(),
                pos: self.pos,
            }
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let digits = |p: &mut usize| {
            while *p < bytes.len() && bytes[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        let mut p = self.pos;
        digits(&mut p);
        if p < bytes.len() && bytes[p] == b'.' {
            p += 1;
            digits(&mut p);
        }
        if p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
            let mut q = p + 1;
            if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                q += 1;
            }
            if q < bytes.len() && bytes[q].is_ascii_digit() {
                digits(&mut q);
                p = q;
            }
        }
        let text = &self.src[start..p];
        self.pos = p;
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err(ParseError::BadNumber {
                text: text.to_string(),
                pos: start,
            }),
        }
    }
}

/// Parse with the given variables in scope (plus the constant pi).
pub fn parse_expression(text: &str, allowed: &[Var]) -> Result<Expr, ParseError> {
    let mut p = Parser { src: text, pos: 0, allowed };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(ParseError::Expected {
            expected: "an operator or end of input",
            found: p.found(),
            pos: p.pos,
        });
    }
    Ok(e)
}

impl Expr {
    pub fn evaluate(&self, b: &Bindings) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(v) => b.get(*v).ok_or(EvalError::Unbound { name: v.name() })?,
            Expr::Neg(e) => -e.evaluate(b)?,
            Expr::Bin(op, l, r) => {
                let (x, y) = (l.evaluate(b)?, r.evaluate(b)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero(*b));
                        }
                        x / y
                    }
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(f, args) => {
                let x = args[0].evaluate(b)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::OutOfDomain {
                                what: format!("log of non-positive value {x}"),
                                at: *b,
                            });
                        }
                        x.ln()
                    }
                    Func::Abs => x.abs(),
                    Func::Pow => x.powf(args[1].evaluate(b)?),
                }
            }
        };
        if !v.is_finite() {
            return Err(EvalError::OutOfDomain {
                what: format!("non-finite value in {self}"),
                at: *b,
            });
        }
        Ok(v)
    }

    /// The value when the expression uses no variables.
    pub fn constant(&self) -> Option<f64> {
        if self.uses_variables() {
            None
        } else {
            self.evaluate(&Bindings::default()).ok()
        }
    }

    pub fn uses_variables(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(_) => true,
            Expr::Neg(e) => e.uses_variables(),
            Expr::Bin(_, l, r) => l.uses_variables() || r.uses_variables(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_variables),
        }
    }

    /// Closure form of the expression for hot loops; non-finite results
    /// should be re-evaluated with [`Expr::evaluate`] for a diagnostic.
    pub fn compile(&self) -> Box<dyn Fn(&Bindings) -> f64 + Send + Sync> {
        let node = self.compile_node();
        Box::new(move |b| finite_or_nan(node(b)))
    }

    fn compile_node(&self) -> Box<dyn Fn(&Bindings) -> f64 + Send + Sync> {
        match self.clone() {
            Expr::Num(x) => Box::new(move |_| x),
            Expr::Var(v) => Box::new(move |b| b.get(v).unwrap_or(f64::NAN)),
            Expr::Neg(e) => {
                let f = e.compile();
                Box::new(move |b| -f(b))
            }
            Expr::Bin(op, l, r) => {
                let (f, g) = (l.compile(), r.compile());
                match op {
                    BinOp::Add => Box::new(move |b| f(b) + g(b)),
                    BinOp::Sub => Box::new(move |b| f(b) - g(b)),
                    BinOp::Mul => Box::new(move |b| f(b) * g(b)),
                    BinOp::Div => Box::new(move |b| {
                        let y = g(b);
                        if y == 0.0 {
                            f64::NAN
                        } else {
                            f(b) / y
                        }
                    }),
                    BinOp::Pow => Box::new(move |b| nan_aware_pow(f(b), g(b))),
                }
            }
            Expr::Call(func, args) => {
                let mut fs: Vec<_> = args.iter().map(Expr::compile).collect();
                let f = fs.remove(0);
                match func {
                    Func::Sin => Box::new(move |b| f(b).sin()),
                    Func::Cos => Box::new(move |b| f(b).cos()),
                    Func::Exp => Box::new(move |b| f(b).exp()),
                    Func::Log => Box::new(move |b| {
                        let x = f(b);
                        if x <= 0.0 {
                            f64::NAN
                        } else {
                            x.ln()
                        }
                    }),
                    Func::Abs => Box::new(move |b| f(b).abs()),
                    Func::Pow => {
                        let g = fs.remove(0);
                        Box::new(move |b| nan_aware_pow(f(b), g(b)))
                    }
                }
            }
        }
    }
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// powf, except that NaN in either argument stays NaN (powf(NaN, 0) is 1).
fn nan_aware_pow(x: f64, y: f64) -> f64 {
    if x.is_nan() || y.is_nan() {
        f64::NAN
    } else {
        x.powf(y)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized, so that printing and re-parsing gives back the
    /// same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: &[Var] = &Var::ALL;

    fn eval(text: &str, b: Bindings) -> f64 {
        parse_expression(text, ALL).unwrap().evaluate(&b).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        let b = Bindings::default();
        assert_eq!(eval("1 + 2 * 3", b), 7.0);
        assert_eq!(eval("2 ^ 3 ^ 2", b), 512.0);
        assert_eq!(eval("-2 ^ 2", b), -4.0);
        assert_eq!(eval("2 ^ -1", b), 0.5);
        assert_eq!(eval("8 / 4 / 2", b), 1.0);
        assert_eq!(eval("1 - 2 - 3", b), -4.0);
        assert_eq!(eval("pow(2, 10) + abs(-1.5e0)", b), 1025.5);
        assert_eq!(eval("1", b), 1.0);
    }

    #[test]
    fn variables_bind_from_points() {
        let b = Bindings::planar([2.0, 1.0]);
        assert_eq!(eval("x1^2 - x2", b), 3.0);
        let e = eval("exp(-1/(r*r))", Bindings { r: Some(1.0), ..Bindings::default() });
        assert_eq!(e, (-1.0f64).exp());
        let s = Bindings::spherical(0.3, 0.0);
        assert!((eval("x1 - cos(theta)", s)).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_expression("sin(", ALL).unwrap_err();
        assert_eq!(err.position(), 4);
        let err = parse_expression("1 + y", &[Var::X1]).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { pos: 4, .. }), "{err}");
        assert!(err.to_string().contains("x1"));
        assert!(parse_expression("x1", &[Var::Theta]).is_err());
        assert!(matches!(parse_expression("pow(1)", ALL), Err(ParseError::Arity { .. })));
        assert!(parse_expression("1 2", ALL).is_err());
        assert!(parse_expression("(1", ALL).is_err());
        assert!(parse_expression("$", ALL).is_err());
        assert!(matches!(parse_expression("1e999", ALL), Err(ParseError::BadNumber { .. })));
    }

    #[test]
    fn division_by_zero_reports_bindings() {
        let e = parse_expression("1 / x1", ALL).unwrap();
        let err = e.evaluate(&Bindings::planar([0.0, 2.0])).unwrap_err();
        assert!(matches!(err, EvalError::DivisionByZero(_)));
        assert!(err.to_string().contains("x2=2"), "{err}");
        assert!(e.compile()(&Bindings::planar([0.0, 2.0])).is_nan());
    }

    #[test]
    fn constants_are_detected() {
        assert_eq!(parse_expression("2*pi", ALL).unwrap().constant(), Some(std::f64::consts::TAU));
        assert_eq!(parse_expression("x1*0", ALL).unwrap().constant(), None);
    }
}
