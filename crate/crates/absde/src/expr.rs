//! Bounded arithmetic-expression grammar for user-defined drifts, terminal
//! segments and delay functions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary ('*' unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | VARIABLE | FUNC '(' expr ')' | 'E' '[' expr ']' | '(' expr ')'
//! FUNC    := abs | sin | cos | exp          (exp is clamped to [-50, 50])
//! ```
//!
//! Variables depend on where the expression is used: drifts see `t, y, z`,
//! terminal segments see `t, b`, delays see `t`, and the body of an
//! expectation `E[..]` sees only `theta` (anticipated Y) and `phi`
//! (anticipated Z). `EY` and `EZ` are shorthand for `E[theta]` and `E[phi]`.
//! Expectations cannot nest. Input length and nesting depth are capped so the
//! grammar stays total on untrusted input.

use crate::generator::AnticipatedQuery;

pub const MAX_INPUT_LEN: usize = 4096;
pub const MAX_DEPTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    T,
    Y,
    Z,
    B,
    Theta,
    Phi,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::Y => "y",
            Var::Z => "z",
            Var::B => "b",
            Var::Theta => "theta",
            Var::Phi => "phi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    /// exp with the argument clamped to [-50, 50].
    ExpBounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// `E[h(theta, phi)]`, answered through the anticipated query handle.
    Expect(Box<Expr>),
}

/// Where an expression is evaluated; controls the visible variables and
/// whether `E[..]` is allowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExprContext {
    Drift,
    Terminal,
    Delay,
    ExpectBody,
}

impl ExprContext {
    fn allows(self, v: Var) -> bool {
        match self {
            ExprContext::Drift => matches!(v, Var::T | Var::Y | Var::Z),
            ExprContext::Terminal => matches!(v, Var::T | Var::B),
            ExprContext::Delay => matches!(v, Var::T),
            ExprContext::ExpectBody => matches!(v, Var::Theta | Var::Phi),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "at byte {}: {}", self.pos, self.message)
    }
}

impl std::error::Error for ParseError {}

impl From<ParseError> for crate::error::AbsdeError {
    fn from(e: ParseError) -> Self {
        crate::error::AbsdeError::Expr(e.to_string())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    context: ExprContext,
    in_expect: bool,
}

impl<'a> Parser<'a> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected `{}`", c as char))
        }
    }

    fn parse_expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return self.error("expression too deeply nested");
        }
        let mut lhs = self.parse_term(depth + 1)?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.parse_term(depth + 1)?;
                    lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.parse_term(depth + 1)?;
                    lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return self.error("expression too deeply nested");
        }
        let mut lhs = self.parse_unary(depth + 1)?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.parse_unary(depth + 1)?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return self.error("expression too deeply nested");
        }
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_unary(depth + 1)?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.parse_primary(depth)
    }

    fn parse_primary(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return self.error("expression too deeply nested");
        }
        match self.peek() {
            None => self.error("unexpected end of expression"),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr(depth + 1)?;
                self.eat(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_ident(depth),
            Some(c) => self.error(format!("unexpected character `{}`", c as char)),
        }
    }

    fn parse_number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
        {
            self.pos += 1;
        }
        // Optional exponent; only consumed if digits follow.
        if self.src.get(self.pos).is_some_and(|c| *c == b'e' || *c == b'E') {
            let mut probe = self.pos + 1;
            if self.src.get(probe).is_some_and(|c| *c == b'+' || *c == b'-') {
                probe += 1;
            }
            if self.src.get(probe).is_some_and(|c| c.is_ascii_digit()) {
                self.pos = probe;
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            Ok(_) => self.error(format!("literal `{text}` overflows")),
            Err(_) => self.error(format!("bad numeric literal `{text}`")),
        }
    }

    fn parse_ident(&mut self, depth: usize) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        match name {
            "abs" | "sin" | "cos" | "exp" => {
                let op = match name {
                    "abs" => UnaryOp::Abs,
                    "sin" => UnaryOp::Sin,
                    "cos" => UnaryOp::Cos,
                    _ => UnaryOp::ExpBounded,
                };
                self.eat(b'(')?;
                let inner = self.parse_expr(depth + 1)?;
                self.eat(b')')?;
                Ok(Expr::Unary(op, Box::new(inner)))
            }
            "E" => self.parse_expect_body(depth, None),
            "EY" => self.expect_shorthand(Var::Theta),
            "EZ" => self.expect_shorthand(Var::Phi),
            "t" => self.variable(Var::T),
            "y" => self.variable(Var::Y),
            "z" => self.variable(Var::Z),
            "b" => self.variable(Var::B),
            "theta" => self.variable(Var::Theta),
            "phi" => self.variable(Var::Phi),
            "" => self.error("expected identifier"),
            other => self.error(format!("unknown identifier `{other}`")),
        }
    }

    fn variable(&mut self, v: Var) -> Result<Expr, ParseError> {
        let effective = if self.in_expect {
            ExprContext::ExpectBody
        } else {
            self.context
        };
        if !effective.allows(v) {
            return self.error(format!(
                "variable `{}` is not available in this context",
                v.name()
            ));
        }
        Ok(Expr::Var(v))
    }

    fn expect_shorthand(&mut self, v: Var) -> Result<Expr, ParseError> {
        if self.context != ExprContext::Drift || self.in_expect {
            return self.error("expectations are only available in drift expressions");
        }
        Ok(Expr::Expect(Box::new(Expr::Var(v))))
    }

    fn parse_expect_body(
        &mut self,
        depth: usize,
        _marker: Option<()>,
    ) -> Result<Expr, ParseError> {
        if self.context != ExprContext::Drift || self.in_expect {
            return self.error("expectations are only available in drift expressions");
        }
        self.eat(b'[')?;
        self.in_expect = true;
        let inner = self.parse_expr(depth + 1);
        self.in_expect = false;
        let inner = inner?;
        self.eat(b']')?;
        Ok(Expr::Expect(Box::new(inner)))
    }
}

/// Parse `source` for use in `context`. Total: never panics on any input.
pub fn parse(source: &str, context: ExprContext) -> Result<Expr, ParseError> {
    if source.len() > MAX_INPUT_LEN {
        return Err(ParseError {
            pos: MAX_INPUT_LEN,
            message: format!("expression longer than {MAX_INPUT_LEN} bytes"),
        });
    }
    if !source.is_ascii() {
        return Err(ParseError {
            pos: 0,
            message: "expression must be ascii".into(),
        });
    }
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        context,
        in_expect: false,
    };
    let expr = p.parse_expr(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return p.error("trailing input after expression");
    }
    Ok(expr)
}

/// Variable bindings for evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct VarEnv {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub b: f64,
    pub theta: f64,
    pub phi: f64,
}

impl Expr {
    pub fn eval(&self, env: &VarEnv, query: Option<&dyn AnticipatedQuery>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => match v {
                Var::T => env.t,
                Var::Y => env.y,
                Var::Z => env.z,
                Var::B => env.b,
                Var::Theta => env.theta,
                Var::Phi => env.phi,
            },
            Expr::Unary(op, inner) => {
                let x = inner.eval(env, query);
                match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::ExpBounded => x.clamp(-50.0, 50.0).exp(),
                }
            }
            Expr::Bin(op, l, r) => {
                let a = l.eval(env, query);
                let b = r.eval(env, query);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                }
            }
            Expr::Expect(body) => match query {
                Some(q) => {
                    let outer = *env;
                    q.expect(&|theta, phi| {
                        let mut inner_env = outer;
                        inner_env.theta = theta;
                        inner_env.phi = phi;
                        body.eval(&inner_env, None)
                    })
                }
                // Validation keeps E[..] out of query-less contexts.
                None => f64::NAN,
            },
        }
    }

    /// True if the expression contains an `E[..]` node.
    pub fn uses_expectation(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Unary(_, inner) => inner.uses_expectation(),
            Expr::Bin(_, l, r) => l.uses_expectation() || r.uses_expectation(),
            Expr::Expect(_) => true,
        }
    }
}
