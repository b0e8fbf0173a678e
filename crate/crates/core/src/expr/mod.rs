//! Scalar arithmetic expressions used to configure a market.
//!
//! An [`Expr`] is parsed against an [`ExprSignature`] that fixes the names and
//! positions of its free variables, so evaluation takes a plain slice of
//! values. Expressions are immutable once built.

mod deriv;
mod parser;
mod separable;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parser::ParseError;
pub use separable::SeparableTerm;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignatureError {
    #[error("identifier `{0}` must be ASCII alphanumeric and start with a letter")]
    BadIdentifier(String),
    #[error("duplicate identifier `{0}`")]
    Duplicate(String),
}

/// Ordered variable names an expression may reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExprSignature {
    names: Vec<String>,
}

impl ExprSignature {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, SignatureError> {
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            let mut chars = n.chars();
            let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
                && chars.all(|c| c.is_ascii_alphanumeric());
            if !ok {
                return Err(SignatureError::BadIdentifier(n.to_string()));
            }
            if out.iter().any(|m| m == n) {
                return Err(SignatureError::Duplicate(n.to_string()));
            }
            out.push(n.to_string());
        }
        Ok(Self { names: out })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on(var),
            Node::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn is_const(&self) -> bool {
        match self {
            Node::Num(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Call(_, a) => a.is_const(),
            Node::Binary(_, a, b) => a.is_const() && b.is_const(),
        }
    }

    fn count(&self) -> usize {
        match self {
            Node::Num(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Call(_, a) => 1 + a.count(),
            Node::Binary(_, a, b) => 1 + a.count() + b.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("log of non-positive argument in `{0}`")]
    LogDomain(String),
    #[error("sqrt of negative argument in `{0}`")]
    SqrtDomain(String),
    #[error("pow domain error in `{0}`")]
    PowDomain(String),
    #[error("non-finite result in `{0}`")]
    NonFinite(String),
    #[error("expected {expected} bindings, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
}

/// A parsed expression together with its variable signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    sig: Arc<ExprSignature>,
}

impl Expr {
    pub fn parse(source: &str, sig: &ExprSignature) -> Result<Self, ParseError> {
        let sig = Arc::new(sig.clone());
        let root = parser::parse(source, &sig)?;
        Ok(Self { root, sig })
    }

    pub(crate) fn from_node(root: Node, sig: Arc<ExprSignature>) -> Self {
        Self { root, sig }
    }

    pub fn constant(value: f64, sig: &ExprSignature) -> Self {
        Self { root: Node::Num(value), sig: Arc::new(sig.clone()) }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn signature(&self) -> &ExprSignature {
        &self.sig
    }

    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    pub fn depends_on(&self, name: &str) -> bool {
        self.sig.index_of(name).is_some_and(|i| self.root.depends_on(i))
    }

    /// Evaluates with positional bindings in signature order.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if values.len() != self.sig.len() {
            return Err(EvalError::Arity { expected: self.sig.len(), got: values.len() });
        }
        self.eval_node(&self.root, values)
    }

    /// Evaluates with named bindings.
    pub fn eval_named(&self, bindings: &HashMap<&str, f64>) -> Result<f64, EvalError> {
        let mut values = Vec::with_capacity(self.sig.len());
        for (i, name) in self.sig.names().iter().enumerate() {
            match bindings.get(name.as_str()) {
                Some(v) => values.push(*v),
                None if !self.root.depends_on(i) => values.push(f64::NAN),
                None => return Err(EvalError::Unbound(name.clone())),
            }
        }
        self.eval_node(&self.root, &values)
    }

    fn eval_node(&self, node: &Node, values: &[f64]) -> Result<f64, EvalError> {
        let v = match node {
            Node::Num(c) => return Ok(*c),
            Node::Var(i) => return Ok(values[*i]),
            Node::Neg(a) => -self.eval_node(a, values)?,
            Node::Binary(op, a, b) => {
                let x = self.eval_node(a, values)?;
                let y = self.eval_node(b, values)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero(self.show(node)));
                        }
                        x / y
                    }
                    BinOp::Pow => pow(x, y).ok_or_else(|| {
                        if x == 0.0 && y < 0.0 {
                            EvalError::DivisionByZero(self.show(node))
                        } else {
                            EvalError::PowDomain(self.show(node))
                        }
                    })?,
                }
            }
            Node::Call(f, a) => {
                let x = self.eval_node(a, values)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::LogDomain(self.show(node)));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::SqrtDomain(self.show(node)));
                        }
                        x.sqrt()
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(self.show(node)))
        }
    }

    fn show(&self, node: &Node) -> String {
        Printer { node, sig: &self.sig }.to_string()
    }

    /// Symbolic partial derivative with respect to `var`.
    ///
    /// Panics if `var` is not part of the signature.
    pub fn differentiate(&self, var: &str) -> Expr {
        let idx = self
            .sig
            .index_of(var)
            .unwrap_or_else(|| panic!("`{var}` is not in the expression signature"));
        Expr { root: deriv::derivative(&self.root, idx), sig: Arc::clone(&self.sig) }
    }

    /// Replaces every variable of `self` by the corresponding expression in
    /// `replacements` (signature order). All replacements must share one
    /// signature, which becomes the result's signature. No folding is applied,
    /// so evaluation follows the same arithmetic as evaluating the pieces by hand.
    pub fn substitute(&self, replacements: &[&Expr]) -> Expr {
        assert_eq!(replacements.len(), self.sig.len(), "one replacement per variable");
        let sig = replacements
            .first()
            .map(|e| Arc::clone(&e.sig))
            .unwrap_or_else(|| Arc::clone(&self.sig));
        for r in replacements {
            assert_eq!(*r.sig, *sig, "replacements must share a signature");
        }
        fn go(n: &Node, reps: &[&Expr]) -> Node {
            match n {
                Node::Num(c) => Node::Num(*c),
                Node::Var(i) => reps[*i].root.clone(),
                Node::Neg(a) => Node::Neg(Box::new(go(a, reps))),
                Node::Binary(op, a, b) => Node::Binary(*op, Box::new(go(a, reps)), Box::new(go(b, reps))),
                Node::Call(f, a) => Node::Call(*f, Box::new(go(a, reps))),
            }
        }
        Expr { root: go(&self.root, replacements), sig }
    }

    /// `self op other`; both operands must share a signature.
    pub fn combine(&self, op: BinOp, other: &Expr) -> Expr {
        assert_eq!(*self.sig, *other.sig, "operands must share a signature");
        Expr {
            root: Node::Binary(op, Box::new(self.root.clone()), Box::new(other.root.clone())),
            sig: Arc::clone(&self.sig),
        }
    }

    /// Variable reference expression in the given signature.
    pub fn var(name: &str, sig: &ExprSignature) -> Option<Expr> {
        sig.index_of(name).map(|i| Expr { root: Node::Var(i), sig: Arc::new(sig.clone()) })
    }

    /// Splits `self` into `Σ a_k(first) · b_k(second)` when its structure
    /// allows, where each factor depends on at most one of the two variables.
    pub fn separate(&self, first: &str, second: &str) -> Option<Vec<SeparableTerm>> {
        let a = self.sig.index_of(first)?;
        let b = self.sig.index_of(second)?;
        separable::separate(&self.root, a, b, &self.sig)
    }
}

/// `x^y` with the domain rules of the expression language: a non-integer
/// exponent needs a non-negative base; zero to a negative power is undefined.
fn pow(x: f64, y: f64) -> Option<f64> {
    if x < 0.0 && y.fract() != 0.0 {
        return None;
    }
    if x == 0.0 && y < 0.0 {
        return None;
    }
    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
        Some(x.powi(y as i32))
    } else {
        Some(x.powf(y))
    }
}

struct Printer<'a> {
    node: &'a Node,
    sig: &'a ExprSignature,
}

impl Printer<'_> {
    fn write(&self, n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match n {
            Node::Num(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "(-{:?})", -c),
            Node::Num(c) => write!(f, "{c:?}"),
            Node::Var(i) => f.write_str(&self.sig.names()[*i]),
            Node::Neg(a) => {
                f.write_str("(-")?;
                self.write(a, f)?;
                f.write_str(")")
            }
            Node::Binary(op, a, b) => {
                f.write_str("(")?;
                self.write(a, f)?;
                write!(f, " {} ", op.symbol())?;
                self.write(b, f)?;
                f.write_str(")")
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.node, f)
    }
}

/// Fully parenthesised rendering that parses back to an equivalent tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer { node: &self.root, sig: &self.sig }.fmt(f)
    }
}
