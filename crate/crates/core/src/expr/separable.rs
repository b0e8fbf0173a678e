use std::sync::Arc;

use super::{BinOp, Expr, ExprSignature, Node};

/// One product term `first · second` of a separated two-variable expression.
/// Each factor is expressed in the original signature but depends on at most
/// one variable.
#[derive(Debug, Clone)]
pub struct SeparableTerm {
    pub first: Expr,
    pub second: Expr,
}

type Terms = Vec<(Node, Node)>;

const MAX_TERMS: usize = 64;

pub(super) fn separate(root: &Node, a: usize, b: usize, sig: &ExprSignature) -> Option<Vec<SeparableTerm>> {
    for v in 0..sig.len() {
        if v != a && v != b && root.depends_on(v) {
            return None;
        }
    }
    let terms = split(root, a, b)?;
    let sig = Arc::new(sig.clone());
    Some(
        terms
            .into_iter()
            .map(|(f, s)| SeparableTerm {
                first: Expr::from_node(f, Arc::clone(&sig)),
                second: Expr::from_node(s, Arc::clone(&sig)),
            })
            .collect(),
    )
}

fn one() -> Node {
    Node::Num(1.0)
}

fn bin(op: BinOp, x: Node, y: Node) -> Node {
    Node::Binary(op, Box::new(x), Box::new(y))
}

fn split(n: &Node, a: usize, b: usize) -> Option<Terms> {
    let (da, db) = (n.depends_on(a), n.depends_on(b));
    if !db {
        return Some(vec![(n.clone(), one())]);
    }
    if !da {
        return Some(vec![(one(), n.clone())]);
    }
    let out = match n {
        Node::Neg(x) => split(x, a, b)?
            .into_iter()
            .map(|(f, s)| (Node::Neg(Box::new(f)), s))
            .collect(),
        Node::Binary(BinOp::Add, x, y) => {
            let mut t = split(x, a, b)?;
            t.extend(split(y, a, b)?);
            t
        }
        Node::Binary(BinOp::Sub, x, y) => {
            let mut t = split(x, a, b)?;
            t.extend(split(y, a, b)?.into_iter().map(|(f, s)| (Node::Neg(Box::new(f)), s)));
            t
        }
        Node::Binary(BinOp::Mul, x, y) => product(&split(x, a, b)?, &split(y, a, b)?)?,
        Node::Binary(BinOp::Div, x, y) => {
            let num = split(x, a, b)?;
            if !y.depends_on(b) {
                num.into_iter().map(|(f, s)| (bin(BinOp::Div, f, (**y).clone()), s)).collect()
            } else if !y.depends_on(a) {
                num.into_iter().map(|(f, s)| (f, bin(BinOp::Div, s, (**y).clone()))).collect()
            } else {
                return None;
            }
        }
        Node::Binary(BinOp::Pow, x, y) => {
            let k = match **y {
                Node::Num(k) if k.fract() == 0.0 && (1.0..=8.0).contains(&k) => k as usize,
                _ => return None,
            };
            let base = split(x, a, b)?;
            let mut acc = base.clone();
            for _ in 1..k {
                acc = product(&acc, &base)?;
            }
            acc
        }
        Node::Call(..) | Node::Num(_) | Node::Var(_) => return None,
    };
    (out.len() <= MAX_TERMS).then_some(out)
}

fn product(l: &Terms, r: &Terms) -> Option<Terms> {
    if l.len() * r.len() > MAX_TERMS {
        return None;
    }
    let mut out = Vec::with_capacity(l.len() * r.len());
    for (f1, s1) in l {
        for (f2, s2) in r {
            out.push((bin(BinOp::Mul, f1.clone(), f2.clone()), bin(BinOp::Mul, s1.clone(), s2.clone())));
        }
    }
    Some(out)
}
