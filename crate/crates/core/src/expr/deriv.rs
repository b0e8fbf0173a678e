use super::{BinOp, Func, Node};

// Smart constructors: fold literal arithmetic and drop additive zeros and
// multiplicative ones/zeros. Nothing else is rewritten.

fn num(n: &Node) -> Option<f64> {
    match n {
        Node::Num(c) => Some(*c),
        _ => None,
    }
}

fn folded(v: f64, fallback: impl FnOnce() -> Node) -> Node {
    if v.is_finite() {
        Node::Num(v)
    } else {
        fallback()
    }
}

fn add(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => folded(x + y, || raw(BinOp::Add, a, b)),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => raw(BinOp::Add, a, b),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => folded(x - y, || raw(BinOp::Sub, a, b)),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => raw(BinOp::Sub, a, b),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => folded(x * y, || raw(BinOp::Mul, a, b)),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => raw(BinOp::Mul, a, b),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) if y != 0.0 => folded(x / y, || raw(BinOp::Div, a, b)),
        (Some(0.0), _) => Node::Num(0.0),
        (_, Some(1.0)) => a,
        _ => raw(BinOp::Div, a, b),
    }
}

fn pow(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => match super::pow(x, y) {
            Some(v) => folded(v, || raw(BinOp::Pow, a, b)),
            None => raw(BinOp::Pow, a, b),
        },
        (_, Some(1.0)) => a,
        (_, Some(0.0)) => Node::Num(1.0),
        _ => raw(BinOp::Pow, a, b),
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Num(x) => Node::Num(-x),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn call(f: Func, a: Node) -> Node {
    Node::Call(f, Box::new(a))
}

fn raw(op: BinOp, a: Node, b: Node) -> Node {
    Node::Binary(op, Box::new(a), Box::new(b))
}

pub(super) fn derivative(n: &Node, var: usize) -> Node {
    if !n.depends_on(var) {
        return Node::Num(0.0);
    }
    match n {
        Node::Num(_) => Node::Num(0.0),
        Node::Var(v) => Node::Num(if *v == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Binary(op, a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            match op {
                BinOp::Add => add(derivative(a, var), derivative(b, var)),
                BinOp::Sub => sub(derivative(a, var), derivative(b, var)),
                BinOp::Mul => add(
                    mul(derivative(a, var), b.clone()),
                    mul(a.clone(), derivative(b, var)),
                ),
                BinOp::Div => div(
                    sub(mul(derivative(a, var), b.clone()), mul(a.clone(), derivative(b, var))),
                    mul(b.clone(), b.clone()),
                ),
                BinOp::Pow => {
                    if !b.depends_on(var) {
                        // power rule: b * a^(b-1) * a'
                        let reduced = if b.is_const() {
                            sub(b.clone(), Node::Num(1.0))
                        } else {
                            raw(BinOp::Sub, b.clone(), Node::Num(1.0))
                        };
                        mul(mul(b.clone(), pow(a.clone(), reduced)), derivative(a, var))
                    } else if !a.depends_on(var) {
                        // a^b * log(a) * b'
                        mul(mul(n.clone(), call(Func::Log, a.clone())), derivative(b, var))
                    } else {
                        // a^b * (b' log(a) + b a' / a)
                        mul(
                            n.clone(),
                            add(
                                mul(derivative(b, var), call(Func::Log, a.clone())),
                                div(mul(b.clone(), derivative(a, var)), a.clone()),
                            ),
                        )
                    }
                }
            }
        }
        Node::Call(f, a) => {
            let inner = derivative(a, var);
            match f {
                Func::Exp => mul(n.clone(), inner),
                Func::Log => div(inner, a.as_ref().clone()),
                Func::Sqrt => div(inner, mul(Node::Num(2.0), n.clone())),
            }
        }
    }
}
