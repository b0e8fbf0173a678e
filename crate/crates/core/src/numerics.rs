//! Deterministic quadrature, bracketed root finding, and monotonicity scans.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub quad_abs: f64,
    pub quad_rel: f64,
    pub root_x: f64,
    pub max_depth: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { quad_abs: 1e-9, quad_rel: 1e-9, root_x: 1e-10, max_depth: 50 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.quad_abs, self.quad_rel, self.root_x];
        if positive.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Tolerances(format!("tolerances must be positive and finite: {self:?}")));
        }
        if self.max_depth < 10 {
            return Err(Error::Tolerances(format!("max_depth must be at least 10, got {}", self.max_depth)));
        }
        Ok(())
    }
}

/// Subdivision levels always taken before the error estimate is trusted.
/// Guards against symmetric integrands that fool the first Simpson pair.
const MIN_DEPTH: usize = 2;

fn finite_at<F>(f: &F, x: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteIntegrand { x })
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The target error is `max(quad_abs, quad_rel · |I|)` where `I` is the
/// coarse whole-interval estimate. Each accepted panel carries the
/// Richardson correction.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: &Tolerances) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(a <= b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (finite_at(&f, a)?, finite_at(&f, m)?, finite_at(&f, b)?);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let eps = tol.quad_abs.max(tol.quad_rel * whole.abs());
    let panel = Panel { a, b, fa, fm, fb, whole };
    simpson(&f, panel, eps, 0, tol.max_depth)
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson<F>(f: &F, p: Panel, eps: f64, depth: usize, max_depth: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = 0.5 * (p.a + p.b);
    let (lm, rm) = (0.5 * (p.a + m), 0.5 * (m + p.b));
    let (flm, frm) = (finite_at(f, lm)?, finite_at(f, rm)?);
    let h = (p.b - p.a) / 12.0;
    let left = h * (p.fa + 4.0 * flm + p.fm);
    let right = h * (p.fm + 4.0 * frm + p.fb);
    let diff = left + right - p.whole;
    if depth >= MIN_DEPTH && (diff.abs() <= 15.0 * eps || m <= p.a || m >= p.b) {
        return Ok(left + right + diff / 15.0);
    }
    if depth >= max_depth {
        return Err(Error::MaxDepth { depth: max_depth, x: m });
    }
    let l = Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left };
    let r = Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right };
    Ok(simpson(f, l, 0.5 * eps, depth + 1, max_depth)? + simpson(f, r, 0.5 * eps, depth + 1, max_depth)?)
}

/// Brent's method on a sign-changing bracket.
///
/// Returns `a` (or `b`) when the function vanishes exactly there. Otherwise the
/// bracket is shrunk until its half-width falls below `root_x` (plus a
/// machine-epsilon term relative to the iterate).
pub fn find_root<F>(f: F, a: f64, b: f64, tol: &Tolerances) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let eval = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue { x })
        }
    };
    if !(a <= b) {
        return Err(Error::InvalidInterval { a, b });
    }
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange { a, b, fa, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol.root_x;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = eval(b)?;
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    NonIncreasing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanOutcome {
    Pass,
    /// First adjacent pair `(x0, f0), (x1, f1)` violating the direction.
    Violation { x0: f64, f0: f64, x1: f64, f1: f64 },
}

impl ScanOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, ScanOutcome::Pass)
    }
}

/// Strictness margin for [`Direction::Increasing`].
pub const INCREASING_MARGIN: f64 = 1e-12;

pub fn monotone_scan<F>(f: F, a: f64, b: f64, n: usize, direction: Direction) -> Result<ScanOutcome>
where
    F: Fn(f64) -> Result<f64>,
{
    if n < 8 {
        return Err(Error::Precondition(format!("monotone scan needs n >= 8, got {n}")));
    }
    let step = (b - a) / n as f64;
    let at = |i: usize| if i == n { b } else { a + step * i as f64 };
    let eval = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue { x })
        }
    };
    let mut x0 = at(0);
    let mut f0 = eval(x0)?;
    for i in 1..=n {
        let x1 = at(i);
        let f1 = eval(x1)?;
        let ok = match direction {
            Direction::Increasing => f1 - f0 > INCREASING_MARGIN,
            Direction::NonIncreasing => f1 - f0 <= 0.0,
        };
        if !ok {
            return Ok(ScanOutcome::Violation { x0, f0, x1, f1 });
        }
        x0 = x1;
        f0 = f1;
    }
    Ok(ScanOutcome::Pass)
}

/// Neumaier compensated summation, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
