//! Audits of a solved mechanism: brute-force incentive compatibility,
//! individual rationality, the envelope condition, reciprocity of the
//! cut-offs, and agreement of the two revenue formulas.

use std::fmt;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::market::{kernel_signature, MarketSpec, SideId, SidePair};
use crate::mechanism::{uniform_grid, CutoffRule, Mechanism, MechanismSolution, PaymentSchedule, SideRule};
use crate::numerics::Tolerances;
use crate::par;

pub const MIN_AUDIT_GRID: usize = 51;
pub const MIN_RECIPROCITY_GRID: usize = 32;

/// Cut-off rule and payments under audit.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub rule: &'a CutoffRule,
    pub payments: &'a SidePair<PaymentSchedule>,
}

impl<'a> From<&'a MechanismSolution> for Candidate<'a> {
    fn from(sol: &'a MechanismSolution) -> Self {
        Self { rule: &sol.rule, payments: &sol.payments }
    }
}

/// Pass thresholds for each audit metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditTolerances {
    pub ic_gain: f64,
    pub ir_payoff: f64,
    pub icfoc_rel: f64,
    pub reciprocity: f64,
    pub objective_cross: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self { ic_gain: 1e-6, ir_payoff: 1e-9, icfoc_rel: 1e-4, reciprocity: 1e-4, objective_cross: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// True-type and report grid size.
    pub n: usize,
    pub tol: AuditTolerances,
    pub quad: Tolerances,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { n: 201, tol: AuditTolerances::default(), quad: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub ic_max_gain: SidePair<f64>,
    pub ir_min_payoff: SidePair<f64>,
    /// Payoff of the lowest matched type.
    pub ir_lowest_payoff: SidePair<f64>,
    pub icfoc_max_err: SidePair<f64>,
    pub reciprocity_max_err: SidePair<f64>,
    pub objective_cross_err: f64,
    pub tol: AuditTolerances,
}

/// One audit metric with its threshold, oriented so that `excess ≤ 1`
/// means pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub excess: f64,
}

impl AuditReport {
    pub fn metrics(&self) -> Vec<Metric> {
        let mut out = Vec::new();
        let mut push = |name: String, value: f64, limit: f64, excess: f64| {
            out.push(Metric { name, value, limit, excess: if excess.is_nan() { f64::INFINITY } else { excess } });
        };
        for k in SideId::BOTH {
            let t = k.tag();
            let g = self.ic_max_gain[k];
            push(format!("ic_max_gain_{t}"), g, self.tol.ic_gain, g.max(0.0) / self.tol.ic_gain);
            let ir = self.ir_min_payoff[k];
            push(format!("ir_min_payoff_{t}"), ir, -self.tol.ir_payoff, (-ir).max(0.0) / self.tol.ir_payoff);
            let j = self.ir_lowest_payoff[k];
            push(format!("ir_lowest_payoff_{t}"), j, self.tol.ir_payoff, j.abs() / self.tol.ir_payoff);
            let e = self.icfoc_max_err[k];
            push(format!("icfoc_max_err_{t}"), e, self.tol.icfoc_rel, e / self.tol.icfoc_rel);
            let r = self.reciprocity_max_err[k];
            push(format!("reciprocity_max_err_{t}"), r, self.tol.reciprocity, r / self.tol.reciprocity);
        }
        let c = self.objective_cross_err;
        push("objective_cross_err".into(), c, self.tol.objective_cross, c / self.tol.objective_cross);
        out
    }

    /// Largest metric-to-threshold ratio.
    pub fn worst_excess(&self) -> f64 {
        self.metrics().iter().map(|m| m.excess).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.metrics().iter().all(|m| m.excess <= 1.0)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.metrics() {
            let ok = if m.excess <= 1.0 { "ok" } else { "FAIL" };
            writeln!(f, "{} = {:.6e}  (limit {:e}) {ok}", m.name, m.value, m.limit)?;
        }
        writeln!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn check_grid(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::Precondition(format!("audit grid needs n >= {min}, got {n}")));
    }
    Ok(())
}

/// Payoff `u(λ, τ(λ)) − φ(λ)` of a truthful type; 0 when unmatched.
fn truthful_payoff(
    m: &Mechanism<'_>,
    side: SideId,
    rule: &CutoffRule,
    sched: &PaymentSchedule,
    lam: f64,
) -> Result<f64> {
    if !rule.side(side).is_matched(lam) || lam < sched.threshold() {
        return Ok(0.0);
    }
    Ok(m.rule_utility(side, rule.side(side), lam)? - m.scheduled_payment(side, rule, sched, lam)?)
}

/// Largest gain from misreporting, per side, over an `n_true × n_report` grid.
pub fn ic_audit(
    spec: &MarketSpec,
    sol: Candidate<'_>,
    n_true: usize,
    n_report: usize,
    tol: &Tolerances,
) -> Result<SidePair<f64>> {
    check_grid(n_true, MIN_AUDIT_GRID)?;
    check_grid(n_report, MIN_AUDIT_GRID)?;
    let m = Mechanism::new(spec, *tol);
    SidePair::try_from_fn(|side| {
        let d = spec.dist(side);
        let rule = sol.rule.side(side);
        let sched = &sol.payments[side];
        let reports = uniform_grid(d.lo(), d.hi(), n_report);
        // (cut-off, payment) per report; None when the report is unmatched
        let offers = par::map(&reports, |&r| -> Result<Option<(f64, f64)>> {
            match rule.cutoff(r) {
                Some(t) if r >= sched.threshold() => Ok(Some((t, m.scheduled_payment(side, sol.rule, sched, r)?))),
                _ => Ok(None),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let truths = uniform_grid(d.lo(), d.hi(), n_true);
        let gains = par::map(&truths, |&lam| -> Result<f64> {
            let truthful = truthful_payoff(&m, side, sol.rule, sched, lam)?;
            let mut best = f64::NEG_INFINITY;
            for offer in &offers {
                let payoff = match offer {
                    Some((t, p)) => m.utility(side, lam, *t)? - p,
                    None => 0.0,
                };
                best = best.max(payoff - truthful);
            }
            Ok(best)
        });
        let mut worst = f64::NEG_INFINITY;
        for g in gains {
            worst = worst.max(g?);
        }
        Ok(worst)
    })
}

/// Minimum payoff over matched grid types and the payoff at the lowest
/// matched type, per side.
pub fn ir_audit(
    spec: &MarketSpec,
    sol: Candidate<'_>,
    n: usize,
    tol: &Tolerances,
) -> Result<(SidePair<f64>, SidePair<f64>)> {
    check_grid(n, MIN_AUDIT_GRID)?;
    let m = Mechanism::new(spec, *tol);
    let per_side = SidePair::try_from_fn(|side| -> Result<(f64, f64)> {
        let d = spec.dist(side);
        let sched = &sol.payments[side];
        let delta = sol.rule.side(side).threshold().max(sched.threshold());
        let lowest = truthful_payoff(&m, side, sol.rule, sched, delta)?;
        let grid = uniform_grid(d.lo(), d.hi(), n);
        let payoffs = par::map(&grid, |&lam| truthful_payoff(&m, side, sol.rule, sched, lam));
        let mut min = lowest;
        for (lam, p) in grid.iter().zip(payoffs) {
            if *lam >= delta {
                min = min.min(p?);
            }
        }
        Ok((min, lowest))
    })?;
    Ok((per_side.map(|_, p| p.0), per_side.map(|_, p| p.1)))
}

/// Largest relative error between a central difference of the payoff and
/// the marginal `D(λ, τ(λ))`, away from the threshold and the cut-off floor.
pub fn icfoc_audit(spec: &MarketSpec, sol: Candidate<'_>, n: usize, tol: &Tolerances) -> Result<SidePair<f64>> {
    check_grid(n, MIN_AUDIT_GRID)?;
    let m = Mechanism::new(spec, *tol);
    SidePair::try_from_fn(|side| -> Result<f64> {
        let d = spec.dist(side);
        let rule = sol.rule.side(side);
        let sched = &sol.payments[side];
        let floor = spec.dist(side.opposite()).lo();
        let step = d.width() / (n - 1) as f64;
        let h = 1e-5 * d.width();
        let delta = rule.threshold().max(sched.threshold());
        let on_floor = |l: f64| rule.cutoff(l).is_some_and(|t| t <= floor);
        let grid = uniform_grid(d.lo(), d.hi(), n);
        let interior: Vec<f64> = grid
            .into_iter()
            .filter(|&l| l > d.lo() && l < d.hi() && l > delta + step)
            .filter(|&l| on_floor(l - step) == on_floor(l + step.min(d.hi() - l)))
            .collect();
        let pairs = par::map(&interior, |&lam| -> Result<(f64, f64)> {
            let j = |x: f64| truthful_payoff(&m, side, sol.rule, sched, x);
            let fd = (j(lam + h)? - j(lam - h)?) / (2.0 * h);
            let t = rule.cutoff(lam).unwrap_or(spec.dist(side.opposite()).hi());
            Ok((fd, m.marginal_d(side, lam, t)?))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let scale = pairs.iter().fold(0.0f64, |a, p| a.max(p.1.abs()));
        let floor_den = 1e-6 * scale;
        Ok(pairs
            .iter()
            .map(|(fd, dd)| {
                let den = dd.abs().max(floor_den);
                if den > 0.0 {
                    (fd - dd).abs() / den
                } else {
                    (fd - dd).abs()
                }
            })
            .fold(0.0, f64::max))
    })
}

/// Largest `|τ^K̄(τ^K(λ)) − λ| / width_K` over side `K`'s strictly
/// decreasing range, per orientation.
pub fn reciprocity_audit(spec: &MarketSpec, rule: &CutoffRule, n: usize) -> Result<SidePair<f64>> {
    check_grid(n, MIN_RECIPROCITY_GRID)?;
    Ok(SidePair::from_fn(|side| {
        let own = spec.dist(side);
        let floor = spec.dist(side.opposite()).lo();
        let r = rule.side(side);
        let other: &SideRule = rule.side(side.opposite());
        if r.len() < 2 {
            return 0.0;
        }
        let grid = uniform_grid(r.threshold(), own.hi(), n);
        grid.iter()
            .filter_map(|&lam| {
                let t = r.cutoff(lam)?;
                if t <= floor {
                    return None;
                }
                let back = other.cutoff(t).unwrap_or(own.hi());
                Some((back - lam).abs() / own.width())
            })
            .fold(0.0, f64::max)
    }))
}

/// `|revenue from payments − revenue from virtual surpluses|`.
pub fn objective_cross_check(spec: &MarketSpec, sol: Candidate<'_>, tol: &Tolerances) -> Result<f64> {
    let v = Mechanism::new(spec, *tol).objective_values(sol.rule, sol.payments)?;
    Ok((v.revenue - v.revenue_virtual).abs())
}

pub fn audit(spec: &MarketSpec, sol: Candidate<'_>, opts: &AuditOptions) -> Result<AuditReport> {
    let q = &opts.quad;
    let ic_max_gain = ic_audit(spec, sol, opts.n, opts.n, q)?;
    let (ir_min_payoff, ir_lowest_payoff) = ir_audit(spec, sol, opts.n, q)?;
    let icfoc_max_err = icfoc_audit(spec, sol, opts.n, q)?;
    let reciprocity_max_err = reciprocity_audit(spec, sol.rule, opts.n.max(MIN_RECIPROCITY_GRID))?;
    let objective_cross_err = objective_cross_check(spec, sol, q)?;
    Ok(AuditReport {
        ic_max_gain,
        ir_min_payoff,
        ir_lowest_payoff,
        icfoc_max_err,
        reciprocity_max_err,
        objective_cross_err,
        tol: opts.tol,
    })
}

/// Canonical injected faults used to check that the audits have teeth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// `τ^S + 0.5`, clamped to the buyer support.
    ShiftSellerCutoff,
    /// Every payment times 1.1.
    ScalePayments,
    /// Payments equal to utility, dropping the information rent.
    DropRent,
    /// `τ^B ≡ lo_S`.
    FlattenBuyerCutoff,
    /// `R^S → −R^S`.
    NegateSellerKernel,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::ShiftSellerCutoff,
        Mutation::ScalePayments,
        Mutation::DropRent,
        Mutation::FlattenBuyerCutoff,
        Mutation::NegateSellerKernel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::ShiftSellerCutoff => "shift-seller-cutoff",
            Mutation::ScalePayments => "scale-payments",
            Mutation::DropRent => "drop-rent",
            Mutation::FlattenBuyerCutoff => "flatten-buyer-cutoff",
            Mutation::NegateSellerKernel => "negate-seller-kernel",
        }
    }

    /// The mutated market and solution.
    pub fn apply(self, spec: &MarketSpec, sol: &MechanismSolution, tol: &Tolerances) -> Result<(MarketSpec, MechanismSolution)> {
        let mut out = sol.clone();
        let mut spec = spec.clone();
        match self {
            Mutation::ShiftSellerCutoff => {
                let hi = spec.dist(SideId::Buyer).hi();
                let r = sol.rule.side(SideId::Seller);
                let taus = r.taus().iter().map(|t| (t + 0.5).min(hi)).collect();
                out.rule.sides.seller = SideRule::new(r.lambdas().to_vec(), taus)?;
            }
            Mutation::ScalePayments => {
                out.payments = sol.payments.map(|_, p| p.map_payments(|_, phi| 1.1 * phi));
            }
            Mutation::DropRent => {
                let m = Mechanism::new(&spec, *tol);
                out.payments = SidePair::try_from_fn(|k| -> Result<PaymentSchedule> {
                    let r = sol.rule.side(k);
                    let p = &sol.payments[k];
                    let utilities = p
                        .lambdas()
                        .iter()
                        .map(|&l| m.rule_utility(k, r, l))
                        .collect::<Result<Vec<_>>>()?;
                    PaymentSchedule::new(p.lambdas().to_vec(), utilities, p.baseline)
                })?;
            }
            Mutation::FlattenBuyerCutoff => {
                let lo = spec.dist(SideId::Seller).lo();
                let r = sol.rule.side(SideId::Buyer);
                out.rule.sides.buyer = SideRule::new(r.lambdas().to_vec(), vec![lo; r.len()])?;
            }
            Mutation::NegateSellerKernel => {
                let k = spec.kernel(SideId::Seller);
                let neg = Expr::constant(-1.0, &kernel_signature()).combine(crate::expr::BinOp::Mul, k);
                spec = spec.with_kernel(SideId::Seller, neg)?;
            }
        }
        Ok((spec, out))
    }
}
