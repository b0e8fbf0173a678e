//! Optimal cut-off rules: pattern classification from corner signs of `η`,
//! thresholds from the top-opponent boundary condition, and pointwise
//! cut-offs from the zero set of `η`.

use crate::error::{Error, Result};
use crate::market::{MarketSpec, SideId, SidePair};
use crate::mechanism::{
    uniform_grid, CutoffRule, Diagnostics, Mechanism, MechanismSolution, Objective, PatternReport, RegularityCheck,
    RegularityReport, SidePattern, SideRule,
};
use crate::numerics::{find_root, monotone_scan, Direction, Tolerances};
use crate::par;
use crate::verify;

/// `|η| ≤ ZERO_BAND` counts as zero at the corners.
pub const ZERO_BAND: f64 = 1e-12;

/// Relative reciprocity tolerance used for the feasibility flag.
pub const RECIPROCITY_TOL: f64 = 1e-4;

pub const MIN_GRID: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub grid_n: usize,
    pub tol: Tolerances,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { grid_n: 512, tol: Tolerances::default() }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < MIN_GRID {
            return Err(Error::Precondition(format!("grid_n must be at least {MIN_GRID}, got {}", self.grid_n)));
        }
        self.tol.validate()
    }
}

/// Outcome of the pointwise cut-off solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    /// `η(λ, lo_opp) ≥ 0`: matched to every opponent.
    Floor(f64),
    Root(f64),
    /// `η(λ, hi_opp) < 0`: no opponent is worth matching.
    AboveTop,
}

impl Kappa {
    /// Cut-off value, with `AboveTop` mapped to the top opponent.
    pub fn value(self, hi_opp: f64) -> f64 {
        match self {
            Kappa::Floor(x) | Kappa::Root(x) => x,
            Kappa::AboveTop => hi_opp,
        }
    }
}

pub fn classify(m: &Mechanism<'_>, obj: Objective) -> Result<PatternReport> {
    let spec = m.spec();
    let lo = |s: SideId| spec.dist(s).lo();
    let hi = |s: SideId| spec.dist(s).hi();
    let eta_low_low = m.eta(obj, lo(SideId::Seller), lo(SideId::Buyer))?;
    let eta_high_low = SidePair::try_from_fn(|k| m.eta_from(obj, k, hi(k), lo(k.opposite())))?;

    let mut labels = SidePair::new(SidePattern::CompleteMatched, SidePattern::CompleteMatched);
    let mut top_reserved = SidePair::new(false, false);
    if eta_low_low < -ZERO_BAND {
        for k in SideId::BOTH {
            let e = eta_high_low[k];
            if e > ZERO_BAND {
                top_reserved[k] = true;
            } else if e < -ZERO_BAND {
                labels[k.opposite()] = SidePattern::BottomEliminated;
            }
        }
    }
    Ok(PatternReport { labels, top_reserved, eta_low_low, eta_high_low })
}

pub fn solve_kappa(m: &Mechanism<'_>, obj: Objective, side: SideId, lam: f64) -> Result<Kappa> {
    let opp = m.spec().dist(side.opposite());
    let g = |x: f64| m.eta_from(obj, side, lam, x);
    let g_lo = g(opp.lo())?;
    if g_lo >= 0.0 {
        return Ok(Kappa::Floor(opp.lo()));
    }
    let g_hi = g(opp.hi())?;
    if g_hi < 0.0 {
        return Ok(Kappa::AboveTop);
    }
    find_root(g, opp.lo(), opp.hi(), m.tolerances()).map(Kappa::Root)
}

/// Lowest matched type on `side`.
///
/// Complete-matched sides start at the bottom of the support. Otherwise the
/// threshold is the type whose joint marginal effect with the top opponent
/// vanishes; when even the top type has negative effect the side is empty
/// and the threshold is the top of the support.
pub fn solve_threshold(m: &Mechanism<'_>, obj: Objective, side: SideId, patterns: &PatternReport) -> Result<f64> {
    let spec = m.spec();
    let own = spec.dist(side);
    if patterns.labels[side] == SidePattern::CompleteMatched {
        return Ok(own.lo());
    }
    let hi_opp = spec.dist(side.opposite()).hi();
    let g = |lam: f64| m.eta_from(obj, side, lam, hi_opp);
    let g_lo = g(own.lo())?;
    if g_lo >= 0.0 {
        return Err(Error::Inconsistent(format!(
            "{side} side classified bottom-eliminated but eta(lo, hi_opp) = {g_lo:e} is non-negative"
        )));
    }
    if g(own.hi())? < 0.0 {
        return Ok(own.hi());
    }
    find_root(g, own.lo(), own.hi(), m.tolerances())
}

/// Per-side counters gathered while sampling the cut-offs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildStats {
    pub above_top: usize,
    pub root_failures: usize,
}

fn build_side(m: &Mechanism<'_>, obj: Objective, side: SideId, delta: f64, grid_n: usize) -> Result<(SideRule, BuildStats)> {
    let spec = m.spec();
    let own = spec.dist(side);
    let hi_opp = spec.dist(side.opposite()).hi();
    if delta >= own.hi() {
        return Ok((SideRule::empty(own.hi(), hi_opp), BuildStats::default()));
    }
    let lambdas = uniform_grid(delta, own.hi(), grid_n);
    let solved = par::map(&lambdas, |&lam| solve_kappa(m, obj, side, lam));
    let mut taus = Vec::with_capacity(lambdas.len());
    let mut stats = BuildStats::default();
    for (i, r) in solved.into_iter().enumerate() {
        let tau = match r {
            Ok(k) => {
                if i > 0 && k == Kappa::AboveTop {
                    stats.above_top += 1;
                }
                k.value(hi_opp)
            }
            Err(e @ (Error::Kernel { .. } | Error::Eval(_) | Error::OutOfSupport { .. })) => return Err(e),
            Err(_) => {
                stats.root_failures += 1;
                hi_opp
            }
        };
        taus.push(tau);
    }
    Ok((SideRule::new(lambdas, taus)?, stats))
}

/// Thresholds first, then cut-offs sampled on `grid_n` uniform points per side.
pub fn build_rule(
    m: &Mechanism<'_>,
    obj: Objective,
    patterns: &PatternReport,
    grid_n: usize,
) -> Result<(CutoffRule, SidePair<BuildStats>)> {
    if grid_n < MIN_GRID {
        return Err(Error::Precondition(format!("grid_n must be at least {MIN_GRID}, got {grid_n}")));
    }
    let deltas = SidePair::try_from_fn(|k| solve_threshold(m, obj, k, patterns))?;
    let (seller, s_stats) = build_side(m, obj, SideId::Seller, deltas.seller, grid_n)?;
    let (buyer, b_stats) = build_side(m, obj, SideId::Buyer, deltas.buyer, grid_n)?;
    Ok((CutoffRule::new(seller, buyer), SidePair::new(s_stats, b_stats)))
}

/// Scans `θ^K(λ, x)/ω^K(λ)` in `λ` at five opponent types placed at the
/// 10/30/50/70/90% points of the opponent support.
pub fn check_regularity(m: &Mechanism<'_>, obj: Objective, grid_n: usize) -> Result<RegularityReport> {
    if grid_n < MIN_GRID {
        return Err(Error::Precondition(format!("grid_n must be at least {MIN_GRID}, got {grid_n}")));
    }
    let spec = m.spec();
    let mut checks = Vec::new();
    for side in SideId::BOTH {
        let own = spec.dist(side);
        let opp = spec.dist(side.opposite());
        let pad = own.width() / (4 * grid_n) as f64;
        let (a, b) = (own.lo() + pad, own.hi() - pad);
        for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let x = opp.lo() + q * opp.width();
            let lams = uniform_grid(a, b, grid_n);
            let omegas = lams.iter().map(|&l| m.omega(side, l)).collect::<Result<Vec<_>>>()?;
            if omegas.iter().any(|w| !(*w > 0.0)) {
                checks.push(RegularityCheck { side, opp_type: x, strict: false, weak: false, witness: None, skipped: true });
                continue;
            }
            let ratio = |l: f64| Ok(m.theta(obj, side, l, x)? / m.omega(side, l)?);
            let strict_scan = monotone_scan(ratio, a, b, grid_n, Direction::Increasing)?;
            let values = lams.iter().map(|&l| ratio(l)).collect::<Result<Vec<_>>>()?;
            let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let slack = 1e-12 * scale.max(1e-300);
            let weak = values.windows(2).all(|w| w[1] - w[0] >= -slack);
            let (strict, witness) = match strict_scan {
                crate::numerics::ScanOutcome::Pass => (true, None),
                crate::numerics::ScanOutcome::Violation { x0, x1, .. } => (false, Some((x0, x1))),
            };
            checks.push(RegularityCheck { side, opp_type: x, strict, weak: weak || strict, witness, skipped: false });
        }
    }
    let lo = |s: SideId| spec.dist(s).lo();
    let uniqueness_precondition = m.eta(obj, lo(SideId::Seller), lo(SideId::Buyer))? < 0.0;
    Ok(RegularityReport { checks, uniqueness_precondition })
}

fn pattern_consistent(spec: &MarketSpec, rule: &CutoffRule, patterns: &PatternReport) -> bool {
    SideId::BOTH.iter().all(|&k| {
        let own = spec.dist(k);
        let r = rule.side(k);
        let label_ok = (patterns.labels[k] == SidePattern::CompleteMatched) == (r.threshold() <= own.lo());
        let reserve_ok = if patterns.eta_low_low < -ZERO_BAND {
            // K top-reserved iff the lowest matched K̄ type is matched to a
            // proper top group of K
            let other = rule.side(k.opposite());
            let slack = 1e-9 * own.width();
            let reserved = other.cutoff(other.threshold()).is_some_and(|t| t < own.hi() - slack)
                && other.threshold() < spec.dist(k.opposite()).hi();
            reserved == patterns.top_reserved[k]
        } else {
            !patterns.top_reserved[k]
        };
        label_ok && reserve_ok
    })
}

/// Solves for the optimal mechanism under `obj`.
pub fn solve(spec: &MarketSpec, obj: Objective, opts: &SolveOptions) -> Result<MechanismSolution> {
    opts.validate()?;
    let m = Mechanism::new(spec, opts.tol);
    let patterns = classify(&m, obj)?;
    let (rule, stats) = build_rule(&m, obj, &patterns, opts.grid_n)?;
    let payments = SidePair::try_from_fn(|k| m.payment_schedule(k, &rule))?;
    let values = m.objective_values(&rule, &payments)?;
    let regularity = check_regularity(&m, obj, opts.grid_n)?;

    let monotone = SidePair::try_from_fn(|k| -> Result<bool> {
        let r = rule.side(k);
        if r.len() < 2 {
            return Ok(true);
        }
        let lams = r.lambdas();
        let scan = monotone_scan(
            |l| Ok(r.cutoff(l).unwrap_or(f64::INFINITY)),
            lams[0],
            lams[lams.len() - 1],
            4 * r.len(),
            Direction::NonIncreasing,
        )?;
        Ok(scan.passed())
    })?;
    let recip = verify::reciprocity_audit(spec, &rule, opts.grid_n)?;
    let reciprocity_err = recip.seller.max(recip.buyer);

    let diagnostics = Diagnostics {
        regularity,
        monotone,
        reciprocity_err,
        reciprocity_ok: reciprocity_err <= RECIPROCITY_TOL,
        above_top: stats.map(|_, s| s.above_top),
        root_failures: stats.map(|_, s| s.root_failures),
        pattern_consistent: pattern_consistent(spec, &rule, &patterns),
    };
    Ok(MechanismSolution {
        objective: obj,
        objective_value: values.value(obj),
        rule,
        payments,
        values,
        patterns,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::market::{kernel_signature, reference_market};

    const S: SideId = SideId::Seller;
    const B: SideId = SideId::Buyer;

    fn mech(spec: &MarketSpec) -> Mechanism<'_> {
        Mechanism::new(spec, Tolerances::default())
    }

    #[test]
    fn reference_patterns() {
        let spec = reference_market();
        let m = mech(&spec);
        let w = classify(&m, Objective::Welfare).unwrap();
        assert_eq!(w.labels, SidePair::new(SidePattern::CompleteMatched, SidePattern::CompleteMatched));
        assert_eq!(w.top_reserved, SidePair::new(false, false));
        let r = classify(&m, Objective::Revenue).unwrap();
        assert_eq!(r.labels, SidePair::new(SidePattern::BottomEliminated, SidePattern::BottomEliminated));
        assert_eq!(r.top_reserved, SidePair::new(false, false));
        assert!(r.eta_low_low < 0.0);
        // the buyer-oriented corner at (10, 1) is negative
        assert!(r.eta_high_low[B] < 0.0);
    }

    #[test]
    fn positive_kernels_complete_match() {
        let base = reference_market();
        let one = Expr::parse("1", &kernel_signature()).unwrap();
        let spec = base.with_kernel(S, one.clone()).unwrap().with_kernel(B, one).unwrap();
        let m = mech(&spec);
        for obj in [Objective::Welfare, Objective::Revenue] {
            let p = classify(&m, obj).unwrap();
            assert_eq!(p.labels, SidePair::new(SidePattern::CompleteMatched, SidePattern::CompleteMatched), "{obj}");
        }
    }

    #[test]
    fn kappa_values() {
        let spec = reference_market();
        let m = mech(&spec);
        let k = solve_kappa(&m, Objective::Revenue, S, 5.0).unwrap();
        assert!(matches!(k, Kappa::Root(x) if (x - 5.0).abs() < 1e-9));
        let k = solve_kappa(&m, Objective::Revenue, S, 10.0).unwrap().value(10.0);
        assert!((k - 95.0 / 29.0).abs() < 1e-9);
        for lam in [1.0, 4.5, 10.0] {
            assert_eq!(solve_kappa(&m, Objective::Welfare, S, lam).unwrap(), Kappa::Floor(1.0));
        }
        assert_eq!(solve_kappa(&m, Objective::Revenue, S, 1.0).unwrap(), Kappa::AboveTop);
    }

    #[test]
    fn thresholds() {
        let spec = reference_market();
        let m = mech(&spec);
        let p = classify(&m, Objective::Revenue).unwrap();
        assert!((solve_threshold(&m, Objective::Revenue, S, &p).unwrap() - 3.5).abs() < 1e-9);
        assert!((solve_threshold(&m, Objective::Revenue, B, &p).unwrap() - 95.0 / 29.0).abs() < 1e-9);
        let p = classify(&m, Objective::Welfare).unwrap();
        for k in SideId::BOTH {
            assert_eq!(solve_threshold(&m, Objective::Welfare, k, &p).unwrap(), 1.0);
        }
    }

    #[test]
    fn revenue_rule_matches_closed_forms() {
        let spec = reference_market();
        let m = mech(&spec);
        let p = classify(&m, Objective::Revenue).unwrap();
        let (rule, stats) = build_rule(&m, Objective::Revenue, &p, 64).unwrap();
        let s = rule.side(S);
        for (&l, &t) in s.lambdas().iter().zip(s.taus()) {
            assert!((t - (10.0 * l - 5.0) / (4.0 * l - 11.0)).abs() < 1e-8, "seller at {l}");
        }
        let b = rule.side(B);
        for (&l, &t) in b.lambdas().iter().zip(b.taus()) {
            assert!((t - (11.0 * l - 5.0) / (4.0 * l - 10.0)).abs() < 1e-8, "buyer at {l}");
        }
        assert_eq!(stats.seller.root_failures + stats.buyer.root_failures, 0);
        assert_eq!(stats.seller.above_top + stats.buyer.above_top, 0);
    }

    #[test]
    fn welfare_rule_is_flat() {
        let spec = reference_market();
        let m = mech(&spec);
        let p = classify(&m, Objective::Welfare).unwrap();
        let (rule, _) = build_rule(&m, Objective::Welfare, &p, 32).unwrap();
        for k in SideId::BOTH {
            assert_eq!(rule.side(k).threshold(), 1.0);
            assert!(rule.side(k).taus().iter().all(|&t| t == 1.0));
        }
        assert!(build_rule(&m, Objective::Welfare, &p, 31).is_err());
    }

    #[test]
    fn regularity_on_reference() {
        let spec = reference_market();
        let m = mech(&spec);
        let r = check_regularity(&m, Objective::Revenue, 64).unwrap();
        assert!(r.strict());
        assert!(r.uniqueness_precondition);
        let w = check_regularity(&m, Objective::Welfare, 64).unwrap();
        assert!(w.weak());
        assert!(!w.uniqueness_precondition);
    }

    #[test]
    fn constant_kernel_ratio_has_witness() {
        let base = reference_market();
        let c = Expr::parse("2", &kernel_signature()).unwrap();
        let spec = base.with_kernel(S, c).unwrap();
        let m = mech(&spec);
        let r = check_regularity(&m, Objective::Welfare, 64).unwrap();
        let seller = r.checks.iter().filter(|c| c.side == S);
        for c in seller {
            // 2/λ is decreasing
            assert!(!c.strict && c.witness.is_some());
        }
    }

    #[test]
    fn solve_reference() {
        let spec = reference_market();
        let opts = SolveOptions::default();
        let sol = solve(&spec, Objective::Revenue, &opts).unwrap();
        assert!(sol.diagnostics.pattern_consistent);
        assert!(sol.diagnostics.reciprocity_ok, "{}", sol.diagnostics.reciprocity_err);
        assert!(sol.diagnostics.monotone.seller && sol.diagnostics.monotone.buyer);
        assert!((sol.values.revenue - sol.values.revenue_virtual).abs() < 1e-6);
        let w = solve(&spec, Objective::Welfare, &opts).unwrap();
        assert!((w.objective_value - 28.875).abs() < 1e-8);
        assert!(w.diagnostics.pattern_consistent);
        // the welfare rule is optimal for welfare, the revenue rule for revenue
        assert!(w.values.welfare > sol.values.welfare);
        assert!(sol.values.revenue > w.values.revenue);
    }

    #[test]
    fn negative_kernels_give_empty_market() {
        let base = reference_market();
        let neg = Expr::parse("-1", &kernel_signature()).unwrap();
        let spec = base.with_kernel(S, neg.clone()).unwrap().with_kernel(B, neg).unwrap();
        let sol = solve(&spec, Objective::Welfare, &SolveOptions { grid_n: 32, ..Default::default() }).unwrap();
        for k in SideId::BOTH {
            assert_eq!(sol.rule.side(k).threshold(), 10.0);
        }
        assert_eq!(sol.objective_value, 0.0);
    }
}
