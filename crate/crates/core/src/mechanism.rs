//! Utilities under cut-off rules, information rents, marginal effects,
//! envelope payments, and objective evaluation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::market::{MarketSpec, SideId, SidePair};
use crate::numerics::{compensated_sum, integrate, Tolerances};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Welfare,
    Revenue,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Welfare => "welfare",
            Objective::Revenue => "revenue",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "welfare" | "w" => Ok(Objective::Welfare),
            "revenue" | "r" => Ok(Objective::Revenue),
            other => Err(Error::Schema(format!("unknown objective `{other}` (expected welfare or revenue)"))),
        }
    }
}

/// Cut-off function of one side, sampled on `[threshold, hi]`.
///
/// Types below the threshold are unmatched. A matched type `λ` is matched to
/// every opponent in `[τ(λ), hi_opp]`; between samples `τ` is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct SideRule {
    lambdas: Vec<f64>,
    taus: Vec<f64>,
}

impl SideRule {
    /// Samples must be non-empty with strictly ascending `λ`; the first
    /// sample is the threshold.
    pub fn new(lambdas: Vec<f64>, taus: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != taus.len() {
            return Err(Error::Precondition("cut-off samples must be non-empty and paired".into()));
        }
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("cut-off sample types must be strictly ascending".into()));
        }
        if lambdas.iter().chain(&taus).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("cut-off samples must be finite".into()));
        }
        Ok(Self { lambdas, taus })
    }

    /// A side on which nobody is matched: threshold at the top type, whose
    /// matched set `[hi_opp, hi_opp]` has zero mass.
    pub fn empty(hi: f64, hi_opp: f64) -> Self {
        Self { lambdas: vec![hi], taus: vec![hi_opp] }
    }

    pub fn threshold(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn is_matched(&self, lam: f64) -> bool {
        lam >= self.threshold()
    }

    /// Index `i` of the segment `[λ_i, λ_{i+1}]` holding `lam` (clamped).
    pub fn segment(&self, lam: f64) -> usize {
        let n = self.lambdas.len();
        if n < 2 {
            return 0;
        }
        let i = self.lambdas.partition_point(|&l| l <= lam);
        i.saturating_sub(1).min(n - 2)
    }

    /// `τ(λ)`, or `None` for unmatched types.
    pub fn cutoff(&self, lam: f64) -> Option<f64> {
        if !self.is_matched(lam) {
            return None;
        }
        let n = self.lambdas.len();
        if n == 1 {
            return Some(self.taus[0]);
        }
        if lam >= self.lambdas[n - 1] {
            return Some(self.taus[n - 1]);
        }
        let i = self.segment(lam);
        let (l0, l1) = (self.lambdas[i], self.lambdas[i + 1]);
        let (t0, t1) = (self.taus[i], self.taus[i + 1]);
        let w = (lam - l0) / (l1 - l0);
        Some(t0 + w * (t1 - t0))
    }

    /// Sample nodes strictly inside `(a, b)`.
    fn nodes_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.lambdas.iter().copied().filter(move |&l| l > a && l < b)
    }
}

/// Per-side cut-off functions with thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffRule {
    pub sides: SidePair<SideRule>,
}

impl CutoffRule {
    pub fn new(seller: SideRule, buyer: SideRule) -> Self {
        Self { sides: SidePair::new(seller, buyer) }
    }

    pub fn side(&self, side: SideId) -> &SideRule {
        &self.sides[side]
    }

    /// Nobody matched on either side.
    pub fn empty(spec: &MarketSpec) -> Self {
        let hi = |s: SideId| spec.dist(s).hi();
        Self::new(
            SideRule::empty(hi(SideId::Seller), hi(SideId::Buyer)),
            SideRule::empty(hi(SideId::Buyer), hi(SideId::Seller)),
        )
    }

    /// Everybody matched to everybody: `δ = lo`, `τ ≡ lo_opp`.
    pub fn complete(spec: &MarketSpec, grid_n: usize) -> Self {
        let side = |s: SideId| {
            let d = spec.dist(s);
            let lambdas = uniform_grid(d.lo(), d.hi(), grid_n);
            let taus = vec![spec.dist(s.opposite()).lo(); lambdas.len()];
            SideRule { lambdas, taus }
        };
        Self::new(side(SideId::Seller), side(SideId::Buyer))
    }
}

/// `n` uniform points on `[a, b]` with exact endpoints; a single point when
/// the interval is degenerate.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if !(b > a) || n < 2 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

/// Sampled payment function of one side.
///
/// Samples sit on the rule's nodes. Between nodes the schedule is evaluated
/// by the envelope relation anchored at the preceding node (see
/// [`Mechanism::scheduled_payment`]), which reproduces incentive-compatible
/// payments exactly rather than to interpolation order.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSchedule {
    lambdas: Vec<f64>,
    payments: Vec<f64>,
    /// Payoff of the lowest matched type.
    pub baseline: f64,
}

impl PaymentSchedule {
    pub fn new(lambdas: Vec<f64>, payments: Vec<f64>, baseline: f64) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != payments.len() {
            return Err(Error::Precondition("payment samples must be non-empty and paired".into()));
        }
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) || payments.iter().any(|p| !p.is_finite()) {
            return Err(Error::Precondition("payment samples must be ascending and finite".into()));
        }
        Ok(Self { lambdas, payments, baseline })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn payments(&self) -> &[f64] {
        &self.payments
    }

    pub fn threshold(&self) -> f64 {
        self.lambdas[0]
    }

    /// Piecewise-linear interpolation; 0 below the threshold.
    pub fn interpolate(&self, lam: f64) -> f64 {
        if lam < self.threshold() {
            return 0.0;
        }
        let n = self.lambdas.len();
        if n == 1 || lam >= self.lambdas[n - 1] {
            return self.payments[n - 1];
        }
        let i = self.lambdas.partition_point(|&l| l <= lam).saturating_sub(1).min(n - 2);
        let w = (lam - self.lambdas[i]) / (self.lambdas[i + 1] - self.lambdas[i]);
        self.payments[i] + w * (self.payments[i + 1] - self.payments[i])
    }

    /// A copy with every payment transformed by `f(λ, φ)`.
    pub fn map_payments(&self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let payments = self.lambdas.iter().zip(&self.payments).map(|(&l, &p)| f(l, p)).collect();
        Self { lambdas: self.lambdas.clone(), payments, baseline: self.baseline }
    }
}

/// Objective values of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValues {
    pub welfare: f64,
    /// Expected payments collected by the platform.
    pub revenue: f64,
    /// Revenue recomputed from virtual surpluses (integration by parts).
    pub revenue_virtual: f64,
}

impl ObjectiveValues {
    pub fn value(&self, obj: Objective) -> f64 {
        match obj {
            Objective::Welfare => self.welfare,
            Objective::Revenue => self.revenue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SidePattern {
    CompleteMatched,
    BottomEliminated,
}

impl fmt::Display for SidePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SidePattern::CompleteMatched => "complete-matched",
            SidePattern::BottomEliminated => "bottom-eliminated",
        })
    }
}

/// Matching-pattern classification from corner signs of `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternReport {
    pub labels: SidePair<SidePattern>,
    pub top_reserved: SidePair<bool>,
    /// `η(lo_S, lo_B)`.
    pub eta_low_low: f64,
    /// `η^K(hi_K, lo_K̄)` for each orientation `K`.
    pub eta_high_low: SidePair<f64>,
}

/// Sampled assumption check for one side and objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityCheck {
    pub side: SideId,
    pub opp_type: f64,
    /// Ratio strictly increasing over the scan.
    pub strict: bool,
    /// Ratio non-decreasing over the scan.
    pub weak: bool,
    /// First adjacent pair breaking strictness, if any.
    pub witness: Option<(f64, f64)>,
    /// Set when `ω` vanished on the scanned interval and the scan was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub checks: Vec<RegularityCheck>,
    /// `η(lo_S, lo_B) < 0`: the cut-off function assigns distinct lowest
    /// matched types.
    pub uniqueness_precondition: bool,
}

impl RegularityReport {
    pub fn strict(&self) -> bool {
        self.checks.iter().all(|c| c.strict && !c.skipped)
    }

    pub fn weak(&self) -> bool {
        self.checks.iter().all(|c| c.weak && !c.skipped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub regularity: RegularityReport,
    /// Every cut-off function passed the non-increasing scan.
    pub monotone: SidePair<bool>,
    /// Largest `|τ^K̄(τ^K(λ)) − λ| / width_K` on the rule grid.
    pub reciprocity_err: f64,
    pub reciprocity_ok: bool,
    /// Grid points (above the threshold) where `η` stayed negative up to the
    /// top opponent, counted per side.
    pub above_top: SidePair<usize>,
    /// Grid points where the cut-off root solve failed (non-monotone `η`).
    pub root_failures: SidePair<usize>,
    /// Pattern labels agree with the thresholds and cut-offs.
    pub pattern_consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismSolution {
    pub objective: Objective,
    pub rule: CutoffRule,
    pub payments: SidePair<PaymentSchedule>,
    pub values: ObjectiveValues,
    pub objective_value: f64,
    pub patterns: PatternReport,
    pub diagnostics: Diagnostics,
}

/// Formula layer bound to a market and numerical tolerances.
#[derive(Debug, Clone, Copy)]
pub struct Mechanism<'a> {
    spec: &'a MarketSpec,
    tol: Tolerances,
}

impl<'a> Mechanism<'a> {
    pub fn new(spec: &'a MarketSpec, tol: Tolerances) -> Self {
        Self { spec, tol }
    }

    pub fn spec(&self) -> &'a MarketSpec {
        self.spec
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    fn check_own(&self, side: SideId, lam: f64) -> Result<()> {
        let d = self.spec.dist(side);
        if d.contains(lam) {
            Ok(())
        } else {
            Err(Error::OutOfSupport { value: lam, lo: d.lo(), hi: d.hi() })
        }
    }

    fn check_opp(&self, side: SideId, t: f64) -> Result<()> {
        self.check_own(side.opposite(), t)
    }

    /// `u^K(λ, t) = ∫_t^{hi_opp} R^K(λ, x) f_opp(x) dx`.
    pub fn utility(&self, side: SideId, lam: f64, t: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        self.check_opp(side, t)?;
        self.utility_unchecked(side, lam, t)
    }

    fn utility_unchecked(&self, side: SideId, lam: f64, t: f64) -> Result<f64> {
        let opp = self.spec.dist(side.opposite());
        integrate(|x| Ok(self.spec.kernel_unchecked(side, lam, x)? * opp.density(x)?), t, opp.hi(), &self.tol)
    }

    /// `D^K(λ, t) = ∫_t^{hi_opp} ∂R^K/∂λ(λ, x) f_opp(x) dx`.
    pub fn marginal_d(&self, side: SideId, lam: f64, t: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        self.check_opp(side, t)?;
        self.marginal_d_unchecked(side, lam, t)
    }

    fn marginal_d_unchecked(&self, side: SideId, lam: f64, t: f64) -> Result<f64> {
        let opp = self.spec.dist(side.opposite());
        integrate(|x| Ok(self.spec.kernel_dlam_unchecked(side, lam, x)? * opp.density(x)?), t, opp.hi(), &self.tol)
    }

    /// `D^K` along the rule; zero for unmatched types.
    fn rule_marginal(&self, side: SideId, rule: &SideRule, x: f64) -> Result<f64> {
        match rule.cutoff(x) {
            Some(t) => self.marginal_d_unchecked(side, x, t),
            None => Ok(0.0),
        }
    }

    /// `u^K(λ, τ(λ))`; zero for unmatched types.
    pub fn rule_utility(&self, side: SideId, rule: &SideRule, lam: f64) -> Result<f64> {
        match rule.cutoff(lam) {
            Some(t) => self.utility_unchecked(side, lam, t),
            None => Ok(0.0),
        }
    }

    /// Integrates `g` over `[a, b]` split at the rule's nodes, so each piece
    /// sees a smooth cut-off.
    fn integrate_along<G>(&self, rule: &SideRule, a: f64, b: f64, g: G) -> Result<f64>
    where
        G: Fn(f64) -> Result<f64>,
    {
        if a == b {
            return Ok(0.0);
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let mut cuts = vec![lo];
        cuts.extend(rule.nodes_within(lo, hi));
        cuts.push(hi);
        let pieces = cuts
            .windows(2)
            .map(|w| integrate(&g, w[0], w[1], &self.tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(sign * compensated_sum(pieces))
    }

    /// `Q^K(λ) = ∫_base^λ D^K(x, τ(x)) dx`.
    pub fn information_rent(&self, side: SideId, rule: &CutoffRule, lam: f64, base: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        self.check_own(side, base)?;
        let r = rule.side(side);
        self.integrate_along(r, base, lam, |x| self.rule_marginal(side, r, x))
    }

    /// `ω^K̄(λ^K) = γ^K(λ) f^K(λ)`.
    pub fn omega(&self, side: SideId, lam: f64) -> Result<f64> {
        Ok(self.spec.gamma(side, lam)? * self.spec.dist(side).density(lam)?)
    }

    /// Direct marginal effect of a side-`side` type `lam` matched down to
    /// opponent `x`.
    ///
    /// Welfare: `R f_opp(x) f(λ)`; revenue: `f_opp(x) [R f(λ) − (1 − F(λ)) ∂R/∂λ]`.
    pub fn theta(&self, obj: Objective, side: SideId, lam: f64, x: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        self.check_opp(side, x)?;
        let own = self.spec.dist(side);
        let f_opp = self.spec.dist(side.opposite()).density(x)?;
        let r = self.spec.kernel_unchecked(side, lam, x)?;
        let f_own = own.density(lam)?;
        Ok(match obj {
            Objective::Welfare => r * f_opp * f_own,
            Objective::Revenue => {
                let dr = self.spec.kernel_dlam_unchecked(side, lam, x)?;
                f_opp * (r * f_own - (1.0 - own.cdf(lam)?) * dr)
            }
        })
    }

    /// Joint marginal effect of matching seller type `ls` with buyer type `lb`.
    pub fn eta(&self, obj: Objective, ls: f64, lb: f64) -> Result<f64> {
        Ok(self.theta(obj, SideId::Seller, ls, lb)? + self.theta(obj, SideId::Buyer, lb, ls)?)
    }

    /// `η^K(λ, x)` with `λ` on `side` and `x` on the opposite side.
    pub fn eta_from(&self, obj: Objective, side: SideId, lam: f64, x: f64) -> Result<f64> {
        match side {
            SideId::Seller => self.eta(obj, lam, x),
            SideId::Buyer => self.eta(obj, x, lam),
        }
    }

    /// `U_W = u`, `U_R = u − D (1 − F)/f`.
    pub fn virtual_surplus(&self, obj: Objective, side: SideId, lam: f64, t: f64) -> Result<f64> {
        let u = self.utility(side, lam, t)?;
        match obj {
            Objective::Welfare => Ok(u),
            Objective::Revenue => {
                let d = self.marginal_d(side, lam, t)?;
                Ok(u - d * self.spec.dist(side).hazard_complement(lam)?)
            }
        }
    }

    /// Envelope payment `φ(λ) = u(λ, τ(λ)) − ∫_δ^λ D(x, τ(x)) dx`, with the
    /// lowest matched type's payoff fixed at zero. Unmatched types pay 0.
    pub fn payment(&self, side: SideId, rule: &CutoffRule, lam: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        let r = rule.side(side);
        if !r.is_matched(lam) {
            return Ok(0.0);
        }
        let u = self.rule_utility(side, r, lam)?;
        let rent = self.integrate_along(r, r.threshold(), lam, |x| self.rule_marginal(side, r, x))?;
        Ok(u - rent)
    }

    /// Payment samples on the rule nodes.
    pub fn payment_schedule(&self, side: SideId, rule: &CutoffRule) -> Result<PaymentSchedule> {
        let r = rule.side(side);
        let nodes = r.lambdas();
        let rents = par::try_map_range(nodes.len().saturating_sub(1), |i| {
            integrate(|x| self.rule_marginal(side, r, x), nodes[i], nodes[i + 1], &self.tol)
        })?;
        let utilities = par::try_map_range(nodes.len(), |i| self.utility_unchecked(side, nodes[i], r.taus()[i]))?;
        let mut payments = Vec::with_capacity(nodes.len());
        let mut cumulative = Vec::with_capacity(nodes.len());
        cumulative.push(0.0);
        for (i, u) in utilities.iter().enumerate() {
            if i > 0 {
                cumulative.push(compensated_sum(rents[..i].iter().copied()));
            }
            payments.push(u - cumulative[i]);
        }
        PaymentSchedule::new(nodes.to_vec(), payments, 0.0)
    }

    /// Payoff `u(λ_i, τ_i) − φ_i` at schedule node `i`.
    fn node_payoff(&self, side: SideId, rule: &SideRule, sched: &PaymentSchedule, i: usize) -> Result<f64> {
        let lam = sched.lambdas[i];
        Ok(self.rule_utility(side, rule, lam)? - sched.payments[i])
    }

    /// Evaluates a payment schedule at an arbitrary type by the envelope
    /// relation from the preceding node:
    /// `φ(λ) = u(λ, τ(λ)) − J_i − ∫_{λ_i}^λ D(x, τ(x)) dx`, where
    /// `J_i = u(λ_i, τ(λ_i)) − φ_i`. Exact at nodes; 0 below the threshold.
    pub fn scheduled_payment(&self, side: SideId, rule: &CutoffRule, sched: &PaymentSchedule, lam: f64) -> Result<f64> {
        self.check_own(side, lam)?;
        if lam < sched.threshold() {
            return Ok(0.0);
        }
        let r = rule.side(side);
        let n = sched.lambdas.len();
        let i = if n < 2 {
            0
        } else {
            sched.lambdas.partition_point(|&l| l <= lam).saturating_sub(1).min(n - 1)
        };
        if sched.lambdas[i] == lam {
            return Ok(sched.payments[i]);
        }
        let j = self.node_payoff(side, r, sched, i)?;
        let u = self.rule_utility(side, r, lam)?;
        let rent = self.integrate_along(r, sched.lambdas[i], lam, |x| self.rule_marginal(side, r, x))?;
        Ok(u - j - rent)
    }

    /// Welfare, payment revenue, and virtual-surplus revenue of a mechanism.
    pub fn objective_values(&self, rule: &CutoffRule, payments: &SidePair<PaymentSchedule>) -> Result<ObjectiveValues> {
        let mut welfare = Vec::new();
        let mut revenue = Vec::new();
        let mut virt = Vec::new();
        for side in SideId::BOTH {
            let r = rule.side(side);
            let sched = &payments[side];
            let dist = self.spec.dist(side);
            // pieces: rule segments, further split at schedule nodes
            let mut cuts: Vec<f64> = r.lambdas().to_vec();
            cuts.extend(sched.lambdas.iter().copied().filter(|l| *l > r.threshold()));
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let lower = r.threshold().max(sched.threshold());
            let pieces: Vec<(f64, f64)> = cuts
                .windows(2)
                .map(|w| (w[0], w[1]))
                .filter(|(a, b)| *a >= lower && b > a)
                .collect();

            let per_piece = par::try_map_range(pieces.len(), |k| -> Result<(f64, f64, f64)> {
                let (a, b) = pieces[k];
                let w = integrate(|x| Ok(self.rule_utility(side, r, x)? * dist.density(x)?), a, b, &self.tol)?;
                let v = integrate(
                    |x| {
                        let u = self.rule_utility(side, r, x)?;
                        let d = self.rule_marginal(side, r, x)?;
                        Ok(u * dist.density(x)? - d * (1.0 - dist.cdf(x)?))
                    },
                    a,
                    b,
                    &self.tol,
                )?;
                // anchor node for the envelope evaluation on this piece
                let i = sched.lambdas.partition_point(|&l| l <= a).saturating_sub(1);
                let anchor = sched.lambdas[i];
                let j = self.node_payoff(side, r, sched, i)?;
                let gap = self.integrate_along(r, anchor, a, |x| self.rule_marginal(side, r, x))?;
                let p = integrate(
                    |x| {
                        let u = self.rule_utility(side, r, x)?;
                        let rent = gap + integrate(|s| self.rule_marginal(side, r, s), a, x, &self.tol)?;
                        Ok((u - j - rent) * dist.density(x)?)
                    },
                    a,
                    b,
                    &self.tol,
                )?;
                Ok((w, p, v))
            })?;
            welfare.extend(per_piece.iter().map(|t| t.0));
            revenue.extend(per_piece.iter().map(|t| t.1));
            virt.extend(per_piece.iter().map(|t| t.2));
        }
        Ok(ObjectiveValues {
            welfare: compensated_sum(welfare),
            revenue: compensated_sum(revenue),
            revenue_virtual: compensated_sum(virt),
        })
    }
}
