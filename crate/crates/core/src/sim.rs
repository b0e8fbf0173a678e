//! Seeded finite-population realization of a solved mechanism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Expr, SeparableTerm};
use crate::market::{MarketSpec, SideId, SidePair, TypeDistribution};
use crate::mechanism::MechanismSolution;
use crate::numerics::compensated_sum;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_sellers: usize,
    pub n_buyers: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn count(&self, side: SideId) -> usize {
        match side {
            SideId::Seller => self.n_sellers,
            SideId::Buyer => self.n_buyers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub lambda: f64,
    /// Fraction of the opponent population this agent is matched with.
    pub matched_mass: f64,
    pub utility: f64,
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub agents: SidePair<Vec<AgentRecord>>,
    /// Sum over sides of the mean agent utility.
    pub welfare: f64,
    /// Sum over sides of the mean agent payment.
    pub revenue: f64,
    pub welfare_se: f64,
    pub revenue_se: f64,
    /// Mean matched mass per side; equal across sides up to `1/min(n)`.
    pub matched_mass: SidePair<f64>,
    /// Whether the separable fast path was used, per side.
    pub separable: SidePair<bool>,
    pub seed: u64,
}

/// `n` draws by inverse-CDF sampling of a seeded ChaCha8 stream.
pub fn sample_population(dist: &TypeDistribution, n: usize, seed: u64) -> Result<Vec<f64>> {
    sample_stream(dist, n, seed, 0)
}

/// As [`sample_population`], on an independent stream of the same seed.
pub fn sample_stream(dist: &TypeDistribution, n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Precondition("population size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| dist.inverse_cdf(rng.gen::<f64>())).collect()
}

fn eval_one(e: &Expr, idx: usize, v: f64) -> Result<f64> {
    let mut args = [f64::NAN; 2];
    args[idx] = v;
    Ok(e.eval(&args)?)
}

/// Sums of a two-variable kernel over the opponents `x_j ≥ t` of an agent.
enum OpponentSums<'a> {
    /// `Σ_k a_k(own) · Σ_{j ≥ idx} b_k(x_j)` with precomputed suffix sums.
    Separable { terms: Vec<SeparableTerm>, own: usize, suffix: Vec<Vec<f64>> },
    Direct { kernel: &'a Expr, own: usize, opp: usize, sorted: &'a [f64] },
}

impl<'a> OpponentSums<'a> {
    fn new(kernel: &'a Expr, own_var: &str, opp_var: &str, sorted: &'a [f64]) -> Result<Self> {
        let sig = kernel.signature();
        let own = sig.index_of(own_var).ok_or_else(|| Error::Precondition(format!("no variable {own_var}")))?;
        let opp = sig.index_of(opp_var).ok_or_else(|| Error::Precondition(format!("no variable {opp_var}")))?;
        let Some(terms) = kernel.separate(own_var, opp_var) else {
            return Ok(OpponentSums::Direct { kernel, own, opp, sorted });
        };
        let suffix = terms
            .iter()
            .map(|t| -> Result<Vec<f64>> {
                let vals = sorted.iter().map(|&x| eval_one(&t.second, opp, x)).collect::<Result<Vec<_>>>()?;
                let mut out = vec![0.0; vals.len() + 1];
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for j in (0..vals.len()).rev() {
                    let v = vals[j];
                    let s = sum + v;
                    comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
                    sum = s;
                    out[j] = sum + comp;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OpponentSums::Separable { terms, own, suffix })
    }

    fn is_separable(&self) -> bool {
        matches!(self, OpponentSums::Separable { .. })
    }

    /// Sum over opponents with sorted index `≥ idx`.
    fn query(&self, own_type: f64, idx: usize) -> Result<f64> {
        match self {
            OpponentSums::Separable { terms, own, suffix } => {
                let parts = terms
                    .iter()
                    .zip(suffix)
                    .map(|(t, s)| Ok(eval_one(&t.first, *own, own_type)? * s[idx]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(compensated_sum(parts))
            }
            OpponentSums::Direct { kernel, own, opp, sorted } => {
                let mut args = [0.0; 2];
                args[*own] = own_type;
                let parts = sorted[idx..]
                    .iter()
                    .map(|&x| {
                        args[*opp] = x;
                        Ok(kernel.eval(&args)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(compensated_sum(parts))
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    compensated_sum(v.iter().copied()) / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    compensated_sum(v.iter().map(|x| (x - m) * (x - m))) / (v.len() - 1) as f64
}

struct SideOutcome {
    records: Vec<AgentRecord>,
    /// Utility plus the agent's contribution to its partners' utilities.
    projection: Vec<f64>,
    separable: bool,
}

fn simulate_side(
    spec: &MarketSpec,
    sol: &MechanismSolution,
    side: SideId,
    own: &[f64],
    sorted_opp: &[f64],
) -> Result<SideOutcome> {
    let rule = sol.rule.side(side);
    let sched = &sol.payments[side];
    let m = sorted_opp.len() as f64;
    let util = OpponentSums::new(spec.kernel(side), "lam", "x", sorted_opp)?;
    let contrib = OpponentSums::new(spec.kernel(side.opposite()), "x", "lam", sorted_opp)?;
    let rows = par::map(own, |&lam| -> Result<(AgentRecord, f64)> {
        let Some(t) = rule.cutoff(lam) else {
            return Ok((AgentRecord { lambda: lam, matched_mass: 0.0, utility: 0.0, payment: 0.0 }, 0.0));
        };
        let idx = sorted_opp.partition_point(|&x| x < t);
        let u = util.query(lam, idx)? / m;
        let c = contrib.query(lam, idx)? / m;
        let record = AgentRecord {
            lambda: lam,
            matched_mass: (sorted_opp.len() - idx) as f64 / m,
            utility: u,
            payment: sched.interpolate(lam),
        };
        Ok((record, u + c))
    });
    let mut records = Vec::with_capacity(own.len());
    let mut projection = Vec::with_capacity(own.len());
    for r in rows {
        let (rec, p) = r?;
        records.push(rec);
        projection.push(p);
    }
    Ok(SideOutcome { records, projection, separable: util.is_separable() && contrib.is_separable() })
}

/// Samples both populations and applies the mechanism to truthful agents.
///
/// Each agent's utility averages its kernel over the matched opponents of the
/// realized population. Standard errors use the first-order projection of
/// the two-sample welfare statistic.
pub fn simulate(spec: &MarketSpec, sol: &MechanismSolution, cfg: &SimConfig) -> Result<SimResult> {
    let types = SidePair::try_from_fn(|k| sample_stream(spec.dist(k), cfg.count(k), cfg.seed, k as u64))?;
    let sorted = types.map(|_, v| {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        s
    });
    let outcomes =
        SidePair::try_from_fn(|k| simulate_side(spec, sol, k, &types[k], &sorted[k.opposite()]))?;

    let mut welfare = Vec::new();
    let mut revenue = Vec::new();
    let mut w_var = 0.0;
    let mut r_var = 0.0;
    for k in SideId::BOTH {
        let o = &outcomes[k];
        let n = o.records.len() as f64;
        let utils: Vec<f64> = o.records.iter().map(|r| r.utility).collect();
        let pays: Vec<f64> = o.records.iter().map(|r| r.payment).collect();
        welfare.push(mean(&utils));
        revenue.push(mean(&pays));
        w_var += variance(&o.projection) / n;
        r_var += variance(&pays) / n;
    }
    let matched_mass = outcomes.map(|_, o| mean(&o.records.iter().map(|r| r.matched_mass).collect::<Vec<_>>()));
    let separable = outcomes.map(|_, o| o.separable);
    let SidePair { seller, buyer } = outcomes;
    Ok(SimResult {
        agents: SidePair::new(seller.records, buyer.records),
        welfare: compensated_sum(welfare),
        revenue: compensated_sum(revenue),
        welfare_se: w_var.sqrt(),
        revenue_se: r_var.sqrt(),
        matched_mass,
        separable,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::market::{kernel_signature, reference_market};
    use crate::mechanism::{CutoffRule, Mechanism, Objective};
    use crate::numerics::Tolerances;
    use crate::solver::{solve, SolveOptions};

    fn welfare_solution(spec: &MarketSpec) -> MechanismSolution {
        solve(spec, Objective::Welfare, &SolveOptions { grid_n: 64, ..Default::default() }).unwrap()
    }

    #[test]
    fn samples_in_range_and_deterministic() {
        let d = TypeDistribution::uniform(1.0, 10.0).unwrap();
        let a = sample_population(&d, 100_000, 7).unwrap();
        assert!(a.iter().all(|x| (1.0..=10.0).contains(x)));
        assert_eq!(a, sample_population(&d, 100_000, 7).unwrap());
        assert_ne!(a[..10], sample_population(&d, 10, 8).unwrap()[..]);
        assert_ne!(a[..10], sample_stream(&d, 10, 7, 1).unwrap()[..]);
        let one = sample_population(&d, 1, 3).unwrap();
        assert_eq!(one, sample_population(&d, 1, 3).unwrap());
        assert!(sample_population(&d, 0, 3).is_err());
    }

    #[test]
    fn sample_mean() {
        let d = TypeDistribution::uniform(1.0, 10.0).unwrap();
        let n = 200_000;
        let s = sample_population(&d, n, 2024).unwrap();
        let sigma = (81.0f64 / 12.0).sqrt();
        assert!((mean(&s) - 5.5).abs() <= 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn fast_path_matches_direct_sum() {
        let spec = reference_market();
        let sol = solve(&spec, Objective::Revenue, &SolveOptions { grid_n: 64, ..Default::default() }).unwrap();
        let cfg = SimConfig { n_sellers: 300, n_buyers: 200, seed: 5 };
        let fast = simulate(&spec, &sol, &cfg).unwrap();
        assert!(fast.separable.seller && fast.separable.buyer);
        // same kernels wrapped in exp(log(.)) defeat the separation
        let ks = kernel_signature();
        let wrap = |k: SideId| Expr::parse(&format!("exp(log({} + 100)) - 100", spec.kernel(k)), &ks).unwrap();
        let slow_spec = spec.with_kernel(SideId::Seller, wrap(SideId::Seller)).unwrap();
        let slow_spec = slow_spec.with_kernel(SideId::Buyer, wrap(SideId::Buyer)).unwrap();
        let slow = simulate(&slow_spec, &sol, &cfg).unwrap();
        assert!(!slow.separable.seller);
        for k in SideId::BOTH {
            for (a, b) in fast.agents[k].iter().zip(&slow.agents[k]) {
                assert_eq!(a.matched_mass, b.matched_mass);
                assert!((a.utility - b.utility).abs() <= 1e-9 * a.utility.abs().max(1.0));
            }
        }
    }

    #[test]
    fn welfare_rule_totals() {
        let spec = reference_market();
        let sol = welfare_solution(&spec);
        let cfg = SimConfig { n_sellers: 20_000, n_buyers: 20_000, seed: 11 };
        let r = simulate(&spec, &sol, &cfg).unwrap();
        assert!((r.welfare - 28.875).abs() <= 3.0 * r.welfare_se + 1e-9, "{} ± {}", r.welfare, r.welfare_se);
        assert!((r.revenue - 5.25).abs() <= 3.0 * r.revenue_se + 1e-9);
        assert_eq!(r.matched_mass, SidePair::new(1.0, 1.0));
        assert_eq!(r, simulate(&spec, &sol, &cfg).unwrap());
    }

    #[test]
    fn empty_rule_totals() {
        let spec = reference_market();
        let m = Mechanism::new(&spec, Tolerances::default());
        let mut sol = welfare_solution(&spec);
        sol.rule = CutoffRule::empty(&spec);
        sol.payments = SidePair::try_from_fn(|k| m.payment_schedule(k, &sol.rule)).unwrap();
        let r = simulate(&spec, &sol, &SimConfig { n_sellers: 500, n_buyers: 400, seed: 1 }).unwrap();
        assert_eq!((r.welfare, r.revenue), (0.0, 0.0));
        // the top type has a zero-mass matched set
        assert!(r.agents.seller.iter().all(|a| a.utility == 0.0 && a.payment == 0.0));
    }

    #[test]
    fn realized_matching_is_reciprocal() {
        let spec = reference_market();
        let sol = solve(&spec, Objective::Revenue, &SolveOptions::default()).unwrap();
        let (ns, nb) = (4000, 3000);
        let r = simulate(&spec, &sol, &SimConfig { n_sellers: ns, n_buyers: nb, seed: 99 }).unwrap();
        let gap = (r.matched_mass.seller - r.matched_mass.buyer).abs();
        assert!(gap <= 1.0 / ns.min(nb) as f64, "{gap}");
        assert!(r.matched_mass.seller > 0.1 && r.matched_mass.seller < 0.9);
    }
}
