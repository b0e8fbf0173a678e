//! Acceptance run on the bundled example market. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use matchmarket::market::{reference_market, MarketSpec, SideId, SidePair};
use matchmarket::mechanism::{Mechanism, MechanismSolution, Objective, SidePattern};
use matchmarket::numerics::Tolerances;
use matchmarket::sim::{simulate, SimConfig};
use matchmarket::solver::{solve, SolveOptions};
use matchmarket::verify::{audit, reciprocity_audit, AuditOptions, AuditReport, Mutation};

const S: SideId = SideId::Seller;
const B: SideId = SideId::Buyer;

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new() -> Self {
        Check { ok: true, detail: String::new() }
    }

    fn expect(&mut self, ok: bool, what: String) {
        if !ok {
            self.ok = false;
        }
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&what);
        if !ok {
            self.detail.push_str(" [x]");
        }
    }

    fn within(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        let err = (got - want).abs();
        self.expect(err <= tol, format!("{name} = {got:.10} (err {err:.2e}, tol {tol:.0e})"));
    }

    fn at_most(&mut self, name: &str, got: f64, limit: f64) {
        self.expect(got <= limit, format!("{name} = {got:.3e} (limit {limit:.0e})"));
    }
}

struct Fixture {
    spec: MarketSpec,
    welfare: MechanismSolution,
    revenue: MechanismSolution,
    revenue_secs: f64,
}

impl Fixture {
    fn sol(&self, obj: Objective) -> &MechanismSolution {
        match obj {
            Objective::Welfare => &self.welfare,
            Objective::Revenue => &self.revenue,
        }
    }

    fn mech(&self) -> Mechanism<'_> {
        Mechanism::new(&self.spec, Tolerances::default())
    }
}

fn c1(f: &Fixture) -> Check {
    let mut c = Check::new();
    let r = &f.revenue.rule;
    c.within("delta_S", r.side(S).threshold(), 3.5, 1e-6);
    c.within("delta_B", r.side(B).threshold(), 95.0 / 29.0, 1e-6);
    c.expect(f.revenue_secs < 5.0, format!("solve took {:.2}s", f.revenue_secs));
    c
}

fn c2(f: &Fixture) -> Check {
    let mut c = Check::new();
    let closed: SidePair<fn(f64) -> f64> =
        SidePair::new(|l| (10.0 * l - 5.0) / (4.0 * l - 11.0), |l| (11.0 * l - 5.0) / (4.0 * l - 10.0));
    for k in SideId::BOTH {
        let r = f.revenue.rule.side(k);
        c.expect(r.len() == 512, format!("grid_{} = {}", k.tag(), r.len()));
        let err = r.lambdas().iter().zip(r.taus()).map(|(&l, &t)| (t - closed[k](l)).abs()).fold(0.0, f64::max);
        c.at_most(&format!("max|tau_{} - closed form|", k.tag()), err, 1e-6);
    }
    c
}

fn c3(f: &Fixture) -> Check {
    let mut c = Check::new();
    for (obj, want) in [(Objective::Welfare, SidePattern::CompleteMatched), (Objective::Revenue, SidePattern::BottomEliminated)] {
        let p = &f.sol(obj).patterns;
        for k in SideId::BOTH {
            c.expect(
                p.labels[k] == want && !p.top_reserved[k],
                format!("{obj} {}: {} top_reserved={}", k.tag(), p.labels[k], p.top_reserved[k]),
            );
        }
    }
    let e = f.mech().eta_from(Objective::Revenue, B, 10.0, 1.0).unwrap();
    c.expect(e < 0.0, format!("eta^B_R(10,1) = {e:.6} < 0"));
    c
}

fn c4(f: &Fixture) -> Check {
    let mut c = Check::new();
    let r = &f.revenue.rule;
    let s = r.side(S);
    c.within("tau_S(delta_S)", s.cutoff(s.threshold()).unwrap(), 10.0, 1e-6);
    c.within("tau_S(10)", s.cutoff(10.0).unwrap(), r.side(B).threshold(), 1e-6);
    let rec = reciprocity_audit(&f.spec, r, 512).unwrap();
    for k in SideId::BOTH {
        c.at_most(&format!("reciprocity_{} (normalised)", k.tag()), rec[k], 1e-4);
    }
    c
}

fn c5(f: &Fixture) -> Check {
    let mut c = Check::new();
    let m = f.mech();
    for k in SideId::BOTH {
        let r = f.revenue.rule.side(k);
        let n = r.len();
        let worst = (1..n - 1)
            .map(|i| m.eta_from(Objective::Revenue, k, r.lambdas()[i], r.taus()[i]).unwrap().abs())
            .fold(0.0, f64::max);
        c.at_most(&format!("max|eta| on {} interior", k.tag()), worst, 1e-8);
    }
    c
}

fn c6(f: &Fixture) -> Check {
    let mut c = Check::new();
    for (k, want) in [(S, 2.75), (B, 2.5)] {
        let p = f.welfare.payments[k].payments();
        let err = p.iter().map(|v| (v - want).abs()).fold(0.0, f64::max);
        c.expect(err <= 1e-8, format!("welfare phi_{} = {want} (max err {err:.2e})", k.tag()));
    }
    let m = f.mech();
    for k in SideId::BOTH {
        let r = &f.revenue.rule;
        let d = r.side(k).threshold();
        let phi = m.scheduled_payment(k, r, &f.revenue.payments[k], d).unwrap();
        c.at_most(&format!("revenue |phi_{}(delta)|", k.tag()), phi.abs(), 1e-9);
    }
    c
}

fn c7(f: &Fixture, reports: &Audits) -> Check {
    let mut c = Check::new();
    for obj in [Objective::Welfare, Objective::Revenue] {
        let rep = reports.get(obj);
        for k in SideId::BOTH {
            c.at_most(&format!("{obj} ic_gain_{}", k.tag()), rep.ic_max_gain[k], 1e-6);
        }
    }
    let tol = Tolerances::default();
    for mu in Mutation::ALL {
        let (spec, sol) = mu.apply(&f.spec, &f.revenue, &tol).unwrap();
        let rep = audit(&spec, (&sol).into(), &AuditOptions { n: 201, ..Default::default() }).unwrap();
        c.expect(rep.worst_excess() > 10.0, format!("{} excess {:.3e}", mu.name(), rep.worst_excess()));
    }
    c
}

fn c8(reports: &Audits) -> Check {
    let mut c = Check::new();
    for obj in [Objective::Welfare, Objective::Revenue] {
        let rep = reports.get(obj);
        for k in SideId::BOTH {
            let t = k.tag();
            c.expect(rep.ir_min_payoff[k] >= -1e-9, format!("{obj} min J_{t} = {:.3e}", rep.ir_min_payoff[k]));
            c.at_most(&format!("{obj} |J_{t}(lowest)|"), rep.ir_lowest_payoff[k].abs(), 1e-9);
            c.at_most(&format!("{obj} icfoc_{t}"), rep.icfoc_max_err[k], 1e-4);
        }
    }
    c
}

fn c9(reports: &Audits) -> Check {
    let mut c = Check::new();
    for obj in [Objective::Welfare, Objective::Revenue] {
        c.at_most(&format!("{obj} cross"), reports.get(obj).objective_cross_err, 1e-6);
    }
    c
}

fn c10(f: &Fixture) -> Check {
    let mut c = Check::new();
    let cfg = SimConfig { n_sellers: 200_000, n_buyers: 200_000, seed: 20240601 };
    let a = simulate(&f.spec, &f.welfare, &cfg).unwrap();
    let zw = (a.welfare - 28.875).abs();
    c.expect(zw <= 3.0 * a.welfare_se, format!("welfare {:.6} (se {:.2e})", a.welfare, a.welfare_se));
    // payments are constant under this rule, so the standard error is rounding-sized
    let zr = (a.revenue - 5.25).abs();
    c.expect(zr <= 3.0 * a.revenue_se + 1e-9, format!("revenue {:.12} (se {:.2e})", a.revenue, a.revenue_se));
    let b = simulate(&f.spec, &f.welfare, &cfg).unwrap();
    c.expect(a == b, "same seed reproduces".to_string());
    c
}

struct Audits {
    welfare: AuditReport,
    revenue: AuditReport,
}

impl Audits {
    fn get(&self, obj: Objective) -> &AuditReport {
        match obj {
            Objective::Welfare => &self.welfare,
            Objective::Revenue => &self.revenue,
        }
    }
}

fn main() -> ExitCode {
    let spec = reference_market();
    let opts = SolveOptions::default();
    let start = Instant::now();
    let revenue = solve(&spec, Objective::Revenue, &opts).expect("revenue solve");
    let revenue_secs = start.elapsed().as_secs_f64();
    let welfare = solve(&spec, Objective::Welfare, &opts).expect("welfare solve");
    let f = Fixture { spec, welfare, revenue, revenue_secs };

    let run = |obj| audit(&f.spec, f.sol(obj).into(), &AuditOptions { n: 201, ..Default::default() }).expect("audit");
    let reports = Audits { welfare: run(Objective::Welfare), revenue: run(Objective::Revenue) };

    let results = [
        ("golden thresholds", c1(&f)),
        ("golden curves", c2(&f)),
        ("pattern classification", c3(&f)),
        ("boundary identities", c4(&f)),
        ("zero-set residual", c5(&f)),
        ("payments", c6(&f)),
        ("incentive compatibility", c7(&f, &reports)),
        ("participation and envelope", c8(&reports)),
        ("objective identity", c9(&reports)),
        ("monte carlo", c10(&f)),
    ];
    let mut failed = 0;
    for (i, (name, c)) in results.iter().enumerate() {
        println!("criterion {}: {} {name}: {}", i + 1, if c.ok { "PASS" } else { "FAIL" }, c.detail);
        failed += usize::from(!c.ok);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
