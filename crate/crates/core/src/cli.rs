//! Command-line front end: argument handling, output files, exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_market, MarketFile};
use crate::error::{Error, Result};
use crate::market::{MarketSpec, SideId, SidePair};
use crate::mechanism::{CutoffRule, Mechanism, MechanismSolution, Objective, PaymentSchedule, SideRule};
use crate::numerics::Tolerances;
use crate::sim::{simulate, SimConfig};
use crate::solver::{solve, SolveOptions, MIN_GRID};
use crate::verify::{audit, AuditOptions, AuditReport, Candidate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_POPULATION: usize = 200_000;

#[derive(Debug, Parser)]
#[command(name = "matchmarket", version, about = "Optimal cut-off mechanisms for two-sided data markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a market file.
    Validate(Common),
    /// Solve for the optimal rule and payments.
    Solve(Common),
    /// Audit a solved mechanism (reads rule/payment CSVs from --out when present).
    Verify(VerifyArgs),
    /// Monte Carlo realization of the solved mechanism.
    Simulate(SimulateArgs),
    /// Solve both objectives and compare them.
    Report(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Market description file.
    #[arg(short, long)]
    pub market: PathBuf,
    /// welfare or revenue.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Cut-off samples per side.
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    pub out: PathBuf,
    /// Absolute quadrature tolerance.
    #[arg(long)]
    pub quad_abs: Option<f64>,
    /// Relative quadrature tolerance.
    #[arg(long)]
    pub quad_rel: Option<f64>,
    /// Root-finder bracket width.
    #[arg(long)]
    pub root_x: Option<f64>,
    /// Maximum quadrature bisection depth.
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// True-type and report grid size.
    #[arg(long, default_value_t = 201)]
    pub audit_n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sampled sellers.
    #[arg(long)]
    pub n_sellers: Option<usize>,
    /// Sampled buyers.
    #[arg(long)]
    pub n_buyers: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fully resolved settings: flags over `[options]` over defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub market: MarketFile,
    pub objective: Objective,
    pub grid_n: usize,
    pub tol: Tolerances,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(c: &Common) -> Result<Self> {
        let market = load_market(&c.market)?;
        let o = &market.options;
        let base = o.tolerances(Tolerances::default());
        let tol = Tolerances {
            quad_abs: c.quad_abs.unwrap_or(base.quad_abs),
            quad_rel: c.quad_rel.unwrap_or(base.quad_rel),
            root_x: c.root_x.unwrap_or(base.root_x),
            max_depth: c.max_depth.unwrap_or(base.max_depth),
        };
        tol.validate()?;
        let grid_n = c.grid_n.or(o.grid_n).unwrap_or(512);
        if grid_n < MIN_GRID {
            return Err(Error::Precondition(format!("grid_n must be at least {MIN_GRID}, got {grid_n}")));
        }
        let objective = c.objective.or(o.objective).unwrap_or(Objective::Revenue);
        Ok(Self { market, objective, grid_n, tol, out: c.out.clone() })
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.market.spec
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { grid_n: self.grid_n, tol: self.tol }
    }
}

/// `%g`-style formatting with `sig` significant digits.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= sig as i32 {
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        return format!("{mant}e{exp}");
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    let fixed = format!("{:.*}", decimals, x);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let label = path.display().to_string();
    match e.position() {
        Some(pos) => Error::Config { path: label, line: pos.line() as usize, column: 1, message: e.to_string() },
        None => Error::Io(format!("{label}: {e}")),
    }
}

fn write_csv(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([fmt_sig(*x, 9), fmt_sig(*y, 9)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_csv(path: &Path, header: [&str; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let label = path.display().to_string();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::Config { path: label, line: 1, column: 1, message: format!("expected header `{}`", header.join(",")) });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse().map_err(|_| Error::Config {
                path: label.clone(),
                line,
                column: i + 1,
                message: format!("invalid number `{s}` in column {}", header[i]),
            })
        };
        xs.push(field(0)?);
        ys.push(field(1)?);
    }
    Ok((xs, ys))
}

fn rule_path(out: &Path, side: SideId) -> PathBuf {
    out.join(format!("rule_{}.csv", side.name()))
}

fn payments_path(out: &Path, side: SideId) -> PathBuf {
    out.join(format!("payments_{}.csv", side.name()))
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn solution_text(sol: &MechanismSolution, grid_n: usize) -> String {
    let d = &sol.diagnostics;
    let p = &sol.patterns;
    let mut s = String::new();
    let _ = writeln!(s, "objective = {}", sol.objective);
    let _ = writeln!(s, "delta_S = {:.6}", sol.rule.side(SideId::Seller).threshold());
    let _ = writeln!(s, "delta_B = {:.6}", sol.rule.side(SideId::Buyer).threshold());
    let _ = writeln!(s, "pattern = {} / {}", p.labels.seller, p.labels.buyer);
    let _ = writeln!(s, "top_reserved = {} / {}", yes_no(p.top_reserved.seller), yes_no(p.top_reserved.buyer));
    let _ = writeln!(s, "objective_value = {}", fmt_sig(sol.objective_value, 12));
    let _ = writeln!(s, "welfare = {}", fmt_sig(sol.values.welfare, 12));
    let _ = writeln!(s, "revenue = {}", fmt_sig(sol.values.revenue, 12));
    let _ = writeln!(s, "revenue_virtual = {}", fmt_sig(sol.values.revenue_virtual, 12));
    let _ = writeln!(s, "eta_low_low = {}", fmt_sig(p.eta_low_low, 9));
    let _ = writeln!(s, "eta_high_low_S = {}", fmt_sig(p.eta_high_low.seller, 9));
    let _ = writeln!(s, "eta_high_low_B = {}", fmt_sig(p.eta_high_low.buyer, 9));
    let _ = writeln!(s, "regularity_strict = {}", yes_no(d.regularity.strict()));
    let _ = writeln!(s, "regularity_weak = {}", yes_no(d.regularity.weak()));
    let _ = writeln!(s, "uniqueness_precondition = {}", yes_no(d.regularity.uniqueness_precondition));
    let _ = writeln!(s, "monotone = {} / {}", yes_no(d.monotone.seller), yes_no(d.monotone.buyer));
    let _ = writeln!(s, "reciprocity_err = {}", fmt_sig(d.reciprocity_err, 6));
    let _ = writeln!(s, "reciprocity_ok = {}", yes_no(d.reciprocity_ok));
    let _ = writeln!(s, "above_top = {} / {}", d.above_top.seller, d.above_top.buyer);
    let _ = writeln!(s, "root_failures = {} / {}", d.root_failures.seller, d.root_failures.buyer);
    let _ = writeln!(s, "pattern_consistent = {}", yes_no(d.pattern_consistent));
    let _ = writeln!(s, "grid_n = {grid_n}");
    s
}

fn write_solution(out: &Path, sol: &MechanismSolution, grid_n: usize) -> Result<()> {
    ensure_dir(out)?;
    for k in SideId::BOTH {
        let r = sol.rule.side(k);
        write_csv(&rule_path(out, k), ["lambda", "tau"], r.lambdas(), r.taus())?;
        let p = &sol.payments[k];
        write_csv(&payments_path(out, k), ["lambda", "phi"], p.lambdas(), p.payments())?;
    }
    write_text(&out.join("solution.txt"), &solution_text(sol, grid_n))
}

/// Rule and payments from a previous `solve`, if all four files exist.
fn read_solution_files(out: &Path) -> Result<Option<(CutoffRule, SidePair<PaymentSchedule>)>> {
    let files: Vec<PathBuf> = SideId::BOTH.iter().flat_map(|&k| [rule_path(out, k), payments_path(out, k)]).collect();
    if !files.iter().all(|f| f.exists()) {
        return Ok(None);
    }
    let rules = SidePair::try_from_fn(|k| {
        let (l, t) = read_csv(&rule_path(out, k), ["lambda", "tau"])?;
        SideRule::new(l, t).map_err(|e| Error::Schema(format!("{}: {e}", rule_path(out, k).display())))
    })?;
    let pays = SidePair::try_from_fn(|k| {
        let (l, p) = read_csv(&payments_path(out, k), ["lambda", "phi"])?;
        PaymentSchedule::new(l, p, 0.0).map_err(|e| Error::Schema(format!("{}: {e}", payments_path(out, k).display())))
    })?;
    let SidePair { seller, buyer } = rules;
    Ok(Some((CutoffRule::new(seller, buyer), pays)))
}

fn cmd_validate(c: &Common) -> Result<i32> {
    let rc = RunConfig::resolve(c)?;
    let spec = rc.spec();
    for k in SideId::BOTH {
        let d = spec.dist(k);
        println!("{}: support [{}, {}], {:?}, gamma = {}", k.name(), d.lo(), d.hi(), d.kind(), spec.side(k).gamma);
        println!("  R_{} = {}", k.tag(), spec.kernel(k));
    }
    println!("market ok");
    Ok(EXIT_OK)
}

fn cmd_solve(c: &Common) -> Result<i32> {
    let rc = RunConfig::resolve(c)?;
    let sol = solve(rc.spec(), rc.objective, &rc.solve_options())?;
    write_solution(&rc.out, &sol, rc.grid_n)?;
    print!("{}", solution_text(&sol, rc.grid_n));
    Ok(EXIT_OK)
}

pub fn audit_text(report: &AuditReport, source: &str) -> String {
    format!("source = {source}\n{report}")
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let rc = RunConfig::resolve(&a.common)?;
    let opts = AuditOptions { n: a.audit_n, quad: rc.tol, ..Default::default() };
    let (report, source) = match read_solution_files(&rc.out)? {
        Some((rule, payments)) => {
            let report = audit(rc.spec(), Candidate { rule: &rule, payments: &payments }, &opts)?;
            (report, "files")
        }
        None => {
            let sol = solve(rc.spec(), rc.objective, &rc.solve_options())?;
            (audit(rc.spec(), (&sol).into(), &opts)?, "solved")
        }
    };
    ensure_dir(&rc.out)?;
    let text = audit_text(&report, source);
    write_text(&rc.out.join("audit.txt"), &text)?;
    print!("{text}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_AUDIT })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let rc = RunConfig::resolve(&a.common)?;
    let o = &rc.market.options;
    let cfg = SimConfig {
        n_sellers: a.n_sellers.or(o.n_sellers).unwrap_or(DEFAULT_POPULATION),
        n_buyers: a.n_buyers.or(o.n_buyers).unwrap_or(DEFAULT_POPULATION),
        seed: a.seed.or(o.seed).unwrap_or(DEFAULT_SEED),
    };
    if cfg.n_sellers == 0 || cfg.n_buyers == 0 {
        return Err(Error::Precondition("population sizes must be at least 1".into()));
    }
    let sol = solve(rc.spec(), rc.objective, &rc.solve_options())?;
    let res = simulate(rc.spec(), &sol, &cfg)?;
    ensure_dir(&rc.out)?;

    let mut csv = String::with_capacity(64 * (cfg.n_sellers + cfg.n_buyers));
    csv.push_str("side,lambda,matched_mass,utility,payment\n");
    for k in SideId::BOTH {
        for r in &res.agents[k] {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                k.tag(),
                fmt_sig(r.lambda, 9),
                fmt_sig(r.matched_mass, 9),
                fmt_sig(r.utility, 9),
                fmt_sig(r.payment, 9)
            );
        }
    }
    write_text(&rc.out.join("sim.csv"), &csv)?;

    let z = |emp: f64, target: f64, se: f64| if se > 0.0 { (emp - target) / se } else { 0.0 };
    let mut s = String::new();
    let _ = writeln!(s, "objective = {}", rc.objective);
    let _ = writeln!(s, "seed = {}", res.seed);
    let _ = writeln!(s, "n_sellers = {}", cfg.n_sellers);
    let _ = writeln!(s, "n_buyers = {}", cfg.n_buyers);
    let _ = writeln!(s, "welfare = {}", fmt_sig(res.welfare, 12));
    let _ = writeln!(s, "welfare_se = {}", fmt_sig(res.welfare_se, 6));
    let _ = writeln!(s, "welfare_quadrature = {}", fmt_sig(sol.values.welfare, 12));
    let _ = writeln!(s, "welfare_z = {}", fmt_sig(z(res.welfare, sol.values.welfare, res.welfare_se), 6));
    let _ = writeln!(s, "revenue = {}", fmt_sig(res.revenue, 12));
    let _ = writeln!(s, "revenue_se = {}", fmt_sig(res.revenue_se, 6));
    let _ = writeln!(s, "revenue_quadrature = {}", fmt_sig(sol.values.revenue, 12));
    let _ = writeln!(s, "revenue_z = {}", fmt_sig(z(res.revenue, sol.values.revenue, res.revenue_se), 6));
    let _ = writeln!(s, "matched_mass_S = {}", fmt_sig(res.matched_mass.seller, 9));
    let _ = writeln!(s, "matched_mass_B = {}", fmt_sig(res.matched_mass.buyer, 9));
    write_text(&rc.out.join("sim_summary.txt"), &s)?;
    print!("{s}");
    Ok(EXIT_OK)
}

fn cmd_report(c: &Common) -> Result<i32> {
    let rc = RunConfig::resolve(c)?;
    let opts = rc.solve_options();
    let w = solve(rc.spec(), Objective::Welfare, &opts)?;
    let r = solve(rc.spec(), Objective::Revenue, &opts)?;
    let m = Mechanism::new(rc.spec(), rc.tol);
    let mut s = String::new();
    let _ = writeln!(s, "{:<22}{:>18}{:>18}", "", "welfare rule", "revenue rule");
    let row = |s: &mut String, name: &str, a: String, b: String| {
        let _ = writeln!(s, "{name:<22}{a:>18}{b:>18}");
    };
    for k in SideId::BOTH {
        let f = |sol: &MechanismSolution| format!("{:.6}", sol.rule.side(k).threshold());
        row(&mut s, &format!("delta_{}", k.tag()), f(&w), f(&r));
    }
    for k in SideId::BOTH {
        let f = |sol: &MechanismSolution| sol.patterns.labels[k].to_string();
        row(&mut s, &format!("pattern_{}", k.tag()), f(&w), f(&r));
    }
    row(&mut s, "welfare", fmt_sig(w.values.welfare, 9), fmt_sig(r.values.welfare, 9));
    row(&mut s, "revenue", fmt_sig(w.values.revenue, 9), fmt_sig(r.values.revenue, 9));
    let corner = |obj: Objective, a: f64, b: f64| m.eta(obj, a, b).map(|v| fmt_sig(v, 6));
    let (ls, hs) = (rc.spec().dist(SideId::Seller).lo(), rc.spec().dist(SideId::Seller).hi());
    let (lb, hb) = (rc.spec().dist(SideId::Buyer).lo(), rc.spec().dist(SideId::Buyer).hi());
    for (name, a, b) in [("eta(lo_S, lo_B)", ls, lb), ("eta(hi_S, lo_B)", hs, lb), ("eta(lo_S, hi_B)", ls, hb)] {
        row(&mut s, name, corner(Objective::Welfare, a, b)?, corner(Objective::Revenue, a, b)?);
    }
    ensure_dir(&rc.out)?;
    write_text(&rc.out.join("report.txt"), &s)?;
    print!("{s}");
    Ok(EXIT_OK)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Solve(c) => cmd_solve(c),
        Command::Verify(a) => cmd_verify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(c) => cmd_report(c),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses arguments, runs the command, prints diagnostics, and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", one_line(first.trim_start_matches("error:").trim()));
            return EXIT_INPUT;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            exit_code(&e)
        }
    }
}
