//! Market sides, type distributions, and cross-side reward kernels.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr, ExprSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SideId {
    Seller,
    Buyer,
}

impl SideId {
    pub const BOTH: [SideId; 2] = [SideId::Seller, SideId::Buyer];

    pub fn opposite(self) -> SideId {
        match self {
            SideId::Seller => SideId::Buyer,
            SideId::Buyer => SideId::Seller,
        }
    }

    /// One-letter tag used in output keys (`delta_S`).
    pub fn tag(self) -> &'static str {
        match self {
            SideId::Seller => "S",
            SideId::Buyer => "B",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SideId::Seller => "seller",
            SideId::Buyer => "buyer",
        }
    }
}

impl fmt::Display for SideId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A value per market side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SidePair<T> {
    pub seller: T,
    pub buyer: T,
}

impl<T> SidePair<T> {
    pub fn new(seller: T, buyer: T) -> Self {
        Self { seller, buyer }
    }

    pub fn from_fn(mut f: impl FnMut(SideId) -> T) -> Self {
        let seller = f(SideId::Seller);
        Self { seller, buyer: f(SideId::Buyer) }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(SideId) -> Result<T, E>) -> Result<Self, E> {
        let seller = f(SideId::Seller)?;
        Ok(Self { seller, buyer: f(SideId::Buyer)? })
    }

    pub fn map<U>(&self, mut f: impl FnMut(SideId, &T) -> U) -> SidePair<U> {
        SidePair { seller: f(SideId::Seller, &self.seller), buyer: f(SideId::Buyer, &self.buyer) }
    }
}

impl<T> Index<SideId> for SidePair<T> {
    type Output = T;
    fn index(&self, side: SideId) -> &T {
        match side {
            SideId::Seller => &self.seller,
            SideId::Buyer => &self.buyer,
        }
    }
}

impl<T> IndexMut<SideId> for SidePair<T> {
    fn index_mut(&mut self, side: SideId) -> &mut T {
        match side {
            SideId::Seller => &mut self.seller,
            SideId::Buyer => &mut self.buyer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistKind {
    Uniform,
    /// `F(λ) = ((λ − lo)/(hi − lo))^k`
    Power { k: f64 },
}

/// Continuous type distribution on a finite support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeDistribution {
    kind: DistKind,
    lo: f64,
    hi: f64,
}

impl TypeDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DistKind::Uniform, lo, hi)
    }

    pub fn power(lo: f64, hi: f64, k: f64) -> Result<Self> {
        Self::new(DistKind::Power { k }, lo, hi)
    }

    pub fn new(kind: DistKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Distribution(format!("support [{lo}, {hi}] must be finite")));
        }
        if !(lo < hi) {
            return Err(Error::Distribution(format!("support [{lo}, {hi}] violates lo < hi")));
        }
        if let DistKind::Power { k } = kind {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::Distribution(format!("power exponent must be positive, got {k}")));
            }
        }
        Ok(Self { kind, lo, hi })
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfSupport { value: x, lo: self.lo, hi: self.hi })
        }
    }

    fn unit(&self, x: f64) -> f64 {
        (x - self.lo) / self.width()
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.kind {
            DistKind::Uniform => 1.0 / self.width(),
            DistKind::Power { k } => k * self.unit(x).powf(k - 1.0) / self.width(),
        })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.kind {
            DistKind::Uniform => self.unit(x),
            DistKind::Power { k } => self.unit(x).powf(k),
        })
    }

    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfSupport { value: u, lo: 0.0, hi: 1.0 });
        }
        let t = match self.kind {
            DistKind::Uniform => u,
            DistKind::Power { k } => u.powf(1.0 / k),
        };
        Ok((self.lo + t * self.width()).clamp(self.lo, self.hi))
    }

    /// `(1 − F(λ)) / f(λ)`.
    pub fn hazard_complement(&self, x: f64) -> Result<f64> {
        let f = self.density(x)?;
        if f == 0.0 || !f.is_finite() {
            return Err(Error::ZeroDensity(x));
        }
        Ok((1.0 - self.cdf(x)?) / f)
    }
}

/// The two signatures used by market expressions.
pub fn kernel_signature() -> ExprSignature {
    ExprSignature::new(&["lam", "x"]).expect("static signature")
}

pub fn gamma_signature() -> ExprSignature {
    ExprSignature::new(&["lam"]).expect("static signature")
}

pub fn monetary_signature() -> ExprSignature {
    ExprSignature::new(&["r", "lam"]).expect("static signature")
}

/// Monetary valuations `M^S(r, lam)`, `M^B(r, lam)` of a reward `r`.
#[derive(Debug, Clone)]
pub struct Primitives {
    pub m_seller: Expr,
    pub m_buyer: Expr,
}

#[derive(Debug, Clone)]
pub enum KernelSource {
    /// Kernels composed from reward primitives.
    Primitives(Primitives),
    /// Kernels given directly as `R(lam, x)`.
    Direct,
}

#[derive(Debug, Clone)]
pub struct SideSpec {
    pub dist: TypeDistribution,
    /// Reward offered by a participant of this side, as a function of `lam`.
    pub gamma: Expr,
}

/// Declarative description of both market sides.
///
/// Kernels are always held as expressions in `(lam, x)` where `lam` is the
/// own type and `x` the opponent type; in primitive mode they are built by
/// substitution so evaluation follows the composed arithmetic exactly.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    sides: SidePair<SideSpec>,
    kernels: SidePair<Expr>,
    kernel_dlam: SidePair<Expr>,
    source: KernelSource,
}

impl MarketSpec {
    pub fn with_direct_kernels(seller: SideSpec, buyer: SideSpec, r_seller: Expr, r_buyer: Expr) -> Result<Self> {
        let ks = kernel_signature();
        for (name, e) in [("R_S", &r_seller), ("R_B", &r_buyer)] {
            if e.signature() != &ks {
                return Err(Error::Schema(format!("{name} must be an expression in (lam, x)")));
            }
        }
        Self::check_gamma(&seller, &buyer)?;
        Ok(Self::assemble(SidePair::new(seller, buyer), SidePair::new(r_seller, r_buyer), KernelSource::Direct))
    }

    /// `R^S(λS, λB) = M^S(γ^B(λB), λS)`, `R^B(λB, λS) = M^B(γ^S(λS), λB) − γ^B(λB)`.
    pub fn with_primitives(seller: SideSpec, buyer: SideSpec, prim: Primitives) -> Result<Self> {
        let ms = monetary_signature();
        for (name, e) in [("M_S", &prim.m_seller), ("M_B", &prim.m_buyer)] {
            if e.signature() != &ms {
                return Err(Error::Schema(format!("{name} must be an expression in (r, lam)")));
            }
        }
        Self::check_gamma(&seller, &buyer)?;
        let ks = kernel_signature();
        let own = Expr::var("lam", &ks).expect("lam");
        let opp = Expr::var("x", &ks).expect("x");
        let gamma_buyer_of_opp = buyer.gamma.substitute(&[&opp]);
        let gamma_seller_of_opp = seller.gamma.substitute(&[&opp]);
        let gamma_buyer_of_own = buyer.gamma.substitute(&[&own]);
        let r_seller = prim.m_seller.substitute(&[&gamma_buyer_of_opp, &own]);
        let m_b = prim.m_buyer.substitute(&[&gamma_seller_of_opp, &own]);
        let r_buyer = m_b.combine(BinOp::Sub, &gamma_buyer_of_own);
        Ok(Self::assemble(
            SidePair::new(seller, buyer),
            SidePair::new(r_seller, r_buyer),
            KernelSource::Primitives(prim),
        ))
    }

    fn check_gamma(seller: &SideSpec, buyer: &SideSpec) -> Result<()> {
        let gs = gamma_signature();
        for (side, s) in [(SideId::Seller, seller), (SideId::Buyer, buyer)] {
            if s.gamma.signature() != &gs {
                return Err(Error::Schema(format!("{side} gamma must be an expression in lam")));
            }
        }
        Ok(())
    }

    fn assemble(sides: SidePair<SideSpec>, kernels: SidePair<Expr>, source: KernelSource) -> Self {
        let kernel_dlam = kernels.map(|_, k| k.differentiate("lam"));
        Self { sides, kernels, kernel_dlam, source }
    }

    pub fn side(&self, side: SideId) -> &SideSpec {
        &self.sides[side]
    }

    pub fn dist(&self, side: SideId) -> &TypeDistribution {
        &self.sides[side].dist
    }

    pub fn kernel(&self, side: SideId) -> &Expr {
        &self.kernels[side]
    }

    pub fn kernel_dlam(&self, side: SideId) -> &Expr {
        &self.kernel_dlam[side]
    }

    pub fn source(&self) -> &KernelSource {
        &self.source
    }

    /// A copy with side `side`'s kernel replaced (derivative recomputed).
    pub fn with_kernel(&self, side: SideId, kernel: Expr) -> Result<Self> {
        if kernel.signature() != &kernel_signature() {
            return Err(Error::Schema("kernel must be an expression in (lam, x)".into()));
        }
        let mut kernels = self.kernels.clone();
        kernels[side] = kernel;
        Ok(Self::assemble(self.sides.clone(), kernels, KernelSource::Direct))
    }

    /// `R^side(λ_own, λ_opp)`.
    pub fn reward_kernel(&self, side: SideId, own: f64, opp: f64) -> Result<f64> {
        self.dist(side).check(own)?;
        self.dist(side.opposite()).check(opp)?;
        self.kernel_unchecked(side, own, opp)
    }

    /// Kernel evaluation without support checks, for inner loops whose
    /// arguments are already known to be in range.
    pub(crate) fn kernel_unchecked(&self, side: SideId, own: f64, opp: f64) -> Result<f64> {
        self.kernels[side]
            .eval(&[own, opp])
            .map_err(|source| Error::Kernel { side, own, opp, source })
    }

    /// `∂R^side/∂λ_own`.
    pub(crate) fn kernel_dlam_unchecked(&self, side: SideId, own: f64, opp: f64) -> Result<f64> {
        self.kernel_dlam[side]
            .eval(&[own, opp])
            .map_err(|source| Error::Kernel { side, own, opp, source })
    }

    pub fn gamma(&self, side: SideId, lam: f64) -> Result<f64> {
        Ok(self.sides[side].gamma.eval(&[lam])?)
    }

    /// Samples the standing assumptions on a `grid_n × grid_n` lattice.
    pub fn validate(&self, grid_n: usize) -> Result<ValidationReport> {
        if grid_n < 16 {
            return Err(Error::Precondition(format!("validation grid needs grid_n >= 16, got {grid_n}")));
        }
        let mut violations = Vec::new();
        let grid = |side: SideId| lattice(self.dist(side), grid_n);

        for side in SideId::BOTH {
            let own_pts = grid(side);
            let opp_pts = grid(side.opposite());
            'own: for &own in &own_pts {
                let mut prev: Option<(f64, f64)> = None;
                for &opp in &opp_pts {
                    let v = self.kernel_unchecked(side, own, opp)?;
                    if let Some((px, pv)) = prev {
                        if v < pv {
                            violations.push(Violation::KernelNotMonotone { side, own, opp_lo: px, opp_hi: opp });
                            break 'own;
                        }
                    }
                    prev = Some((opp, v));
                }
            }

            let d = self.dist(side);
            let interior = (1..grid_n - 1).map(|i| d.lo() + d.width() * i as f64 / (grid_n - 1) as f64);
            for x in interior {
                let f = d.density(x)?;
                if !(f > 0.0) {
                    violations.push(Violation::DensityNotPositive { side, at: x });
                    break;
                }
            }
        }

        if let KernelSource::Primitives(p) = &self.source {
            'outer: for &lb in &grid(SideId::Buyer) {
                let reward = self.gamma(SideId::Buyer, lb)?;
                for &ls in &grid(SideId::Seller) {
                    let value = p.m_seller.eval(&[reward, ls])?;
                    if reward > value {
                        violations.push(Violation::RewardExceedsValue { seller: ls, buyer: lb, cost: reward, value });
                        break 'outer;
                    }
                }
            }
        }
        Ok(ValidationReport { violations })
    }
}

fn lattice(d: &TypeDistribution, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { d.hi() } else { d.lo() + d.width() * i as f64 / (n - 1) as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `R^side(own, ·)` decreases between two adjacent opponent types.
    KernelNotMonotone { side: SideId, own: f64, opp_lo: f64, opp_hi: f64 },
    /// The buyer's reward cost exceeds its value to the seller.
    RewardExceedsValue { seller: f64, buyer: f64, cost: f64, value: f64 },
    DensityNotPositive { side: SideId, at: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::KernelNotMonotone { side, own, opp_lo, opp_hi } => write!(
                f,
                "{side} kernel decreases in opponent type at own={own}: x={opp_lo} -> x={opp_hi}"
            ),
            Violation::RewardExceedsValue { seller, buyer, cost, value } => write!(
                f,
                "reward cost {cost} exceeds seller value {value} at seller={seller}, buyer={buyer}"
            ),
            Violation::DensityNotPositive { side, at } => write!(f, "{side} density not positive at {at}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The two-sided market used throughout the tests: uniform types on
/// `[1, 10]`, `γ^S = λ`, `γ^B = λ/2`, and direct kernels
/// `R^S = λ^S λ^B / 2`, `R^B = λ^B (λ^S − 1/2) / 2`.
pub fn reference_market() -> MarketSpec {
    let gs = gamma_signature();
    let ks = kernel_signature();
    let side = |gamma: &str| SideSpec {
        dist: TypeDistribution::uniform(1.0, 10.0).expect("valid"),
        gamma: Expr::parse(gamma, &gs).expect("valid"),
    };
    MarketSpec::with_direct_kernels(
        side("lam"),
        side("0.5*lam"),
        Expr::parse("0.5*lam*x", &ks).expect("valid"),
        Expr::parse("0.5*lam*(x-0.5)", &ks).expect("valid"),
    )
    .expect("valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{integrate, Tolerances};

    fn power01() -> TypeDistribution {
        TypeDistribution::power(0.0, 1.0, 2.0).unwrap()
    }

    #[test]
    fn sides() {
        assert_eq!(SideId::Seller.opposite(), SideId::Buyer);
        assert_eq!(SideId::Buyer.opposite(), SideId::Seller);
        let p = SidePair::new(1, 2);
        assert_eq!(p[SideId::Buyer], 2);
    }

    #[test]
    fn uniform_density_and_cdf() {
        let d = TypeDistribution::uniform(1.0, 10.0).unwrap();
        assert!((d.density(5.0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!((d.density(1.0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!((d.cdf(5.0).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(d.inverse_cdf(0.0).unwrap(), 1.0);
        assert!(matches!(d.density(0.5), Err(Error::OutOfSupport { .. })));
        assert!(d.inverse_cdf(1.5).is_err());
    }

    #[test]
    fn power_family() {
        let d = power01();
        assert!((d.density(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((d.inverse_cdf(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((d.hazard_complement(0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(d.hazard_complement(0.0), Err(Error::ZeroDensity(_))));
    }

    #[test]
    fn hazard_complement_uniform() {
        let d = TypeDistribution::uniform(1.0, 10.0).unwrap();
        assert!((d.hazard_complement(4.0).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(d.hazard_complement(10.0).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_supports_rejected() {
        assert!(TypeDistribution::uniform(1.0, 1.0).is_err());
        assert!(TypeDistribution::uniform(10.0, 1.0).is_err());
        assert!(TypeDistribution::power(0.0, 1.0, 0.0).is_err());
        assert!(TypeDistribution::uniform(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let tol = Tolerances::default();
        for d in [
            TypeDistribution::uniform(1.0, 10.0).unwrap(),
            power01(),
            TypeDistribution::power(2.0, 5.0, 3.5).unwrap(),
            TypeDistribution::power(-1.0, 1.0, 1.5).unwrap(),
        ] {
            let mass = integrate(|x| d.density(x), d.lo(), d.hi(), &tol).unwrap();
            assert!((mass - 1.0).abs() <= 1e-9, "{d:?}: {mass}");
        }
    }

    #[test]
    fn reference_kernels() {
        let m = reference_market();
        assert_eq!(m.reward_kernel(SideId::Seller, 2.0, 4.0).unwrap(), 4.0);
        assert_eq!(m.reward_kernel(SideId::Buyer, 4.0, 2.0).unwrap(), 3.0);
        assert!(m.reward_kernel(SideId::Buyer, 0.0, 2.0).is_err());
        assert!(m.validate(32).unwrap().is_clean());
    }

    #[test]
    fn zero_kernel_evaluates_to_zero() {
        let m = reference_market();
        let zero = Expr::parse("0*lam*x", &kernel_signature()).unwrap();
        let z = m.with_kernel(SideId::Buyer, zero).unwrap();
        assert_eq!(z.reward_kernel(SideId::Buyer, 3.0, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn decreasing_kernel_flagged_with_witness() {
        let m = reference_market();
        let bad = m.with_kernel(SideId::Seller, Expr::parse("-x*lam", &kernel_signature()).unwrap()).unwrap();
        let report = bad.validate(16).unwrap();
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::KernelNotMonotone { side, opp_lo, opp_hi, .. } => {
                assert_eq!(*side, SideId::Seller);
                assert!(opp_lo < opp_hi);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.validate(8).is_err());
    }

    fn primitive_market() -> MarketSpec {
        let gs = gamma_signature();
        let ms = monetary_signature();
        let side = |g: &str| SideSpec {
            dist: TypeDistribution::uniform(1.0, 10.0).unwrap(),
            gamma: Expr::parse(g, &gs).unwrap(),
        };
        MarketSpec::with_primitives(
            side("lam"),
            side("0.5*lam"),
            Primitives { m_seller: Expr::parse("lam*r", &ms).unwrap(), m_buyer: Expr::parse("0.5*lam*r", &ms).unwrap() },
        )
        .unwrap()
    }

    #[test]
    fn primitive_composition() {
        let m = primitive_market();
        // M^S(γ^B(4), 2) = 2 · 2
        assert_eq!(m.reward_kernel(SideId::Seller, 2.0, 4.0).unwrap(), 4.0);
        // M^B(γ^S(2), 4) − γ^B(4) = 0.5·4·2 − 2 = λB(λS − 1)/2
        assert_eq!(m.reward_kernel(SideId::Buyer, 4.0, 2.0).unwrap(), 2.0);
        assert!(m.validate(16).unwrap().is_clean());
    }

    #[test]
    fn primitive_kernel_follows_composed_arithmetic() {
        use rand::{Rng, SeedableRng};
        let m = primitive_market();
        let KernelSource::Primitives(p) = m.source() else { panic!("primitive mode") };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (ls, lb) = (rng.gen_range(1.0..10.0), rng.gen_range(1.0..10.0));
            let composed = p.m_seller.eval(&[m.gamma(SideId::Buyer, lb).unwrap(), ls]).unwrap();
            assert_eq!(m.reward_kernel(SideId::Seller, ls, lb).unwrap().to_bits(), composed.to_bits());
        }
    }

    #[test]
    fn reward_cost_violation() {
        let gs = gamma_signature();
        let ms = monetary_signature();
        let side = |g: &str| SideSpec {
            dist: TypeDistribution::uniform(1.0, 10.0).unwrap(),
            gamma: Expr::parse(g, &gs).unwrap(),
        };
        let m = MarketSpec::with_primitives(
            side("lam"),
            side("0.5*lam"),
            Primitives {
                m_seller: Expr::parse("0.1*lam*r", &ms).unwrap(),
                m_buyer: Expr::parse("0.5*lam*r", &ms).unwrap(),
            },
        )
        .unwrap();
        let report = m.validate(16).unwrap();
        assert!(report.violations.iter().any(|v| matches!(v, Violation::RewardExceedsValue { .. })));
    }
}
