//! Compound Poisson risk model with interest, signed mixed-Erlang claim laws and
//! the penalty functionals used throughout the crate.
//!
//! Every claim-related quantity (tail, integrated tail, the penalty term `A`)
//! is a finite combination of the basis functions
//! `e_{beta,m}(x) = exp(-beta x) (beta x)^m / m!`, which keeps tails, partial
//! integrals and Laplace transforms in closed form.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{self, QuadratureRule};

/// Multiple of the claim mean beyond which claim integrals are truncated.
pub const TAIL_TRUNCATION: f64 = 50.0;

const MASS_TOL: f64 = 1e-12;
const POSITIVITY_GRID: usize = 1024;
const CUSTOM_PANELS: usize = 64;
const CUSTOM_NODES: usize = 16;

/// One Erlang component `coef * Erlang(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangTerm {
    pub coef: f64,
    pub shape: u32,
    pub rate: f64,
}

impl ErlangTerm {
    pub fn new(coef: f64, shape: u32, rate: f64) -> Self {
        Self { coef, shape, rate }
    }
}

/// Linear combination of `coef * exp(-rate x) (rate x)^power / power!`.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ExpPoly {
    terms: Vec<(f64, f64, u32)>,
}

impl ExpPoly {
    fn push(&mut self, coef: f64, rate: f64, power: u32) {
        if coef != 0.0 {
            self.terms.push((coef, rate, power));
        }
    }

    fn extend(&mut self, other: ExpPoly) {
        self.terms.extend(other.terms);
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(coef, rate, power)| coef * erlang_kernel(rate, power, x))
            .sum()
    }

    /// Integral over `[0, inf)`.
    fn total(&self) -> f64 {
        self.terms.iter().map(|&(coef, rate, _)| coef / rate).sum()
    }

    /// `x -> integral of self over [x, inf)`.
    fn tail_integral(&self) -> ExpPoly {
        let mut out = ExpPoly::default();
        for &(coef, rate, power) in &self.terms {
            for i in 0..=power {
                out.push(coef / rate, rate, i);
            }
        }
        out
    }

    /// `x -> x * self(x)`.
    fn times_x(&self) -> ExpPoly {
        let mut out = ExpPoly::default();
        for &(coef, rate, power) in &self.terms {
            out.push(coef * f64::from(power + 1) / rate, rate, power + 1);
        }
        out
    }

    /// Integral of `exp(-s x) self(x)` over `[0, inf)`.
    fn laplace(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(coef, rate, power)| coef * rate.powi(power as i32) / (rate + s).powi(power as i32 + 1))
            .sum()
    }
}

fn erlang_kernel(rate: f64, power: u32, x: f64) -> f64 {
    let bx = rate * x;
    let mut term = (-bx).exp();
    for i in 1..=power {
        term *= bx / f64::from(i);
    }
    term
}

/// Claim-size law given as a signed, unit-mass combination of Erlang densities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimDistribution {
    terms: Vec<ErlangTerm>,
    survival: ExpPoly,
    mean: f64,
}

impl ClaimDistribution {
    pub fn new(terms: Vec<ErlangTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("claim.terms", "at least one Erlang term is required"));
        }
        for t in &terms {
            if t.shape == 0 {
                return Err(invalid("claim.shape", "Erlang shapes must be positive integers"));
            }
            if !(t.rate > 0.0 && t.rate.is_finite()) {
                return Err(invalid("claim.rate", format!("rates must be positive, got {}", t.rate)));
            }
            if !t.coef.is_finite() {
                return Err(invalid("claim.coef", "coefficients must be finite"));
            }
        }
        let mass: f64 = terms.iter().map(|t| t.coef).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(invalid("claim.terms", format!("coefficients sum to {mass}, expected 1")));
        }
        let mut survival = ExpPoly::default();
        for t in &terms {
            for i in 0..t.shape {
                survival.push(t.coef, t.rate, i);
            }
        }
        let mean = survival.total();
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(invalid("claim.terms", format!("mean must be positive, got {mean}")));
        }
        let dist = Self {
            terms,
            survival,
            mean,
        };
        let upper = 20.0 * mean;
        for i in 0..POSITIVITY_GRID {
            let x = upper * i as f64 / (POSITIVITY_GRID - 1) as f64;
            let fx = dist.density_unchecked(x);
            if fx < -1e-14 {
                return Err(invalid(
                    "claim.terms",
                    format!("density is negative ({fx:e}) at x = {x}"),
                ));
            }
        }
        Ok(dist)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![ErlangTerm::new(1.0, 1, rate)])
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self> {
        Self::new(vec![ErlangTerm::new(1.0, shape, rate)])
    }

    /// `3 exp(-1.5x) - 3 exp(-3x)`, the mean-one combination of exponentials.
    pub fn combination_of_exponentials() -> Self {
        Self::new(vec![ErlangTerm::new(2.0, 1, 1.5), ErlangTerm::new(-1.0, 1, 3.0)])
            .expect("valid built-in distribution")
    }

    pub fn terms(&self) -> &[ErlangTerm] {
        &self.terms
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        check_nonnegative(x)?;
        Ok(self.density_unchecked(x).max(0.0))
    }

    pub(crate) fn density_unchecked(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.rate * erlang_kernel(t.rate, t.shape - 1, x))
            .sum()
    }

    /// Tail probability `P(X > x)`.
    pub fn survival(&self, x: f64) -> Result<f64> {
        check_nonnegative(x)?;
        Ok(self.survival_unchecked(x))
    }

    pub(crate) fn survival_unchecked(&self, x: f64) -> f64 {
        self.survival.eval(x).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(1.0 - self.survival(x)?)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k = f64::from(t.shape);
                t.coef * k * (k + 1.0) / (t.rate * t.rate)
            })
            .sum()
    }

    /// Laplace-Stieltjes transform `E[exp(-sX)]`.
    pub fn laplace(&self, s: f64) -> Result<f64> {
        check_nonnegative(s)?;
        Ok(self
            .terms
            .iter()
            .map(|t| t.coef * (t.rate / (t.rate + s)).powi(t.shape as i32))
            .sum())
    }

    /// Transform of the equilibrium (integrated-tail) law, `(1 - f(s)) / (mu s)`.
    pub fn equilibrium_laplace(&self, s: f64) -> Result<f64> {
        check_nonnegative(s)?;
        Ok(self.equilibrium_laplace_unchecked(s))
    }

    pub(crate) fn equilibrium_laplace_unchecked(&self, s: f64) -> f64 {
        // transform of the tail directly; no cancellation near s = 0
        self.survival.laplace(s) / self.mean
    }

    pub(crate) fn survival_poly(&self) -> &ExpPoly {
        &self.survival
    }

    pub(crate) fn truncation_point(&self) -> f64 {
        TAIL_TRUNCATION * self.mean
    }

    /// `E[e^{sX}]`, finite for `s` below the smallest rate.
    pub fn moment_generating(&self, s: f64) -> Option<f64> {
        let min_rate = self.terms.iter().map(|t| t.rate).fold(f64::INFINITY, f64::min);
        (s < min_rate).then(|| {
            self.terms
                .iter()
                .map(|t| t.coef * (t.rate / (t.rate - s)).powi(t.shape as i32))
                .sum()
        })
    }
}

fn check_nonnegative(x: f64) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must be nonnegative, got {x}")))
    }
}

/// Penalty `w(surplus before ruin, deficit at ruin)`.
pub type PenaltyFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PenaltyCase {
    /// `w = 1`, `alpha = 0`.
    RuinProbability,
    /// `w = 1`, discounted.
    LaplaceRuinTime,
    /// `w(x, y) = x + y`.
    ClaimCausingRuin,
    /// `w(x, y) = y`.
    DeficitAtRuin,
    Custom(PenaltyFn),
}

impl PenaltyCase {
    pub fn custom<F: Fn(f64, f64) -> f64 + Send + Sync + 'static>(w: F) -> Self {
        PenaltyCase::Custom(Arc::new(w))
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyCase::RuinProbability => "ruin_probability",
            PenaltyCase::LaplaceRuinTime => "laplace_ruin_time",
            PenaltyCase::ClaimCausingRuin => "claim_causing_ruin",
            PenaltyCase::DeficitAtRuin => "deficit_at_ruin",
            PenaltyCase::Custom(_) => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "ruin_probability" => PenaltyCase::RuinProbability,
            "laplace_ruin_time" => PenaltyCase::LaplaceRuinTime,
            "claim_causing_ruin" => PenaltyCase::ClaimCausingRuin,
            "deficit_at_ruin" => PenaltyCase::DeficitAtRuin,
            _ => return None,
        })
    }

    /// The four named functionals in their conventional order.
    pub fn named() -> [PenaltyCase; 4] {
        [
            PenaltyCase::RuinProbability,
            PenaltyCase::LaplaceRuinTime,
            PenaltyCase::ClaimCausingRuin,
            PenaltyCase::DeficitAtRuin,
        ]
    }

    /// Discount force conventionally paired with the case (0.01 for the ruin-time transform).
    pub fn default_alpha(&self) -> f64 {
        match self {
            PenaltyCase::LaplaceRuinTime => 0.01,
            _ => 0.0,
        }
    }

    pub fn penalty(&self, surplus_before: f64, deficit: f64) -> f64 {
        match self {
            PenaltyCase::RuinProbability | PenaltyCase::LaplaceRuinTime => 1.0,
            PenaltyCase::ClaimCausingRuin => surplus_before + deficit,
            PenaltyCase::DeficitAtRuin => deficit,
            PenaltyCase::Custom(w) => w(surplus_before, deficit),
        }
    }
}

impl fmt::Debug for PenaltyCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Premium rate, claim intensity, interest and discount forces, and the claim law.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    pub c: f64,
    pub lambda: f64,
    pub r: f64,
    pub alpha: f64,
    pub claim: ClaimDistribution,
}

impl RiskModel {
    pub fn new(c: f64, lambda: f64, r: f64, alpha: f64, claim: ClaimDistribution) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("c", format!("premium rate must be positive, got {c}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("claim intensity must be positive, got {lambda}")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(invalid("r", format!("interest force must be nonnegative, got {r}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("discount force must be nonnegative, got {alpha}")));
        }
        let model = Self {
            c,
            lambda,
            r,
            alpha,
            claim,
        };
        if alpha == 0.0 && !model.has_positive_loading() {
            log::warn!(
                "non-positive safety loading: c = {c} <= lambda * mean = {}; unbarriered quantities may be degenerate",
                lambda * model.claim.mean()
            );
        }
        Ok(model)
    }

    /// `c = 1.5, lambda = 1, r = 0.01` with the given discount force and claim law.
    pub fn paper_settings(alpha: f64, claim: ClaimDistribution) -> Self {
        Self::new(1.5, 1.0, 0.01, alpha, claim).expect("valid default parameters")
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.c, self.lambda, self.r, alpha, self.claim.clone())
    }

    pub fn has_positive_loading(&self) -> bool {
        self.c > self.lambda * self.claim.mean()
    }

    /// Lundberg coefficient of the interest-free process: the positive root
    /// of `λ(M(R) - 1) = cR`. Needs positive loading.
    pub fn adjustment_coefficient(&self) -> Option<f64> {
        if !self.has_positive_loading() || self.lambda == 0.0 {
            return None;
        }
        let min_rate = self.claim.terms().iter().map(|t| t.rate).fold(f64::INFINITY, f64::min);
        let g = |s: f64| self.lambda * (self.claim.moment_generating(s).unwrap_or(f64::INFINITY) - 1.0) - self.c * s;
        let (mut lo, mut hi) = (0.0, min_rate);
        // g < 0 just right of zero, g -> +inf at the smallest rate
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo > 0.0).then_some(lo)
    }

    /// The penalty term `A(u)`: expected penalty from a claim that ruins a
    /// surplus `u`.
    pub fn penalty_a(&self, case: &PenaltyCase, u: f64) -> Result<f64> {
        check_nonnegative(u)?;
        match case {
            PenaltyCase::RuinProbability | PenaltyCase::LaplaceRuinTime => {
                Ok(self.claim.survival_unchecked(u))
            }
            PenaltyCase::Custom(w) => self.custom_a(w, u),
            _ => Ok(self.penalty_poly(case).expect("closed form").eval(u).max(0.0)),
        }
    }

    /// Closed form of `A` for the named cases.
    pub(crate) fn penalty_poly(&self, case: &PenaltyCase) -> Option<ExpPoly> {
        let tail = self.claim.survival_poly();
        match case {
            PenaltyCase::RuinProbability | PenaltyCase::LaplaceRuinTime => Some(tail.clone()),
            PenaltyCase::DeficitAtRuin => Some(tail.tail_integral()),
            PenaltyCase::ClaimCausingRuin => {
                let mut a = tail.times_x();
                a.extend(tail.tail_integral());
                Some(a)
            }
            PenaltyCase::Custom(_) => None,
        }
    }

    fn custom_a(&self, w: &PenaltyFn, u: f64) -> Result<f64> {
        let rule = custom_rule();
        let upper = u + self.claim.truncation_point();
        let v = rule.integrate_composite(
            |y| w(u, y - u) * self.claim.density_unchecked(y),
            u,
            upper,
            CUSTOM_PANELS,
        )?;
        Ok(v.max(0.0))
    }

    /// `mu_A`, the integral of `A` over `[0, inf)`.
    pub fn mu_a(&self, case: &PenaltyCase) -> Result<f64> {
        let v = match self.penalty_poly(case) {
            Some(p) => p.total(),
            None => {
                let upper = self.claim.truncation_point();
                custom_rule().integrate_composite(
                    |t| self.penalty_a(case, t).unwrap_or(f64::NAN),
                    0.0,
                    upper,
                    CUSTOM_PANELS,
                )?
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: "mu_A integral".into(),
            });
        }
        Ok(v)
    }

    /// `(1/mu_A) * integral of exp(-s x) A(x) dx`.
    pub fn a1_laplace(&self, case: &PenaltyCase, s: f64) -> Result<f64> {
        check_nonnegative(s)?;
        let mu_a = self.mu_a(case)?;
        if mu_a == 0.0 {
            return Ok(1.0);
        }
        match self.penalty_poly(case) {
            Some(p) => Ok(p.laplace(s) / mu_a),
            None => {
                let upper = self.claim.truncation_point();
                let v = custom_rule().integrate_composite(
                    |t| (-s * t).exp() * self.penalty_a(case, t).unwrap_or(f64::NAN),
                    0.0,
                    upper,
                    CUSTOM_PANELS,
                )?;
                Ok(v / mu_a)
            }
        }
    }

    /// Cumulative integral of `A` over `[0, u]`.
    pub fn penalty_a_integral(&self, case: &PenaltyCase, u: f64) -> Result<f64> {
        check_nonnegative(u)?;
        match self.penalty_poly(case) {
            Some(p) => Ok(p.total() - p.tail_integral().eval(u)),
            None => {
                if u == 0.0 {
                    return Ok(0.0);
                }
                let panels = (u.ceil() as usize).clamp(1, 4 * CUSTOM_PANELS);
                custom_rule().integrate_composite(
                    |t| self.penalty_a(case, t).unwrap_or(f64::NAN),
                    0.0,
                    u,
                    panels,
                )
            }
        }
    }
}

fn custom_rule() -> &'static QuadratureRule {
    static RULE: std::sync::OnceLock<QuadratureRule> = std::sync::OnceLock::new();
    RULE.get_or_init(|| quadrature::gauss_legendre(CUSTOM_NODES).expect("valid node count"))
}
