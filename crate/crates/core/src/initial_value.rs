//! Exact value of the unbarriered penalty function at zero surplus.
//!
//! With `p = alpha / r` and `I(v) = lambda mu int_0^v f1(r s) ds`, where `f1` is
//! the transform of the equilibrium claim law,
//!
//! ```text
//! kappa   = c int_0^inf v^p exp(-c v + I(v)) dv
//! Phi(0)  = (lambda mu_A / kappa) int_0^inf a1(r v) v^p exp(-c v + I(v)) dv
//! ```
//!
//! The log-integrand `p ln v - c v + I(v)` is concave, so both integrals are
//! evaluated relative to its maximum to stay finite for large `p`.

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadratureRule};
use crate::risk_model::{PenaltyCase, RiskModel};

pub const DEFAULT_TOL: f64 = 1e-12;

const TABLE_INTERVALS: usize = 256;
const LOCAL_NODES: usize = 16;
/// Integrand is cut where it falls below `exp(-LOG_CUTOFF)` of its peak.
const LOG_CUTOFF: f64 = 80.0;
const HEAD_PANELS: usize = 64;

/// Cumulative table of `I(v) = lambda mu int_0^v f1(r s) ds`.
#[derive(Debug, Clone)]
pub struct InnerIntegralTable {
    model: RiskModel,
    step: f64,
    knots: Vec<f64>,
    rule: QuadratureRule,
}

impl InnerIntegralTable {
    fn build(model: &RiskModel, extent: f64) -> Result<Self> {
        let rule = quadrature::gauss_legendre(LOCAL_NODES)?;
        let step = extent / TABLE_INTERVALS as f64;
        let mut table = Self {
            model: model.clone(),
            step,
            knots: Vec::with_capacity(TABLE_INTERVALS + 1),
            rule,
        };
        let mut acc = 0.0;
        table.knots.push(acc);
        for k in 0..TABLE_INTERVALS {
            let lo = step * k as f64;
            acc += table.segment(lo, lo + step);
            table.knots.push(acc);
        }
        Ok(table)
    }

    fn integrand(&self, s: f64) -> f64 {
        let m = &self.model;
        m.lambda * m.claim.mean() * m.claim.equilibrium_laplace_unchecked(m.r * s)
    }

    fn segment(&self, a: f64, b: f64) -> f64 {
        self.rule
            .mapped(a, b)
            .map(|(x, w)| w * self.integrand(x))
            .sum()
    }

    /// Knot abscissae and cumulative values.
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots
            .iter()
            .enumerate()
            .map(|(k, &v)| (self.step * k as f64, v))
    }

    pub fn value(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        let last = self.knots.len() - 1;
        let k = ((v / self.step).floor() as usize).min(last);
        let base = self.step * k as f64;
        if k < last {
            return self.knots[k] + self.segment(base, v);
        }
        // beyond the table: continue in table-sized steps
        let mut acc = self.knots[last];
        let mut lo = base;
        while lo + self.step < v {
            acc += self.segment(lo, lo + self.step);
            lo += self.step;
        }
        acc + self.segment(lo, v)
    }
}

#[derive(Debug, Clone)]
pub struct InitialValueResult {
    /// Value of the unbarriered penalty function at `u = 0`.
    pub phi0: f64,
    pub kappa: f64,
    /// `ln kappa`, finite even when `kappa` overflows.
    pub log_kappa: f64,
    pub inner_grid: InnerIntegralTable,
}

/// Shifted log-integrand `p ln v - c v + I(v) - shift`.
struct Integrand<'a> {
    table: &'a InnerIntegralTable,
    power: f64,
    c: f64,
    shift: f64,
}

impl Integrand<'_> {
    fn log_value(&self, v: f64) -> f64 {
        let pow_term = if self.power == 0.0 {
            0.0
        } else if v <= 0.0 {
            return f64::NEG_INFINITY;
        } else {
            self.power * v.ln()
        };
        pow_term - self.c * v + self.table.value(v) - self.shift
    }

    fn weight(&self, v: f64) -> f64 {
        self.log_value(v).exp()
    }
}

fn check_model(model: &RiskModel) -> Result<()> {
    if !(model.r > 0.0) {
        return Err(Error::Unsupported(
            "the exact initial value requires an interest force r > 0".into(),
        ));
    }
    if model.alpha == 0.0 && !model.has_positive_loading() {
        return Err(Error::Divergence(format!(
            "alpha = 0 with c = {} <= lambda * mean = {}",
            model.c,
            model.lambda * model.claim.mean()
        )));
    }
    Ok(())
}

/// Location of the maximum of the concave log-integrand.
fn mode(model: &RiskModel, power: f64) -> f64 {
    let lam_mu = model.lambda * model.claim.mean();
    let slope = |v: f64| {
        let p = if power == 0.0 { 0.0 } else { power / v };
        p - model.c + lam_mu * model.claim.equilibrium_laplace_unchecked(model.r * v)
    };
    if power == 0.0 && slope(0.0) <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while slope(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Point beyond the mode where the integrand has decayed by `exp(-LOG_CUTOFF)`.
fn extent(model: &RiskModel, power: f64, peak: f64) -> Result<f64> {
    // provisional table with a generous span, refined by doubling
    let mut span = (peak * 4.0).max(64.0 / model.c);
    for _ in 0..40 {
        let table = InnerIntegralTable::build(model, span)?;
        let f = Integrand {
            table: &table,
            power,
            c: model.c,
            shift: 0.0,
        };
        let top = f.log_value(peak);
        if f.log_value(span) < top - LOG_CUTOFF {
            return Ok(span);
        }
        span *= 2.0;
    }
    Err(Error::Divergence("integrand does not decay".into()))
}

pub fn initial_value(model: &RiskModel, case: &PenaltyCase) -> Result<InitialValueResult> {
    initial_value_with_tol(model, case, DEFAULT_TOL)
}

pub fn initial_value_with_tol(
    model: &RiskModel,
    case: &PenaltyCase,
    tol: f64,
) -> Result<InitialValueResult> {
    check_model(model)?;
    let power = model.alpha / model.r;
    let peak = mode(model, power);
    let span = extent(model, power, peak)?;
    let table = InnerIntegralTable::build(model, span)?;
    let mut f = Integrand {
        table: &table,
        power,
        c: model.c,
        shift: 0.0,
    };
    f.shift = f.log_value(peak);

    let head_rule = quadrature::gauss_legendre(32)?;
    let integrate = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let head = if peak > 0.0 {
            head_rule.integrate_composite(g, 0.0, peak, HEAD_PANELS)?
        } else {
            0.0
        };
        let tail = quadrature::integrate_semi_infinite(|t| g(peak + t), tol)?;
        Ok(head + tail)
    };

    let base = integrate(&|v| f.weight(v))?;
    let log_kappa = model.c.ln() + f.shift + base.ln();
    let kappa = log_kappa.exp();

    let mu_a = model.mu_a(case)?;
    let phi0 = if mu_a == 0.0 {
        0.0
    } else {
        let weighted = integrate(&|v| {
            model.a1_laplace(case, model.r * v).unwrap_or(f64::NAN) * f.weight(v)
        })?;
        model.lambda * mu_a * weighted / (model.c * base)
    };
    if !phi0.is_finite() || !log_kappa.is_finite() {
        return Err(Error::NonFinite {
            location: "initial value quadrature".into(),
        });
    }
    Ok(InitialValueResult {
        phi0,
        kappa,
        log_kappa,
        inner_grid: table,
    })
}

pub fn kappa(model: &RiskModel) -> Result<f64> {
    Ok(initial_value(model, &PenaltyCase::RuinProbability)?.kappa)
}

pub fn phi_infinity_at_zero(model: &RiskModel, case: &PenaltyCase) -> Result<f64> {
    Ok(initial_value(model, case)?.phi0)
}

/// `lambda mu_A / c`, the value at zero for `r = alpha = 0`.
pub fn classical_zero_value(model: &RiskModel, case: &PenaltyCase) -> Result<f64> {
    if model.r != 0.0 || model.alpha != 0.0 {
        return Err(Error::Unsupported(
            "the classical zero value needs r = 0 and alpha = 0".into(),
        ));
    }
    if !model.has_positive_loading() {
        return Err(Error::Divergence("positive safety loading c > lambda * mean required".into()));
    }
    Ok(model.lambda * model.mu_a(case)? / model.c)
}

/// Initial value for any supported parameter combination.
pub fn anchor_value(model: &RiskModel, case: &PenaltyCase) -> Result<f64> {
    if model.r > 0.0 {
        phi_infinity_at_zero(model, case)
    } else if model.alpha == 0.0 {
        classical_zero_value(model, case)
    } else {
        Err(Error::Unsupported(
            "no formula for the initial value with r = 0 and alpha > 0".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_model::ClaimDistribution;

    fn exp1() -> ClaimDistribution {
        ClaimDistribution::exponential(1.0).unwrap()
    }

    fn densities() -> Vec<ClaimDistribution> {
        vec![
            exp1(),
            ClaimDistribution::erlang(2, 2.0).unwrap(),
            ClaimDistribution::combination_of_exponentials(),
        ]
    }

    /// Brute-force trapezoid evaluation of kappa, independent of the table.
    fn kappa_trapezoid(model: &RiskModel, upper: f64, steps: usize) -> f64 {
        let h = upper / steps as f64;
        let p = model.alpha / model.r;
        let lam_mu = model.lambda * model.claim.mean();
        let inner = |s: f64| lam_mu * model.claim.equilibrium_laplace(model.r * s).unwrap();
        let mut cum = 0.0;
        let mut total = 0.0;
        let mut prev_inner = inner(0.0);
        for j in 0..=steps {
            let v = h * j as f64;
            if j > 0 {
                let cur = inner(v);
                cum += 0.5 * h * (prev_inner + cur);
                prev_inner = cur;
            }
            let g = if p == 0.0 { 1.0 } else { v.powf(p) } * (-model.c * v + cum).exp();
            let wt = if j == 0 || j == steps { 0.5 } else { 1.0 };
            total += wt * h * g;
        }
        model.c * total
    }

    #[test]
    fn kappa_small_lambda_matches_gamma_integral() {
        // c * Gamma(1 + p) / c^(1 + p) with p = alpha / r
        for (alpha, r, gamma) in [(0.01, 0.01, 1.0), (0.02, 0.01, 2.0), (0.0, 0.01, 1.0), (0.03, 0.01, 6.0)] {
            let m = RiskModel::new(1.5, 1e-12, r, alpha, exp1()).unwrap();
            let p: f64 = alpha / r;
            let expected = 1.5 * gamma / 1.5f64.powf(1.0 + p);
            let k = kappa(&m).unwrap();
            assert!((k - expected).abs() / expected < 1e-9, "alpha={alpha}: {k} vs {expected}");
        }
    }

    #[test]
    fn kappa_matches_trapezoid_oracle() {
        let m = RiskModel::new(1.5, 1.0, 0.01, 0.01, exp1()).unwrap();
        let k = kappa(&m).unwrap();
        let oracle = kappa_trapezoid(&m, 200.0, 400_000);
        assert!((k - oracle).abs() / oracle < 1e-6, "{k} vs {oracle}");
    }

    #[test]
    fn kappa_is_stable_in_tolerance() {
        for d in densities() {
            let m = RiskModel::paper_settings(0.01, d);
            let a = initial_value_with_tol(&m, &PenaltyCase::RuinProbability, 1e-12).unwrap();
            let b = initial_value_with_tol(&m, &PenaltyCase::RuinProbability, 1e-10).unwrap();
            assert!((a.kappa - b.kappa).abs() / a.kappa < 1e-8);
            assert!(a.kappa > 0.0);
        }
    }

    #[test]
    fn small_interest_recovers_classical_value() {
        for d in densities() {
            for case in PenaltyCase::named() {
                let m = RiskModel::new(1.5, 1.0, 1e-4, 0.0, d.clone()).unwrap();
                let phi0 = phi_infinity_at_zero(&m, &case).unwrap();
                let classical =
                    classical_zero_value(&m.with_alpha(0.0).unwrap().clone_with_r(0.0), &case).unwrap();
                assert!(
                    (phi0 - classical).abs() / classical <= 1e-3,
                    "{case:?}: {phi0} vs {classical}"
                );
            }
        }
    }

    #[test]
    fn classical_values() {
        let m = RiskModel::new(1.5, 1.0, 0.0, 0.0, exp1()).unwrap();
        assert!((classical_zero_value(&m, &PenaltyCase::RuinProbability).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((classical_zero_value(&m, &PenaltyCase::DeficitAtRuin).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let m = RiskModel::new(1.5, 1.0, 0.0, 0.0, ClaimDistribution::erlang(2, 2.0).unwrap()).unwrap();
        assert!((classical_zero_value(&m, &PenaltyCase::ClaimCausingRuin).unwrap() - 1.0).abs() < 1e-15);
        let m = RiskModel::new(1.5, 1.0, 0.01, 0.0, exp1()).unwrap();
        assert!(classical_zero_value(&m, &PenaltyCase::RuinProbability).is_err());
    }

    #[test]
    fn rejects_unsupported_parameters() {
        let m = RiskModel::new(1.5, 1.0, 0.0, 0.01, exp1()).unwrap();
        assert!(matches!(kappa(&m), Err(Error::Unsupported(_))));
        assert!(matches!(anchor_value(&m, &PenaltyCase::LaplaceRuinTime), Err(Error::Unsupported(_))));
        let m = RiskModel::new(0.9, 1.0, 0.01, 0.0, exp1()).unwrap();
        assert!(matches!(kappa(&m), Err(Error::Divergence(_))));
    }

    #[test]
    fn zero_penalty_gives_zero() {
        let m = RiskModel::paper_settings(0.01, exp1());
        let v = phi_infinity_at_zero(&m, &PenaltyCase::custom(|_, _| 0.0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ruin_probability_in_unit_interval() {
        for d in densities() {
            let m = RiskModel::paper_settings(0.0, d);
            let v = phi_infinity_at_zero(&m, &PenaltyCase::RuinProbability).unwrap();
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn discounting_lowers_ruin_time_transform() {
        for d in densities() {
            let mut last = f64::INFINITY;
            for alpha in [0.0, 0.005, 0.01, 0.02] {
                let m = RiskModel::paper_settings(alpha, d.clone());
                let v = phi_infinity_at_zero(&m, &PenaltyCase::LaplaceRuinTime).unwrap();
                assert!(v <= last + 1e-14 && v <= 1.0, "alpha={alpha}: {v} > {last}");
                last = v;
            }
        }
    }

    #[test]
    fn inner_table_is_nondecreasing() {
        let m = RiskModel::paper_settings(0.01, exp1());
        let res = initial_value(&m, &PenaltyCase::RuinProbability).unwrap();
        let knots: Vec<_> = res.inner_grid.knots().collect();
        assert!(knots.windows(2).all(|w| w[0].1 <= w[1].1));
        let (v, i) = knots[100];
        assert!((res.inner_grid.value(v) - i).abs() < 1e-12);
    }

    trait WithR {
        fn clone_with_r(&self, r: f64) -> RiskModel;
    }

    impl WithR for RiskModel {
        fn clone_with_r(&self, r: f64) -> RiskModel {
            RiskModel::new(self.c, self.lambda, r, self.alpha, self.claim.clone()).unwrap()
        }
    }
}
