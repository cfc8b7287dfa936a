//! Reference solver based on the second-kind Volterra form of the
//! integro-differential equation.
//!
//! Without a barrier,
//!
//! ```text
//! Phi(u) = c Phi(0)/(c + r u) - lambda/(c + r u) int_0^u A + int_0^u k(u,t) Phi(t) dt
//! k(u,t) = (r + alpha + lambda Fbar(u - t)) / (c + r u)
//! ```
//!
//! is marched forward with product trapezoidal weights on `N` and `2N` steps and
//! Richardson extrapolated, giving a fourth-order table. The barrier solution is
//! `Phi_b = Phi_inf - Phi_inf'(b)/h'(b) * h` where `h` solves the homogeneous
//! equation with `h(0) = 1`.

use crate::error::{invalid, Error, Result};
use crate::initial_value;
use crate::quadrature;
use crate::risk_model::{PenaltyCase, RiskModel};
use crate::table::SolutionTable;

pub const DEFAULT_U_MAX: f64 = 30.0;
pub const DEFAULT_INTERVALS: usize = 3000;
pub const MIN_INTERVALS: usize = 16;

const RESCALE_THRESHOLD: f64 = 1e280;
const MIN_DIAGONAL: f64 = 1e-8;

fn check_grid(u_max: f64, intervals: usize) -> Result<()> {
    if !(u_max > 0.0 && u_max.is_finite()) {
        return Err(invalid("u_max", format!("must be positive, got {u_max}")));
    }
    if intervals < MIN_INTERVALS {
        return Err(invalid(
            "intervals",
            format!("at least {MIN_INTERVALS} grid intervals required, got {intervals}"),
        ));
    }
    Ok(())
}

/// Forward Nystrom march for `phi = g + int_0^u k phi`; returns values and log scale.
fn march(model: &RiskModel, u: &[f64], start: f64, g: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = u.len();
    let h = u[1] - u[0];
    let tail: Vec<f64> = u.iter().map(|&x| model.claim.survival_unchecked(x)).collect();
    let ra = model.r + model.alpha;
    let lambda = model.lambda;

    let mut phi = vec![0.0; n];
    phi[0] = start;
    let mut log_scale = 0.0;
    let mut g_factor = 1.0;
    // sum of phi[1..j]
    let mut running = 0.0;
    for j in 1..n {
        let denom = model.c + model.r * u[j];
        let diag = 1.0 - 0.5 * h * (ra + lambda) / denom;
        if diag <= MIN_DIAGONAL {
            return Err(Error::StepSize { u: u[j], factor: diag });
        }
        let mut conv = 0.5 * tail[j] * phi[0];
        for i in 1..j {
            conv += tail[j - i] * phi[i];
        }
        let integral = ra * (0.5 * phi[0] + running) + lambda * conv;
        let value = (g[j] * g_factor + h * integral / denom) / diag;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: format!("Volterra march at u = {}", u[j]),
            });
        }
        phi[j] = value;
        running += value;
        if value.abs() > RESCALE_THRESHOLD {
            let k = 1.0 / value.abs();
            for p in &mut phi[..=j] {
                *p *= k;
            }
            running *= k;
            g_factor *= k;
            log_scale -= k.ln();
        }
    }
    Ok((phi, log_scale))
}

/// Cumulative integrals of `A` at the grid points.
fn penalty_integrals(model: &RiskModel, case: &PenaltyCase, u: &[f64]) -> Result<Vec<f64>> {
    if model.penalty_poly(case).is_some() {
        return u.iter().map(|&x| model.penalty_a_integral(case, x)).collect();
    }
    let rule = quadrature::gauss_legendre(4)?;
    let mut out = Vec::with_capacity(u.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in u.windows(2) {
        acc += rule.integrate(|t| model.penalty_a(case, t).unwrap_or(f64::NAN), w[0], w[1])?;
        out.push(acc);
    }
    Ok(out)
}

/// Trapezoidal march on `intervals` and `2 * intervals` steps, Richardson
/// extrapolated back onto the coarse grid.
fn march_extrapolated(
    model: &RiskModel,
    u_max: f64,
    intervals: usize,
    start: f64,
    forcing: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<SolutionTable> {
    let coarse_u = SolutionTable::uniform_grid(u_max, intervals);
    let fine_u = SolutionTable::uniform_grid(u_max, 2 * intervals);
    let (coarse, coarse_scale) = march(model, &coarse_u, start, &forcing(&coarse_u)?)?;
    let (fine, fine_scale) = march(model, &fine_u, start, &forcing(&fine_u)?)?;
    // bring both onto a common scale before combining
    let log_scale = coarse_scale.max(fine_scale);
    let ca = (coarse_scale - log_scale).exp();
    let fa = (fine_scale - log_scale).exp();
    let phi: Vec<f64> = coarse
        .iter()
        .enumerate()
        .map(|(j, &p)| (4.0 * fine[2 * j] * fa - p * ca) / 3.0)
        .collect();
    let mut table = SolutionTable::new(coarse_u, phi)?;
    table.log_scale = log_scale;
    Ok(table)
}

/// Unbarriered penalty function on `[0, u_max]` given its value at zero.
pub fn solve_phi_infinity(
    model: &RiskModel,
    case: &PenaltyCase,
    phi0: f64,
    u_max: f64,
    intervals: usize,
) -> Result<SolutionTable> {
    check_grid(u_max, intervals)?;
    march_extrapolated(model, u_max, intervals, phi0, |u| {
        let ia = penalty_integrals(model, case, u)?;
        Ok(u.iter()
            .zip(&ia)
            .map(|(&x, &a)| (model.c * phi0 - model.lambda * a) / (model.c + model.r * x))
            .collect())
    })
}

/// Homogeneous solution with `h(0) = 1`; may carry a nonzero `log_scale`.
pub fn solve_h(model: &RiskModel, u_max: f64, intervals: usize) -> Result<SolutionTable> {
    check_grid(u_max, intervals)?;
    march_extrapolated(model, u_max, intervals, 1.0, |u| {
        Ok(u.iter().map(|&x| model.c / (model.c + model.r * x)).collect())
    })
}

/// Integral over `[0, u_j]` of samples `g[0..=j]` on a uniform grid: trapezoid
/// with Gregory end corrections (fourth order) once five samples exist.
fn gregory(g: &[f64], h: f64) -> f64 {
    let j = g.len() - 1;
    if j == 0 {
        return 0.0;
    }
    let trap = h * (0.5 * (g[0] + g[j]) + g[1..j].iter().sum::<f64>());
    if j < 4 {
        return trap;
    }
    let d1 = (g[1] - g[0]) - (g[j] - g[j - 1]);
    let d2 = (g[2] - 2.0 * g[1] + g[0]) + (g[j] - 2.0 * g[j - 1] + g[j - 2]);
    trap + h / 12.0 * d1 - h / 24.0 * d2
}

/// Fills `dphi` from the integro-differential equation itself.
///
/// `case = None` treats the table as a homogeneous solution (`A = 0`).
pub fn derivative_from_ide(
    model: &RiskModel,
    case: Option<&PenaltyCase>,
    table: &SolutionTable,
) -> Result<SolutionTable> {
    let h = table
        .uniform_step()
        .ok_or_else(|| Error::Domain("derivative needs a uniform grid starting at 0".into()))?;
    let phi = &table.phi;
    let n = phi.len();
    let dens: Vec<f64> = table
        .u
        .iter()
        .map(|&x| model.claim.density_unchecked(x))
        .collect();
    let scale = (-table.log_scale).exp();
    let mut dphi = vec![0.0; n];
    let mut samples = Vec::with_capacity(n);
    for j in 0..n {
        samples.clear();
        samples.extend((0..=j).map(|i| phi[j - i] * dens[i]));
        let conv = gregory(&samples, h);
        let a = match case {
            Some(c) => model.penalty_a(c, table.u[j])? * scale,
            None => 0.0,
        };
        dphi[j] = ((model.alpha + model.lambda) * phi[j] - model.lambda * conv - model.lambda * a)
            / (model.r * table.u[j] + model.c);
    }
    let mut out = table.clone();
    out.dphi = Some(dphi);
    Ok(out)
}

/// `Phi_b = Phi_inf - Phi_inf'(b)/h'(b) * h` on a shared grid ending at `b`.
pub fn combine_barrier(
    model: &RiskModel,
    case: &PenaltyCase,
    b: f64,
    phi_inf: &SolutionTable,
    h: &SolutionTable,
) -> Result<SolutionTable> {
    if phi_inf.u != h.u {
        return Err(Error::Domain("tables must share the same grid".into()));
    }
    let last = phi_inf.len() - 1;
    if (phi_inf.u[last] - b).abs() > 1e-12 * b.max(1.0) {
        return Err(Error::Domain(format!(
            "barrier {b} must equal the last grid point {}",
            phi_inf.u[last]
        )));
    }
    let phi_inf = match &phi_inf.dphi {
        Some(_) => phi_inf.clone(),
        None => derivative_from_ide(model, Some(case), phi_inf)?,
    };
    let h = match &h.dphi {
        Some(_) => h.clone(),
        None => derivative_from_ide(model, None, h)?,
    };
    if phi_inf.log_scale != 0.0 {
        return Err(Error::Domain("unbarriered table must be unscaled".into()));
    }
    let dphi_inf = phi_inf.dphi.as_ref().expect("filled above");
    let dh = h.dphi.as_ref().expect("filled above");
    if dh[last] == 0.0 || !dh[last].is_finite() {
        return Err(Error::DegenerateDecomposition(dh[last]));
    }
    // ratio is invariant to the stored scale of h
    let coef = dphi_inf[last] / dh[last];
    let phi: Vec<f64> = phi_inf
        .phi
        .iter()
        .zip(&h.phi)
        .map(|(p, q)| p - coef * q)
        .collect();
    let dphi: Vec<f64> = dphi_inf.iter().zip(dh).map(|(p, q)| p - coef * q).collect();
    let mut out = SolutionTable::new(phi_inf.u.clone(), phi)?;
    out.dphi = Some(dphi);
    Ok(out)
}

/// Unbarriered solution with the initial value computed automatically.
pub fn solve_no_barrier(
    model: &RiskModel,
    case: &PenaltyCase,
    u_max: f64,
    intervals: usize,
) -> Result<SolutionTable> {
    let phi0 = initial_value::anchor_value(model, case)?;
    let table = solve_phi_infinity(model, case, phi0, u_max, intervals)?;
    derivative_from_ide(model, Some(case), &table)
}

/// Barrier solution on `[0, b]`.
pub fn solve_barrier(
    model: &RiskModel,
    case: &PenaltyCase,
    b: f64,
    intervals: usize,
) -> Result<SolutionTable> {
    let phi_inf = solve_no_barrier(model, case, b, intervals)?;
    let h = derivative_from_ide(model, None, &solve_h(model, b, intervals)?)?;
    combine_barrier(model, case, b, &phi_inf, &h)
}
