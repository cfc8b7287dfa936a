//! Gauss-Legendre rules and the integration helpers built on them.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{invalid, Error, Result};

pub const MAX_NODES: usize = 128;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;
const SEMI_INFINITE_NODES: usize = 32;
const SEMI_INFINITE_MAX_PANELS: usize = 60;

/// An `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in strictly increasing order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights affinely mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in self.mapped(a, b) {
            let fx = f(x);
            if !fx.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("integrand at x = {x}"),
                });
            }
            acc += w * fx;
        }
        Ok(acc)
    }

    pub fn integrate_composite<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        a: f64,
        b: f64,
        panels: usize,
    ) -> Result<f64> {
        if panels == 0 {
            return Err(invalid("panels", "must be positive"));
        }
        let width = (b - a) / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let lo = a + width * k as f64;
            let hi = if k + 1 == panels { b } else { lo + width };
            acc += self.integrate(&mut f, lo, hi)?;
        }
        Ok(acc)
    }
}

/// Builds the `n`-point Gauss-Legendre rule by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_NODES {
        return Err(invalid("n", format!("must lie in 1..={MAX_NODES}, got {n}")));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    // roots are symmetric; solve for the upper half and mirror
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                dp = legendre_with_derivative(n, x).1;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn rule_32() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(SEMI_INFINITE_NODES).expect("32 is a valid node count"))
}

/// `n`-point Gauss-Legendre approximation of the integral of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    check_interval(a, b)?;
    gauss_legendre(n)?.integrate(f, a, b)
}

pub fn integrate_composite<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    n: usize,
) -> Result<f64> {
    check_interval(a, b)?;
    gauss_legendre(n)?.integrate_composite(f, a, b, panels)
}

/// Integral of `f` over `[0, inf)` using 32-point panels `[0,1], [1,2], [2,4], ...`.
///
/// Stops once a panel's absolute contribution falls below
/// `tol * (accumulated absolute sum + tol)`.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(mut f: F, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let rule = rule_32();
    let mut value = 0.0;
    let mut abs_sum = 0.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..SEMI_INFINITE_MAX_PANELS {
        let mut panel_abs = 0.0;
        let mut panel = 0.0;
        for (x, w) in rule.mapped(lo, hi) {
            let fx = f(x);
            if !fx.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("semi-infinite integrand at x = {x}"),
                });
            }
            panel += w * fx;
            panel_abs += w * fx.abs();
        }
        value += panel;
        abs_sum += panel_abs;
        if panel_abs < tol * (abs_sum + tol) {
            return Ok(value);
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(Error::Divergence(format!(
        "no convergence within {SEMI_INFINITE_MAX_PANELS} doubling panels"
    )))
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
    }
    Ok(())
}
