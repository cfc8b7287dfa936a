//! Deterministic full-batch minimizers: L-BFGS with a strong Wolfe line
//! search, and Adam.
//!
//! Objectives are closures returning the loss and its gradient together.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub rel_window: usize,
    pub max_iterations: usize,
    /// Accepted steps whose end slope exceeds this fraction of the initial
    /// slope get one extra trial at the interpolated line minimum.
    pub refine_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            grad_tol: 1e-8,
            rel_tol: 1e-12,
            rel_window: 5,
            max_iterations: 5000,
            refine_tol: 1e-8,
        }
    }
}

impl LbfgsConfig {
    fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(invalid("memory", "must be at least 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(invalid("wolfe", "need 0 < c1 < c2 < 1"));
        }
        if self.max_line_search == 0 || self.rel_window == 0 {
            return Err(invalid("lbfgs", "line-search budget and window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 10_000,
        }
    }
}

/// One accepted line-search step: `f_new <= f_old + c1 * alpha * slope` holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedStep {
    pub f_old: f64,
    pub f_new: f64,
    pub alpha: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptReport {
    pub final_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_inf_norm: f64,
    pub converged: bool,
    pub loss_history: Vec<f64>,
    pub steps: Vec<AcceptedStep>,
    pub message: String,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Trial {
    alpha: f64,
    f: f64,
    slope: f64,
    point: Option<Point>,
}

/// Objective wrapper that counts evaluations and maps failures at trial
/// points to `+inf` so the line search backs off.
struct Objective<F> {
    fg: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Objective<F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (f, g) = (self.fg)(x)?;
        if g.len() != x.len() {
            return Err(invalid("gradient", format!("length {} for {} parameters", g.len(), x.len())));
        }
        Ok((f, g))
    }

    fn trial(&mut self, base: &Point, d: &[f64], alpha: f64) -> Trial {
        let x: Vec<f64> = base.x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
        match self.eval(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Trial {
                alpha,
                f,
                slope: dot(&g, d),
                point: Some(Point { x, f, g }),
            },
            _ => Trial {
                alpha,
                f: f64::INFINITY,
                slope: f64::NAN,
                point: None,
            },
        }
    }
}

/// Unsafeguarded minimiser of the cubic matching values and slopes at `a`
/// and `b`.
fn cubic_minimizer(a: &Trial, b: &Trial) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.slope.is_finite() && b.slope.is_finite()) {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Cubic minimiser safeguarded to the inner 80% of the bracket.
fn cubic_step(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = (a.alpha.min(b.alpha), a.alpha.max(b.alpha));
    let width = hi - lo;
    cubic_minimizer(a, b).map_or(0.5 * (lo + hi), |t| t.clamp(lo + 0.1 * width, hi - 0.1 * width))
}

enum Search {
    Accepted(Trial),
    Failed,
}

/// Strong Wolfe search followed by at most one refinement trial at the
/// secant estimate of the line minimiser, kept only if it also satisfies the strong Wolfe
/// conditions and lowers the loss.
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    obj: &mut Objective<F>,
    base: &Point,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Search {
    let t = match strong_wolfe(obj, base, d, slope0, alpha0, cfg) {
        Search::Accepted(t) => t,
        Search::Failed => return Search::Failed,
    };
    if t.slope.abs() <= cfg.refine_tol * slope0.abs() {
        return Search::Accepted(t);
    }
    // Secant on the slopes: uses no function differences, which cancel
    // badly once the loss has nearly stopped changing.
    let alpha = t.alpha * slope0 / (slope0 - t.slope);
    if !(alpha.is_finite() && alpha > 0.0 && alpha <= 10.0 * t.alpha) {
        return Search::Accepted(t);
    }
    let r = obj.trial(base, d, alpha);
    let wolfe = r.f <= base.f + cfg.c1 * r.alpha * slope0 && r.slope.abs() <= -cfg.c2 * slope0;
    if r.point.is_some() && wolfe && r.f < t.f {
        Search::Accepted(r)
    } else {
        Search::Accepted(t)
    }
}

/// Bracketing and zoom strong Wolfe search along `d` from `base`.
fn strong_wolfe<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    obj: &mut Objective<F>,
    base: &Point,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Search {
    let armijo = |t: &Trial| t.f <= base.f + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * slope0;
    let mut best: Option<Trial> = None;
    let note = |t: &Trial, best: &mut Option<Trial>| {
        if t.point.is_some() && armijo(t) && t.f < base.f && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                alpha: t.alpha,
                f: t.f,
                slope: t.slope,
                point: t.point.as_ref().map(|p| Point {
                    x: p.x.clone(),
                    f: p.f,
                    g: p.g.clone(),
                }),
            });
        }
    };

    let mut prev = Trial {
        alpha: 0.0,
        f: base.f,
        slope: slope0,
        point: None,
    };
    let mut alpha = alpha0;
    let mut trials = 0;
    let (mut lo, mut hi);
    loop {
        let t = obj.trial(base, d, alpha);
        trials += 1;
        note(&t, &mut best);
        if !armijo(&t) || (trials > 1 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return Search::Accepted(t);
        }
        if t.slope >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if trials >= cfg.max_line_search {
            return best.map_or(Search::Failed, Search::Accepted);
        }
        alpha = (4.0 * t.alpha).min(cubic_step(&prev, &t).max(1.1 * t.alpha));
        if cubic_step(&prev, &t) <= t.alpha {
            alpha = 2.0 * t.alpha;
        }
        prev = t;
    }

    while trials < cfg.max_line_search {
        let alpha = cubic_step(&lo, &hi);
        let t = obj.trial(base, d, alpha);
        trials += 1;
        note(&t, &mut best);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Search::Accepted(t);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if (hi.alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
            break;
        }
    }
    best.map_or(Search::Failed, Search::Accepted)
}

/// Limited-memory BFGS from `x0`.
///
/// Stops when the gradient's infinity norm drops below `grad_tol`, when the
/// loss improves by less than `rel_tol` (relative) over `rel_window`
/// iterations, or after `max_iterations`. A failed line search clears the
/// curvature memory and retries along the steepest-descent direction; a
/// second consecutive failure stops with `converged = false`.
pub fn lbfgs_minimize<F>(fg: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<(Vec<f64>, OptReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut obj = Objective { fg, evaluations: 0 };
    let (f, g) = obj.eval(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "objective at the starting point".into(),
        });
    }
    let mut cur = Point { x: x0, f, g };
    let mut report = OptReport {
        loss_history: vec![f],
        ..OptReport::default()
    };
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut just_reset = false;

    let finish = |cur: Point, mut report: OptReport, converged: bool, message: &str, evals: usize| {
        report.final_loss = cur.f;
        report.grad_inf_norm = inf_norm(&cur.g);
        report.converged = converged;
        report.message = message.to_string();
        report.evaluations = evals;
        (cur.x, report)
    };

    loop {
        if inf_norm(&cur.g) < cfg.grad_tol {
            return Ok(finish(cur, report, true, "gradient tolerance reached", obj.evaluations));
        }
        let h = &report.loss_history;
        if h.len() > cfg.rel_window {
            let old = h[h.len() - 1 - cfg.rel_window];
            if old - cur.f <= cfg.rel_tol * old.abs() {
                return Ok(finish(cur, report, true, "relative loss decrease below tolerance", obj.evaluations));
            }
        }
        if report.iterations >= cfg.max_iterations {
            return Ok(finish(cur, report, false, "iteration limit reached", obj.evaluations));
        }

        let mut d = two_loop(&cur.g, &pairs);
        let mut slope = dot(&cur.g, &d);
        if !(slope < 0.0) || pairs.is_empty() {
            pairs.clear();
            d = cur.g.iter().map(|g| -g).collect();
            slope = dot(&cur.g, &d);
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / cur.g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let trial = match line_search(&mut obj, &cur, &d, slope, alpha0, cfg) {
            Search::Accepted(t) => t,
            Search::Failed if just_reset || pairs.is_empty() => {
                return Ok(finish(cur, report, false, "line search failed", obj.evaluations));
            }
            Search::Failed => {
                log::debug!("line search failed at iteration {}; resetting memory", report.iterations);
                pairs.clear();
                just_reset = true;
                continue;
            }
        };
        just_reset = false;
        let next = trial.point.expect("accepted trials carry their point");
        report.steps.push(AcceptedStep {
            f_old: cur.f,
            f_new: next.f,
            alpha: trial.alpha,
            slope,
        });
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        cur = next;
        report.iterations += 1;
        report.loss_history.push(cur.f);
    }
}

/// Two-loop recursion: `-H g` for the implicit inverse-Hessian approximation.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= a * yj;
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for v in &mut q {
            *v *= gamma;
        }
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (alphas[i] - b) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Adam with bias correction for a fixed number of iterations. Returns the
/// final iterate.
pub fn adam_minimize<F>(fg: F, x0: Vec<f64>, cfg: &AdamConfig) -> Result<(Vec<f64>, OptReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(cfg.step > 0.0 && (0.0..1.0).contains(&cfg.beta1) && (0.0..1.0).contains(&cfg.beta2) && cfg.eps > 0.0) {
        return Err(invalid("adam", "need step > 0, betas in [0, 1), eps > 0"));
    }
    let mut obj = Objective { fg, evaluations: 0 };
    let mut x = x0;
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut report = OptReport::default();
    let (mut f, mut g) = obj.eval(&x)?;
    report.loss_history.push(f);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for _ in 0..cfg.iterations {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for j in 0..x.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1t);
            let vh = v[j] / (1.0 - b2t);
            x[j] -= cfg.step * mh / (vh.sqrt() + cfg.eps);
        }
        (f, g) = obj.eval(&x)?;
        if !f.is_finite() {
            return Err(Error::NonFinite {
                location: format!("objective at Adam iteration {}", report.iterations + 1),
            });
        }
        report.iterations += 1;
        report.loss_history.push(f);
    }
    report.final_loss = f;
    report.grad_inf_norm = inf_norm(&g);
    report.converged = true;
    report.evaluations = obj.evaluations;
    report.message = "iteration budget used".into();
    Ok((x, report))
}
