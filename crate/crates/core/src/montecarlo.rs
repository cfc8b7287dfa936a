//! Monte Carlo simulation of the surplus process with interest and an
//! optional dividend barrier.
//!
//! Each path draws from its own ChaCha8 stream keyed by `(seed, path_index)`,
//! and paths are reduced in fixed-size blocks in index order, so results do
//! not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::risk_model::{ClaimDistribution, PenaltyCase, RiskModel};

pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_HORIZON: f64 = 2000.0;
pub const DEFAULT_EARLY_STOP_TOL: f64 = 1e-12;
const INVERSION_TOL: f64 = 1e-12;
const BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub horizon: f64,
    pub seed: u64,
    pub barrier: Option<f64>,
    /// Without a barrier, a path is stopped as a survivor once its surplus
    /// `x` satisfies `exp(-R x) <= early_stop_tol` (`R` the Lundberg
    /// coefficient). Zero disables the cut.
    pub early_stop_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            paths: DEFAULT_PATHS,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            barrier: None,
            early_stop_tol: DEFAULT_EARLY_STOP_TOL,
        }
    }
}

impl SimConfig {
    fn validate(&self, u0: f64) -> Result<()> {
        if self.paths == 0 {
            return Err(invalid("paths", "need at least one path"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive, got {}", self.horizon)));
        }
        if !(0.0..1.0).contains(&self.early_stop_tol) {
            return Err(invalid("early_stop_tol", "must lie in [0, 1)"));
        }
        if !(u0 >= 0.0 && u0.is_finite()) {
            return Err(invalid("u0", format!("must be finite and nonnegative, got {u0}")));
        }
        if let Some(b) = self.barrier {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid("barrier", format!("must be positive, got {b}")));
            }
            if u0 > b {
                return Err(invalid("u0", format!("{u0} lies above the barrier {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathOutcome {
    Ruined {
        time: f64,
        surplus_before: f64,
        deficit: f64,
    },
    Survived,
}

/// Surplus after `dt` without claims, starting from `x0`.
pub fn grow(model: &RiskModel, x0: f64, dt: f64, barrier: Option<f64>) -> f64 {
    let (c, r) = (model.c, model.r);
    if let Some(b) = barrier {
        if x0 >= b {
            return b;
        }
        let hit = if r == 0.0 {
            (b - x0) / c
        } else {
            ((b + c / r) / (x0 + c / r)).ln() / r
        };
        if dt >= hit {
            return b;
        }
    }
    if r == 0.0 {
        x0 + c * dt
    } else {
        (x0 + c / r) * (r * dt).exp() - c / r
    }
}

/// Draws claim sizes by bisection on the survival function.
#[derive(Debug, Clone)]
pub struct ClaimSampler {
    claim: ClaimDistribution,
    upper: f64,
}

impl ClaimSampler {
    pub fn new(claim: &ClaimDistribution) -> Self {
        Self {
            claim: claim.clone(),
            upper: claim.truncation_point(),
        }
    }

    /// Solves `P(X > x) = v` for `v` in `(0, 1]`.
    pub fn invert(&self, v: f64) -> f64 {
        let mut hi = self.upper;
        while self.claim.survival_unchecked(hi) > v && hi < 1e6 * self.upper {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        while hi - lo > INVERSION_TOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.claim.survival_unchecked(mid) > v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // open interval (0, 1]: avoids the infinite quantile at 0
        let v = 1.0 - rng.random::<f64>();
        self.invert(v)
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Everything a path needs that does not depend on the path.
struct Simulator<'a> {
    model: &'a RiskModel,
    config: &'a SimConfig,
    sampler: ClaimSampler,
    safe_level: f64,
}

impl<'a> Simulator<'a> {
    fn new(model: &'a RiskModel, config: &'a SimConfig) -> Self {
        let safe_level = match (config.barrier, model.adjustment_coefficient()) {
            (None, Some(r)) if config.early_stop_tol > 0.0 => -config.early_stop_tol.ln() / r,
            _ => f64::INFINITY,
        };
        Self {
            model,
            config,
            sampler: ClaimSampler::new(&model.claim),
            safe_level,
        }
    }

    fn run(&self, u0: f64, index: u64) -> PathOutcome {
        let model = self.model;
        if model.lambda == 0.0 {
            return PathOutcome::Survived;
        }
        let mut rng = path_rng(self.config.seed, index);
        let mut x = u0;
        let mut t = 0.0;
        loop {
            let wait: f64 = rng.sample::<f64, _>(Exp1) / model.lambda;
            if t + wait > self.config.horizon {
                return PathOutcome::Survived;
            }
            t += wait;
            x = grow(model, x, wait, self.config.barrier);
            let y = self.sampler.sample(&mut rng);
            if y > x {
                return PathOutcome::Ruined {
                    time: t,
                    surplus_before: x,
                    deficit: y - x,
                };
            }
            x -= y;
            if x >= self.safe_level {
                return PathOutcome::Survived;
            }
        }
    }
}

pub fn simulate_path(model: &RiskModel, u0: f64, config: &SimConfig, path_index: u64) -> Result<PathOutcome> {
    config.validate(u0)?;
    Ok(Simulator::new(model, config).run(u0, path_index))
}

/// A Gerber-Shiu functional: penalty plus discount rate.
#[derive(Debug, Clone)]
pub struct Functional {
    pub case: PenaltyCase,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub paths: usize,
    pub ruined: usize,
    pub horizon: f64,
    /// `exp(-α T_max)` for α > 0: bounds the discount on any ruin after the
    /// horizon.
    pub horizon_bias_bound: Option<f64>,
    pub notes: Vec<String>,
}

/// Running `(count, mean, M2)`, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }
}

/// Estimates several functionals from one set of simulated paths.
pub fn estimate_many(
    model: &RiskModel,
    functionals: &[Functional],
    u0: f64,
    config: &SimConfig,
) -> Result<Vec<Estimate>> {
    config.validate(u0)?;
    for f in functionals {
        if !(f.alpha >= 0.0 && f.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be finite and nonnegative, got {}", f.alpha)));
        }
    }
    let sim = Simulator::new(model, config);
    let k = functionals.len();
    let blocks: Vec<(Vec<Moments>, usize)> = (0..config.paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Moments::default(); k];
            let mut ruined = 0;
            for i in b * BLOCK..((b + 1) * BLOCK).min(config.paths) {
                let outcome = sim.run(u0, i as u64);
                if matches!(outcome, PathOutcome::Ruined { .. }) {
                    ruined += 1;
                }
                for (m, f) in acc.iter_mut().zip(functionals) {
                    m.push(match outcome {
                        PathOutcome::Ruined {
                            time,
                            surplus_before,
                            deficit,
                        } => (-f.alpha * time).exp() * f.case.penalty(surplus_before, deficit),
                        PathOutcome::Survived => 0.0,
                    });
                }
            }
            (acc, ruined)
        })
        .collect();

    let mut totals = vec![Moments::default(); k];
    let mut ruined = 0;
    for (acc, r) in blocks {
        ruined += r;
        for (t, m) in totals.iter_mut().zip(acc) {
            *t = t.merge(m);
        }
    }
    let n = config.paths as f64;
    Ok(functionals
        .iter()
        .zip(totals)
        .map(|(f, m)| {
            let variance = if config.paths > 1 { m.m2 / (n - 1.0) } else { 0.0 };
            let mut notes = Vec::new();
            if config.barrier.is_none() && f.alpha == 0.0 {
                notes.push(format!(
                    "undiscounted: ruin after the horizon {} is not counted and the bias is not bounded",
                    config.horizon
                ));
            }
            if sim.safe_level.is_finite() {
                notes.push(format!(
                    "paths reaching surplus {:.6} stop as survivors (Lundberg bound {:e})",
                    sim.safe_level, config.early_stop_tol
                ));
            }
            Estimate {
                value: m.mean,
                std_error: (variance.max(0.0) / n).sqrt(),
                paths: config.paths,
                ruined,
                horizon: config.horizon,
                horizon_bias_bound: (f.alpha > 0.0).then(|| (-f.alpha * config.horizon).exp()),
                notes,
            }
        })
        .collect())
}

pub fn estimate(model: &RiskModel, case: &PenaltyCase, u0: f64, config: &SimConfig) -> Result<Estimate> {
    let functional = Functional {
        case: case.clone(),
        alpha: model.alpha,
    };
    Ok(estimate_many(model, &[functional], u0, config)?.remove(0))
}
