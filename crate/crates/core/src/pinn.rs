//! Physics-informed network solver for the Gerber-Shiu equation
//!
//! ```text
//! 0 = -(α+λ)Φ(u) + (ru + c)Φ'(u) + λ∫₀ᵘ f(u-y)Φ(y)dy + λA(u)
//! ```
//!
//! on `[0, u_max]` anchored at `Φ(0) = Φ_∞(0)`, or on `[0, b]` with
//! `Φ'(b) = 0` under a dividend barrier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::initial_value::anchor_value;
use crate::network::{self, loss_gradient, Mlp, PointFunctional, DEFAULT_LAYERS};
use crate::optimizer::{adam_minimize, lbfgs_minimize, AdamConfig, LbfgsConfig, OptReport};
use crate::quadrature::gauss_legendre;
use crate::risk_model::{PenaltyCase, RiskModel};
use crate::table::SolutionTable;

pub const DEFAULT_RESIDUAL_POINTS: usize = 256;
pub const DEFAULT_QUAD_NODES: usize = 32;
pub const DEFAULT_U_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// No barrier on `[0, u_max]`, anchored at `Φ(0) = anchor`.
    NoBarrier { u_max: f64, anchor: f64 },
    /// Dividend barrier at `b`, with `Φ'(b) = 0`.
    Barrier { b: f64 },
}

impl Domain {
    pub fn upper(&self) -> f64 {
        match *self {
            Domain::NoBarrier { u_max, .. } => u_max,
            Domain::Barrier { b } => b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub model: RiskModel,
    pub case: PenaltyCase,
    pub domain: Domain,
}

impl ProblemSpec {
    /// No-barrier problem with the anchor computed from the model.
    pub fn no_barrier(model: RiskModel, case: PenaltyCase, u_max: f64) -> Result<Self> {
        let anchor = anchor_value(&model, &case)?;
        Self::with_domain(model, case, Domain::NoBarrier { u_max, anchor })
    }

    pub fn barrier(model: RiskModel, case: PenaltyCase, b: f64) -> Result<Self> {
        Self::with_domain(model, case, Domain::Barrier { b })
    }

    pub fn with_domain(model: RiskModel, case: PenaltyCase, domain: Domain) -> Result<Self> {
        let upper = domain.upper();
        if !(upper.is_finite() && upper > 0.0) {
            return Err(invalid("domain", format!("upper end must be positive and finite, got {upper}")));
        }
        if let Domain::NoBarrier { anchor, .. } = domain {
            if !anchor.is_finite() {
                return Err(invalid("anchor", "must be finite"));
            }
        }
        Ok(Self { model, case, domain })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Equispaced,
    UniformRandom(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerChoice {
    Lbfgs(LbfgsConfig),
    Adam(AdamConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub residual_points: usize,
    pub placement: Placement,
    pub conv_quad_nodes: usize,
    pub w_f: f64,
    pub w_g: f64,
    pub optimizer: OptimizerChoice,
    pub arch: Vec<usize>,
    pub seed: u64,
    /// Feed the network `u` mapped affinely from the domain onto `[-1, 1]`.
    pub scale_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            residual_points: DEFAULT_RESIDUAL_POINTS,
            placement: Placement::Equispaced,
            conv_quad_nodes: DEFAULT_QUAD_NODES,
            w_f: 1.0,
            w_g: 1.0,
            optimizer: OptimizerChoice::Lbfgs(LbfgsConfig {
                refine_tol: 1.0,
                ..LbfgsConfig::default()
            }),
            arch: DEFAULT_LAYERS.to_vec(),
            seed: 0,
            scale_input: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.residual_points < 8 {
            return Err(invalid("residual_points", "need at least 8"));
        }
        if self.conv_quad_nodes < 4 {
            return Err(invalid("conv_quad_nodes", "need at least 4"));
        }
        if !(self.w_f > 0.0 && self.w_g > 0.0 && self.w_f.is_finite() && self.w_g.is_finite()) {
            return Err(invalid("weights", "w_f and w_g must be positive"));
        }
        Mlp::zeros(self.arch.clone()).map(|_| ())
    }
}

pub fn residual_points(upper: f64, count: usize, placement: Placement) -> Vec<f64> {
    match placement {
        Placement::Equispaced => SolutionTable::uniform_grid(upper, count - 1),
        Placement::UniformRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..=upper)).collect();
            pts.sort_by(f64::total_cmp);
            pts
        }
    }
}

/// Anything that can stand in for `Φ` in the residual.
pub trait TrialFunction {
    fn value(&self, u: f64) -> Result<f64>;
    fn value_and_derivative(&self, u: f64) -> Result<(f64, f64)>;
}

impl TrialFunction for Mlp {
    fn value(&self, u: f64) -> Result<f64> {
        finite(self.forward(u), u)
    }

    fn value_and_derivative(&self, u: f64) -> Result<(f64, f64)> {
        let (v, d) = self.forward_with_input_derivative(u);
        Ok((finite(v, u)?, finite(d, u)?))
    }
}

impl TrialFunction for SolutionTable {
    fn value(&self, u: f64) -> Result<f64> {
        Ok(self.value_and_derivative(u)?.0)
    }

    fn value_and_derivative(&self, u: f64) -> Result<(f64, f64)> {
        let scale = self.log_scale.exp();
        self.interpolate(u)
            .map(|(v, d)| (v * scale, d * scale))
            .ok_or_else(|| Error::Domain(format!("u = {u} outside the table or table lacks derivatives")))
    }
}

fn finite(v: f64, u: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            location: format!("trial function at u = {u}"),
        })
    }
}

/// Residual of the equation at `u`, with the convolution discretised by the
/// `nodes`-point Gauss-Legendre rule on `[0, u]`.
pub fn residual<T: TrialFunction + ?Sized>(
    trial: &T,
    model: &RiskModel,
    case: &PenaltyCase,
    u: f64,
    nodes: usize,
) -> Result<f64> {
    let rule = gauss_legendre(nodes)?;
    let (v, d) = trial.value_and_derivative(u)?;
    let mut conv = 0.0;
    for (y, w) in rule.mapped(0.0, u) {
        conv += w * model.claim.density(u - y)? * trial.value(y)?;
    }
    Ok(-(model.alpha + model.lambda) * v
        + (model.r * u + model.c) * d
        + model.lambda * conv
        + model.lambda * model.penalty_a(case, u)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Boundary {
    Anchor(f64),
    ZeroSlope,
}

/// The training loss with all point sets and coefficients precomputed.
///
/// Derivative points are the residual points followed by the boundary point;
/// value points are the convolution nodes, `nodes` per residual point.
#[derive(Debug, Clone)]
pub struct PinnLoss {
    points: Vec<f64>,
    deriv_points: Vec<f64>,
    quad_points: Vec<f64>,
    kernel: Vec<f64>,
    nodes: usize,
    value_coef: f64,
    deriv_coef: Vec<f64>,
    forcing: Vec<f64>,
    boundary: Boundary,
    w_f: f64,
    w_g: f64,
}

impl PinnLoss {
    pub fn new(spec: &ProblemSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = &spec.model;
        let upper = spec.domain.upper();
        let points = residual_points(upper, config.residual_points, config.placement);
        let rule = gauss_legendre(config.conv_quad_nodes)?;
        let n = rule.len();
        let mut quad_points = Vec::with_capacity(points.len() * n);
        let mut kernel = Vec::with_capacity(points.len() * n);
        let mut deriv_coef = Vec::with_capacity(points.len());
        let mut forcing = Vec::with_capacity(points.len());
        for &u in &points {
            for (y, w) in rule.mapped(0.0, u) {
                quad_points.push(y);
                kernel.push(model.lambda * w * model.claim.density(u - y)?);
            }
            deriv_coef.push(model.r * u + model.c);
            forcing.push(model.lambda * model.penalty_a(&spec.case, u)?);
        }
        let (boundary, at) = match spec.domain {
            Domain::NoBarrier { anchor, .. } => (Boundary::Anchor(anchor), 0.0),
            Domain::Barrier { b } => (Boundary::ZeroSlope, b),
        };
        let mut deriv_points = points.clone();
        deriv_points.push(at);
        Ok(Self {
            points,
            deriv_points,
            quad_points,
            kernel,
            nodes: n,
            value_coef: -(model.alpha + model.lambda),
            deriv_coef,
            forcing,
            boundary,
            w_f: config.w_f,
            w_g: config.w_g,
        })
    }

    pub fn residual_points(&self) -> &[f64] {
        &self.points
    }

    fn residuals(&self, values: &[f64], deriv_values: &[f64], derivs: &[f64]) -> Vec<f64> {
        (0..self.points.len())
            .map(|p| {
                let r = p * self.nodes..(p + 1) * self.nodes;
                let conv: f64 = self.kernel[r.clone()].iter().zip(&values[r]).map(|(k, v)| k * v).sum();
                self.value_coef * deriv_values[p] + self.deriv_coef[p] * derivs[p] + conv + self.forcing[p]
            })
            .collect()
    }

    /// Residuals of `net` at every residual point.
    pub fn network_residuals(&self, net: &Mlp) -> Vec<f64> {
        let values = network::forward_batch(net, &self.quad_points);
        let (dv, d) = network::forward_batch_with_derivative(net, &self.deriv_points);
        self.residuals(&values, &dv, &d)
    }

    pub fn value(&self, net: &Mlp) -> Result<f64> {
        network::loss_value(net, self)
    }
}

impl PointFunctional for PinnLoss {
    fn value_points(&self) -> &[f64] {
        &self.quad_points
    }

    fn derivative_points(&self) -> &[f64] {
        &self.deriv_points
    }

    fn evaluate(
        &self,
        values: &[f64],
        deriv_values: &[f64],
        derivs: &[f64],
        adj_values: &mut [f64],
        adj_deriv_values: &mut [f64],
        adj_derivs: &mut [f64],
    ) -> f64 {
        let res = self.residuals(values, deriv_values, derivs);
        let mut loss = 0.0;
        for (p, &r) in res.iter().enumerate() {
            loss += r * r;
            let g = 2.0 * self.w_f * r;
            adj_deriv_values[p] = g * self.value_coef;
            adj_derivs[p] = g * self.deriv_coef[p];
            let span = p * self.nodes..(p + 1) * self.nodes;
            for (a, k) in adj_values[span.clone()].iter_mut().zip(&self.kernel[span]) {
                *a = g * k;
            }
        }
        loss *= self.w_f;
        let last = self.points.len();
        let boundary = match self.boundary {
            Boundary::Anchor(a) => {
                let e = deriv_values[last] - a;
                adj_deriv_values[last] = 2.0 * self.w_g * e;
                e * e
            }
            Boundary::ZeroSlope => {
                let e = derivs[last];
                adj_derivs[last] = 2.0 * self.w_g * e;
                e * e
            }
        };
        loss + self.w_g * boundary
    }
}

/// Loss of the network `net` for `spec` under `config`.
pub fn loss(net: &Mlp, spec: &ProblemSpec, config: &TrainConfig) -> Result<f64> {
    PinnLoss::new(spec, config)?.value(net)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Mlp,
    pub report: OptReport,
}

/// Trains a freshly initialised network. Non-convergence is reported through
/// `report.converged`, not as an error.
pub fn train(spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let objective = PinnLoss::new(spec, config)?;
    train_from(&objective, initial_network(spec, config)?, &config.optimizer)
}

/// The untrained network `train` starts from.
pub fn initial_network(spec: &ProblemSpec, config: &TrainConfig) -> Result<Mlp> {
    let net = Mlp::init(config.arch.clone(), config.seed)?;
    if config.scale_input {
        net.with_input_range(0.0, spec.domain.upper())
    } else {
        Ok(net)
    }
}

pub fn train_from(objective: &PinnLoss, start: Mlp, optimizer: &OptimizerChoice) -> Result<TrainOutcome> {
    let template = start.clone();
    let fg = |theta: &[f64]| {
        let net = template.with_params(theta.to_vec())?;
        loss_gradient(&net, objective)
    };
    let (theta, report) = match optimizer {
        OptimizerChoice::Lbfgs(cfg) => lbfgs_minimize(fg, start.into_params(), cfg)?,
        OptimizerChoice::Adam(cfg) => adam_minimize(fg, start.into_params(), cfg)?,
    };
    log::info!(
        "training finished after {} iterations: loss {:.3e}, {}",
        report.iterations,
        report.final_loss,
        report.message
    );
    Ok(TrainOutcome {
        network: template.with_params(theta)?,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: SolutionTable,
    pub warnings: Vec<String>,
}

/// Network values and derivatives on `grid`.
pub fn evaluate(net: &Mlp, domain: &Domain, grid: &[f64]) -> Result<Evaluation> {
    let (phi, dphi) = network::forward_batch_with_derivative(net, grid);
    let mut table = SolutionTable::new(grid.to_vec(), phi)?;
    table.dphi = Some(dphi);
    let upper = domain.upper();
    let outside = grid.iter().filter(|&&u| !(0.0..=upper).contains(&u)).count();
    let warnings = if outside > 0 {
        vec![format!("{outside} grid points lie outside the training domain [0, {upper}]; values are extrapolated")]
    } else {
        Vec::new()
    };
    Ok(Evaluation { table, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_model::ClaimDistribution;
    use crate::volterra;

    fn paper_model(case: &PenaltyCase) -> RiskModel {
        RiskModel::paper_settings(case.default_alpha(), ClaimDistribution::exponential(1.0).unwrap())
    }

    fn constant_net(value: f64) -> Mlp {
        let mut net = Mlp::zeros(DEFAULT_LAYERS.to_vec()).unwrap();
        let last = net.params().len() - 1;
        net.params_mut()[last] = value;
        net
    }

    #[test]
    fn zero_network_residual_at_origin() {
        let model = RiskModel::new(1.5, 1.0, 0.01, 0.0, ClaimDistribution::exponential(1.0).unwrap()).unwrap();
        let net = Mlp::zeros(DEFAULT_LAYERS.to_vec()).unwrap();
        let r = residual(&net, &model, &PenaltyCase::RuinProbability, 0.0, 32).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_at_origin_has_no_convolution() {
        let case = PenaltyCase::DeficitAtRuin;
        let model = paper_model(&case);
        let net = Mlp::init(DEFAULT_LAYERS.to_vec(), 5).unwrap();
        let (v, d) = net.forward_with_input_derivative(0.0);
        let expect = -(model.alpha + model.lambda) * v + model.c * d + model.lambda * model.penalty_a(&case, 0.0).unwrap();
        assert!((residual(&net, &model, &case, 0.0, 32).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn converged_reference_nearly_solves_the_equation() {
        for case in PenaltyCase::named() {
            let model = paper_model(&case);
            let table = volterra::solve_no_barrier(&model, &case, 30.0, 3000).unwrap();
            for k in 0..32 {
                let u = 30.0 * k as f64 / 31.0;
                let r = residual(&table, &model, &case, u, 32).unwrap();
                assert!(r.abs() <= 5e-4, "{} u={u}: {r}", case.name());
                let r2 = residual(&table, &model, &case, u, 64).unwrap();
                assert!((r - r2).abs() <= 1e-8, "{} u={u}: {r} vs {r2}", case.name());
            }
        }
    }

    #[test]
    fn batched_residuals_match_pointwise() {
        let case = PenaltyCase::ClaimCausingRuin;
        let spec = ProblemSpec::no_barrier(paper_model(&case), case.clone(), 30.0).unwrap();
        let config = TrainConfig {
            residual_points: 40,
            ..TrainConfig::default()
        };
        let objective = PinnLoss::new(&spec, &config).unwrap();
        let net = Mlp::init(DEFAULT_LAYERS.to_vec(), 2).unwrap();
        let batched = objective.network_residuals(&net);
        for (&u, &r) in objective.residual_points().iter().zip(&batched) {
            let direct = residual(&net, &spec.model, &case, u, 32).unwrap();
            assert!((r - direct).abs() <= 1e-12 * (1.0 + direct.abs()), "u={u}: {r} vs {direct}");
        }
        let total: f64 = batched.iter().map(|r| r * r).sum();
        let anchor = match spec.domain {
            Domain::NoBarrier { anchor, .. } => anchor,
            Domain::Barrier { .. } => unreachable!(),
        };
        let expect = total + (net.forward(0.0) - anchor).powi(2);
        let got = objective.value(&net).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn anchored_constant_has_zero_boundary_loss() {
        let case = PenaltyCase::RuinProbability;
        let spec = ProblemSpec::no_barrier(paper_model(&case), case, 30.0).unwrap();
        let Domain::NoBarrier { anchor, .. } = spec.domain else { unreachable!() };
        let net = constant_net(anchor);
        // w_f must stay positive, so compare against the residual part alone.
        let objective = PinnLoss::new(&spec, &TrainConfig::default()).unwrap();
        let res: f64 = objective.network_residuals(&net).iter().map(|r| r * r).sum();
        let l = objective.value(&net).unwrap();
        assert!((l - res).abs() <= 1e-15 * res);
        let tiny = TrainConfig {
            w_f: f64::MIN_POSITIVE,
            ..TrainConfig::default()
        };
        assert!(loss(&net, &spec, &tiny).unwrap() < 1e-300);
    }

    #[test]
    fn loss_is_nonnegative() {
        let case = PenaltyCase::LaplaceRuinTime;
        let spec = ProblemSpec::barrier(paper_model(&case), case, 10.0).unwrap();
        for seed in 0..5 {
            let net = Mlp::init(DEFAULT_LAYERS.to_vec(), seed).unwrap();
            assert!(loss(&net, &spec, &TrainConfig::default()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let case = PenaltyCase::DeficitAtRuin;
        let config = TrainConfig {
            residual_points: 8,
            arch: vec![1, 6, 6, 1],
            ..TrainConfig::default()
        };
        for spec in [
            ProblemSpec::no_barrier(paper_model(&case), case.clone(), 30.0).unwrap(),
            ProblemSpec::barrier(paper_model(&case), case.clone(), 10.0).unwrap(),
        ] {
            let objective = PinnLoss::new(&spec, &config).unwrap();
            let net = Mlp::init(config.arch.clone(), 17).unwrap();
            let (_, grad) = loss_gradient(&net, &objective).unwrap();
            for i in 0..net.params().len() {
                let h = 1e-6 * net.params()[i].abs().max(1.0);
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (objective.value(&plus).unwrap() - objective.value(&minus).unwrap()) / (2.0 * h);
                assert!((grad[i] - fd).abs() <= 1e-5 * grad[i].abs().max(1e-2), "slot {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let case = PenaltyCase::RuinProbability;
        let spec = ProblemSpec::no_barrier(paper_model(&case), case, 30.0).unwrap();
        for config in [
            TrainConfig {
                residual_points: 7,
                ..TrainConfig::default()
            },
            TrainConfig {
                conv_quad_nodes: 3,
                ..TrainConfig::default()
            },
            TrainConfig {
                w_g: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(PinnLoss::new(&spec, &config).is_err());
        }
        assert!(ProblemSpec::barrier(paper_model(&PenaltyCase::RuinProbability), PenaltyCase::RuinProbability, 0.0).is_err());
    }

    #[test]
    fn random_placement_is_sorted_and_reproducible() {
        let a = residual_points(10.0, 50, Placement::UniformRandom(4));
        assert_eq!(a, residual_points(10.0, 50, Placement::UniformRandom(4)));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&u| (0.0..=10.0).contains(&u)));
        let e = residual_points(10.0, 11, Placement::Equispaced);
        assert_eq!((e[0], e[10]), (0.0, 10.0));
    }

    #[test]
    fn evaluation_is_pure_and_flags_extrapolation() {
        let net = Mlp::init(DEFAULT_LAYERS.to_vec(), 3).unwrap();
        let domain = Domain::Barrier { b: 10.0 };
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let a = evaluate(&net, &domain, &grid).unwrap();
        assert_eq!(a, evaluate(&net, &domain, &grid).unwrap());
        assert!(a.warnings.is_empty());
        let one = evaluate(&net, &domain, &[2.0]).unwrap();
        assert_eq!(one.table.len(), 1);
        assert!(!evaluate(&net, &domain, &[11.0]).unwrap().warnings.is_empty());
    }

    #[test]
    fn short_training_is_deterministic_and_monotone() {
        let case = PenaltyCase::LaplaceRuinTime;
        let spec = ProblemSpec::no_barrier(paper_model(&case), case, 30.0).unwrap();
        let config = TrainConfig {
            residual_points: 32,
            conv_quad_nodes: 8,
            arch: vec![1, 8, 8, 1],
            optimizer: OptimizerChoice::Lbfgs(LbfgsConfig {
                max_iterations: 40,
                ..LbfgsConfig::default()
            }),
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&spec, &config).unwrap();
        let b = train(&spec, &config).unwrap();
        assert_eq!(a.network, b.network);
        let h = &a.report.loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        assert!(h[h.len() - 1] < h[0]);
    }
}
