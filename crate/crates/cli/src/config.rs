//! Experiment configuration: line-oriented `section.key = value` text.
//!
//! `#` starts a comment. Keys are case-sensitive and unknown keys are errors.

use std::collections::BTreeMap;
use std::str::FromStr;

use gerber_shiu::montecarlo::{SimConfig, DEFAULT_EARLY_STOP_TOL, DEFAULT_HORIZON, DEFAULT_PATHS};
use gerber_shiu::optimizer::{AdamConfig, LbfgsConfig};
use gerber_shiu::pinn::{OptimizerChoice, Placement, TrainConfig, DEFAULT_U_MAX};
use gerber_shiu::volterra::{DEFAULT_INTERVALS, DEFAULT_U_MAX as VOLTERRA_U_MAX};
use gerber_shiu::{ClaimDistribution, ErlangTerm, PenaltyCase, RiskModel};

use crate::error::CliError;

const KEYS: &[&str] = &[
    "model.c",
    "model.lambda",
    "model.r",
    "model.alpha",
    "claim.kind",
    "claim.rate",
    "claim.shape",
    "claim.terms",
    "penalty.case",
    "barrier.level",
    "method.name",
    "volterra.n",
    "volterra.u_max",
    "pinn.u_max",
    "pinn.residual_points",
    "pinn.placement",
    "pinn.quad_nodes",
    "pinn.w_f",
    "pinn.w_g",
    "pinn.optimizer",
    "pinn.max_iterations",
    "pinn.grad_tol",
    "pinn.adam_step",
    "pinn.adam_iterations",
    "pinn.layers",
    "pinn.scale_input",
    "montecarlo.paths",
    "montecarlo.horizon",
    "montecarlo.u_values",
    "montecarlo.early_stop_tol",
    "output.grid_points",
    "run.seed",
    "compare.method_a",
    "compare.method_b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pinn,
    Volterra,
    MonteCarlo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pinn => "pinn",
            Method::Volterra => "volterra",
            Method::MonteCarlo => "montecarlo",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinn" => Ok(Method::Pinn),
            "volterra" => Ok(Method::Volterra),
            "montecarlo" | "monte_carlo" => Ok(Method::MonteCarlo),
            other => Err(format!("unknown method `{other}` (pinn, volterra, montecarlo)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: RiskModel,
    pub claim_kind: String,
    pub case: PenaltyCase,
    pub barrier: Option<f64>,
    pub method: Method,
    pub volterra_n: usize,
    pub volterra_u_max: f64,
    pub pinn_u_max: f64,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub mc_u_values: Vec<f64>,
    pub grid_points: usize,
    pub seed: u64,
    pub compare: (Method, Method),
}

impl ExperimentConfig {
    /// Upper end of the solution domain for the configured method.
    pub fn domain_upper(&self, method: Method) -> f64 {
        match (self.barrier, method) {
            (Some(b), _) => b,
            (None, Method::Pinn) => self.pinn_u_max,
            (None, _) => self.volterra_u_max,
        }
    }

    /// Overrides every seed-dependent setting.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.sim.seed = seed;
        if let Placement::UniformRandom(_) = self.train.placement {
            self.train.placement = Placement::UniformRandom(seed);
        }
    }
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Config(format!("line {line}: `{key}`: {e}"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn required(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some((v, line)) = self.map.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|e| CliError::Config(format!("line {line}: `{key}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

fn range(key: &str, ok: bool, what: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{key}` {what}")))
    }
}

fn parse_entries(text: &str) -> Result<Entries, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {line_no}: expected `section.key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("line {line_no}: unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(CliError::Config(format!("line {line_no}: `{key}` has no value")));
        }
        if map.insert(key.to_string(), (value.to_string(), line_no)).is_some() {
            return Err(CliError::Config(format!("line {line_no}: duplicate key `{key}`")));
        }
    }
    Ok(Entries { map })
}

fn parse_claim(e: &Entries) -> Result<(ClaimDistribution, String), CliError> {
    let kind = e.required("claim.kind")?;
    let numeric = |r: gerber_shiu::Result<ClaimDistribution>| r.map_err(|err| CliError::Config(err.to_string()));
    let claim = match kind {
        "exponential" => numeric(ClaimDistribution::exponential(e.get_or("claim.rate", 1.0)?))?,
        "erlang" => numeric(ClaimDistribution::erlang(
            e.get_or("claim.shape", 2u32)?,
            e.get_or("claim.rate", 2.0)?,
        ))?,
        "combination_exponentials" => ClaimDistribution::combination_of_exponentials(),
        "mixed_erlang" => {
            let spec = e.required("claim.terms")?;
            let terms = spec
                .split(',')
                .map(|t| {
                    let parts: Vec<&str> = t.split(':').map(str::trim).collect();
                    let bad = || CliError::Config(format!("`claim.terms`: bad term `{t}`, expected coef:shape:rate"));
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    Ok(ErlangTerm::new(
                        parts[0].parse().map_err(|_| bad())?,
                        parts[1].parse().map_err(|_| bad())?,
                        parts[2].parse().map_err(|_| bad())?,
                    ))
                })
                .collect::<Result<Vec<_>, _>>()?;
            numeric(ClaimDistribution::new(terms))?
        }
        other => {
            return Err(CliError::Config(format!(
                "`claim.kind`: unknown variant `{other}` (exponential, erlang, combination_exponentials, mixed_erlang)"
            )))
        }
    };
    Ok((claim, kind.to_string()))
}

fn parse_method(e: &Entries, key: &str, default: Method) -> Result<Method, CliError> {
    match e.raw(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|m| CliError::Config(format!("`{key}`: {m}"))),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let e = parse_entries(text)?;
    let (claim, claim_kind) = parse_claim(&e)?;
    let case_name = e.required("penalty.case")?;
    let case = PenaltyCase::from_name(case_name).ok_or_else(|| {
        CliError::Config(format!(
            "`penalty.case`: unknown variant `{case_name}` (ruin_probability, laplace_ruin_time, claim_causing_ruin, deficit_at_ruin)"
        ))
    })?;
    let model = RiskModel::new(
        e.get_or("model.c", 1.5)?,
        e.get_or("model.lambda", 1.0)?,
        e.get_or("model.r", 0.01)?,
        e.get_or("model.alpha", case.default_alpha())?,
        claim,
    )
    .map_err(|err| CliError::Config(err.to_string()))?;

    let barrier = e.parse::<f64>("barrier.level")?;
    if let Some(b) = barrier {
        range("barrier.level", b > 0.0 && b.is_finite(), "must be positive")?;
    }
    let method = parse_method(&e, "method.name", Method::Volterra)?;
    let seed = e.get_or("run.seed", 0u64)?;

    let volterra_n = e.get_or("volterra.n", DEFAULT_INTERVALS)?;
    let volterra_u_max = e.get_or("volterra.u_max", VOLTERRA_U_MAX)?;
    range("volterra.n", volterra_n >= 16, "must be at least 16")?;
    range("volterra.u_max", volterra_u_max > 0.0, "must be positive")?;

    let pinn_u_max = e.get_or("pinn.u_max", DEFAULT_U_MAX)?;
    range("pinn.u_max", pinn_u_max > 0.0, "must be positive")?;
    let defaults = TrainConfig::default();
    let placement = match e.raw("pinn.placement").unwrap_or("equispaced") {
        "equispaced" => Placement::Equispaced,
        "random" => Placement::UniformRandom(seed),
        other => return Err(CliError::Config(format!("`pinn.placement`: unknown variant `{other}` (equispaced, random)"))),
    };
    let optimizer = match e.raw("pinn.optimizer").unwrap_or("lbfgs") {
        "lbfgs" => {
            let OptimizerChoice::Lbfgs(base) = defaults.optimizer.clone() else {
                unreachable!("default optimizer is L-BFGS")
            };
            OptimizerChoice::Lbfgs(LbfgsConfig {
                max_iterations: e.get_or("pinn.max_iterations", base.max_iterations)?,
                grad_tol: e.get_or("pinn.grad_tol", base.grad_tol)?,
                ..base
            })
        }
        "adam" => OptimizerChoice::Adam(AdamConfig {
            step: e.get_or("pinn.adam_step", AdamConfig::default().step)?,
            iterations: e.get_or("pinn.adam_iterations", AdamConfig::default().iterations)?,
            ..AdamConfig::default()
        }),
        other => return Err(CliError::Config(format!("`pinn.optimizer`: unknown variant `{other}` (lbfgs, adam)"))),
    };
    let train = TrainConfig {
        residual_points: e.get_or("pinn.residual_points", defaults.residual_points)?,
        placement,
        conv_quad_nodes: e.get_or("pinn.quad_nodes", defaults.conv_quad_nodes)?,
        w_f: e.get_or("pinn.w_f", defaults.w_f)?,
        w_g: e.get_or("pinn.w_g", defaults.w_g)?,
        optimizer,
        arch: e.list("pinn.layers")?.unwrap_or(defaults.arch),
        seed,
        scale_input: e.get_or("pinn.scale_input", defaults.scale_input)?,
    };
    train.validate().map_err(|err| CliError::Config(err.to_string()))?;

    let sim = SimConfig {
        paths: e.get_or("montecarlo.paths", DEFAULT_PATHS)?,
        horizon: e.get_or("montecarlo.horizon", DEFAULT_HORIZON)?,
        seed,
        barrier,
        early_stop_tol: e.get_or("montecarlo.early_stop_tol", DEFAULT_EARLY_STOP_TOL)?,
    };
    range("montecarlo.paths", sim.paths >= 1, "must be at least 1")?;
    range("montecarlo.horizon", sim.horizon > 0.0, "must be positive")?;
    range("montecarlo.early_stop_tol", (0.0..1.0).contains(&sim.early_stop_tol), "must lie in [0, 1)")?;
    let mc_u_values = e.list::<f64>("montecarlo.u_values")?.unwrap_or_else(|| {
        [0.0, 5.0, 10.0]
            .into_iter()
            .filter(|&u| barrier.is_none_or(|b| u <= b))
            .collect()
    });
    range(
        "montecarlo.u_values",
        mc_u_values.iter().all(|&u| u >= 0.0 && barrier.is_none_or(|b| u <= b)),
        "must be nonnegative and not above the barrier",
    )?;

    let grid_points = e.get_or("output.grid_points", 512usize)?;
    range("output.grid_points", grid_points >= 2, "must be at least 2")?;
    let compare = (
        parse_method(&e, "compare.method_a", Method::Pinn)?,
        parse_method(&e, "compare.method_b", Method::Volterra)?,
    );

    Ok(ExperimentConfig {
        model,
        claim_kind,
        case,
        barrier,
        method,
        volterra_n,
        volterra_u_max,
        pinn_u_max,
        train,
        sim,
        mc_u_values,
        grid_points,
        seed,
        compare,
    })
}
