//! Acceptance checks. Runs as a plain binary so every criterion prints a
//! PASS/FAIL line; pass criterion numbers as arguments to run a subset.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gerber_shiu::montecarlo::{self, Functional, SimConfig};
use gerber_shiu::network::{self, Mlp};
use gerber_shiu::pinn::{self, PinnLoss, ProblemSpec, TrainConfig};
use gerber_shiu::quadrature::gauss_legendre;
use gerber_shiu::{initial_value, volterra, ClaimDistribution, PenaltyCase, RiskModel, SolutionTable};

const GRID_POINTS: usize = 512;
const U_MAX: f64 = 30.0;
const BARRIER: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn densities() -> [(&'static str, ClaimDistribution); 3] {
    [
        ("exponential", ClaimDistribution::exponential(1.0).unwrap()),
        ("erlang", ClaimDistribution::erlang(2, 2.0).unwrap()),
        ("combination", ClaimDistribution::combination_of_exponentials()),
    ]
}

fn paper_model(case: &PenaltyCase, claim: &ClaimDistribution) -> RiskModel {
    RiskModel::paper_settings(case.default_alpha(), claim.clone())
}

fn grid(upper: f64) -> Vec<f64> {
    SolutionTable::uniform_grid(upper, GRID_POINTS - 1)
}

fn table_value(t: &SolutionTable, u: f64) -> f64 {
    t.interpolate(u).unwrap().0 * t.log_scale.exp()
}

type Key = (usize, usize, Option<u64>, u64);
type Slot = Arc<OnceLock<(Mlp, f64, bool)>>;

/// Trained networks shared between criteria.
fn trained(density: usize, case: usize, barrier: Option<f64>, seed: u64) -> Slot {
    static CACHE: OnceLock<Mutex<HashMap<Key, Slot>>> = OnceLock::new();
    let key = (density, case, barrier.map(f64::to_bits), seed);
    let slot = CACHE.get_or_init(Default::default).lock().unwrap().entry(key).or_default().clone();
    slot.get_or_init(|| {
        let claim = densities()[density].1.clone();
        let case = PenaltyCase::named()[case].clone();
        let model = paper_model(&case, &claim);
        let spec = match barrier {
            Some(b) => ProblemSpec::barrier(model, case, b).unwrap(),
            None => ProblemSpec::no_barrier(model, case, U_MAX).unwrap(),
        };
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let out = pinn::train(&spec, &config).unwrap();
        (out.network, out.report.final_loss, out.report.converged)
    });
    slot
}

fn network(density: usize, case: usize, barrier: Option<f64>, seed: u64) -> Mlp {
    trained(density, case, barrier, seed).get().unwrap().0.clone()
}

fn reference(density: usize, case: usize, barrier: Option<f64>) -> SolutionTable {
    let claim = &densities()[density].1;
    let case = &PenaltyCase::named()[case];
    let model = paper_model(case, claim);
    match barrier {
        Some(b) => volterra::solve_barrier(&model, case, b, volterra::DEFAULT_INTERVALS).unwrap(),
        None => volterra::solve_no_barrier(&model, case, U_MAX, volterra::DEFAULT_INTERVALS).unwrap(),
    }
}

fn quadrature_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 2..=32 {
        let rule = gauss_legendre(n).unwrap();
        for k in 0..2 * n {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got: f64 = rule.nodes().iter().zip(rule.weights()).map(|(x, w)| w * x.powi(k as i32)).sum();
            worst = worst.max((got - exact).abs());
            // and on [0, 1]
            let got01 = rule.integrate(|x| x.powi(k as i32), 0.0, 1.0).unwrap();
            worst = worst.max((got01 - 1.0 / (k as f64 + 1.0)).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max error {worst:.2e} for n = 2..32, k <= 2n-1"))
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

fn random_setup(rng: &mut ChaCha8Rng) -> (ProblemSpec, TrainConfig, Mlp) {
    let depth = rng.random_range(1..=3);
    let mut arch = vec![1];
    arch.extend((0..depth).map(|_| rng.random_range(3..=12)));
    arch.push(1);
    let density = rng.random_range(0..3);
    let case = PenaltyCase::named()[rng.random_range(0..4)].clone();
    let model = paper_model(&case, &densities()[density].1);
    let spec = if rng.random_bool(0.5) {
        ProblemSpec::barrier(model, case, rng.random_range(5.0..15.0)).unwrap()
    } else {
        ProblemSpec::no_barrier(model, case, rng.random_range(10.0..30.0)).unwrap()
    };
    let config = TrainConfig {
        residual_points: rng.random_range(8..=32),
        conv_quad_nodes: rng.random_range(8..=24),
        w_f: rng.random_range(0.5..2.0),
        w_g: rng.random_range(0.5..2.0),
        arch,
        seed: rng.random(),
        scale_input: rng.random_bool(0.5),
        ..TrainConfig::default()
    };
    let mut net = pinn::initial_network(&spec, &config).unwrap();
    // nonzero biases so every parameter matters
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    (spec, config, net)
}

fn differentiation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst_input, mut worst_param): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let (spec, config, net) = random_setup(&mut rng);
        let upper = spec.domain.upper();
        let us: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..upper)).collect();
        let h = 1e-5;
        let ad: Vec<f64> = us.iter().map(|&u| net.forward_with_input_derivative(u).1).collect();
        let fd: Vec<f64> = us.iter().map(|&u| (net.forward(u + h) - net.forward(u - h)) / (2.0 * h)).collect();
        worst_input = worst_input.max(rel_norm(&ad, &fd));

        let objective = PinnLoss::new(&spec, &config).unwrap();
        let (_, grad) = network::loss_gradient(&net, &objective).unwrap();
        let theta = net.params().to_vec();
        let h = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut t = theta.clone();
                t[i] = theta[i] + h;
                let up = objective.value(&net.with_params(t.clone()).unwrap()).unwrap();
                t[i] = theta[i] - h;
                let down = objective.value(&net.with_params(t).unwrap()).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect();
        worst_param = worst_param.max(rel_norm(&grad, &fd));
    }
    outcome(
        worst_input <= 1e-5 && worst_param <= 1e-5,
        format!("worst relative error: input derivative {worst_input:.2e}, loss gradient {worst_param:.2e} (20 configurations)"),
    )
}

fn classical_oracle() -> Outcome {
    let model = RiskModel::new(1.5, 1.0, 0.0, 0.0, ClaimDistribution::exponential(1.0).unwrap()).unwrap();
    let case = PenaltyCase::RuinProbability;
    let phi0 = initial_value::anchor_value(&model, &case).unwrap();
    let table = volterra::solve_no_barrier(&model, &case, U_MAX, 3000).unwrap();
    let scale = table.log_scale.exp();
    let worst = table
        .u
        .iter()
        .zip(&table.phi)
        .map(|(u, p)| (p * scale - 2.0 / 3.0 * (-u / 3.0).exp()).abs())
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-4 && (phi0 - 2.0 / 3.0).abs() < 1e-15,
        format!("max abs error {worst:.2e} on [0, 30], N = 3000"),
    )
}

fn initial_value_consistency() -> Outcome {
    let mut worst_limit: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    for (_, claim) in densities() {
        for case in PenaltyCase::named() {
            let slow = RiskModel::new(1.5, 1.0, 1e-4, 0.0, claim.clone()).unwrap();
            let classical = RiskModel::new(1.5, 1.0, 0.0, 0.0, claim.clone()).unwrap();
            let b6 = initial_value::phi_infinity_at_zero(&slow, &case).unwrap();
            let limit = initial_value::classical_zero_value(&classical, &case).unwrap();
            worst_limit = worst_limit.max((b6 - limit).abs() / limit.abs());
        }
        let cases = PenaltyCase::named();
        let functionals: Vec<Functional> = cases
            .iter()
            .map(|c| Functional {
                case: c.clone(),
                alpha: c.default_alpha(),
            })
            .collect();
        let model = RiskModel::paper_settings(0.0, claim.clone());
        let sim = SimConfig {
            paths: 1_000_000,
            ..SimConfig::default()
        };
        let estimates = montecarlo::estimate_many(&model, &functionals, 0.0, &sim).unwrap();
        for (case, e) in cases.iter().zip(&estimates) {
            let anchor = initial_value::anchor_value(&paper_model(case, &claim), case).unwrap();
            worst_z = worst_z.max((anchor - e.value).abs() / e.std_error);
        }
    }
    outcome(
        worst_limit <= 1e-3 && worst_z <= 3.0,
        format!("r = 1e-4 limit: max relative error {worst_limit:.2e}; r = 0.01 vs 1e6 paths: max |z| {worst_z:.2}"),
    )
}

fn pinn_vs_volterra() -> Outcome {
    let mut worst = (0.0, String::new());
    let mut all_converged = true;
    let mut cells = Vec::new();
    for d in 0..3 {
        for c in 0..4 {
            let slot = trained(d, c, None, 0);
            let (net, loss, converged) = slot.get().unwrap();
            all_converged &= converged;
            let reference = reference(d, c, None);
            let err = grid(U_MAX)
                .iter()
                .map(|&u| {
                    let r = table_value(&reference, u);
                    (net.forward(u) - r).abs() / r.abs().max(1e-3)
                })
                .fold(0.0, f64::max);
            let name = format!("{}/{}", densities()[d].0, PenaltyCase::named()[c].name());
            cells.push(format!("{name} {err:.1e} (loss {loss:.1e})"));
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    for line in &cells {
        println!("    {line}");
    }
    outcome(
        worst.0 <= 1e-3,
        format!("max relative error {:.2e} ({}); all converged: {all_converged}", worst.0, worst.1),
    )
}

fn barrier_condition() -> Outcome {
    let case = 1;
    assert_eq!(PenaltyCase::named()[case].name(), PenaltyCase::LaplaceRuinTime.name());
    let (mut worst_slope, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for d in 0..3 {
        let net = network(d, case, Some(BARRIER), 0);
        let reference = reference(d, case, Some(BARRIER));
        let g = grid(BARRIER);
        let peak = g.iter().map(|&u| net.forward(u).abs()).fold(0.0, f64::max);
        worst_slope = worst_slope.max(net.forward_with_input_derivative(BARRIER).1.abs() / peak);
        let err = g.iter().map(|&u| (net.forward(u) - table_value(&reference, u)).abs()).fold(0.0, f64::max);
        worst_abs = worst_abs.max(err);
    }
    outcome(
        worst_slope <= 1e-3 && worst_abs <= 5e-3,
        format!("max |phi'(b)|/max|phi| {worst_slope:.2e}; max abs error vs decomposition {worst_abs:.2e}"),
    )
}

fn seed_band() -> Outcome {
    let g = grid(U_MAX);
    let (d, c) = (0, 1);
    let reference = reference(d, c, None);
    let curves: Vec<Vec<f64>> = (0..20u64)
        .map(|seed| {
            network::forward_batch(&network(d, c, None, seed), &g)
        })
        .collect();
    let mut spread: f64 = 0.0;
    let mut inside = 0;
    for (j, &u) in g.iter().enumerate() {
        let lo = curves.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
        let hi = curves.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max);
        spread = spread.max(hi - lo);
        let r = table_value(&reference, u);
        if lo <= r && r <= hi {
            inside += 1;
        }
    }
    let share = inside as f64 / g.len() as f64;
    outcome(
        spread <= 5e-3 && share >= 0.95,
        format!("max spread {spread:.2e}; reference inside band at {:.1}% of points", 100.0 * share),
    )
}

fn monte_carlo_cross_check() -> Outcome {
    let us = [0.0, 5.0, 10.0];
    let cases = [0, 1];
    let sim = SimConfig {
        paths: 100_000,
        ..SimConfig::default()
    };
    let (mut worst_v, mut worst_p): (f64, f64) = (0.0, 0.0);
    for (d, (_, claim)) in densities().iter().enumerate() {
        let functionals: Vec<Functional> = cases
            .iter()
            .map(|&c| {
                let case = PenaltyCase::named()[c].clone();
                Functional {
                    alpha: case.default_alpha(),
                    case,
                }
            })
            .collect();
        let model = RiskModel::paper_settings(0.0, claim.clone());
        let references: Vec<SolutionTable> = cases.iter().map(|&c| reference(d, c, None)).collect();
        let nets: Vec<Mlp> = cases.iter().map(|&c| network(d, c, None, 0)).collect();
        for &u in &us {
            let est = montecarlo::estimate_many(&model, &functionals, u, &sim).unwrap();
            for k in 0..cases.len() {
                let z = |v: f64| (v - est[k].value).abs() / est[k].std_error;
                worst_v = worst_v.max(z(table_value(&references[k], u)));
                worst_p = worst_p.max(z(nets[k].forward(u)));
            }
        }
    }
    outcome(
        worst_v <= 3.0 && worst_p <= 3.0,
        format!("max |z| vs 1e5-path estimates: Volterra {worst_v:.2}, network {worst_p:.2}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<_> = entries
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let base = "claim.kind = erlang\nclaim.shape = 2\nclaim.rate = 2\npenalty.case = claim_causing_ruin\n";
    let runs: [(&str, &str, String); 6] = [
        ("solve", "volterra", String::new()),
        ("solve", "pinn", "pinn.max_iterations = 200\npinn.grad_tol = 0\n".into()),
        ("solve", "pinn", "barrier.level = 8\npinn.optimizer = adam\npinn.adam_iterations = 100\n".into()),
        ("simulate", "montecarlo", "montecarlo.paths = 20000\n".into()),
        ("initial-value", "volterra", String::new()),
        ("compare", "volterra", "compare.method_a = montecarlo\nmontecarlo.paths = 5000\n".into()),
    ];
    let mut failures = Vec::new();
    for (command, method, extra) in &runs {
        let root = tempfile::tempdir().unwrap();
        let cfg = root.path().join("run.cfg");
        fs::write(&cfg, format!("{base}{extra}")).unwrap();
        let outputs: Vec<_> = ["a", "b"]
            .iter()
            .map(|sub| {
                let out = root.path().join(sub);
                Command::new(env!("CARGO_BIN_EXE_gerber-shiu"))
                    .args([command, "--method", method, "--seed", "7", "--config"])
                    .arg(&cfg)
                    .arg("--output")
                    .arg(&out)
                    .output()
                    .unwrap();
                snapshot(&out)
            })
            .collect();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{command} {method}"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} solver runs repeated with identical files", runs.len())
    } else {
        format!("differing outputs: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

struct Criterion {
    number: usize,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn main() {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria = [
        Criterion { number: 1, name: "quadrature exactness", budget: minutes(1), check: quadrature_exactness },
        Criterion { number: 2, name: "differentiation oracle", budget: minutes(1), check: differentiation_oracle },
        Criterion { number: 3, name: "classical closed form", budget: minutes(1), check: classical_oracle },
        Criterion { number: 4, name: "initial value consistency", budget: minutes(10), check: initial_value_consistency },
        Criterion { number: 5, name: "network vs Volterra", budget: minutes(20), check: pinn_vs_volterra },
        Criterion { number: 6, name: "barrier boundary condition", budget: minutes(10), check: barrier_condition },
        Criterion { number: 7, name: "seed variability band", budget: minutes(30), check: seed_band },
        Criterion { number: 8, name: "Monte Carlo cross-check", budget: minutes(10), check: monte_carlo_cross_check },
        Criterion { number: 9, name: "determinism", budget: minutes(10), check: determinism },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.number)) {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= c.budget;
        println!(
            "criterion {} ({}): {} - {} [{:.1} s, budget {} s]",
            c.number,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if !pass {
            failed.push(c.number);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
