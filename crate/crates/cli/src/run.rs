//! Subcommand implementations. Every command writes its files into an output
//! directory; nothing written depends on wall-clock time or thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use gerber_shiu::initial_value::{anchor_value, initial_value};
use gerber_shiu::montecarlo::{self, Estimate};
use gerber_shiu::network::Mlp;
use gerber_shiu::pinn::{self, ProblemSpec};
use gerber_shiu::table::fmt_g17;
use gerber_shiu::{volterra, ClaimDistribution, PenaltyCase, RiskModel, SolutionTable};

use crate::config::{ExperimentConfig, Method};
use crate::error::CliError;

/// Floor on the denominator of relative errors.
pub const REL_FLOOR: f64 = 1e-3;

/// A solved curve plus whether its solver met its convergence criteria.
#[derive(Debug, Clone)]
pub struct Curve {
    pub method: Method,
    pub table: SolutionTable,
    pub converged: bool,
    pub network: Option<Mlp>,
    pub final_loss: Option<f64>,
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    // write-then-rename so a cell's file is either complete or absent
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn uniform_grid(upper: f64, points: usize) -> Vec<f64> {
    SolutionTable::uniform_grid(upper, points - 1)
}

fn volterra_curve(cfg: &ExperimentConfig) -> Result<Curve, CliError> {
    let table = match cfg.barrier {
        Some(b) => volterra::solve_barrier(&cfg.model, &cfg.case, b, cfg.volterra_n)?,
        None => volterra::solve_no_barrier(&cfg.model, &cfg.case, cfg.volterra_u_max, cfg.volterra_n)?,
    };
    Ok(Curve {
        method: Method::Volterra,
        table,
        converged: true,
        network: None,
        final_loss: None,
    })
}

fn pinn_curve(cfg: &ExperimentConfig) -> Result<Curve, CliError> {
    let spec = match cfg.barrier {
        Some(b) => ProblemSpec::barrier(cfg.model.clone(), cfg.case.clone(), b)?,
        None => ProblemSpec::no_barrier(cfg.model.clone(), cfg.case.clone(), cfg.pinn_u_max)?,
    };
    let outcome = pinn::train(&spec, &cfg.train)?;
    let grid = uniform_grid(spec.domain.upper(), cfg.grid_points);
    let eval = pinn::evaluate(&outcome.network, &spec.domain, &grid)?;
    for w in &eval.warnings {
        log::warn!("{w}");
    }
    Ok(Curve {
        method: Method::Pinn,
        table: eval.table,
        converged: outcome.report.converged,
        network: Some(outcome.network),
        final_loss: Some(outcome.report.final_loss),
    })
}

fn montecarlo_curve(cfg: &ExperimentConfig, u_values: &[f64]) -> Result<Curve, CliError> {
    let estimates = simulate(cfg, u_values)?;
    let mut table = SolutionTable::new(u_values.to_vec(), estimates.iter().map(|e| e.value).collect())?;
    table.std_error = Some(estimates.iter().map(|e| e.std_error).collect());
    Ok(Curve {
        method: Method::MonteCarlo,
        table,
        converged: true,
        network: None,
        final_loss: None,
    })
}

pub fn simulate(cfg: &ExperimentConfig, u_values: &[f64]) -> Result<Vec<Estimate>, CliError> {
    u_values
        .iter()
        .map(|&u| montecarlo::estimate(&cfg.model, &cfg.case, u, &cfg.sim).map_err(CliError::from))
        .collect()
}

pub fn solve_curve(cfg: &ExperimentConfig, method: Method) -> Result<Curve, CliError> {
    match method {
        Method::Volterra => volterra_curve(cfg),
        Method::Pinn => pinn_curve(cfg),
        Method::MonteCarlo => montecarlo_curve(cfg, &cfg.mc_u_values),
    }
}

fn not_converged(what: &str) -> CliError {
    CliError::NonConvergence(format!("{what} stopped before meeting its convergence criteria"))
}

/// `solve`: one curve CSV, plus network parameters for the network method.
pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let curve = solve_curve(cfg, cfg.method)?;
    let mut written = vec![out.join(format!("solution_{}.csv", cfg.method.name()))];
    write_file(&written[0], &curve.table.to_csv())?;
    if let Some(net) = &curve.network {
        let p = out.join("pinn_params.txt");
        write_file(&p, &net.to_text())?;
        written.push(p);
    }
    if !curve.converged {
        return Err(not_converged("training"));
    }
    Ok(written)
}

/// `initial-value`: `Φ(0)` and the normalising constant κ.
pub fn initial_value_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut text = String::from("phi0,kappa\n");
    if cfg.model.r > 0.0 {
        let iv = initial_value(&cfg.model, &cfg.case)?;
        writeln!(text, "{},{}", fmt_g17(iv.phi0), fmt_g17(iv.kappa)).unwrap();
    } else {
        let phi0 = anchor_value(&cfg.model, &cfg.case)?;
        writeln!(text, "{},", fmt_g17(phi0)).unwrap();
    }
    Ok(text)
}

/// `simulate`: Monte Carlo estimates at the configured surplus levels.
pub fn simulate_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let estimates = simulate(cfg, &cfg.mc_u_values)?;
    let mut text = String::from("u,estimate,std_error,paths,horizon\n");
    for (u, e) in cfg.mc_u_values.iter().zip(&estimates) {
        writeln!(
            text,
            "{},{},{},{},{}",
            fmt_g17(*u),
            fmt_g17(e.value),
            fmt_g17(e.std_error),
            e.paths,
            fmt_g17(e.horizon)
        )
        .unwrap();
    }
    Ok(text)
}

fn value_at(curve: &Curve, u: f64) -> Result<f64, CliError> {
    let t = &curve.table;
    if let Some(j) = t.u.iter().position(|&x| x == u) {
        return Ok(t.phi[j] * t.log_scale.exp());
    }
    t.interpolate(u)
        .map(|(v, _)| v * t.log_scale.exp())
        .ok_or_else(|| CliError::Config(format!("{} curve has no value at u = {u}", curve.method.name())))
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub csv: String,
    pub max_rel_err: f64,
    pub converged: bool,
    pub final_loss: Option<f64>,
}

/// Compares two solved curves on `grid`; `b` is the reference.
pub fn compare_curves(a: &Curve, b: &Curve, grid: &[f64]) -> Result<Comparison, CliError> {
    let mut csv = String::from("u,phi_a,phi_b,rel_err\n");
    let mut worst: f64 = 0.0;
    for &u in grid {
        let (va, vb) = (value_at(a, u)?, value_at(b, u)?);
        let rel = (va - vb).abs() / vb.abs().max(REL_FLOOR);
        worst = worst.max(rel);
        writeln!(csv, "{},{},{},{}", fmt_g17(u), fmt_g17(va), fmt_g17(vb), fmt_g17(rel)).unwrap();
    }
    writeln!(csv, "max_rel_err={}", fmt_g17(worst)).unwrap();
    Ok(Comparison {
        csv,
        max_rel_err: worst,
        converged: a.converged && b.converged,
        final_loss: a.final_loss.or(b.final_loss),
    })
}

fn comparison_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    let (a, b) = cfg.compare;
    if a == Method::MonteCarlo || b == Method::MonteCarlo {
        cfg.mc_u_values.clone()
    } else {
        let upper = cfg.domain_upper(a).min(cfg.domain_upper(b));
        uniform_grid(upper, cfg.grid_points)
    }
}

pub fn compare(cfg: &ExperimentConfig) -> Result<Comparison, CliError> {
    let (ma, mb) = cfg.compare;
    let a = solve_curve(cfg, ma)?;
    let b = solve_curve(cfg, mb)?;
    compare_curves(&a, &b, &comparison_grid(cfg))
}

/// One cell of the reproduction grid.
#[derive(Debug, Clone)]
pub struct Cell {
    pub density: &'static str,
    pub case: PenaltyCase,
    pub barrier: Option<f64>,
}

impl Cell {
    pub fn file_stem(&self) -> String {
        match self.barrier {
            Some(b) => format!("{}_{}_barrier{b}", self.density, self.case.name()),
            None => format!("{}_{}", self.density, self.case.name()),
        }
    }
}

pub fn paper_densities() -> [(&'static str, ClaimDistribution); 3] {
    [
        ("exponential", ClaimDistribution::exponential(1.0).expect("valid law")),
        ("erlang", ClaimDistribution::erlang(2, 2.0).expect("valid law")),
        ("combination_exponentials", ClaimDistribution::combination_of_exponentials()),
    ]
}

pub fn reproduction_cells() -> Vec<Cell> {
    let mut cells = Vec::new();
    for (density, _) in paper_densities() {
        for case in PenaltyCase::named() {
            cells.push(Cell {
                density,
                case,
                barrier: None,
            });
        }
    }
    for (density, _) in paper_densities() {
        cells.push(Cell {
            density,
            case: PenaltyCase::LaplaceRuinTime,
            barrier: Some(10.0),
        });
    }
    cells
}

/// The experiment for one cell: `base` with the cell's law, functional,
/// default discount rate and barrier, comparing the network to Volterra.
pub fn cell_config(base: &ExperimentConfig, cell: &Cell) -> Result<ExperimentConfig, CliError> {
    let claim = paper_densities()
        .into_iter()
        .find(|(n, _)| *n == cell.density)
        .map(|(_, c)| c)
        .ok_or_else(|| CliError::Config(format!("unknown density `{}`", cell.density)))?;
    let mut cfg = base.clone();
    cfg.model = RiskModel::new(base.model.c, base.model.lambda, base.model.r, cell.case.default_alpha(), claim)?;
    cfg.claim_kind = cell.density.to_string();
    cfg.case = cell.case.clone();
    cfg.barrier = cell.barrier;
    cfg.sim.barrier = cell.barrier;
    cfg.compare = (Method::Pinn, Method::Volterra);
    Ok(cfg)
}

/// `reproduce`: every cell's comparison CSV plus a summary table.
pub fn reproduce(base: &ExperimentConfig, out: &Path) -> Result<bool, CliError> {
    let cells = reproduction_cells();
    let results: Vec<Result<Comparison, CliError>> = cells
        .par_iter()
        .map(|cell| {
            let cfg = cell_config(base, cell)?;
            let cmp = compare(&cfg)?;
            write_file(&out.join(format!("{}.csv", cell.file_stem())), &cmp.csv)?;
            Ok(cmp)
        })
        .collect();
    let mut summary = String::from("density,case,barrier,max_rel_err,final_loss,converged\n");
    let mut all_converged = true;
    for (cell, res) in cells.iter().zip(results) {
        let cmp = res?;
        all_converged &= cmp.converged;
        writeln!(
            summary,
            "{},{},{},{},{},{}",
            cell.density,
            cell.case.name(),
            cell.barrier.map_or("none".to_string(), fmt_g17),
            fmt_g17(cmp.max_rel_err),
            cmp.final_loss.map_or(String::new(), fmt_g17),
            cmp.converged
        )
        .unwrap();
    }
    write_file(&out.join("summary.csv"), &summary)?;
    Ok(all_converged)
}

