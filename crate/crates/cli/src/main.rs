//! `heis`: batch front-end for the Heisenberg-group verification suites and experiments.

mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::ExperimentConfig;

const EXIT_CRITERION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "heis", version, about = "Harnack, barrier and density experiments for L_A = Σ aᵢⱼ XᵢXⱼ on ℍⁿ")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; its `[<subcommand>]` table holds the parameters.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (the config's `seed` wins).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (the config's `out` wins).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Gauge identity and L_M Γ_M residuals for symplectic M, plus non-symplectic witnesses.
    #[command(after_help = "CSV columns: kind, n, index, symplectic_residual, identity_residual, gamma_residual, pass")]
    VerifyIdentities(Common),
    /// Draws coefficient matrices and writes them to matrices.json.
    #[command(
        after_help = "CSV columns: index, n, kind, min_eigenvalue, max_eigenvalue, determinant, symplectic_residual"
    )]
    GenMatrix(Common),
    /// Surface and volume forms of α(M, r) against Q·C̃(λ, Λ).
    #[command(after_help = "CSV columns: index, r, alpha_surface, surface_error, alpha_volume, volume_error, q_c_tilde, pass")]
    Alpha(Common),
    /// Radius ε₀ below which the perturbed kernel stays a subsolution.
    #[command(after_help = "CSV columns: eps0, log_eps0, threshold, c, capped, unattained")]
    Epsilon0(Common),
    /// Sampled subsolution certificate and growth floor of the cut-off potential.
    #[command(
        after_help = "CSV columns: check, delta, r, threshold_or_floor, violations, min_value, min_stderr, pass\n\
                      Trace (barrier-check-trace.csv): x1.., t, value, residual, floor"
    )]
    BarrierCheck(Common),
    /// Dirichlet problem with both schemes, their discrepancy and the oracle error.
    #[command(after_help = "CSV columns: x1, x2, t, one value column per scheme, exact (empty when unknown)")]
    Solve(Common),
    /// Measure of {u < 1} in B_r for a corpus of supersolutions against ε or ε̄.
    #[command(after_help = "CSV columns: matrix, label, fraction, stderr, threshold, pass, skipped")]
    CriticalDensity(Common),
    /// sup/inf ratios over a family of solved problems.
    #[command(
        after_help = "CSV columns: level, field, datum, r, K, c_measured, eps0, eta, admissible, large_ball, inf_zero, nodes, inflated_ratio"
    )]
    Harnack(Common),
    /// Hölder exponent fits over a family of solved problems.
    #[command(after_help = "CSV columns: field, datum, exponent, log_constant, fit_residual, undefined")]
    Holder(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::VerifyIdentities(c) => ("verify-identities", c),
            Command::GenMatrix(c) => ("gen-matrix", c),
            Command::Alpha(c) => ("alpha", c),
            Command::Epsilon0(c) => ("epsilon0", c),
            Command::BarrierCheck(c) => ("barrier-check", c),
            Command::Solve(c) => ("solve", c),
            Command::CriticalDensity(c) => ("critical-density", c),
            Command::Harnack(c) => ("harnack", c),
            Command::Holder(c) => ("holder", c),
        }
    }
}

fn resolve<T: PartialEq + std::fmt::Debug>(name: &str, file: Option<T>, flag: Option<T>, warnings: &mut Vec<String>) -> Option<T> {
    match (file, flag) {
        (Some(f), Some(g)) => {
            if f != g {
                warnings.push(format!("--{name} {g:?} ignored; the config sets {f:?}"));
            }
            Some(f)
        }
        (f, g) => f.or(g),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn block<T: Default>(b: Option<T>) -> T {
    b.unwrap_or_default()
}

fn run(name: &str, cfg: ExperimentConfig, seed: u64, out: &Path) -> Result<(serde_json::Value, commands::Outcome), String> {
    Ok(match name {
        "verify-identities" => {
            let c = block(cfg.verify_identities);
            (to_value(&c), commands::verify_identities(&c, seed)?)
        }
        "gen-matrix" => {
            let c = block(cfg.gen_matrix);
            (to_value(&c), commands::gen_matrix(&c, seed, out)?)
        }
        "alpha" => {
            let c = block(cfg.alpha);
            (to_value(&c), commands::alpha(&c, seed)?)
        }
        "epsilon0" => {
            let c = cfg.epsilon0.ok_or("missing [epsilon0] table")?;
            (to_value(&c), commands::epsilon0(&c)?)
        }
        "barrier-check" => {
            let c = block(cfg.barrier_check);
            (to_value(&c), commands::barrier_check(&c, seed, out)?)
        }
        "solve" => {
            let c = block(cfg.solve);
            (to_value(&c), commands::solve(&c, seed)?)
        }
        "critical-density" => {
            let c = block(cfg.critical_density);
            (to_value(&c), commands::critical_density(&c, seed)?)
        }
        "harnack" => {
            let c = block(cfg.harnack);
            (to_value(&c), commands::harnack(&c)?)
        }
        "holder" => {
            let c = block(cfg.holder);
            (to_value(&c), commands::holder(&c)?)
        }
        other => return Err(format!("unknown command {other}")),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.parts();
    let cfg = match config::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(cmd) = &cfg.command {
        if cmd != name {
            eprintln!("error: config is for `{cmd}`, not `{name}`");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if name == "epsilon0" && cfg.epsilon0.is_none() {
        eprintln!("error: {}: missing [epsilon0] table", common.config.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    let mut warnings = Vec::new();
    let seed = resolve("seed", cfg.seed, common.seed, &mut warnings).unwrap_or(0);
    let out = resolve("out", cfg.out.clone(), common.out.clone(), &mut warnings).unwrap_or_else(|| PathBuf::from("."));
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: {}: {e}", out.display());
        return ExitCode::from(EXIT_CRITERION);
    }
    let (params, outcome) = match run(name, cfg, seed, &out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {name}: {e}");
            return ExitCode::from(EXIT_CRITERION);
        }
    };
    let mut files = outcome.files.clone();
    for (suffix, table) in &outcome.tables {
        let path = out.join(format!("{name}{suffix}.csv"));
        if let Err(e) = report::write_csv(&path, table) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CRITERION);
        }
        files.push(path);
    }
    let log = out.join(format!("{name}.json"));
    if let Err(e) = report::write_log(&log, name, seed, outcome.pass, params, outcome.summary.clone(), &warnings, &files) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CRITERION);
    }
    println!("{name}: {}", if outcome.pass { "PASS" } else { "FAIL" });
    println!("{}", serde_json::to_string(&outcome.summary).unwrap_or_default());
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CRITERION)
    }
}
