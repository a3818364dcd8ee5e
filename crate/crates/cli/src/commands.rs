//! One handler per subcommand. Each returns its tables and a summary; `main` writes them.

use std::path::{Path, PathBuf};

use heis_core::barriers::{self, BarrierParams};
use heis_core::coefficients::{self, MatrixRecord, PREDICATE_TOL};
use heis_core::group::{self, HPoint};
use heis_core::quadrature::{self, sampling, DomainDescriptor, QuadratureMethod, QuadratureSpec};
use heis_core::solver::harness::{self, HarnackCase, HarnackReport};
use heis_core::solver::{self, DirichletProblem, Grid, Scheme, Solution, SolveOptions};
use heis_core::{CoefficientField, CoefficientMatrix, Region};
use serde_json::{json, Value};

use crate::config::{self, MatrixKind, SchemeChoice};
use crate::report::{self, num, opt, Table};

pub struct Outcome {
    pub pass: bool,
    pub summary: Value,
    /// `(suffix, table)`; an empty suffix names the main table `<command>.csv`.
    pub tables: Vec<(&'static str, Table)>,
    /// Extra files written by the handler itself.
    pub files: Vec<PathBuf>,
}

impl Outcome {
    fn new(pass: bool, summary: Value, table: Table) -> Self {
        Self {
            pass,
            summary,
            tables: vec![("", table)],
            files: Vec::new(),
        }
    }
}

type Run = Result<Outcome, String>;

fn text<E: ToString>(e: E) -> String {
    e.to_string()
}

fn point(c: [f64; 3]) -> HPoint {
    HPoint::h1(c[0], c[1], c[2])
}

fn flag(b: bool) -> String {
    b.to_string()
}

pub fn verify_identities(cfg: &config::VerifyIdentities, seed: u64) -> Run {
    let mut table = Table::new(&[
        "kind",
        "n",
        "index",
        "symplectic_residual",
        "identity_residual",
        "gamma_residual",
        "pass",
    ]);
    let mut rng = sampling::seeded_rng(seed, 0x1d);
    let mut matrices: Vec<(&str, usize, CoefficientMatrix)> = Vec::new();
    match &cfg.matrix {
        Some(src) => matrices.push(("given", 0, src.load()?)),
        None => {
            for &n in &cfg.n {
                for k in 0..cfg.matrices {
                    let m = coefficients::random_symplectic(n, cfg.lambda, cfg.big_lambda, seed.wrapping_add((1000 * n + k) as u64))
                        .map_err(text)?;
                    matrices.push(("generated", k, m));
                }
            }
        }
    }
    let (mut worst_id, mut worst_gamma) = (0.0f64, 0.0f64);
    let mut pass = true;
    for (kind, k, m) in &matrices {
        let sym = coefficients::is_symplectic(m, PREDICATE_TOL).map_err(text)?;
        let (mut id, mut gamma) = (0.0f64, 0.0f64);
        for _ in 0..cfg.points {
            let p = sampling::multiscale_point(m.n(), &mut rng);
            id = id.max(barriers::check_identity(m, &p).map_err(text)?.relative());
            gamma = gamma.max(barriers::l_m_gamma_residual(m, &p).map_err(text)?.relative());
        }
        let ok = sym.symplectic && id <= cfg.tol && gamma <= cfg.gamma_tol;
        pass &= ok;
        worst_id = worst_id.max(id);
        worst_gamma = worst_gamma.max(gamma);
        table.push(vec![
            kind.to_string(),
            m.n().to_string(),
            k.to_string(),
            num(sym.residual),
            num(id),
            num(gamma),
            flag(ok),
        ]);
    }
    let mut witnesses = 0;
    let examples = if cfg.converse { coefficients::non_symplectic_examples() } else { Vec::new() };
    for (k, m) in examples.iter().enumerate() {
        let sym = coefficients::is_symplectic(m, PREDICATE_TOL).map_err(text)?;
        let mut best = 0.0f64;
        for _ in 0..cfg.points {
            let p = sampling::multiscale_point(m.n(), &mut rng);
            best = best.max(barriers::check_identity(m, &p).map_err(text)?.relative());
            if best > cfg.witness_threshold {
                break;
            }
        }
        let ok = !sym.symplectic && best > cfg.witness_threshold;
        witnesses += usize::from(ok);
        pass &= ok;
        table.push(vec![
            "converse".into(),
            m.n().to_string(),
            k.to_string(),
            num(sym.residual),
            num(best),
            String::new(),
            flag(ok),
        ]);
    }
    let summary = json!({
        "matrices": matrices.len(),
        "max_identity_residual": worst_id,
        "max_gamma_residual": worst_gamma,
        "converse_witnesses": witnesses,
        "converse_examples": examples.len(),
    });
    Ok(Outcome::new(pass, summary, table))
}

pub fn gen_matrix(cfg: &config::GenMatrix, seed: u64, out: &Path) -> Run {
    let mut table = Table::new(&["index", "n", "kind", "min_eigenvalue", "max_eigenvalue", "determinant", "symplectic_residual"]);
    let mut records: Vec<MatrixRecord> = Vec::new();
    for k in 0..cfg.count {
        let s = seed.wrapping_add(k as u64);
        let m = match cfg.kind {
            MatrixKind::Symplectic => coefficients::random_symplectic(cfg.n, cfg.lambda, cfg.big_lambda, s),
            MatrixKind::UnitDet => coefficients::random_unit_det_spd(cfg.n, cfg.lambda, cfg.big_lambda, s),
        }
        .map_err(text)?;
        let sym = coefficients::is_symplectic(&m, PREDICATE_TOL).map_err(text)?;
        let eig = m.eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        table.push(vec![
            k.to_string(),
            cfg.n.to_string(),
            format!("{:?}", cfg.kind).to_lowercase(),
            num(lo),
            num(hi),
            num(m.determinant()),
            num(sym.residual),
        ]);
        records.push(m.to_record());
    }
    let path = out.join("matrices.json");
    let body = serde_json::to_string_pretty(&records).map_err(text)?;
    std::fs::write(&path, body + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    let mut o = Outcome::new(true, json!({ "count": records.len(), "file": path.display().to_string() }), table);
    o.files.push(path);
    Ok(o)
}

pub fn alpha(cfg: &config::Alpha, seed: u64) -> Run {
    let spec = QuadratureSpec::new(cfg.method, cfg.samples, seed, 1e-3).map_err(text)?;
    let matrices: Vec<CoefficientMatrix> = match &cfg.matrix {
        Some(src) => vec![src.load()?],
        None => (0..cfg.count)
            .map(|k| coefficients::random_symplectic(1, cfg.lambda, cfg.big_lambda, seed.wrapping_add(k as u64)))
            .collect::<Result<_, _>>()
            .map_err(text)?,
    };
    if cfg.radii.is_empty() {
        return Err("`radii` must not be empty".into());
    }
    let mut table = Table::new(&[
        "index",
        "r",
        "alpha_surface",
        "surface_error",
        "alpha_volume",
        "volume_error",
        "q_c_tilde",
        "pass",
    ]);
    let mut pass = true;
    let (mut worst_inv, mut worst_sv) = (0.0f64, 0.0f64);
    for (k, m) in matrices.iter().enumerate() {
        let q = (2 * m.n() + 2) as f64;
        let ct = quadrature::c_tilde(m.n(), m.lambda(), m.big_lambda(), &spec).map_err(text)?;
        let floor = q * ct.value;
        let vol = quadrature::alpha_volume(m, &spec).map_err(text)?;
        let reference = if cfg.radii.contains(&1.0) { 1.0 } else { cfg.radii[0] };
        let a_ref = quadrature::alpha_surface(m, reference, &spec).map_err(text)?;
        for &r in &cfg.radii {
            let a = quadrature::alpha_surface(m, r, &spec).map_err(text)?;
            let comb = (a.error() / a.value).hypot(a_ref.error() / a_ref.value);
            let inv = (a.value / a_ref.value - 1.0).abs() / comb.max(f64::MIN_POSITIVE);
            let sv = (a.value - vol.value).abs() / a.error().hypot(vol.error()).max(f64::MIN_POSITIVE);
            let ok = inv <= 2.0 && sv <= 1.0 && a.value >= floor && vol.value >= floor;
            worst_inv = worst_inv.max(inv);
            worst_sv = worst_sv.max(sv);
            pass &= ok;
            table.push(vec![
                k.to_string(),
                num(r),
                num(a.value),
                num(a.error()),
                num(vol.value),
                num(vol.error()),
                num(floor),
                flag(ok),
            ]);
        }
    }
    let summary = json!({
        "matrices": matrices.len(),
        "worst_invariance_in_combined_errors": worst_inv,
        "worst_surface_volume_in_combined_errors": worst_sv,
        "reported_sigmas": quadrature::REPORTED_SIGMAS,
    });
    Ok(Outcome::new(pass, summary, table))
}

pub fn epsilon0(cfg: &config::Epsilon0) -> Run {
    let q = 2 * cfg.n + 2;
    let e = barriers::epsilon0(&cfg.modulus, cfg.lambda, cfg.big_lambda, q, cfg.delta).map_err(text)?;
    let mut table = Table::new(&["eps0", "log_eps0", "threshold", "c", "capped", "unattained"]);
    table.push(vec![
        num(e.eps0),
        num(e.log_eps0),
        num(e.threshold),
        num(e.c),
        flag(e.capped),
        flag(e.unattained),
    ]);
    let summary = serde_json::to_value(&e).map_err(text)?;
    Ok(Outcome::new(!e.unattained, summary, table))
}

pub fn barrier_check(cfg: &config::BarrierCheck, seed: u64, out: &Path) -> Run {
    let mut table = Table::new(&[
        "check",
        "delta",
        "r",
        "threshold_or_floor",
        "violations",
        "min_value",
        "min_stderr",
        "pass",
    ]);
    let mut pass = true;
    let m = coefficients::random_symplectic(cfg.n, cfg.lambda, cfg.big_lambda, seed).map_err(text)?;
    let mut ratios = Vec::new();
    let mut trace = Vec::new();
    for &delta in &cfg.deltas {
        let params = BarrierParams::new(delta, m.clone()).map_err(text)?;
        let c = barriers::certify_subsolution(&params, cfg.lambda, cfg.big_lambda, cfg.samples, seed).map_err(text)?;
        let ok = c.violations == 0;
        pass &= ok;
        table.push(vec![
            "certificate".into(),
            num(delta),
            String::new(),
            num(c.threshold),
            c.violations.to_string(),
            num(c.min_normalized),
            String::new(),
            flag(ok),
        ]);
        let field = CoefficientField::constant(m.clone(), Region::Everywhere);
        let spec = QuadratureSpec::new(QuadratureMethod::MonteCarlo, cfg.growth.samples, seed, 1e-3).map_err(text)?;
        let z0 = HPoint::origin(cfg.n);
        let mut mins = Vec::new();
        for &r in &cfg.growth.radii {
            let o = DomainDescriptor::koranyi_ball(z0.clone(), r).map_err(text)?;
            let op = DomainDescriptor::koranyi_ball(z0.clone(), r / 2.0).map_err(text)?;
            let g = barriers::barrier_growth_check(&field, delta, &z0, r, &o, &op, cfg.growth.mu_fraction * r, &spec, cfg.growth.points)
                .map_err(text)?;
            pass &= g.pass;
            table.push(vec![
                "growth".into(),
                num(delta),
                num(r),
                num(g.floor),
                String::new(),
                num(g.min_value),
                num(g.min_stderr),
                flag(g.pass),
            ]);
            mins.push((r, g.min_value));
            trace.extend(g.rows);
        }
        for a in &mins {
            if let Some(b) = mins.iter().find(|b| (b.0 - a.0 / 2.0).abs() <= 1e-12 * a.0) {
                let ratio = b.1 / a.1;
                let target = 2f64.powf(4.0 * delta);
                let ok = (ratio / target - 1.0).abs() <= cfg.growth.ratio_tol;
                pass &= ok;
                ratios.push(json!({ "delta": delta, "r": a.0, "ratio": ratio, "target": target, "pass": ok }));
            }
        }
    }
    let path = out.join("barrier-check-trace.csv");
    let w = report::stamped(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    barriers::write_trace_csv(&trace, w).map_err(text)?;
    let mut o = Outcome::new(pass, json!({ "growth_ratios": ratios }), table);
    o.files.push(path);
    Ok(o)
}

fn scheme_list(choice: SchemeChoice) -> Vec<Scheme> {
    match choice {
        SchemeChoice::EuclideanStencil => vec![Scheme::EuclideanStencil],
        SchemeChoice::SemiLagrangian => vec![Scheme::SemiLagrangian],
        SchemeChoice::Both => vec![Scheme::EuclideanStencil, Scheme::SemiLagrangian],
    }
}

pub fn solve(cfg: &config::Solve, _seed: u64) -> Run {
    let field = cfg.field.build(0)?;
    let grid = cfg.grid.build()?;
    let data = cfg.data.build(&field, 0)?;
    let problem = DirichletProblem::new(field.clone(), grid.clone(), data).map_err(text)?;
    let opts = SolveOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let exact = cfg.data.exact(&field);
    let schemes = scheme_list(cfg.scheme);
    let mut sols: Vec<Solution> = Vec::new();
    let mut pass = true;
    let mut runs = Vec::new();
    for &s in &schemes {
        let sol = solver::solve(&problem, s, &opts).map_err(text)?;
        let err = exact.as_ref().map(|e| solver::max_error(&problem, &sol, &|z: &HPoint| e(z)));
        let dmp = sol.dmp.as_ref().map(|d| d.violations);
        let ok = err.is_none_or(|e| e <= cfg.oracle_tol) && dmp.unwrap_or(0) == 0;
        pass &= ok;
        runs.push(json!({
            "scheme": s.tag(),
            "iterations": sol.iterations,
            "residual": sol.residual,
            "method": sol.method,
            "oracle_error": err,
            "dmp": sol.dmp,
            "pass": ok,
        }));
        sols.push(sol);
    }
    let discrepancy = (sols.len() == 2).then(|| {
        (0..grid.len())
            .map(|i| (sols[0].values[i] - sols[1].values[i]).abs())
            .fold(0.0f64, f64::max)
    });
    if let Some(d) = discrepancy {
        pass &= d <= cfg.discrepancy_tol;
    }
    let mut header = vec!["x1", "x2", "t"];
    header.extend(schemes.iter().map(|s| s.tag()));
    header.push("exact");
    let mut table = Table::new(&header);
    for i in 0..grid.len() {
        let z = grid.point(i);
        let mut row = vec![num(z.x[0]), num(z.x[1]), num(z.t)];
        row.extend(sols.iter().map(|s| num(s.values[i])));
        row.push(opt(exact.as_ref().map(|e| e(&z))));
        table.push(row);
    }
    let summary = json!({
        "nodes": grid.len(),
        "runs": runs,
        "scheme_discrepancy": discrepancy,
        "discrepancy_tol": cfg.discrepancy_tol,
    });
    Ok(Outcome::new(pass, summary, table))
}

pub fn critical_density(cfg: &config::CriticalDensity, seed: u64) -> Run {
    let q = 4;
    let spec = QuadratureSpec::new(QuadratureMethod::StratifiedGrid, cfg.constant_samples, seed, 1e-3).map_err(text)?;
    let eps = harness::epsilon_critical(cfg.lambda, cfg.big_lambda, q, cfg.delta, &spec).map_err(text)?;
    let eta = barriers::eta(cfg.lambda, cfg.big_lambda).map_err(text)?;
    let target = match cfg.eps0 {
        Some(e0) => {
            let omega = group::unit_ball_volume(1) * (eta * cfg.r).powi(q as i32);
            harness::epsilon_bar(eps.eps, e0, omega, q, eta).map_err(text)?
        }
        None => eps.eps,
    };
    let z0 = point(cfg.center);
    let mut table = Table::new(&["matrix", "label", "fraction", "stderr", "threshold", "pass", "skipped"]);
    let (mut checked, mut failures) = (0, 0);
    for k in 0..cfg.matrices {
        let s = seed.wrapping_add(k as u64);
        let m = coefficients::random_symplectic(1, cfg.lambda, cfg.big_lambda, s).map_err(text)?;
        let corpus = harness::supersolution_corpus(&m, &z0, cfg.r, eta, cfg.per_matrix, s).map_err(text)?;
        let spec = spec.with_samples(cfg.samples).with_seed(s);
        for sup in &corpus {
            let rep = harness::critical_density_check(sup, &z0, cfg.r, eta, target, &spec).map_err(text)?;
            if rep.skipped.is_none() {
                checked += 1;
                failures += usize::from(!rep.pass);
            }
            table.push(vec![
                k.to_string(),
                rep.label.clone(),
                num(rep.fraction),
                num(rep.stderr),
                num(rep.eps),
                flag(rep.pass),
                rep.skipped.clone().unwrap_or_default(),
            ]);
        }
    }
    let summary = json!({
        "eps": eps.eps,
        "c0": eps.c0,
        "growth_constant": eps.growth_constant,
        "gamma": eps.gamma,
        "threshold": target,
        "eta": eta,
        "checked": checked,
        "failures": failures,
    });
    Ok(Outcome::new(checked > 0 && failures == 0, summary, table))
}

struct Solved {
    fields: Vec<CoefficientField>,
    /// `solutions[f][d]`.
    solutions: Vec<Vec<Solution>>,
}

fn solve_family(fam: &config::Family, grid: &Grid) -> Result<Solved, String> {
    let opts = SolveOptions {
        tol: fam.tol,
        ..SolveOptions::default()
    };
    let mut fields = Vec::new();
    let mut solutions = Vec::new();
    for f in 0..fam.fields {
        let field = fam.field.build(f as u64)?;
        let data = (0..fam.data_count)
            .map(|d| fam.data.build(&field, (fam.data_count * f + d) as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let problem = DirichletProblem::new(field.clone(), grid.clone(), data[0].clone()).map_err(text)?;
        solutions.push(solver::solve_many(&problem, fam.scheme, &data, &opts).map_err(text)?);
        fields.push(field);
    }
    Ok(Solved { fields, solutions })
}

pub fn harnack(cfg: &config::Harnack) -> Run {
    let fam = &cfg.family;
    let coarse = fam.grid.build()?;
    let grids = if cfg.refine { vec![coarse.clone(), coarse.refined()] } else { vec![coarse] };
    let z0 = point(fam.center);
    let mut table = Table::new(&[
        "level",
        "field",
        "datum",
        "r",
        "K",
        "c_measured",
        "eps0",
        "eta",
        "admissible",
        "large_ball",
        "inf_zero",
        "nodes",
        "inflated_ratio",
    ]);
    let mut c_hat = Vec::new();
    let mut pass = true;
    let mut admissible = 0;
    let mut k_used = None;
    for (level, grid) in grids.iter().enumerate() {
        let solved = solve_family(fam, grid)?;
        let mut level_max: Option<f64> = None;
        for (f, (field, sols)) in solved.fields.iter().zip(&solved.solutions).enumerate() {
            let k = match cfg.k {
                Some(k) => k,
                None => barriers::eta(field.lambda(), field.big_lambda()).map_err(text)?,
            };
            k_used = Some(k);
            let cases: Vec<HarnackCase> = sols
                .iter()
                .map(|s| HarnackCase {
                    label: fam.field.label(),
                    field,
                    solution: s,
                })
                .collect();
            let reps: Vec<HarnackReport> = harness::harnack_scan(&cases, &z0, &cfg.radii, k, cfg.delta).map_err(text)?;
            for (j, rep) in reps.iter().enumerate() {
                if rep.admissible {
                    admissible += 1;
                    pass &= rep.c_measured.is_finite();
                }
                table.push(vec![
                    level.to_string(),
                    f.to_string(),
                    (j / cfg.radii.len()).to_string(),
                    num(rep.r),
                    num(rep.k),
                    num(rep.c_measured),
                    num(rep.eps0),
                    num(rep.eta),
                    flag(rep.admissible),
                    flag(rep.large_ball),
                    flag(rep.inf_zero),
                    rep.nodes.to_string(),
                    num(rep.inflated_ratio),
                ]);
            }
            if let Some(c) = harness::harnack_constant(&reps) {
                level_max = Some(level_max.map_or(c, |m: f64| m.max(c)));
            }
        }
        c_hat.push(level_max);
    }
    pass &= admissible > 0;
    let change = match (c_hat.first().copied().flatten(), c_hat.get(1).copied().flatten()) {
        (Some(a), Some(b)) => Some((b / a - 1.0).abs()),
        _ => None,
    };
    if cfg.refine {
        pass &= change.is_some_and(|c| c <= cfg.stability_tol);
    }
    let summary = json!({
        "K": k_used,
        "admissible": admissible,
        "c_hat": c_hat,
        "refinement_change": change,
        "stability_tol": cfg.stability_tol,
        "note": "measured sup/inf ratios; the Harnack constants C and K are not computed",
    });
    Ok(Outcome::new(pass, summary, table))
}

pub fn holder(cfg: &config::Holder) -> Run {
    let fam = &cfg.family;
    let grid = fam.grid.build()?;
    let z0 = point(fam.center);
    let solved = solve_family(fam, &grid)?;
    let mut table = Table::new(&["field", "datum", "exponent", "log_constant", "fit_residual", "undefined"]);
    let mut a0: Option<f64> = None;
    let mut undefined = 0;
    for (f, sols) in solved.solutions.iter().enumerate() {
        for (d, sol) in sols.iter().enumerate() {
            let fit = solver::holder_estimate(sol, &z0, cfg.r).map_err(text)?;
            if let Some(e) = fit.exponent {
                a0 = Some(a0.map_or(e, |m| m.min(e)));
            } else {
                undefined += 1;
            }
            table.push(vec![
                f.to_string(),
                d.to_string(),
                opt(fit.exponent),
                opt(fit.log_constant),
                opt(fit.fit_residual),
                flag(fit.undefined()),
            ]);
        }
    }
    let pass = a0.is_none_or(|a| a > 0.0);
    let summary = json!({ "a0": a0, "undefined": undefined, "solutions": table.rows.len() });
    Ok(Outcome::new(pass, summary, table))
}
