//! Experiment harnesses: Harnack ratios, Hölder exponents and the critical density
//! property, measured on discrete or closed-form solutions.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::assemble::{BoundaryFn, Solution};
use crate::barriers::{self, hess_h_phi};
use crate::coefficients::{CoefficientField, CoefficientMatrix, ContinuityModulus};
use crate::error::{invalid, HeisError, Result};
use crate::group::{self, DiffMode, HPoint, ScalarField};
use crate::quadrature::{self, sampling, DomainDescriptor, FieldFn, QuadratureSpec};

/// `sup/inf` of a solution over the grid nodes of a Korányi ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnackRatio {
    pub ratio: f64,
    pub sup: f64,
    pub inf: f64,
    pub nodes: usize,
    /// The same ratio over the ball inflated by half a cell diagonal.
    pub inflated_ratio: f64,
    /// `inf = 0`; the ratio is reported as infinite.
    pub inf_zero: bool,
}

fn ball_extrema(sol: &Solution, z0: &HPoint, r: f64) -> (f64, f64, usize, bool) {
    let (mut lo, mut hi, mut count, mut negative) = (f64::INFINITY, f64::NEG_INFINITY, 0, false);
    for i in 0..sol.grid.len() {
        let p = sol.grid.point(i);
        if group::distance_unchecked(z0, &p) < r {
            let v = sol.values[i];
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
            negative |= v < 0.0;
        }
    }
    (lo, hi, count, negative)
}

fn ratio_of(sup: f64, inf: f64) -> f64 {
    if inf == 0.0 {
        f64::INFINITY
    } else {
        sup / inf
    }
}

pub fn harnack_ratio(sol: &Solution, z0: &HPoint, r: f64) -> Result<HarnackRatio> {
    group::GroupParams::new(1)?.check(z0)?;
    if !(r > 0.0) {
        return invalid(format!("radius must be positive, got {r}"));
    }
    let (inf, sup, nodes, negative) = ball_extrema(sol, z0, r);
    if nodes == 0 {
        return Err(HeisError::EmptySample(format!("no grid node within distance {r} of z₀")));
    }
    if negative {
        return Err(HeisError::Hypothesis("the solution is negative inside the ball".into()));
    }
    let h = sol.grid.spacing();
    let half_diag = 0.5 * (h[0] * h[0] + h[1] * h[1]).sqrt().max(h[2].sqrt());
    let (inf2, sup2, _, _) = ball_extrema(sol, z0, r + half_diag);
    Ok(HarnackRatio {
        ratio: ratio_of(sup, inf),
        sup,
        inf,
        nodes,
        inflated_ratio: ratio_of(sup2, inf2),
        inf_zero: inf == 0.0,
    })
}

/// One solved member of a Harnack family.
#[derive(Debug, Clone, Copy)]
pub struct HarnackCase<'a> {
    pub label: &'a str,
    pub field: &'a CoefficientField,
    pub solution: &'a Solution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackReport {
    pub family: String,
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub c_measured: f64,
    pub eps0: f64,
    pub eta: f64,
    /// `r ≤ (η/K)ε₀`: the small-ball Harnack estimate applies.
    pub admissible: bool,
    /// Outside the small-ball range; only the bounded-domain variant applies.
    pub large_ball: bool,
    pub inf_zero: bool,
    pub nodes: usize,
    pub inflated_ratio: f64,
}

/// Measures `sup/inf` on `B_r(z₀)` for every case and radius. `B_{Kr}(z₀)` must lie in
/// each grid and the solution must be non-negative there.
pub fn harnack_scan(cases: &[HarnackCase<'_>], z0: &HPoint, radii: &[f64], k: f64, delta: f64) -> Result<Vec<HarnackReport>> {
    let mut out = Vec::with_capacity(cases.len() * radii.len());
    for case in cases {
        let f = case.field;
        let eta = barriers::eta(f.lambda(), f.big_lambda())?;
        if !(k >= eta) {
            return invalid(format!("K = {k} is below η = {eta}"));
        }
        let e0 = barriers::epsilon0(f.modulus(), f.lambda(), f.big_lambda(), 4, delta)?;
        for &r in radii {
            if !case.solution.grid.contains_ball(z0, k * r) {
                return Err(HeisError::Hypothesis(format!("B_(K·{r})(z₀) leaves the grid")));
            }
            let (lo, _, _, negative) = ball_extrema(case.solution, z0, k * r);
            if negative || lo < 0.0 {
                return Err(HeisError::Hypothesis(format!("{} is negative on B_(Kr)(z₀)", case.label)));
            }
            let hr = harnack_ratio(case.solution, z0, r)?;
            let admissible = r <= eta / k * e0.eps0;
            out.push(HarnackReport {
                family: case.label.to_string(),
                r,
                k,
                c_measured: hr.ratio,
                eps0: e0.eps0,
                eta,
                admissible,
                large_ball: !admissible,
                inf_zero: hr.inf_zero,
                nodes: hr.nodes,
                inflated_ratio: hr.inflated_ratio,
            });
        }
    }
    Ok(out)
}

/// Largest finite-or-infinite `sup/inf` among admissible reports.
pub fn harnack_constant(reports: &[HarnackReport]) -> Option<f64> {
    reports
        .iter()
        .filter(|r| r.admissible)
        .map(|r| r.c_measured)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    /// Slope of `log osc` against `log s`; `None` when every oscillation vanishes.
    pub exponent: Option<f64>,
    /// Intercept of the fit.
    pub log_constant: Option<f64>,
    /// Root mean square of the fit residuals.
    pub fit_residual: Option<f64>,
    /// `(s, osc_{B_s(z₀)} u)` per scale.
    pub scales: Vec<(f64, f64)>,
}

impl HolderFit {
    pub fn undefined(&self) -> bool {
        self.exponent.is_none()
    }
}

const HOLDER_SCALES: usize = 6;
const HOLDER_PROBES: usize = 600;

/// Fixed probe set in the closed unit Korányi ball: the centre, points on the unit
/// sphere and interior points.
fn unit_probes(seed: u64) -> Vec<HPoint> {
    let mut rng = sampling::seeded_rng(seed, 0x401d);
    let mut v = vec![HPoint::origin(1)];
    for i in 0..HOLDER_PROBES {
        if i % 2 == 0 {
            v.push(sampling::koranyi_sphere_point(1, &mut rng));
        } else {
            v.push(sampling::uniform_in_koranyi_ball(1, 1.0, &mut rng));
        }
    }
    v
}

/// Least-squares Hölder exponent from oscillations over `B_s(z₀)`, `s` log-spaced in
/// `[r/32, r/3]`. Oscillations are taken over the trilinear interpolant at the same
/// dilated probe set for every scale.
pub fn holder_estimate(sol: &Solution, z0: &HPoint, r: f64) -> Result<HolderFit> {
    group::GroupParams::new(1)?.check(z0)?;
    if !(r > 0.0) {
        return invalid(format!("radius must be positive, got {r}"));
    }
    let probes = unit_probes(0);
    let (s_lo, s_hi) = (r / 32.0, r / 3.0);
    let mut scales = Vec::with_capacity(HOLDER_SCALES);
    for k in 0..HOLDER_SCALES {
        let s = s_lo * (s_hi / s_lo).powf(k as f64 / (HOLDER_SCALES - 1) as f64);
        let (mut lo, mut hi, mut mag) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for w in &probes {
            let z = group::compose_unchecked(z0, &group::dilate_unchecked(s, w));
            let Some(v) = sol.value_at(&z) else {
                return Err(HeisError::Hypothesis(format!("B_{s}(z₀) leaves the grid")));
            };
            lo = lo.min(v);
            hi = hi.max(v);
            mag = mag.max(v.abs());
        }
        // interpolation weights sum to one only up to rounding
        let osc = if hi - lo <= 64.0 * f64::EPSILON * mag { 0.0 } else { hi - lo };
        scales.push((s, osc));
    }
    let usable: Vec<(f64, f64)> = scales
        .iter()
        .filter(|(_, o)| *o > 0.0)
        .map(|(s, o)| (s.ln(), o.ln()))
        .collect();
    if usable.is_empty() {
        return Ok(HolderFit {
            exponent: None,
            log_constant: None,
            fit_residual: None,
            scales,
        });
    }
    if usable.len() < 4 {
        return Err(HeisError::EmptySample(format!(
            "only {} scales have positive oscillation",
            usable.len()
        )));
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / m).sqrt();
    Ok(HolderFit {
        exponent: Some(slope),
        log_constant: Some(intercept),
        fit_residual: Some(rms),
        scales,
    })
}

/// The density constant and the pieces it is built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalEpsilon {
    pub eps: f64,
    pub c0: f64,
    pub growth_constant: f64,
    pub gamma: f64,
    /// `C₀ ≥ 1` made `ε ≥ 1`; clamped to 1.
    pub clamped: bool,
}

/// `ε = C₀^{Q/(2(1−2δ))}` with
/// `C₀ = (C/(γΛ))·7/(64(Q+2))·|B₁|^{−(2/Q)(1−2δ)}` and `C` the growth constant.
pub fn epsilon_critical(lambda: f64, big_lambda: f64, q: usize, delta: f64, spec: &QuadratureSpec) -> Result<CriticalEpsilon> {
    if q < 4 || !q.is_multiple_of(2) {
        return invalid(format!("homogeneous dimension must be 2n + 2 ≥ 4, got {q}"));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return invalid(format!("δ must lie in (0, 1/2), got {delta}"));
    }
    let n = (q - 2) / 2;
    let qf = q as f64;
    let growth = barriers::growth_constant(n, lambda, big_lambda, delta, spec)?.value;
    let gamma = barriers::h_lower_bound_gamma(big_lambda, q, delta)?;
    let b1 = group::unit_ball_volume(n);
    let e = 2.0 / qf * (1.0 - 2.0 * delta);
    let c0 = growth / (gamma * big_lambda) * 7.0 / (64.0 * (qf + 2.0)) * b1.powf(-e);
    let eps = c0.powf(1.0 / e);
    Ok(CriticalEpsilon {
        eps: eps.min(1.0),
        c0,
        growth_constant: growth,
        gamma,
        clamped: eps >= 1.0,
    })
}

/// `ε̄ = ε·min{1, (ε₀/(2C̄))^Q}` with `C̄ = (1/η)(|Ω|/|B₁|)^{1/Q}`.
pub fn epsilon_bar(eps: f64, eps0: f64, omega_measure: f64, q: usize, eta: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0 && eps0 >= 0.0 && omega_measure > 0.0 && eta >= 1.0) {
        return invalid("ε̄ needs 0 < ε ≤ 1, ε₀ ≥ 0, |Ω| > 0 and η ≥ 1");
    }
    if q < 4 || !q.is_multiple_of(2) {
        return invalid(format!("homogeneous dimension must be 2n + 2 ≥ 4, got {q}"));
    }
    let qf = q as f64;
    let c_bar = (omega_measure / group::unit_ball_volume((q - 2) / 2)).powf(1.0 / qf) / eta;
    Ok(eps * (eps0 / (2.0 * c_bar)).powf(qf).min(1.0))
}

/// Constants of the comparison function `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WConstants {
    /// The growth constant.
    pub c: f64,
    pub big_lambda: f64,
    pub q: usize,
    pub delta: f64,
}

impl WConstants {
    /// `C r^{2−4δ}/(4Λ(Q+2))`.
    pub fn factor(&self, r: f64) -> f64 {
        self.c * r.powf(2.0 - 4.0 * self.delta) / (4.0 * self.big_lambda * (self.q as f64 + 2.0))
    }
}

/// `w = [C r^{2−4δ}/(4Λ(Q+2))]·(u + d(·, z₀)⁴/r⁴ − 1)`.
pub fn test_function_w<'a>(
    u: &'a dyn Fn(&HPoint) -> f64,
    z0: &HPoint,
    r: f64,
    constants: &WConstants,
) -> impl Fn(&HPoint) -> f64 + 'a {
    let factor = constants.factor(r);
    let z0 = z0.clone();
    let r4 = r.powi(4);
    move |z: &HPoint| factor * (u(z) + group::distance_unchecked(&z0, z).powi(4) / r4 - 1.0)
}

/// `L_A(d(·, z₀)⁴)(z)`. Left invariance gives `D²_H d⁴(z) = D²_Hφ_I(z₀⁻¹∘z)`.
pub fn l_a_d4(a: &CoefficientMatrix, z0: &HPoint, z: &HPoint) -> Result<f64> {
    let w = group::compose(&group::inverse(z0), z)?;
    let h = hess_h_phi(&CoefficientMatrix::identity(a.n()), &w)?;
    Ok(a.entries().component_mul(&h).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct D4Check {
    /// Largest `L_A(d⁴) / (4Λ(Q+2)r²)` seen.
    pub max_ratio: f64,
    pub points: usize,
    pub violations: usize,
}

/// Checks `L_A(d⁴) ≤ 4Λ(Q+2)r²` at sample points of `B_r(z₀)` (or at the given nodes).
pub fn d4_bound_check(field: &CoefficientField, z0: &HPoint, r: f64, points: &[HPoint], tol: f64) -> Result<D4Check> {
    let q = (2 * field.n() + 2) as f64;
    let bound = 4.0 * field.big_lambda() * (q + 2.0) * r * r;
    let mut max_ratio: f64 = 0.0;
    let mut used = 0;
    let mut violations = 0;
    for z in points {
        if group::distance(z0, z)? >= r {
            continue;
        }
        used += 1;
        let v = l_a_d4(&field.eval(z)?, z0, z)?;
        max_ratio = max_ratio.max(v / bound);
        if v > bound * (1.0 + tol) {
            violations += 1;
        }
    }
    Ok(D4Check {
        max_ratio,
        points: used,
        violations,
    })
}

/// How `L_A u ≤ 0` is established for a corpus member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Certification {
    Analytic(String),
    Sampled { max_value: f64, tol: f64 },
}

impl Certification {
    pub fn holds(&self) -> bool {
        match self {
            Certification::Analytic(_) => true,
            Certification::Sampled { max_value, tol } => *max_value <= *tol,
        }
    }
}

#[derive(Clone)]
pub struct Supersolution {
    pub label: String,
    pub u: FieldFn,
    pub certificate: Certification,
}

impl std::fmt::Debug for Supersolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Supersolution")
            .field("label", &self.label)
            .field("certificate", &self.certificate)
            .finish()
    }
}

/// Largest sampled `L_A u` over `B_R(z₀)`, from horizontal differences.
pub fn sampled_certificate(
    u: &FieldFn,
    field: &CoefficientField,
    z0: &HPoint,
    radius: f64,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<Certification> {
    let mut rng = sampling::seeded_rng(seed, 0xce27);
    let mut max_value = f64::NEG_INFINITY;
    let f = |p: &HPoint| u(p);
    for _ in 0..samples {
        let w = sampling::uniform_in_koranyi_ball(field.n(), radius, &mut rng);
        let z = group::compose_unchecked(z0, &w);
        let h = group::horizontal_hessian(&f, &z, DiffMode::FiniteDifference(1e-4 * radius.max(1e-3)))?;
        let v = field.eval(&z)?.entries().component_mul(&h).sum();
        max_value = max_value.max(v);
    }
    Ok(Certification::Sampled { max_value, tol })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalDensityReport {
    pub label: String,
    pub fraction: f64,
    pub stderr: f64,
    pub eps: f64,
    pub pass: bool,
    /// Why the hypotheses could not be confirmed; the check was not run.
    pub skipped: Option<String>,
}

const HYPOTHESIS_SAMPLES: usize = 4096;

/// `|{u < 1} ∩ B_r(z₀)| / |B_r|` against `ε`, after sampling hypotheses (i) and (iii)
/// and reading (ii) from the certificate.
pub fn critical_density_check(
    s: &Supersolution,
    z0: &HPoint,
    r: f64,
    eta: f64,
    eps: f64,
    spec: &QuadratureSpec,
) -> Result<CriticalDensityReport> {
    let n = z0.n();
    group::GroupParams::new(n)?.check(z0)?;
    if !(r > 0.0 && eta >= 1.0) {
        return invalid("critical density needs r > 0 and η ≥ 1");
    }
    let skipped = |why: &str| CriticalDensityReport {
        label: s.label.clone(),
        fraction: f64::NAN,
        stderr: f64::NAN,
        eps,
        pass: false,
        skipped: Some(why.to_string()),
    };
    if !s.certificate.holds() {
        return Ok(skipped("L_A u ≤ 0 is not certified"));
    }
    let mut rng = sampling::seeded_rng(spec.seed, 0x4c1);
    let mut min_outer = (s.u)(z0);
    let mut min_inner = (s.u)(z0);
    for _ in 0..HYPOTHESIS_SAMPLES {
        let w = sampling::uniform_in_koranyi_ball(n, eta * r, &mut rng);
        min_outer = min_outer.min((s.u)(&group::compose_unchecked(z0, &w)));
        let w = sampling::uniform_in_koranyi_ball(n, 0.5 * r, &mut rng);
        min_inner = min_inner.min((s.u)(&group::compose_unchecked(z0, &w)));
    }
    if !(min_outer >= 0.0) {
        return Ok(skipped("u is negative somewhere in B_(ηr)(z₀)"));
    }
    if !(min_inner < 0.5) {
        return Ok(skipped("inf of u over B_(r/2)(z₀) is not below 1/2"));
    }
    let ball = DomainDescriptor::koranyi_ball(z0.clone(), r)?;
    let u = |p: &HPoint| (s.u)(p);
    let frac = quadrature::measure_sublevel(&u, &ball, 1.0, spec)?;
    Ok(CriticalDensityReport {
        label: s.label.clone(),
        fraction: frac.fraction,
        stderr: frac.stderr,
        eps,
        pass: frac.fraction >= eps,
        skipped: None,
    })
}

/// Supersolutions of `L_M` for a constant symplectic `M`, shaped so that
/// `u ≥ 0` on `B_{ηr}(z₀)` and `u(z₀) < 1/2`.
pub fn supersolution_corpus(m: &CoefficientMatrix, z0: &HPoint, r: f64, eta: f64, count: usize, seed: u64) -> Result<Vec<Supersolution>> {
    let n = m.n();
    group::GroupParams::new(n)?.check(z0)?;
    let big_r = eta * r;
    let mut rng = sampling::seeded_rng(seed, 0xc0a);
    let mut out = Vec::with_capacity(count);
    let zi = group::inverse(z0);
    for k in 0..count {
        let v: f64 = rng.random_range(0.05..0.45);
        let dir: Vec<f64> = sampling::unit_vector(2 * n, &mut rng);
        let zi = zi.clone();
        let (label, u, cert): (String, FieldFn, Certification) = match k % 7 {
            0 => {
                let b: Vec<f64> = dir.iter().map(|d| d * v / big_r * rng.random_range(0.2..1.0)).collect();
                let f = move |z: &HPoint| {
                    let w = group::compose_unchecked(&zi, z);
                    v + w.x.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>()
                };
                ("affine-x".into(), Arc::new(f), Certification::Analytic("affine in x".into()))
            }
            1 => {
                let kappa = v / (big_r * big_r) * rng.random_range(-1.0..1.0);
                let f = move |z: &HPoint| v + kappa * group::compose_unchecked(&zi, z).t;
                ("affine-t".into(), Arc::new(f), Certification::Analytic("L_A t = 2 tr(AJ) = 0".into()))
            }
            2 => {
                let kappa = v / (big_r * big_r) * rng.random_range(0.2..1.0);
                let f = move |z: &HPoint| v - kappa * group::compose_unchecked(&zi, z).horizontal_norm_sq();
                ("concave-x".into(), Arc::new(f), Certification::Analytic("L_A = −2κ tr A".into()))
            }
            3 => {
                let kappa = v / (big_r * big_r) * rng.random_range(0.2..1.0);
                let f = move |z: &HPoint| {
                    let w = group::compose_unchecked(&zi, z);
                    let p: f64 = w.x.iter().zip(&dir).map(|(a, b)| a * b).sum();
                    v - kappa * p * p
                };
                ("concave-direction".into(), Arc::new(f), Certification::Analytic("L_A = −2κ⟨Aw, w⟩".into()))
            }
            4 => {
                let kappa = v / big_r.powi(4) * rng.random_range(0.2..1.0);
                let f = move |z: &HPoint| v - kappa * group::koranyi_norm(&group::compose_unchecked(&zi, z)).powi(4);
                ("concave-gauge".into(), Arc::new(f), Certification::Analytic("L_A d⁴ ≥ 0".into()))
            }
            _ => {
                // pole just outside B_{ηr}(z₀)
                let dist = big_r * rng.random_range(1.05..1.6);
                let dir_w = sampling::koranyi_sphere_point(n, &mut rng);
                let pole = group::compose_unchecked(z0, &group::dilate_unchecked(dist, &dir_w));
                let pole_inv = group::inverse(&pole);
                let mm = m.clone();
                let at = barriers::gamma_fundamental(&mm, &group::compose_unchecked(&pole_inv, z0))?;
                let a = v / at;
                let capped = k % 7 == 6;
                let f = move |z: &HPoint| {
                    let g = barriers::gamma_fundamental(&mm, &group::compose_unchecked(&pole_inv, z)).unwrap_or(f64::INFINITY);
                    let u = a * g;
                    if capped {
                        u.min(1.0)
                    } else {
                        u
                    }
                };
                let label = if capped { "capped-gamma" } else { "gamma" };
                let why = if capped {
                    "minimum of two supersolutions"
                } else {
                    "L_M Γ_M = 0 off the pole"
                };
                (label.into(), Arc::new(f), Certification::Analytic(why.into()))
            }
        };
        out.push(Supersolution {
            label: format!("{label}-{k}"),
            u,
            certificate: cert,
        });
    }
    Ok(out)
}

/// Positive boundary data `g ≥ floor`: a sum of shifted sinusoids, or a constant.
pub fn positive_boundary_data(seed: u64, floor: f64, constant: bool) -> BoundaryFn {
    if constant {
        return Arc::new(|_| 1.0);
    }
    let mut rng = sampling::seeded_rng(seed, 0xbd);
    let terms: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let k = [0, 1, 2].map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal));
            (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..1.0))
        })
        .collect();
    Arc::new(move |z: &HPoint| {
        let p = [z.x[0], z.x[1], z.t];
        floor
            + terms
                .iter()
                .map(|(k, ph, c)| c * (1.0 + (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin()))
                .sum::<f64>()
    })
}

/// Symplectic (unit determinant) ℍ¹ field whose modulus gives `ε₀ ≥ target`.
pub fn field_for_eps0(
    lambda: f64,
    big_lambda: f64,
    delta: f64,
    lo: [f64; 3],
    hi: [f64; 3],
    target_eps0: f64,
    seed: u64,
) -> Result<CoefficientField> {
    let spec = crate::coefficients::SmoothFieldSpec {
        lambda,
        big_lambda,
        slope: 1.0,
        lo,
        hi,
    };
    let unit = crate::coefficients::random_smooth_field_h1(&spec, seed)?;
    let ContinuityModulus::Hoelder { c, .. } = unit.modulus() else {
        return Err(HeisError::InvalidParameter("unexpected modulus".into()));
    };
    let threshold = delta * lambda / (barriers::derived_constant_c(lambda, big_lambda, 4)?.c * big_lambda);
    let slope = threshold / (target_eps0 * c);
    crate::coefficients::random_smooth_field_h1(&crate::coefficients::SmoothFieldSpec { slope, ..spec }, seed)
}

/// `u` evaluated through a [`ScalarField`] wrapper, for callers holding a [`FieldFn`].
pub fn as_field(u: &FieldFn) -> impl ScalarField + '_ {
    move |p: &HPoint| u(p)
}
