//! Barrier machinery for `L_A`: the modified gauge `φ_M` and its horizontal
//! derivatives, the fundamental solution `Γ_M`, the kernel `g`, the cutoff `ψ_μ`,
//! the potentials `h`, `h_μ`, and the constants that control them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coefficients::{self, CoefficientField, CoefficientMatrix, ContinuityModulus, Region};
use crate::error::{invalid, HeisError, Result};
use crate::group::{self, DiffMode, GroupParams, HPoint};
use crate::quadrature::{self, sampling, DomainDescriptor, Estimate, QuadratureSpec};

/// `φ_M`, `⟨M⁻¹x, x⟩` and the pieces of its horizontal derivatives at one point.
#[derive(Debug, Clone)]
pub(crate) struct PhiJet {
    pub q: f64,
    pub phi: f64,
    pub minv_x: Vec<f64>,
    pub jx: Vec<f64>,
    /// `Xⱼφ = 4q(M⁻¹x)ⱼ + 4t(Jx)ⱼ`.
    pub grad: Vec<f64>,
}

impl PhiJet {
    pub fn new(m: &CoefficientMatrix, p: &HPoint) -> Self {
        let d = p.x.len();
        let inv = m.inverse();
        let minv_x: Vec<f64> = (0..d).map(|i| (0..d).map(|j| inv[(i, j)] * p.x[j]).sum()).collect();
        let q: f64 = minv_x.iter().zip(&p.x).map(|(a, b)| a * b).sum();
        let jx = group::apply_j(&p.x);
        let grad = (0..d).map(|j| 4.0 * q * minv_x[j] + 4.0 * p.t * jx[j]).collect();
        Self {
            q,
            phi: q * q + p.t * p.t,
            minv_x,
            jx,
            grad,
        }
    }

    /// `⟨A∇_Hφ, ∇_Hφ⟩`.
    pub fn quadratic(&self, a: &DMatrix<f64>) -> f64 {
        form(a, &self.grad, &self.grad)
    }

    /// `tr(A D²_Hφ) = 4q tr(AM⁻¹) + 8⟨AM⁻¹x, M⁻¹x⟩ + 8⟨AJx, Jx⟩`; `tr_a_minv = tr(AM⁻¹)`.
    pub fn trace(&self, a: &DMatrix<f64>, tr_a_minv: f64) -> f64 {
        4.0 * self.q * tr_a_minv + 8.0 * form(a, &self.minv_x, &self.minv_x) + 8.0 * form(a, &self.jx, &self.jx)
    }

    pub fn hessian(&self, m: &CoefficientMatrix) -> DMatrix<f64> {
        let d = self.grad.len();
        let inv = m.inverse();
        DMatrix::from_fn(d, d, |i, j| {
            4.0 * inv[(j, i)] * self.q + 8.0 * self.minv_x[i] * self.minv_x[j] + 8.0 * self.jx[i] * self.jx[j]
        })
    }
}

fn form(a: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut s = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += a[(i, j)] * v[j];
        }
        s += u[i] * row;
    }
    s
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// `φ_M(x, t) = ⟨M⁻¹x, x⟩² + t²`.
pub fn phi(m: &CoefficientMatrix, p: &HPoint) -> Result<f64> {
    m.check_point(p)?;
    Ok(PhiJet::new(m, p).phi)
}

/// `∇_Hφ_M`, closed form.
pub fn grad_h_phi(m: &CoefficientMatrix, p: &HPoint) -> Result<DVector<f64>> {
    m.check_point(p)?;
    Ok(DVector::from_vec(PhiJet::new(m, p).grad))
}

/// `D²_Hφ_M = 4⟨M⁻¹x, x⟩M⁻¹ + 8(M⁻¹x)(M⁻¹x)ᵗ + 8(Jx)(Jx)ᵗ`.
pub fn hess_h_phi(m: &CoefficientMatrix, p: &HPoint) -> Result<DMatrix<f64>> {
    m.check_point(p)?;
    Ok(PhiJet::new(m, p).hessian(m))
}

/// `φ_M` as a field with exact Euclidean partials, for cross-checks against the
/// generic horizontal calculus.
pub fn phi_field(m: &CoefficientMatrix) -> impl group::ScalarField + '_ {
    group::SmoothField {
        value: move |p: &HPoint| PhiJet::new(m, p).phi,
        derivatives: move |p: &HPoint| {
            let jet = PhiJet::new(m, p);
            let d = p.x.len();
            let mut gradient = DVector::zeros(d + 1);
            let mut hessian = DMatrix::zeros(d + 1, d + 1);
            let inv = m.inverse();
            for i in 0..d {
                gradient[i] = 4.0 * jet.q * jet.minv_x[i];
                for j in 0..d {
                    hessian[(i, j)] = 4.0 * jet.q * inv[(i, j)] + 8.0 * jet.minv_x[i] * jet.minv_x[j];
                }
            }
            gradient[d] = 2.0 * p.t;
            hessian[(d, d)] = 2.0;
            group::EuclideanDerivatives { gradient, hessian }
        },
    }
}

/// Residuals of the identities
/// `(Q+2)/4 ⟨M∇φ, ∇φ⟩ = φ L_Mφ = 4(Q+2)⟨M⁻¹x, x⟩φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub r1: f64,
    pub r2: f64,
    /// Magnitude of the largest term, for relative comparisons.
    pub scale: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            return self.r1.abs().max(self.r2.abs());
        }
        self.r1.abs().max(self.r2.abs()) / self.scale
    }
}

pub fn check_identity(m: &CoefficientMatrix, p: &HPoint) -> Result<IdentityResidual> {
    m.check_point(p)?;
    let q_dim = (2 * m.n() + 2) as f64;
    let jet = PhiJet::new(m, p);
    let lhs = (q_dim + 2.0) / 4.0 * jet.quadratic(m.entries());
    let tr = jet.trace(m.entries(), 2.0 * m.n() as f64);
    let mid = jet.phi * tr;
    let rhs = 4.0 * (q_dim + 2.0) * jet.q * jet.phi;
    Ok(IdentityResidual {
        r1: lhs - mid,
        r2: mid - rhs,
        scale: lhs.abs().max(mid.abs()).max(rhs.abs()),
    })
}

/// `⟨M∇_Hφ, ∇_Hφ⟩ − 16⟨M⁻¹x, x⟩φ`, relative to the larger term.
pub fn gradient_identity_residual(m: &CoefficientMatrix, p: &HPoint) -> Result<f64> {
    m.check_point(p)?;
    let jet = PhiJet::new(m, p);
    let lhs = jet.quadratic(m.entries());
    let rhs = 16.0 * jet.q * jet.phi;
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

fn check_not_pole(jet: &PhiJet) -> Result<()> {
    if jet.phi == 0.0 {
        return Err(HeisError::Pole);
    }
    Ok(())
}

/// `Γ_M = φ_M^{−(Q−2)/4}`.
pub fn gamma_fundamental(m: &CoefficientMatrix, p: &HPoint) -> Result<f64> {
    m.check_point(p)?;
    let jet = PhiJet::new(m, p);
    check_not_pole(&jet)?;
    let beta = (m.n() as f64) / 2.0;
    Ok(jet.phi.powf(-beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaResidual {
    /// `tr(M D²_HΓ_M)`.
    pub value: f64,
    /// Size of the two cancelling terms.
    pub scale: f64,
}

impl GammaResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.value.abs()
        } else {
            self.value.abs() / self.scale
        }
    }
}

/// `L_MΓ_M` in closed form:
/// `βφ^{−β−2}[(β+1)⟨M∇φ, ∇φ⟩ − φ tr(M D²φ)]` with `β = (Q−2)/4`.
pub fn l_m_gamma_residual(m: &CoefficientMatrix, p: &HPoint) -> Result<GammaResidual> {
    m.check_point(p)?;
    let jet = PhiJet::new(m, p);
    check_not_pole(&jet)?;
    let beta = (m.n() as f64) / 2.0;
    let pre = beta * jet.phi.powf(-beta - 2.0);
    let a = (beta + 1.0) * jet.quadratic(m.entries());
    let b = jet.phi * jet.trace(m.entries(), 2.0 * m.n() as f64);
    Ok(GammaResidual {
        value: pre * (a - b),
        scale: pre * a.abs().max(b.abs()),
    })
}

/// `L_MΓ_M` from centred differences of `Γ_M` values with step `h`.
pub fn l_m_gamma_fd_residual(m: &CoefficientMatrix, p: &HPoint, h: f64) -> Result<f64> {
    gamma_fundamental(m, p)?;
    let beta = (m.n() as f64) / 2.0;
    let f = |z: &HPoint| PhiJet::new(m, z).phi.powf(-beta);
    let hess = group::horizontal_hessian(&f, p, DiffMode::FiniteDifference(h))?;
    Ok(trace_product(m.entries(), &hess))
}

/// `(δ, M)` with `α = (Q−2)/4 + δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierParams {
    delta: f64,
    m: CoefficientMatrix,
}

impl BarrierParams {
    pub fn new(delta: f64, m: CoefficientMatrix) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return invalid(format!("δ must lie in (0, 1/2), got {delta}"));
        }
        if !coefficients::is_symplectic(&m, coefficients::PREDICATE_TOL)?.symplectic {
            return invalid("the frozen matrix M must be symplectic");
        }
        Ok(Self { delta, m })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m(&self) -> &CoefficientMatrix {
        &self.m
    }

    pub fn homogeneous_dimension(&self) -> f64 {
        (2 * self.m.n() + 2) as f64
    }

    pub fn alpha(&self) -> f64 {
        (self.homogeneous_dimension() - 2.0) / 4.0 + self.delta
    }
}

/// `g`, `∇_Hg` and `D²_Hg` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `g = −φ_M^{−α}/α`, `Xg = φ^{−α−1}Xφ`,
/// `X_{ij}g = φ^{−α−1}X_{ij}φ − (α+1)φ^{−α−2}XᵢφXⱼφ`.
pub fn g_kernel(params: &BarrierParams, zeta: &HPoint) -> Result<KernelJet> {
    let m = &params.m;
    m.check_point(zeta)?;
    let jet = PhiJet::new(m, zeta);
    check_not_pole(&jet)?;
    let a = params.alpha();
    let p1 = jet.phi.powf(-a - 1.0);
    let p2 = (a + 1.0) * jet.phi.powf(-a - 2.0);
    let grad = DVector::from_vec(jet.grad.clone());
    let hessian = jet.hessian(m) * p1 - &grad * grad.transpose() * p2;
    Ok(KernelJet {
        value: -jet.phi.powf(-a) / a,
        gradient: grad * p1,
        hessian,
    })
}

/// `−tr(A D²_Hg)(ζ) = φ^{−α−2}[(α+1)⟨A∇φ, ∇φ⟩ − φ tr(A D²φ)]` for an arbitrary
/// symmetric `A`.
pub fn subsolution_value_raw(a: &DMatrix<f64>, params: &BarrierParams, zeta: &HPoint) -> Result<f64> {
    let m = &params.m;
    m.check_point(zeta)?;
    if a.nrows() != 2 * m.n() || a.ncols() != 2 * m.n() {
        return Err(HeisError::DimensionMismatch {
            expected: m.n(),
            found: a.nrows() / 2,
        });
    }
    let jet = PhiJet::new(m, zeta);
    check_not_pole(&jet)?;
    let al = params.alpha();
    let tr_a_minv = trace_product(a, m.inverse());
    Ok(jet.phi.powf(-al - 2.0) * ((al + 1.0) * jet.quadratic(a) - jet.phi * jet.trace(a, tr_a_minv)))
}

pub fn subsolution_value(a_z: &CoefficientMatrix, params: &BarrierParams, zeta: &HPoint) -> Result<f64> {
    subsolution_value_raw(a_z.entries(), params, zeta)
}

/// The perturbation constant `C = C₁ + C₃` with `C₃ = C₂Λ/16` and
///
/// * `C₁ = (Q+2)/(4λ)`: `|(Q+2)/4 ⟨R∇φ, ∇φ⟩| ≤ (Q+2)/4 ‖R‖ |∇φ|² ≤ C₁‖R‖⟨M∇φ, ∇φ⟩`;
/// * `C₂ = 4Q/λ² + 8`: the three terms of `tr(R D²φ)` are bounded by
///   `4|ξ|²/λ · 2n‖R‖/λ`, `8‖R‖|ξ|²/λ²` and `8‖R‖|ξ|²`, and `8n + 8 = 4Q`;
/// * `⟨M∇φ, ∇φ⟩ = 16⟨M⁻¹ξ, ξ⟩φ ≥ 16|ξ|²φ/Λ` turns `C₂|ξ|²φ` into `C₃⟨M∇φ, ∇φ⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionConstant {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c: f64,
    pub derivation: String,
}

pub fn derived_constant_c(lambda: f64, big_lambda: f64, q: usize) -> Result<SubsolutionConstant> {
    if !(lambda > 0.0 && lambda <= 1.0 && big_lambda >= 1.0 && big_lambda.is_finite()) {
        return invalid(format!("need 0 < λ ≤ 1 ≤ Λ, got λ = {lambda}, Λ = {big_lambda}"));
    }
    if q < 4 || !q.is_multiple_of(2) {
        return invalid(format!("homogeneous dimension must be 2n + 2 ≥ 4, got {q}"));
    }
    let qf = q as f64;
    let c1 = (qf + 2.0) / (4.0 * lambda);
    let c2 = 4.0 * qf / (lambda * lambda) + 8.0;
    let c3 = c2 * big_lambda / 16.0;
    Ok(SubsolutionConstant {
        c1,
        c2,
        c3,
        c: c1 + c3,
        derivation: format!(
            "C1 = (Q+2)/(4λ) = {c1}; C2 = 4Q/λ² + 8 = {c2}; C3 = C2·Λ/16 = {c3}; C = C1 + C3 = {}",
            c1 + c3
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Epsilon0 {
    pub eps0: f64,
    /// `log ε₀`, finite even when `ε₀` underflows.
    pub log_eps0: f64,
    pub threshold: f64,
    pub c: f64,
    /// `ω ≤ threshold` on all of `(0, 1)`, so `ε₀` is capped at 1.
    pub capped: bool,
    /// `ω` never drops below the threshold; `ε₀ = 0`.
    pub unattained: bool,
}

fn modulus_at_log(w: &ContinuityModulus, log_eps: f64) -> f64 {
    match w {
        ContinuityModulus::Zero => 0.0,
        ContinuityModulus::Hoelder { c, a } => c * (a * log_eps).exp(),
        ContinuityModulus::DiniLog { d0 } => d0 / (-log_eps),
        ContinuityModulus::Tabulated { .. } => w.eval_unchecked(log_eps.exp()),
    }
}

/// `ε₀ = sup{ε ∈ (0, 1) : ω(ε) ≤ δλ/(CΛ)}`, by bisection in `log ε`.
pub fn epsilon0(w: &ContinuityModulus, lambda: f64, big_lambda: f64, q: usize, delta: f64) -> Result<Epsilon0> {
    w.validate()?;
    if !(delta > 0.0 && delta < 0.5) {
        return invalid(format!("δ must lie in (0, 1/2), got {delta}"));
    }
    let c = derived_constant_c(lambda, big_lambda, q)?.c;
    let threshold = delta * lambda / (c * big_lambda);
    let ok = |l: f64| modulus_at_log(w, l) <= threshold;
    let done = |log_eps0: f64, capped: bool, unattained: bool| Epsilon0 {
        eps0: if unattained { 0.0 } else { log_eps0.exp() },
        log_eps0,
        threshold,
        c,
        capped,
        unattained,
    };
    if ok(-1e-15) {
        return Ok(done(0.0, true, false));
    }
    let mut lo = -1.0;
    while !ok(lo) {
        lo *= 2.0;
        if lo < -1e15 {
            return Ok(done(f64::NEG_INFINITY, false, true));
        }
    }
    let mut hi = if lo == -1.0 { -1e-15 } else { lo / 2.0 };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-15 * lo.abs() {
            break;
        }
    }
    Ok(done(lo, false, false))
}

/// Result of sampling the perturbation certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub threshold: f64,
    pub c: f64,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `value · φ^{α+2} / ⟨M∇φ, ∇φ⟩` observed (at least `δ(1 − κ/C)` in theory).
    pub min_normalized: f64,
}

fn random_symmetric_with_norm<R: Rng>(d: usize, norm: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let s = (&g + g.transpose()) * 0.5;
    let current = coefficients::operator_norm(&s);
    s * (norm / current)
}

/// Samples `(ζ, R)` with `‖R‖ ≤ δλ/(CΛ)` and checks `−tr((M+R) D²_Hg)(ζ) ≥ 0`.
/// Half the perturbations sit exactly on the threshold sphere.
pub fn certify_subsolution(
    params: &BarrierParams,
    lambda: f64,
    big_lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    let m = params.m();
    let q = 2 * m.n() + 2;
    let c = derived_constant_c(lambda, big_lambda, q)?.c;
    let threshold = params.delta() * lambda / (c * big_lambda);
    let d = 2 * m.n();
    let parts = sampling::par_chunks(samples, seed, |_, range, rng| {
        let mut violations = 0usize;
        let mut min_norm = f64::INFINITY;
        for i in range {
            let norm = if i % 2 == 0 {
                threshold
            } else {
                threshold * rng.random::<f64>()
            };
            let r = random_symmetric_with_norm(d, norm, rng);
            let a = m.entries() + r;
            let zeta = sampling::multiscale_point(m.n(), rng);
            let jet = PhiJet::new(m, &zeta);
            if jet.phi == 0.0 {
                continue;
            }
            let v = subsolution_value_raw(&a, params, &zeta).expect("validated inputs");
            if v < 0.0 {
                violations += 1;
            }
            let denom = jet.quadratic(m.entries()) * jet.phi.powf(-params.alpha() - 2.0);
            if denom > 0.0 {
                min_norm = min_norm.min(v / denom);
            }
        }
        (violations, min_norm)
    });
    Ok(CertificateReport {
        threshold,
        c,
        samples,
        violations: parts.iter().map(|p| p.0).sum(),
        min_normalized: parts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
    })
}

/// A point and perturbation at which `−tr((M+R) D²_Hg)` is negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessWitness {
    pub zeta: HPoint,
    pub perturbation: Vec<f64>,
    pub norm: f64,
    pub value: f64,
}

/// Searches for a negative value with `‖R‖ = factor · δλ/(CΛ)`. For each sampled `ζ`
/// the most damaging `R` of that norm is `−‖R‖ Σ sign(μₖ) vₖvₖᵗ` over the eigenpairs of
/// `(α+1)∇φ∇φᵗ − φD²φ`.
pub fn sharpness_probe(
    params: &BarrierParams,
    lambda: f64,
    big_lambda: f64,
    factor: f64,
    samples: usize,
    seed: u64,
) -> Result<Option<SharpnessWitness>> {
    let m = params.m();
    let c = derived_constant_c(lambda, big_lambda, 2 * m.n() + 2)?.c;
    let norm = factor * params.delta() * lambda / (c * big_lambda);
    let al = params.alpha();
    let mut rng = sampling::seeded_rng(seed, 0x5a);
    let mut best: Option<SharpnessWitness> = None;
    for _ in 0..samples {
        let zeta = sampling::multiscale_point(m.n(), &mut rng);
        let jet = PhiJet::new(m, &zeta);
        if jet.phi == 0.0 {
            continue;
        }
        let grad = DVector::from_vec(jet.grad.clone());
        let g = &grad * grad.transpose() * (al + 1.0) - jet.hessian(m) * jet.phi;
        let d = g.nrows();
        let eig = g.symmetric_eigen();
        let mut r = DMatrix::zeros(d, d);
        for k in 0..d {
            let v = eig.eigenvectors.column(k);
            let s = if eig.eigenvalues[k] >= 0.0 { 1.0 } else { -1.0 };
            r -= v * v.transpose() * (s * norm);
        }
        let a = m.entries() + &r;
        let value = subsolution_value_raw(&a, params, &zeta)?;
        if value < 0.0 && best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(SharpnessWitness {
                zeta: zeta.clone(),
                perturbation: r.transpose().iter().copied().collect(),
                norm,
                value,
            });
        }
    }
    Ok(best)
}

/// Smooth non-decreasing profile with `ψ = 0` on `(−∞, 1]` and `ψ = 1` on `[2, ∞)`:
/// `ψ(s) = f(s−1) / (f(s−1) + f(2−s))`, `f(u) = e^{−1/u}` for `u > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    pub mu: f64,
}

impl CutoffParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return invalid(format!("cutoff scale μ must be positive, got {mu}"));
        }
        Ok(Self { mu })
    }
}

fn bump(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = (-1.0 / u).exp();
    let u2 = u * u;
    (f, f / u2, f * (1.0 / (u2 * u2) - 2.0 / (u2 * u)))
}

/// `(ψ, ψ′, ψ″)` at `s`.
pub fn psi_profile(s: f64) -> (f64, f64, f64) {
    if s <= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 2.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, a1, a2) = bump(s - 1.0);
    let (b, b1, b2) = bump(2.0 - s);
    // derivatives of b(2 − s) pick up signs
    let (b1, b2) = (-b1, b2);
    let sum = a + b;
    let num = a1 * b - a * b1;
    let num1 = a2 * b - a * b2;
    let sum1 = a1 + b1;
    (a / sum, num / (sum * sum), (num1 * sum - 2.0 * num * sum1) / (sum * sum * sum))
}

/// `ψ_μ(s) = ψ(s/μ)`.
pub fn cutoff(psi: &CutoffParams, s: f64) -> f64 {
    psi_profile(s / psi.mu).0
}

fn check_domain_dims(params: &BarrierParams, o: &DomainDescriptor, z: &HPoint) -> Result<()> {
    let g = GroupParams::new(params.m.n())?;
    g.check(z)?;
    if o.n() != params.m.n() {
        return Err(HeisError::DimensionMismatch {
            expected: params.m.n(),
            found: o.n(),
        });
    }
    Ok(())
}

/// `h(z) = ∫_O g(z⁻¹∘ζ) dζ`, with importance sampling around the pole `ζ = z`.
pub fn h_integral(params: &BarrierParams, o: &DomainDescriptor, z: &HPoint, spec: &QuadratureSpec) -> Result<Estimate> {
    check_domain_dims(params, o, z)?;
    let al = params.alpha();
    let m = &params.m;
    let zi = group::inverse(z);
    let f = |zeta: &HPoint| {
        let w = group::compose_unchecked(&zi, zeta);
        let phi = PhiJet::new(m, &w).phi;
        if phi == 0.0 {
            0.0
        } else {
            -phi.powf(-al) / al
        }
    };
    quadrature::integrate_singular(&f, z, 4.0 * al, o, spec)
}

/// `h_μ(z) = ∫_O ψ_μ(d_M(z, ζ)) g(z⁻¹∘ζ) dζ`. With a shared seed the samples coincide
/// with those of [`h_integral`], so `|h_μ − h|` is monotone in `μ` sample by sample.
pub fn h_mu_integral(
    params: &BarrierParams,
    o: &DomainDescriptor,
    z: &HPoint,
    mu: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    check_domain_dims(params, o, z)?;
    let psi = CutoffParams::new(mu)?;
    let al = params.alpha();
    let m = &params.m;
    let zi = group::inverse(z);
    let f = |zeta: &HPoint| {
        let w = group::compose_unchecked(&zi, zeta);
        let phi = PhiJet::new(m, &w).phi;
        if phi == 0.0 {
            0.0
        } else {
            cutoff(&psi, phi.powf(0.25)) * (-phi.powf(-al) / al)
        }
    };
    quadrature::integrate_singular(&f, z, 4.0 * al, o, spec)
}

/// `γ = (Λ^{2α}/α)|B₁|^{4α/Q − 1} ∫_{B₁(0)} ρ^{−4α}`, so that `0 ≥ h ≥ −γ|O|^{1 − 4α/Q}`.
pub fn h_lower_bound_gamma(big_lambda: f64, q: usize, delta: f64) -> Result<f64> {
    if q < 4 || !q.is_multiple_of(2) {
        return invalid(format!("homogeneous dimension must be 2n + 2 ≥ 4, got {q}"));
    }
    if !(delta > 0.0 && delta < 0.5) || !(big_lambda >= 1.0) {
        return invalid("need 0 < δ < 1/2 and Λ ≥ 1");
    }
    let n = (q - 2) / 2;
    let qf = q as f64;
    let al = (qf - 2.0) / 4.0 + delta;
    let spec = QuadratureSpec::new(quadrature::QuadratureMethod::MonteCarlo, 4096, 0, 1e-3)?;
    let integral = quadrature::singular_ball_integral(n, 4.0 * al, &spec)?.value;
    let b1 = group::unit_ball_volume(n);
    Ok(big_lambda.powf(2.0 * al) / al * b1.powf(4.0 * al / qf - 1.0) * integral)
}

/// `η = 2√(Λ/λ) + 1`.
pub fn eta(lambda: f64, big_lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && big_lambda >= lambda) {
        return invalid("η needs 0 < λ ≤ Λ");
    }
    Ok(2.0 * (big_lambda / lambda).sqrt() + 1.0)
}

/// Growth constant `4^{1−2δ} λ^{2δ} (λ/Λ) C̃` of the lower bound `L_A h_μ ≥ C r^{−4δ}`.
/// Distinct from the perturbation constant of [`derived_constant_c`].
pub fn growth_constant(n: usize, lambda: f64, big_lambda: f64, delta: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    let ct = quadrature::c_tilde(n, lambda, big_lambda, spec)?;
    Ok(ct.scale(4f64.powf(1.0 - 2.0 * delta) * lambda.powf(2.0 * delta) * lambda / big_lambda))
}

/// `F(φ) = ψ(φ^{1/4}/μ)·(−φ^{−α}/α)` and its first two derivatives in `φ`.
fn cut_kernel(phi: f64, mu: f64, al: f64) -> (f64, f64) {
    let s = phi.powf(0.25) / mu;
    let (p, p1, p2) = psi_profile(s);
    if p == 0.0 && p1 == 0.0 {
        return (0.0, 0.0);
    }
    let g = -phi.powf(-al) / al;
    let g1 = phi.powf(-al - 1.0);
    let g2 = -(al + 1.0) * phi.powf(-al - 2.0);
    let dp = p1 / mu * 0.25 * phi.powf(-0.75);
    let ddp = p2 / (mu * mu) / 16.0 * phi.powf(-1.5) - p1 / mu * 3.0 / 16.0 * phi.powf(-1.75);
    (dp * g + p * g1, ddp * g + 2.0 * dp * g1 + p * g2)
}

/// `L_A h_μ(z) = ∫_O tr(A D²_H g_μ)(ζ⁻¹∘z) dζ` with `A = a_z` frozen at `z`.
///
/// The integrand vanishes for `ρ_M(ζ⁻¹∘z) < μ`. Writing `ζ⁻¹∘z = (M^{1/2}y, t)` with
/// `(y, t) = δ_s ω` (a unit-Jacobian change of variables) and drawing `s` log-uniformly
/// on `[μ, R]` leaves a weight `Q|B₁| s^Q log(R/μ)` that keeps the estimator bounded.
pub fn l_a_h_mu(
    a_z: &CoefficientMatrix,
    params: &BarrierParams,
    o: &DomainDescriptor,
    z: &HPoint,
    mu: f64,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    check_domain_dims(params, o, z)?;
    CutoffParams::new(mu)?;
    spec.validate()?;
    let m = &params.m;
    let n = m.n();
    let q = params.homogeneous_dimension();
    let al = params.alpha();
    let (c, r) = o.enclosing_ball();
    let lambda_min = m.eigenvalues()[0];
    let big_r = (group::distance_unchecked(z, &c) + r) / lambda_min.sqrt();
    if big_r <= mu {
        return Ok(Estimate::exact(0.0));
    }
    let log_ratio = (big_r / mu).ln();
    let b1 = group::unit_ball_volume(n);
    let sqrt_m = m.sqrt();
    let a = a_z.entries();
    let tr_a_minv = trace_product(a, m.inverse());
    let total = spec.samples;
    let moments = sampling::par_moments(total, spec.seed, |i, rng| {
        let u = (i as f64 + rng.random::<f64>()) / total as f64;
        let s = mu * (u * log_ratio).exp();
        let omega = sampling::koranyi_sphere_point(n, rng);
        let y = DVector::from_iterator(2 * n, omega.x.iter().map(|v| v * s));
        let x: Vec<f64> = (&sqrt_m * y).iter().copied().collect();
        let w = HPoint { x, t: omega.t * s * s };
        let zeta = group::compose_unchecked(z, &group::inverse(&w));
        if !o.contains(&zeta) {
            return 0.0;
        }
        let jet = PhiJet::new(m, &w);
        let (f1, f2) = cut_kernel(jet.phi, mu, al);
        let integrand = f1 * jet.trace(a, tr_a_minv) + f2 * jet.quadratic(a);
        integrand * q * b1 * s.powf(q) * log_ratio
    });
    Ok(Estimate {
        value: moments.mean(),
        stderr: moments.stderr(),
        samples: total,
    })
}

/// One row of a barrier evaluation trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub z: HPoint,
    pub value: f64,
    pub residual: f64,
    pub floor: f64,
}

/// Writes trace rows as CSV with columns `x1 … x2n, t, value, residual, floor`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header: Vec<String> = (1..=first.z.x.len()).map(|i| format!("x{i}")).collect();
        header.extend(["t", "value", "residual", "floor"].map(String::from));
        w.write_record(&header)?;
    }
    for row in rows {
        let mut rec: Vec<String> = row.z.x.iter().map(|v| format!("{v:.16e}")).collect();
        for v in [row.z.t, row.value, row.residual, row.floor] {
            rec.push(format!("{v:.16e}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub r: f64,
    pub mu: f64,
    pub eps0: f64,
    pub growth_constant: f64,
    /// `C r^{−4δ}`.
    pub floor: f64,
    /// Smallest sampled `L_A h_μ` over `O′`.
    pub min_value: f64,
    /// Standard error at the minimizing point.
    pub min_stderr: f64,
    pub pass: bool,
    /// `O′` has zero measure, so the bound holds trivially.
    pub vacuous: bool,
    pub rows: Vec<TraceRow>,
}

/// Korányi ball `B_ρ(z)` contained in a region.
fn region_contains_ball(region: &Region, z: &HPoint, rho: f64) -> bool {
    match region {
        Region::Everywhere => true,
        Region::Ball { center, radius } => group::distance_unchecked(center, z) + rho <= *radius,
        Region::Box { lo, hi } => {
            let d = z.x.len();
            let xn = z.horizontal_norm_sq().sqrt();
            let ht = rho * rho + 2.0 * xn * rho;
            z.x.iter().enumerate().all(|(i, v)| v - rho >= lo[i] && v + rho <= hi[i])
                && z.t - ht >= lo[d]
                && z.t + ht <= hi[d]
        }
    }
}

/// Lower bound for `dist(O′, ∂O)` when `O` is a Korányi ball.
pub fn boundary_gap(o_prime: &DomainDescriptor, o: &DomainDescriptor) -> Result<f64> {
    let DomainDescriptor::KoranyiBall { center, radius } = o else {
        return invalid("the distance to ∂O is only bounded for Korányi balls O");
    };
    let (c, r) = o_prime.enclosing_ball();
    Ok(radius - group::distance_unchecked(center, &c) - r)
}

/// Samples `L_A h_μ` over `O′ ⋐ O ⊆ B_r(z₀)` and compares the minimum with the floor
/// `C r^{−4δ}`, after checking every hypothesis of the growth bound.
#[allow(clippy::too_many_arguments)]
pub fn barrier_growth_check(
    a: &CoefficientField,
    delta: f64,
    z0: &HPoint,
    r: f64,
    o: &DomainDescriptor,
    o_prime: &DomainDescriptor,
    mu: f64,
    spec: &QuadratureSpec,
    points: usize,
) -> Result<GrowthReport> {
    let n = a.n();
    let q = 2 * n + 2;
    let (lambda, big_lambda) = (a.lambda(), a.big_lambda());
    let m = a.eval(z0)?;
    let params = BarrierParams::new(delta, m)?;
    let e0 = epsilon0(a.modulus(), lambda, big_lambda, q, delta)?;
    if !(r > 0.0) || r > e0.eps0 * (1.0 + 1e-12) {
        return Err(HeisError::Hypothesis(format!("radius {r} exceeds ε₀ = {}", e0.eps0)));
    }
    let et = eta(lambda, big_lambda)?;
    if !region_contains_ball(a.domain(), z0, et * r) {
        return Err(HeisError::Hypothesis("B_{ηr}(z₀) is not inside the coefficient domain".into()));
    }
    let (oc, or) = o.enclosing_ball();
    if group::distance_unchecked(&oc, z0) + or > r * (1.0 + 1e-12) {
        return Err(HeisError::Hypothesis("O is not contained in B_r(z₀)".into()));
    }
    let gap = boundary_gap(o_prime, o)?;
    if gap <= 0.0 {
        return Err(HeisError::Hypothesis("O′ is not compactly contained in O".into()));
    }
    let mu_max = (r / lambda.sqrt()).min(gap / (2.0 * big_lambda.sqrt()));
    if !(mu > 0.0 && mu < mu_max) {
        return invalid(format!("μ = {mu} outside the admissible range (0, {mu_max})"));
    }
    let gc = growth_constant(n, lambda, big_lambda, delta, spec)?;
    let floor = gc.value * r.powf(-4.0 * delta);
    let mut report = GrowthReport {
        r,
        mu,
        eps0: e0.eps0,
        growth_constant: gc.value,
        floor,
        min_value: f64::INFINITY,
        min_stderr: 0.0,
        pass: true,
        vacuous: false,
        rows: Vec::new(),
    };
    if o_prime.exact_measure() == Some(0.0) || points == 0 {
        report.vacuous = true;
        return Ok(report);
    }
    let mut rng = sampling::seeded_rng(spec.seed, 0x6e0);
    let (pc, pr) = o_prime.enclosing_ball();
    let envelope = DomainDescriptor::koranyi_ball(pc, pr)?;
    let mut tries = 0usize;
    while report.rows.len() < points {
        tries += 1;
        if tries > 10_000 * points {
            return Err(HeisError::EmptySample("could not sample points of O′".into()));
        }
        let z = envelope.sample_ball(&mut rng)?;
        if !o_prime.contains(&z) {
            continue;
        }
        let a_z = a.eval(&z)?;
        let k = report.rows.len() as u64;
        let est = l_a_h_mu(&a_z, &params, o, &z, mu, &spec.with_seed(spec.seed.wrapping_add(k)))?;
        if est.value < report.min_value {
            report.min_value = est.value;
            report.min_stderr = est.stderr;
        }
        report.rows.push(TraceRow {
            z,
            value: est.value,
            residual: est.value - floor,
            floor,
        });
    }
    report.pass = report.min_value >= floor;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::random_symplectic;
    use crate::quadrature::QuadratureMethod;
    use approx::assert_relative_eq;

    #[test]
    fn phi_examples() {
        let m = CoefficientMatrix::identity(2);
        let p = HPoint::new(vec![1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(phi(&m, &p).unwrap(), 1.0);
        let h = hess_h_phi(&m, &p).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let je1 = DVector::from_vec(group::apply_j(e1.as_slice()));
        let expected = DMatrix::identity(4, 4) * 4.0 + &e1 * e1.transpose() * 8.0 + &je1 * je1.transpose() * 8.0;
        assert!((h - expected).amax() < 1e-15);
    }

    #[test]
    fn closed_forms_match_generic_calculus() {
        let m = random_symplectic(2, 0.5, 2.0, 4).unwrap();
        let field = phi_field(&m);
        let p = HPoint::new(vec![0.3, -0.2, 0.5, 0.1], 0.4).unwrap();
        let exact_g = group::horizontal_gradient(&field, &p, DiffMode::Exact).unwrap();
        let exact_h = group::horizontal_hessian(&field, &p, DiffMode::Exact).unwrap();
        assert!((exact_g - grad_h_phi(&m, &p).unwrap()).amax() < 1e-13);
        let closed = hess_h_phi(&m, &p).unwrap();
        assert!((&exact_h - &closed).amax() < 1e-12 * closed.amax());
        let value_only = |z: &HPoint| PhiJet::new(&m, z).phi;
        let fd = group::horizontal_hessian(&value_only, &p, DiffMode::FiniteDifference(1e-3)).unwrap();
        assert!((fd - closed).amax() < 1e-5);
    }

    #[test]
    fn identity_holds_for_identity_matrix() {
        let m = CoefficientMatrix::identity(1);
        let r = check_identity(&m, &HPoint::h1(0.3, 0.7, -0.2)).unwrap();
        assert!(r.relative() < 1e-15);
    }

    #[test]
    fn gamma_examples() {
        let m = CoefficientMatrix::identity(1);
        let p = HPoint::h1(0.6, -0.2, 0.3);
        let x2: f64 = 0.4;
        assert_relative_eq!(gamma_fundamental(&m, &p).unwrap(), 1.0 / (x2 * x2 + 0.09).sqrt(), epsilon = 1e-14);
        assert!(matches!(gamma_fundamental(&m, &HPoint::origin(1)), Err(HeisError::Pole)));
        let scaled = group::dilate(2.0, &p).unwrap();
        assert_relative_eq!(
            gamma_fundamental(&m, &scaled).unwrap(),
            gamma_fundamental(&m, &p).unwrap() / 4.0,
            epsilon = 1e-14
        );
        assert!(l_m_gamma_residual(&m, &p).unwrap().relative() < 1e-14);
    }

    #[test]
    fn kernel_examples() {
        let m = random_symplectic(1, 0.5, 2.0, 1).unwrap();
        let params = BarrierParams::new(0.25, m.clone()).unwrap();
        let x = vec![m.sqrt()[(0, 0)], m.sqrt()[(1, 0)]];
        let on_sphere = HPoint { x, t: 0.0 };
        assert_relative_eq!(phi(&m, &on_sphere).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(g_kernel(&params, &on_sphere).unwrap().value, -1.0 / params.alpha(), epsilon = 1e-12);
        let zeta = HPoint::h1(0.3, 0.4, -0.1);
        let g1 = g_kernel(&params, &zeta).unwrap().value;
        let g2 = g_kernel(&params, &group::dilate(3.0, &zeta).unwrap()).unwrap().value;
        assert_relative_eq!(g2, 3f64.powf(-4.0 * params.alpha()) * g1, epsilon = 1e-13);
        assert!(g1 < 0.0);
        assert!(g_kernel(&params, &HPoint::origin(1)).is_err());
    }

    #[test]
    fn unperturbed_subsolution_value() {
        let m = random_symplectic(2, 0.5, 2.0, 5).unwrap();
        let params = BarrierParams::new(0.2, m.clone()).unwrap();
        let zeta = HPoint::new(vec![0.3, 0.1, -0.4, 0.2], 0.25).unwrap();
        let v = subsolution_value(&m, &params, &zeta).unwrap();
        let phi_v = phi(&m, &zeta).unwrap();
        let grad = grad_h_phi(&m, &zeta).unwrap();
        let quad = (grad.transpose() * m.entries() * &grad)[(0, 0)];
        let expected = 0.2 * quad * phi_v.powf(-params.alpha() - 2.0);
        assert_relative_eq!(v, expected, max_relative = 1e-11);
    }

    #[test]
    fn constant_examples() {
        assert_relative_eq!(derived_constant_c(1.0, 1.0, 4).unwrap().c, 3.0);
        assert_relative_eq!(derived_constant_c(0.5, 2.0, 4).unwrap().c, 12.0);
        assert!(derived_constant_c(2.0, 3.0, 4).is_err());
        assert_eq!(eta(1.0, 1.0).unwrap(), 3.0);
        assert_eq!(eta(1.0, 4.0).unwrap(), 5.0);
    }

    #[test]
    fn epsilon0_examples() {
        let z = epsilon0(&ContinuityModulus::Zero, 0.5, 2.0, 4, 0.25).unwrap();
        assert_eq!(z.eps0, 1.0);
        assert!(z.capped);
        let d0 = 0.7;
        let e = epsilon0(&ContinuityModulus::DiniLog { d0 }, 1.0, 1.0, 4, 0.25).unwrap();
        let c = derived_constant_c(1.0, 1.0, 4).unwrap().c;
        assert_relative_eq!(e.log_eps0, -d0 * c / 0.25, max_relative = 1e-12);
        let deep = epsilon0(&ContinuityModulus::DiniLog { d0: 50.0 }, 0.5, 2.0, 4, 0.1).unwrap();
        assert_eq!(deep.eps0, 0.0);
        assert!(!deep.unattained && deep.log_eps0.is_finite());
    }

    #[test]
    fn cutoff_profile() {
        let psi = CutoffParams::new(1.0).unwrap();
        assert_eq!(cutoff(&psi, 0.99), 0.0);
        assert_eq!(cutoff(&psi, 2.01), 1.0);
        assert_relative_eq!(cutoff(&psi, 1.5), 0.5, epsilon = 1e-15);
        let mut prev = 0.0;
        for k in 0..=1000 {
            let s = 0.5 + 2.0 * k as f64 / 1000.0;
            let (v, d1, _) = psi_profile(s);
            assert!((0.0..=1.0).contains(&v) && v >= prev && d1 >= 0.0);
            prev = v;
        }
        for s in [1.1, 1.3, 1.5, 1.77, 1.95] {
            let h = 1e-5;
            let (_, d1, d2) = psi_profile(s);
            let fd1 = (psi_profile(s + h).0 - psi_profile(s - h).0) / (2.0 * h);
            let fd2 = (psi_profile(s + h).1 - psi_profile(s - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-7 * d1.abs().max(1.0));
            assert!((d2 - fd2).abs() < 1e-6 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn cut_kernel_derivatives_match_differences() {
        let (mu, al) = (0.3, 0.75);
        let f = |phi: f64| psi_profile(phi.powf(0.25) / mu).0 * (-phi.powf(-al) / al);
        for s in [0.35, 0.45, 0.55, 0.7] {
            let phi = f64::powi(s, 4);
            let h = 1e-6 * phi;
            let (f1, f2) = cut_kernel(phi, mu, al);
            let fd1 = (f(phi + h) - f(phi - h)) / (2.0 * h);
            let fd2 = (cut_kernel(phi + h, mu, al).0 - cut_kernel(phi - h, mu, al).0) / (2.0 * h);
            assert!((f1 - fd1).abs() < 1e-6 * f1.abs().max(1.0));
            assert!((f2 - fd2).abs() < 1e-5 * f2.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_constant_increases_with_ellipticity() {
        let g1 = h_lower_bound_gamma(1.0, 4, 0.25).unwrap();
        let g2 = h_lower_bound_gamma(2.0, 4, 0.25).unwrap();
        assert!(g2 > g1 && g1 > 0.0);
    }

    #[test]
    fn h_vanishes_on_null_sets() {
        let params = BarrierParams::new(0.25, CoefficientMatrix::identity(1)).unwrap();
        let o = DomainDescriptor::koranyi_ball(HPoint::origin(1), 0.0).unwrap();
        let spec = QuadratureSpec::new(QuadratureMethod::MonteCarlo, 1000, 0, 1e-2).unwrap();
        assert_eq!(h_integral(&params, &o, &HPoint::origin(1), &spec).unwrap().value, 0.0);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let rows = vec![TraceRow {
            z: HPoint::h1(0.1, 0.2, 0.3),
            value: 1.0,
            residual: 0.5,
            floor: 0.5,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,t,value,residual,floor\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
