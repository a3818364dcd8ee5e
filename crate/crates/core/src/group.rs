//! Heisenberg group ℍⁿ: group law, dilations, Korányi gauge and the horizontal
//! calculus generated by the left-invariant fields `Xᵢ = ∂ₓᵢ + 2(Jx)ᵢ ∂ₜ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientMatrix;
use crate::error::{invalid, HeisError, Result};

/// Index `n` of ℍⁿ together with the derived homogeneous dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParams {
    n: usize,
}

impl GroupParams {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("group index n must be at least 1");
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of horizontal coordinates, `2n`.
    pub fn horizontal_dim(&self) -> usize {
        2 * self.n
    }

    /// Homogeneous dimension `Q = 2n + 2`.
    pub fn homogeneous_dimension(&self) -> usize {
        2 * self.n + 2
    }

    /// The block matrix `J = [[0, -I], [I, 0]]`.
    pub fn symplectic_form(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            if i < n && j == i + n {
                -1.0
            } else if i >= n && j + n == i {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn check(&self, p: &HPoint) -> Result<()> {
        if p.n() != self.n {
            return Err(HeisError::DimensionMismatch {
                expected: self.n,
                found: p.n(),
            });
        }
        Ok(())
    }
}

/// A point `z = (x, t)` with `x ∈ ℝ²ⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl HPoint {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        if x.is_empty() || !x.len().is_multiple_of(2) {
            return invalid(format!(
                "horizontal part must have even positive length, got {}",
                x.len()
            ));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(HeisError::NonFinite);
        }
        Ok(Self { x, t })
    }

    pub fn origin(n: usize) -> Self {
        Self {
            x: vec![0.0; 2 * n],
            t: 0.0,
        }
    }

    /// Convenience constructor for ℍ¹.
    pub fn h1(x1: f64, x2: f64, t: f64) -> Self {
        Self { x: vec![x1, x2], t }
    }

    pub fn n(&self) -> usize {
        self.x.len() / 2
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    pub fn horizontal_norm_sq(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }
}

/// `Jx` for `J = [[0, -I], [I, 0]]`.
pub fn apply_j(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        out[i] = -x[n + i];
        out[n + i] = x[i];
    }
    out
}

/// `⟨Jx, ξ⟩`.
pub fn symplectic_pairing(x: &[f64], xi: &[f64]) -> f64 {
    let n = x.len() / 2;
    (0..n).map(|i| -x[n + i] * xi[i] + x[i] * xi[n + i]).sum()
}

fn same_n(p: &HPoint, q: &HPoint) -> Result<()> {
    if p.x.len() != q.x.len() {
        return Err(HeisError::DimensionMismatch {
            expected: p.n(),
            found: q.n(),
        });
    }
    Ok(())
}

/// Group law `(x, t) ∘ (ξ, τ) = (x + ξ, t + τ + 2⟨Jx, ξ⟩)`.
pub fn compose(p: &HPoint, q: &HPoint) -> Result<HPoint> {
    same_n(p, q)?;
    Ok(compose_unchecked(p, q))
}

pub(crate) fn compose_unchecked(p: &HPoint, q: &HPoint) -> HPoint {
    let x = p.x.iter().zip(&q.x).map(|(a, b)| a + b).collect();
    HPoint {
        x,
        t: p.t + q.t + 2.0 * symplectic_pairing(&p.x, &q.x),
    }
}

pub fn inverse(p: &HPoint) -> HPoint {
    HPoint {
        x: p.x.iter().map(|v| -v).collect(),
        t: -p.t,
    }
}

/// Anisotropic dilation `δ_r(x, t) = (r x, r² t)`.
pub fn dilate(r: f64, p: &HPoint) -> Result<HPoint> {
    if !(r > 0.0) || !r.is_finite() {
        return invalid(format!("dilation factor must be positive, got {r}"));
    }
    Ok(dilate_unchecked(r, p))
}

pub(crate) fn dilate_unchecked(r: f64, p: &HPoint) -> HPoint {
    HPoint {
        x: p.x.iter().map(|v| r * v).collect(),
        t: r * r * p.t,
    }
}

/// Korányi gauge `ρ(x, t) = (|x|⁴ + t²)^{1/4}`.
pub fn koranyi_norm(p: &HPoint) -> f64 {
    let s = p.horizontal_norm_sq();
    (s * s + p.t * p.t).sqrt().sqrt()
}

/// `d(p, q) = ρ(p⁻¹ ∘ q)`.
pub fn distance(p: &HPoint, q: &HPoint) -> Result<f64> {
    same_n(p, q)?;
    Ok(distance_unchecked(p, q))
}

pub(crate) fn distance_unchecked(p: &HPoint, q: &HPoint) -> f64 {
    // p⁻¹ ∘ q = (ξ - x, τ - t - 2⟨Jx, ξ⟩)
    let mut s = 0.0;
    for (a, b) in p.x.iter().zip(&q.x) {
        let d = b - a;
        s += d * d;
    }
    let dt = q.t - p.t - 2.0 * symplectic_pairing(&p.x, &q.x);
    (s * s + dt * dt).sqrt().sqrt()
}

/// `ρ_M = φ_M^{1/4}` with `φ_M = ⟨M⁻¹x, x⟩² + t²`.
pub fn modified_norm(m: &CoefficientMatrix, p: &HPoint) -> Result<f64> {
    m.check_point(p)?;
    let q = m.inverse_quadratic_form(&p.x);
    Ok((q * q + p.t * p.t).sqrt().sqrt())
}

/// `d_M(p, q) = ρ_M(q⁻¹ ∘ p)`; symmetric because `φ_M` is even.
pub fn modified_distance(m: &CoefficientMatrix, p: &HPoint, q: &HPoint) -> Result<f64> {
    same_n(p, q)?;
    modified_norm(m, &compose_unchecked(&inverse(q), p))
}

/// Moves from `p` along the horizontal direction `v` for time `s`:
/// `p ∘ (s v, 0)`, the integral curve of `Σ vᵢ Xᵢ`.
pub fn horizontal_step(p: &HPoint, v: &[f64], s: f64) -> HPoint {
    let x = p.x.iter().zip(v).map(|(a, b)| a + s * b).collect();
    HPoint {
        x,
        t: p.t + 2.0 * s * symplectic_pairing(&p.x, v),
    }
}

/// Euclidean first and second partials in the ordering `(x₁, …, x₂ₙ, t)`.
#[derive(Debug, Clone)]
pub struct EuclideanDerivatives {
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A scalar field on ℍⁿ, optionally with exact Euclidean partials.
pub trait ScalarField {
    fn value(&self, p: &HPoint) -> f64;

    fn euclidean_derivatives(&self, _p: &HPoint) -> Option<EuclideanDerivatives> {
        None
    }
}

impl<F: Fn(&HPoint) -> f64> ScalarField for F {
    fn value(&self, p: &HPoint) -> f64 {
        self(p)
    }
}

/// A field built from a value closure and a closure for its Euclidean partials.
pub struct SmoothField<V, D> {
    pub value: V,
    pub derivatives: D,
}

impl<V, D> ScalarField for SmoothField<V, D>
where
    V: Fn(&HPoint) -> f64,
    D: Fn(&HPoint) -> EuclideanDerivatives,
{
    fn value(&self, p: &HPoint) -> f64 {
        (self.value)(p)
    }

    fn euclidean_derivatives(&self, p: &HPoint) -> Option<EuclideanDerivatives> {
        Some((self.derivatives)(p))
    }
}

/// How horizontal derivatives are computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DiffMode {
    /// Exact partials when the field has them, otherwise finite differences with the default step.
    #[default]
    Auto,
    /// Chain rule on the supplied Euclidean partials; fails for value-only fields.
    Exact,
    /// Centered differences along horizontal lines with step `h`.
    FiniteDifference(f64),
}

/// `10⁻⁴ · max(1, ρ(p))`.
pub fn default_fd_step(p: &HPoint) -> f64 {
    1e-4 * koranyi_norm(p).max(1.0)
}

enum Resolved {
    Exact(EuclideanDerivatives),
    Fd(f64),
}

fn resolve(f: &dyn ScalarField, p: &HPoint, mode: DiffMode) -> Result<Resolved> {
    match mode {
        DiffMode::Auto => Ok(match f.euclidean_derivatives(p) {
            Some(d) => Resolved::Exact(d),
            None => Resolved::Fd(default_fd_step(p)),
        }),
        DiffMode::Exact => f
            .euclidean_derivatives(p)
            .map(Resolved::Exact)
            .ok_or(HeisError::PartialsUnavailable),
        DiffMode::FiniteDifference(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return invalid(format!("finite-difference step must be positive, got {h}"));
            }
            Ok(Resolved::Fd(h))
        }
    }
}

/// The `2n × (2n+1)` matrix whose rows express `Xᵢ` in Euclidean partials.
pub fn horizontal_frame(x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let jx = apply_j(x);
    let mut c = DMatrix::zeros(d, d + 1);
    for i in 0..d {
        c[(i, i)] = 1.0;
        c[(i, d)] = 2.0 * jx[i];
    }
    c
}

/// `∇_H f = (X₁f, …, X₂ₙf)`.
pub fn horizontal_gradient(f: &dyn ScalarField, p: &HPoint, mode: DiffMode) -> Result<DVector<f64>> {
    if !p.is_finite() {
        return Err(HeisError::NonFinite);
    }
    let d = p.x.len();
    match resolve(f, p, mode)? {
        Resolved::Exact(der) => {
            check_derivative_shape(&der, d)?;
            Ok(horizontal_frame(&p.x) * der.gradient)
        }
        Resolved::Fd(h) => {
            let mut e = vec![0.0; d];
            let mut out = DVector::zeros(d);
            for i in 0..d {
                e[i] = 1.0;
                let fp = f.value(&horizontal_step(p, &e, h));
                let fm = f.value(&horizontal_step(p, &e, -h));
                out[i] = (fp - fm) / (2.0 * h);
                e[i] = 0.0;
            }
            Ok(out)
        }
    }
}

/// Symmetrized horizontal Hessian `X_{i,j} f = ½(XᵢXⱼ f + XⱼXᵢ f)`.
pub fn horizontal_hessian(f: &dyn ScalarField, p: &HPoint, mode: DiffMode) -> Result<DMatrix<f64>> {
    if !p.is_finite() {
        return Err(HeisError::NonFinite);
    }
    let d = p.x.len();
    match resolve(f, p, mode)? {
        Resolved::Exact(der) => {
            check_derivative_shape(&der, d)?;
            let c = horizontal_frame(&p.x);
            // The J-term of XᵢXⱼ is antisymmetric and drops out after symmetrization.
            Ok(&c * der.hessian * c.transpose())
        }
        Resolved::Fd(h) => {
            let f0 = f.value(p);
            let mut hess = DMatrix::zeros(d, d);
            let mut v = vec![0.0; d];
            // V²f = d²/ds² f(p ∘ (s v, 0)) along one-parameter subgroups.
            let second = |v: &[f64]| {
                (f.value(&horizontal_step(p, v, h)) + f.value(&horizontal_step(p, v, -h)) - 2.0 * f0)
                    / (h * h)
            };
            for i in 0..d {
                v[i] = 1.0;
                hess[(i, i)] = second(&v);
                v[i] = 0.0;
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    v[i] = 1.0;
                    v[j] = 1.0;
                    let plus = second(&v);
                    v[j] = -1.0;
                    let minus = second(&v);
                    v[i] = 0.0;
                    v[j] = 0.0;
                    // ¼[(Xᵢ+Xⱼ)² − (Xᵢ−Xⱼ)²] = X_{i,j}
                    let val = 0.25 * (plus - minus);
                    hess[(i, j)] = val;
                    hess[(j, i)] = val;
                }
            }
            Ok(hess)
        }
    }
}

fn check_derivative_shape(der: &EuclideanDerivatives, d: usize) -> Result<()> {
    if der.gradient.len() != d + 1 || der.hessian.nrows() != d + 1 || der.hessian.ncols() != d + 1 {
        return invalid(format!(
            "Euclidean derivatives must have dimension {}, got gradient {} / hessian {}x{}",
            d + 1,
            der.gradient.len(),
            der.hessian.nrows(),
            der.hessian.ncols()
        ));
    }
    Ok(())
}

/// Unit-ball volume `|B₁(0)|` of the Korányi gauge in ℍⁿ,
/// `π^n / Γ(n) · B(n/2, 3/2)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let pi_n = std::f64::consts::PI.powi(n as i32);
    let gamma_n = gamma_half(2 * n as u32);
    let beta = gamma_half(n as u32) * gamma_half(3) / gamma_half(n as u32 + 3);
    pi_n / gamma_n * beta
}

/// `Γ(k/2)` for positive integers `k`.
pub(crate) fn gamma_half(k: u32) -> f64 {
    assert!(k > 0);
    let (mut acc, mut arg) = if k.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    let target = k as f64 / 2.0;
    while arg < target - 1e-9 {
        acc *= arg;
        arg += 1.0;
    }
    acc
}

/// Surface area of the unit sphere in ℝ^{d}: `2π^{d/2} / Γ(d/2)`.
pub(crate) fn sphere_area(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d as u32)
}

/// Largest observed ratio `d(p, q) / (d(p, w) + d(w, q))` over random triples,
/// with `d` either the Korányi distance or `d_M` when a matrix is supplied.
pub fn empirical_quasi_triangle_constant(
    n: usize,
    m: Option<&CoefficientMatrix>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = crate::quadrature::sampling::seeded_rng(seed, 0);
    let dist = |a: &HPoint, b: &HPoint| -> Result<f64> {
        match m {
            Some(m) => modified_distance(m, a, b),
            None => distance(a, b),
        }
    };
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let mut draw = || {
            let x = (0..2 * n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            HPoint {
                x,
                t: scale * scale * rng.random_range(-1.0..1.0),
            }
        };
        let (p, q, w) = (draw(), draw(), draw());
        let denom = dist(&p, &w)? + dist(&w, &q)?;
        if denom > 0.0 {
            worst = worst.max(dist(&p, &q)? / denom);
        }
    }
    Ok(worst)
}
