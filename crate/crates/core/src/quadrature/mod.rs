//! Integration over gauge balls, boxes and derived sets, the surface functional
//! `α(M, r)` with its volume form, and the uniform lower bound `C̃`.

pub mod domain;
pub mod sampling;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::barriers;
use crate::coefficients::{CoefficientMatrix, MatrixRecord};
use crate::error::{invalid, HeisError, Result};
use crate::group::{self, GroupParams, HPoint};

pub use domain::{Bounding, DomainDescriptor, FieldFn};
use sampling::{par_chunks, par_moments, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    MonteCarlo,
    StratifiedGrid,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            method: QuadratureMethod::StratifiedGrid,
            samples: 1_000_000,
            seed: 0,
            tol: 1e-3,
        }
    }
}

impl QuadratureSpec {
    pub fn new(method: QuadratureMethod, samples: usize, seed: u64, tol: f64) -> Result<Self> {
        let spec = Self {
            method,
            samples,
            seed,
            tol,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 1000 {
            return invalid(format!("quadrature needs at least 1000 samples, got {}", self.samples));
        }
        if !(self.tol > 0.0 && self.tol <= 0.1) {
            return invalid(format!("quadrature tolerance must lie in (0, 0.1], got {}", self.tol));
        }
        Ok(())
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_method(mut self, method: QuadratureMethod) -> Self {
        self.method = method;
        self
    }
}

/// Standard errors in a reported error bar.
pub const REPORTED_SIGMAS: f64 = 3.0;

/// A quadrature value with its error estimate (standard error for sampling rules).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            samples: 0,
        }
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            value: self.value * c,
            stderr: self.stderr * c.abs(),
            samples: self.samples,
        }
    }

    /// Half-width of the reported interval, `REPORTED_SIGMAS` standard errors.
    pub fn error(&self) -> f64 {
        REPORTED_SIGMAS * self.stderr
    }

    pub fn relative_error(&self) -> f64 {
        self.stderr / self.value.abs().max(f64::MIN_POSITIVE)
    }
}

pub type Integrand<'a> = dyn Fn(&HPoint) -> f64 + Sync + 'a;

/// `∫_D f` by the rule selected in `spec`.
///
/// Monte Carlo pairs every draw with its reflection `t ↦ −t` about the envelope centre;
/// the stratified rule jitters a point set over a regular cell grid; the adaptive rule
/// doubles a stratified budget until the standard error falls below `tol · ∫_D |f|`.
pub fn integrate(f: &Integrand<'_>, d: &DomainDescriptor, spec: &QuadratureSpec) -> Result<Estimate> {
    spec.validate()?;
    if d.exact_measure() == Some(0.0) {
        return Ok(Estimate::exact(0.0));
    }
    match spec.method {
        QuadratureMethod::MonteCarlo => Ok(monte_carlo(f, d, spec.samples, spec.seed).0),
        QuadratureMethod::StratifiedGrid => Ok(stratified(f, d, spec.samples, spec.seed).0),
        QuadratureMethod::Adaptive => {
            let mut budget = (spec.samples / 64).max(1000);
            let mut round = 0u64;
            loop {
                let seed = spec.seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let (est, abs) = stratified(f, d, budget, seed);
                if est.stderr <= spec.tol * abs.value.max(est.value.abs()) {
                    return Ok(est);
                }
                if budget >= spec.samples {
                    return Err(HeisError::QuadratureBudget {
                        samples: budget,
                        tol: spec.tol,
                        value: est.value,
                        stderr: est.stderr,
                    });
                }
                budget = (budget * 2).min(spec.samples);
                round += 1;
            }
        }
    }
}

fn reflect(b: &Bounding, u: &[f64]) -> Vec<f64> {
    let mut v = u.to_vec();
    let last = b.dim() - 1;
    v[last] = 1.0 - v[last];
    v
}

fn monte_carlo(f: &Integrand<'_>, d: &DomainDescriptor, samples: usize, seed: u64) -> (Estimate, Estimate) {
    let b = d.bounding();
    let vol = b.volume();
    let dim = b.dim();
    let pairs = (samples / 2).max(1);
    let eval = |u: &[f64]| {
        let p = b.map_unit(u);
        if d.contains(&p) {
            f(&p)
        } else {
            0.0
        }
    };
    let parts = par_chunks(pairs, seed, |_, range, rng| {
        let (mut m, mut a) = (Moments::default(), Moments::default());
        for _ in range {
            let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let (v1, v2) = (eval(&u), eval(&reflect(&b, &u)));
            m.push(0.5 * vol * (v1 + v2));
            a.push(0.5 * vol * (v1.abs() + v2.abs()));
        }
        (m, a)
    });
    let (mut m, mut a) = (Moments::default(), Moments::default());
    for (pm, pa) in &parts {
        m.merge(pm);
        a.merge(pa);
    }
    (
        Estimate {
            value: m.mean(),
            stderr: m.stderr(),
            samples: 2 * pairs,
        },
        Estimate {
            value: a.mean(),
            stderr: a.stderr(),
            samples: 2 * pairs,
        },
    )
}

fn stratified(f: &Integrand<'_>, d: &DomainDescriptor, samples: usize, seed: u64) -> (Estimate, Estimate) {
    let b = d.bounding();
    let vol = b.volume();
    let dim = b.dim();
    let mut k = ((samples as f64 / 2.0).powf(1.0 / dim as f64)).floor().max(1.0) as usize;
    while k > 1 && k.pow(dim as u32) * 2 > samples {
        k -= 1;
    }
    let cells = k.pow(dim as u32);
    let per = (samples / cells).max(2);
    let cell_vol = vol / cells as f64;
    let parts = par_chunks(cells, seed, |_, range, rng| {
        let (mut value, mut var, mut abs, mut abs_var) = (0.0, 0.0, 0.0, 0.0);
        let mut idx = vec![0usize; dim];
        let mut u = vec![0.0; dim];
        for cell in range {
            let mut rem = cell;
            for slot in idx.iter_mut() {
                *slot = rem % k;
                rem /= k;
            }
            let (mut m, mut a) = (Moments::default(), Moments::default());
            for _ in 0..per {
                for i in 0..dim {
                    u[i] = (idx[i] as f64 + rng.random::<f64>()) / k as f64;
                }
                let p = b.map_unit(&u);
                let v = if d.contains(&p) { f(&p) } else { 0.0 };
                m.push(v);
                a.push(v.abs());
            }
            value += cell_vol * m.mean();
            var += (cell_vol * m.stderr()).powi(2);
            abs += cell_vol * a.mean();
            abs_var += (cell_vol * a.stderr()).powi(2);
        }
        (value, var, abs, abs_var)
    });
    let (mut value, mut var, mut abs, mut abs_var) = (0.0, 0.0, 0.0, 0.0);
    for p in &parts {
        value += p.0;
        var += p.1;
        abs += p.2;
        abs_var += p.3;
    }
    let used = cells * per;
    (
        Estimate {
            value,
            stderr: var.sqrt(),
            samples: used,
        },
        Estimate {
            value: abs,
            stderr: abs_var.sqrt(),
            samples: used,
        },
    )
}

/// `∫_D f` for integrands with a point singularity of order `ρ^{−a}` at `pole`.
///
/// Points are drawn as `pole ∘ δ_s ω` with `ω` on the Korányi unit sphere (cone measure)
/// and `s ∈ (0, R]` distributed with density ∝ `s^{Q−1−a}`, stratified in the radial
/// quantile. The sampling density is `(Q−a) s^{−a} / (Q |B₁| R^{Q−a})`, so the weight
/// cancels the singularity exactly for `f ∝ ρ^{−a}`.
pub fn integrate_singular(
    f: &Integrand<'_>,
    pole: &HPoint,
    a: f64,
    d: &DomainDescriptor,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    spec.validate()?;
    let n = d.n();
    let q = GroupParams::new(n)?.homogeneous_dimension() as f64;
    GroupParams::new(n)?.check(pole)?;
    if !(a >= 0.0 && a < q) {
        return invalid(format!("singularity order must lie in [0, Q) = [0, {q}), got {a}"));
    }
    if d.exact_measure() == Some(0.0) {
        return Ok(Estimate::exact(0.0));
    }
    let (c, r) = d.enclosing_ball();
    let big_r = group::distance_unchecked(pole, &c) + r;
    if big_r <= 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let b1 = group::unit_ball_volume(n);
    let total = spec.samples;
    let m = par_moments(total, spec.seed, |i, rng| {
        let u = (i as f64 + rng.random::<f64>()) / total as f64;
        let s = big_r * u.powf(1.0 / (q - a));
        let omega = sampling::koranyi_sphere_point(n, rng);
        let zeta = group::compose_unchecked(pole, &group::dilate_unchecked(s, &omega));
        if !d.contains(&zeta) || s == 0.0 {
            return 0.0;
        }
        let weight = q * b1 * big_r.powf(q - a) * s.powf(a) / (q - a);
        f(&zeta) * weight
    });
    Ok(Estimate {
        value: m.mean(),
        stderr: m.stderr(),
        samples: total,
    })
}

/// `∫_{B₁(0)} ρ^{−a}` by radial importance sampling.
pub fn singular_ball_integral(n: usize, a: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    let ball = DomainDescriptor::koranyi_ball(HPoint::origin(n), 1.0)?;
    integrate_singular(
        &|p: &HPoint| group::koranyi_norm(p).powf(-a),
        &HPoint::origin(n),
        a,
        &ball,
        spec,
    )
}

/// Fraction `|{u < c} ∩ B| / |B|` of a gauge ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub fraction: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub fn measure_sublevel(u: &Integrand<'_>, ball: &DomainDescriptor, c: f64, spec: &QuadratureSpec) -> Result<Fraction> {
    spec.validate()?;
    if !matches!(
        ball,
        DomainDescriptor::KoranyiBall { .. } | DomainDescriptor::ModifiedBall { .. }
    ) {
        return invalid("measure_sublevel expects a Korányi or modified ball");
    }
    let m = par_moments(spec.samples, spec.seed, |_, rng| {
        let p = ball.sample_ball(rng).expect("ball descriptor");
        if u(&p) < c {
            1.0
        } else {
            0.0
        }
    });
    Ok(Fraction {
        fraction: m.mean(),
        stderr: m.stderr(),
        samples: spec.samples,
    })
}

/// `α(M, 1)` through its volume form `Q ∫_{B^M_1(0)} ⟨M⁻¹x, x⟩ / φ_M^{1/2}`.
pub fn alpha_volume(m: &CoefficientMatrix, spec: &QuadratureSpec) -> Result<Estimate> {
    let n = m.n();
    let q = GroupParams::new(n)?.homogeneous_dimension() as f64;
    let ball = DomainDescriptor::modified_ball(m.clone(), HPoint::origin(n), 1.0)?;
    let f = |p: &HPoint| {
        let qf = m.inverse_quadratic_form(&p.x);
        let phi = qf * qf + p.t * p.t;
        if phi > 0.0 {
            qf / phi.sqrt()
        } else {
            0.0
        }
    };
    Ok(integrate(&f, &ball, spec)?.scale(q))
}

/// `α(M, r) = r^{1−Q} ∫_{∂B^M_r(0)} ⟨M∇_Hρ_M, ∇_Hρ_M⟩ / |Dρ_M| dσ`.
///
/// The sphere `φ_M = r⁴` is the union of the graphs `t = ±F(x)`, `F = (r⁴ − q²)^{1/2}`,
/// `q = ⟨M⁻¹x, x⟩`, over `{q < r²}`. On each graph `dσ = (1 + |∇F|²)^{1/2} dx` and
/// `(1 + |∇F|²)^{1/2} = (F² + q²|∇q|²)^{1/2} / F`, which blows up at the equator
/// `q = r²`. Writing `x = M^{1/2}(ϱθ)` with `θ ∈ S^{2n−1}` and `ϱ² = r² sin β` gives
/// `dx = det(M)^{1/2} ϱ^{2n−1} r cos β / (2 sin^{1/2} β) dβ dθ` while `F = r² cos β`,
/// so the `cos β` of the Jacobian cancels the `1/F` of the surface element and the
/// integrand is bounded on `β ∈ (0, π/2)`. The literal factors are evaluated at
/// jittered points of a uniform `β` grid with `θ` uniform on the sphere.
pub fn alpha_surface(m: &CoefficientMatrix, r: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    spec.validate()?;
    if !(r > 0.0) || !r.is_finite() {
        return invalid(format!("radius must be positive, got {r}"));
    }
    let n = m.n();
    let d = 2 * n;
    let q_dim = GroupParams::new(n)?.homogeneous_dimension() as f64;
    let sqrt_m = m.sqrt();
    let det_sqrt = m.determinant().sqrt();
    let r2 = r * r;
    let total = spec.samples - spec.samples % 2;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let measure = half_pi * group::sphere_area(d);
    let values = par_chunks(total, spec.seed, |_, range, rng| {
        let mut out = Vec::with_capacity(range.len());
        for i in range {
            let beta = half_pi * (i as f64 + rng.random::<f64>()) / total as f64;
            let theta = sampling::unit_vector(d, rng);
            let (sb, cb) = beta.sin_cos();
            let varrho = r * sb.sqrt();
            let y = DVector::from_iterator(d, theta.iter().map(|v| v * varrho));
            let x = &sqrt_m * y;
            let x: Vec<f64> = x.iter().copied().collect();
            let q = m.inverse_quadratic_form(&x);
            let big_f = ((r2 - q) * (r2 + q)).max(0.0).sqrt();
            let minv_x = m.inverse() * DVector::from_column_slice(&x);
            let grad_q_sq = 4.0 * minv_x.norm_squared();
            let surface = (big_f * big_f + q * q * grad_q_sq).sqrt() * cb / big_f.max(f64::MIN_POSITIVE);
            let jac = det_sqrt * varrho.powi(d as i32 - 1) * r / (2.0 * sb.sqrt());
            let mut w = 0.0;
            for t in [big_f, -big_f] {
                let p = HPoint { x: x.clone(), t };
                let jet = barriers::PhiJet::new(m, &p);
                let m_grad = jet.quadratic(m.entries());
                // |Dφ| with ∂ₓφ = 4q M⁻¹x and ∂ₜφ = 2t
                let d_phi = (16.0 * q * q * minv_x.norm_squared() + 4.0 * t * t).sqrt();
                w += m_grad / (4.0 * jet.phi.powf(0.75) * d_phi);
            }
            out.push(measure * r.powf(1.0 - q_dim) * w * surface * jac);
        }
        out
    });
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let value = v.iter().sum::<f64>() / total as f64;
    // adjacent strata paired into 2-point strata
    let var: f64 = v.chunks(2).map(|c| (c[0] - c[1]).powi(2)).sum::<f64>() / (total as f64).powi(2);
    let rounding = 64.0 * f64::EPSILON * (total as f64).sqrt() * value.abs();
    Ok(Estimate {
        value,
        stderr: var.sqrt().max(rounding),
        samples: total,
    })
}

/// `C̃ = (λ/Λ) ∫_{B_{√λ}(0)} |x|² / (|x|⁴ + t²)^{1/2}`.
pub fn c_tilde(n: usize, lambda: f64, big_lambda: f64, spec: &QuadratureSpec) -> Result<Estimate> {
    if !(lambda > 0.0 && big_lambda >= lambda) {
        return invalid("C̃ needs 0 < λ ≤ Λ");
    }
    let ball = DomainDescriptor::koranyi_ball(HPoint::origin(n), lambda.sqrt())?;
    let f = |p: &HPoint| {
        let x2 = p.horizontal_norm_sq();
        let den = (x2 * x2 + p.t * p.t).sqrt();
        if den > 0.0 {
            x2 / den
        } else {
            0.0
        }
    };
    Ok(integrate(&f, &ball, spec)?.scale(lambda / big_lambda))
}

/// JSON record `{quantity, M, r, value, stderr, samples, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRecord {
    pub quantity: String,
    #[serde(rename = "M")]
    pub m: Option<MatrixRecord>,
    pub r: Option<f64>,
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

impl QuadratureRecord {
    pub fn new(quantity: &str, m: Option<&CoefficientMatrix>, r: Option<f64>, est: &Estimate, seed: u64) -> Self {
        Self {
            quantity: quantity.to_string(),
            m: m.map(|m| m.to_record()),
            r,
            value: est.value,
            stderr: est.stderr,
            samples: est.samples,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::random_symplectic;

    fn spec(samples: usize) -> QuadratureSpec {
        QuadratureSpec::new(QuadratureMethod::StratifiedGrid, samples, 11, 1e-2).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::new(QuadratureMethod::MonteCarlo, 999, 0, 1e-3).is_err());
        assert!(QuadratureSpec::new(QuadratureMethod::MonteCarlo, 1000, 0, 0.0).is_err());
        assert!(QuadratureSpec::new(QuadratureMethod::MonteCarlo, 1000, 0, 0.2).is_err());
    }

    #[test]
    fn ball_volume_by_every_method() {
        for method in [
            QuadratureMethod::MonteCarlo,
            QuadratureMethod::StratifiedGrid,
            QuadratureMethod::Adaptive,
        ] {
            let s = QuadratureSpec::new(method, 200_000, 3, 1e-2).unwrap();
            let r = 0.8;
            let ball = DomainDescriptor::koranyi_ball(HPoint::h1(0.3, 0.1, -0.2), r).unwrap();
            let est = integrate(&|_| 1.0, &ball, &s).unwrap();
            let exact = r.powi(4) * group::unit_ball_volume(1);
            assert!((est.value - exact).abs() <= 3.0 * est.stderr.max(1e-3 * exact), "{method:?}: {est:?} vs {exact}");
        }
    }

    #[test]
    fn odd_integrand_vanishes() {
        let ball = DomainDescriptor::koranyi_ball(HPoint::origin(1), 1.0).unwrap();
        let s = spec(100_000).with_method(QuadratureMethod::MonteCarlo);
        let est = integrate(&|p: &HPoint| p.t * (1.0 + p.x[0] * p.x[0]), &ball, &s).unwrap();
        assert!(est.value.abs() <= 3.0 * est.stderr + 1e-15);
    }

    #[test]
    fn zero_measure_domain_integrates_to_zero() {
        let ball = DomainDescriptor::koranyi_ball(HPoint::origin(1), 0.0).unwrap();
        assert_eq!(integrate(&|_| 1.0, &ball, &spec(1000)).unwrap().value, 0.0);
    }

    #[test]
    fn adaptive_reports_exhausted_budget() {
        let ball = DomainDescriptor::koranyi_ball(HPoint::origin(1), 1.0).unwrap();
        let s = QuadratureSpec::new(QuadratureMethod::Adaptive, 1000, 0, 1e-6).unwrap();
        let f = |p: &HPoint| if p.x[0] > 0.0 { 1.0 } else { -1.0 };
        assert!(matches!(integrate(&f, &ball, &s), Err(HeisError::QuadratureBudget { .. })));
    }

    #[test]
    fn singular_sampler_is_exact_for_pure_powers() {
        for n in 1..=3 {
            let q = 2.0 * n as f64 + 2.0;
            let a = q - 2.0 + 1.0;
            let est = singular_ball_integral(n, a, &spec(4000)).unwrap();
            let exact = q * group::unit_ball_volume(n) / (q - a);
            assert!((est.value / exact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sublevel_fraction_examples() {
        let ball = DomainDescriptor::koranyi_ball(HPoint::h1(0.2, 0.0, 0.1), 0.5).unwrap();
        let s = spec(10_000);
        assert_eq!(measure_sublevel(&|_| 0.0, &ball, 1.0, &s).unwrap().fraction, 1.0);
        assert_eq!(measure_sublevel(&|_| 2.0, &ball, 1.0, &s).unwrap().fraction, 0.0);
        let box_domain = DomainDescriptor::box_domain(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(measure_sublevel(&|_| 0.0, &box_domain, 1.0, &s).is_err());
    }

    #[test]
    fn alpha_is_positive_and_radius_free() {
        let m = random_symplectic(1, 0.5, 2.0, 8).unwrap();
        let s = spec(20_000);
        let a1 = alpha_surface(&m, 1.0, &s).unwrap();
        assert!(a1.value > 0.0);
        for r in [0.5, 2.0] {
            let ar = alpha_surface(&m, r, &s).unwrap();
            assert!((ar.value - a1.value).abs() <= 2.0 * (ar.stderr + a1.stderr));
        }
    }

    #[test]
    fn record_serializes_with_matrix_key() {
        let m = CoefficientMatrix::identity(1);
        let rec = QuadratureRecord::new("alpha_volume", Some(&m), None, &Estimate::exact(1.0), 4);
        let text = rec.to_json().unwrap();
        assert!(text.contains("\"M\"") && text.contains("\"quantity\":\"alpha_volume\""));
    }
}
