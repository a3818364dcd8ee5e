//! Coefficient matrices of the operator class: symmetric, uniformly elliptic,
//! unit determinant, optionally symplectic (`M⁻¹ = JᵗMJ`), plus continuity moduli
//! and variable coefficient fields.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HeisError, Result};
use crate::group::{self, GroupParams, HPoint};
use crate::quadrature::sampling::{seeded_rng, uniform_in_koranyi_ball};

/// Default tolerance of the matrix predicates.
pub const PREDICATE_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const SPECTRUM_TOL: f64 = 1e-10;

/// A symmetric positive definite `2n × 2n` matrix with declared ellipticity bounds `λ ≤ M ≤ Λ`.
#[derive(Clone)]
pub struct CoefficientMatrix {
    n: usize,
    entries: DMatrix<f64>,
    inverse: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    lambda: f64,
    big_lambda: f64,
}

impl fmt::Debug for CoefficientMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientMatrix")
            .field("n", &self.n)
            .field("entries", &self.entries.as_slice())
            .field("lambda", &self.lambda)
            .field("Lambda", &self.big_lambda)
            .finish()
    }
}

impl PartialEq for CoefficientMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.lambda == other.lambda && self.big_lambda == other.big_lambda
    }
}

impl CoefficientMatrix {
    /// Validates symmetry, positivity and the declared spectral bounds.
    pub fn new(entries: DMatrix<f64>, lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(big_lambda >= lambda) || !big_lambda.is_finite() {
            return invalid(format!(
                "ellipticity bounds must satisfy 0 < λ ≤ Λ < ∞, got λ = {lambda}, Λ = {big_lambda}"
            ));
        }
        let (entries, eigenvalues, inverse) = decompose(entries)?;
        let (min, max) = (eigenvalues[0], *eigenvalues.last().unwrap());
        let tol = SPECTRUM_TOL * big_lambda.max(1.0);
        if min < lambda - tol || max > big_lambda + tol {
            return Err(HeisError::OutOfBounds {
                min,
                max,
                lambda,
                big_lambda,
            });
        }
        let n = entries.nrows() / 2;
        Ok(Self {
            n,
            entries,
            inverse,
            eigenvalues,
            lambda,
            big_lambda,
        })
    }

    /// Takes the ellipticity bounds from the spectrum itself.
    pub fn from_spd(entries: DMatrix<f64>) -> Result<Self> {
        let (entries, eigenvalues, inverse) = decompose(entries)?;
        let n = entries.nrows() / 2;
        Ok(Self {
            n,
            lambda: eigenvalues[0],
            big_lambda: *eigenvalues.last().unwrap(),
            entries,
            inverse,
            eigenvalues,
        })
    }

    pub fn identity(n: usize) -> Self {
        let d = 2 * n;
        Self {
            n,
            entries: DMatrix::identity(d, d),
            inverse: DMatrix::identity(d, d),
            eigenvalues: vec![1.0; d],
            lambda: 1.0,
            big_lambda: 1.0,
        }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::from_spd(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// Same matrix with wider declared bounds, e.g. to place it in a class `M_n(λ, Λ)`.
    pub fn with_bounds(&self, lambda: f64, big_lambda: f64) -> Result<Self> {
        Self::new(self.entries.clone(), lambda, big_lambda)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn determinant(&self) -> f64 {
        self.eigenvalues.iter().product()
    }

    /// `⟨M⁻¹x, x⟩`.
    pub fn inverse_quadratic_form(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.inverse, x)
    }

    /// `⟨Mx, x⟩`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        quadratic_form(&self.entries, x)
    }

    pub fn check_point(&self, p: &HPoint) -> Result<()> {
        GroupParams::new(self.n)?.check(p)
    }

    /// Symmetric square root `M^{1/2}`.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let eig = self.entries.clone().symmetric_eigen();
        let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }

    /// Conjugation `U M Uᵗ`.
    pub fn conjugate(&self, u: &DMatrix<f64>) -> Result<Self> {
        let m = u * &self.entries * u.transpose();
        Self::new(symmetrize(&m), self.lambda, self.big_lambda)
    }

    pub fn to_record(&self) -> MatrixRecord {
        let d = 2 * self.n;
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                entries.push(self.entries[(i, j)]);
            }
        }
        MatrixRecord {
            n: self.n,
            entries,
            lambda: self.lambda,
            big_lambda: self.big_lambda,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: MatrixRecord = serde_json::from_str(text)?;
        rec.into_matrix()
    }
}

/// JSON form `{"n": …, "entries": [row-major], "lambda": …, "Lambda": …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub n: usize,
    pub entries: Vec<f64>,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl MatrixRecord {
    pub fn into_matrix(self) -> Result<CoefficientMatrix> {
        let d = 2 * self.n;
        if self.n == 0 || self.entries.len() != d * d {
            return invalid(format!(
                "matrix record for n = {} needs {} entries, got {}",
                self.n,
                d * d,
                self.entries.len()
            ));
        }
        CoefficientMatrix::new(
            DMatrix::from_row_slice(d, d, &self.entries),
            self.lambda,
            self.big_lambda,
        )
    }
}

fn quadratic_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[(i, j)] * x[j];
        }
        s += row * x[i];
    }
    s
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn decompose(entries: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let d = entries.nrows();
    if d == 0 || d != entries.ncols() || !d.is_multiple_of(2) {
        return invalid(format!(
            "coefficient matrix must be square of even size, got {}x{}",
            entries.nrows(),
            entries.ncols()
        ));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(HeisError::NonFinite);
    }
    let scale = entries.amax().max(1.0);
    let asym = (&entries - entries.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(HeisError::NotSymmetric { asym });
    }
    let entries = symmetrize(&entries);
    let eig = entries.clone().symmetric_eigen();
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let min_eig = eigenvalues[0];
    if !(min_eig > 0.0) {
        return Err(HeisError::NotSpd { min_eig });
    }
    let inv_d = eig.eigenvalues.map(|v| 1.0 / v);
    let inverse = symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&inv_d) * eig.eigenvectors.transpose()));
    Ok((entries, eigenvalues, inverse))
}

/// Operator (spectral) norm, `√λ_max(BᵗB)`.
pub fn operator_norm(b: &DMatrix<f64>) -> f64 {
    if b.nrows() == b.ncols() && (b - b.transpose()).amax() <= 1e-14 * b.amax().max(1e-300) {
        let eig = symmetrize(b).symmetric_eigen();
        return eig.eigenvalues.amax();
    }
    let g = b.transpose() * b;
    symmetrize(&g).symmetric_eigen().eigenvalues.max().max(0.0).sqrt()
}

/// Rescales an SPD matrix to unit determinant, `A / det(A)^{1/(2n)}`.
pub fn normalize_unit_det(a: &CoefficientMatrix) -> Result<CoefficientMatrix> {
    let d = (2 * a.n) as f64;
    // log-sum keeps extreme spectra from overflowing the product
    let log_det: f64 = a.eigenvalues.iter().map(|v| v.ln()).sum();
    let scale = (-log_det / d).exp();
    CoefficientMatrix::from_spd(a.entries() * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymplecticCheck {
    pub symplectic: bool,
    /// `‖M⁻¹ − JᵗMJ‖`.
    pub residual: f64,
}

/// Tests `M⁻¹ = JᵗMJ` in operator norm.
pub fn is_symplectic(m: &CoefficientMatrix, tol: f64) -> Result<SymplecticCheck> {
    if m.eigenvalues[0] <= 1e-14 * m.eigenvalues.last().unwrap() {
        return Err(HeisError::Singular);
    }
    let j = GroupParams::new(m.n)?.symplectic_form();
    let diff = m.inverse() - j.transpose() * m.entries() * &j;
    let residual = operator_norm(&symmetrize(&diff));
    Ok(SymplecticCheck {
        symplectic: residual <= tol,
        residual,
    })
}

/// Residual norms of the three block identities equivalent to the symplectic condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockReport {
    /// `‖A₁₁A₂₂ − A₁₂² − I‖`
    pub determinant_like: f64,
    /// `‖A₁₁A₁₂ᵗ − A₁₂A₁₁‖`
    pub first_commutation: f64,
    /// `‖A₂₂A₁₂ − A₁₂ᵗA₂₂‖`
    pub second_commutation: f64,
}

impl BlockReport {
    pub fn max(&self) -> f64 {
        self.determinant_like
            .max(self.first_commutation)
            .max(self.second_commutation)
    }

    pub fn all_within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn block_conditions(m: &CoefficientMatrix) -> BlockReport {
    let n = m.n;
    let e = m.entries();
    let a11 = e.view((0, 0), (n, n)).into_owned();
    let a12 = e.view((0, n), (n, n)).into_owned();
    let a22 = e.view((n, n), (n, n)).into_owned();
    let id = DMatrix::<f64>::identity(n, n);
    BlockReport {
        determinant_like: operator_norm(&(&a11 * &a22 - &a12 * &a12 - id)),
        first_commutation: operator_norm(&(&a11 * a12.transpose() - &a12 * &a11)),
        second_commutation: operator_norm(&(&a22 * &a12 - a12.transpose() * &a22)),
    }
}

/// Random element of `U(n)` embedded in `O(2n) ∩ Sp(2n)` as `[[X, −Y], [Y, X]]`.
/// Ten unit-determinant, non-symplectic matrices on ℝ⁴: diagonal ones with
/// `d₁d₃ ≠ 1` or `d₂d₄ ≠ 1`, and normalized couplings across the symplectic blocks.
pub fn non_symplectic_examples() -> Vec<CoefficientMatrix> {
    let diagonals: [[f64; 4]; 7] = [
        [2.0, 1.0, 1.0, 0.5],
        [3.0, 1.0, 1.0, 1.0 / 3.0],
        [1.0, 2.0, 0.5, 1.0],
        [4.0, 0.5, 0.5, 1.0],
        [0.5, 0.5, 1.0, 4.0],
        [1.5, 1.5, 1.0, 1.0 / 2.25],
        [0.25, 2.0, 2.0, 1.0],
    ];
    let mut out: Vec<CoefficientMatrix> = diagonals
        .iter()
        .map(|d| CoefficientMatrix::diagonal(d).expect("positive diagonal"))
        .collect();
    for (a, b) in [(0.5, 0.0), (0.0, 0.4), (0.3, -0.3)] {
        let e = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, a, 0.0, 0.0, a, 1.0, b, 0.0, 0.0, b, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        let m = CoefficientMatrix::from_spd(e).expect("diagonally dominant");
        out.push(normalize_unit_det(&m).expect("positive determinant"));
    }
    out
}

pub fn random_orthogonal_symplectic<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::<Complex<f64>>::from_fn(n, n, |_, _| {
        Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix the phases so the distribution is Haar
    let mut u = q.clone();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex::new(1.0, 0.0) };
        for i in 0..n {
            u[(i, j)] = q[(i, j)] * phase;
        }
    }
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, bj) = (i / n, j / n);
        let c = u[(i % n, j % n)];
        match (bi, bj) {
            (0, 0) | (1, 1) => c.re,
            (0, 1) => -c.im,
            _ => c.im,
        }
    })
}

fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut u = q.clone();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
    u
}

fn check_class_bounds(lambda: f64, big_lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || lambda > 1.0 || big_lambda < 1.0 || !big_lambda.is_finite() {
        return invalid(format!(
            "unit-determinant class needs 0 < λ ≤ 1 ≤ Λ, got λ = {lambda}, Λ = {big_lambda}"
        ));
    }
    Ok(())
}

/// Reproducible random unit-determinant symplectic SPD matrix with spectrum in `[λ, Λ]`.
///
/// The matrix is `U · diag(A₁₁, A₁₁⁻¹) · Uᵗ` with `A₁₁` a random SPD block and `U`
/// orthogonal-symplectic, which covers the whole symplectic SPD class.
pub fn random_symplectic(n: usize, lambda: f64, big_lambda: f64, seed: u64) -> Result<CoefficientMatrix> {
    GroupParams::new(n)?;
    check_class_bounds(lambda, big_lambda)?;
    let mut rng = seeded_rng(seed, 0x5eed);
    // eigenvalues come in pairs (μ, 1/μ), both must lie in [λ, Λ]
    let lo = lambda.max(1.0 / big_lambda).ln();
    let hi = big_lambda.min(1.0 / lambda).ln();
    let mu: Vec<f64> = (0..n)
        .map(|_| if hi > lo { rng.random_range(lo..=hi).exp() } else { 1.0 })
        .collect();
    let q = random_orthogonal(n, &mut rng);
    let a11 = &q * DMatrix::from_diagonal(&DVector::from_vec(mu.clone())) * q.transpose();
    let a11_inv = &q * DMatrix::from_diagonal(&DVector::from_iterator(n, mu.iter().map(|v| 1.0 / v))) * q.transpose();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&a11);
    block.view_mut((n, n), (n, n)).copy_from(&a11_inv);
    let u = random_orthogonal_symplectic(n, &mut rng);
    let m = symmetrize(&(&u * block * u.transpose()));
    CoefficientMatrix::new(m, lambda, big_lambda)
}

/// Reproducible random unit-determinant SPD matrix with spectrum in `[λ, Λ]`, not
/// necessarily symplectic.
pub fn random_unit_det_spd(n: usize, lambda: f64, big_lambda: f64, seed: u64) -> Result<CoefficientMatrix> {
    GroupParams::new(n)?;
    check_class_bounds(lambda, big_lambda)?;
    let d = 2 * n;
    let mut rng = seeded_rng(seed, 0xa11);
    let (lo, hi) = (lambda.ln(), big_lambda.ln());
    let logs = loop {
        let raw: Vec<f64> = (0..d)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { 0.0 })
            .collect();
        let mean = raw.iter().sum::<f64>() / d as f64;
        let centred: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        if centred.iter().all(|v| *v >= lo && *v <= hi) {
            break centred;
        }
    };
    let q = random_orthogonal(d, &mut rng);
    let diag = DVector::from_iterator(d, logs.iter().map(|v| v.exp()));
    let m = symmetrize(&(&q * DMatrix::from_diagonal(&diag) * q.transpose()));
    CoefficientMatrix::new(m, lambda, big_lambda)
}

/// A continuity modulus `ω : [0, 1) → [0, ∞)`, non-decreasing with `ω(0⁺) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuityModulus {
    Zero,
    Hoelder { c: f64, a: f64 },
    /// `ω(ε) = D₀ / (−log ε)`, the modulus implied by a uniform Dini bound `D₀`.
    DiniLog { d0: f64 },
    /// Piecewise linear through `(0, 0)` and the given `(s, ω(s))` knots, constant after the last.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl ContinuityModulus {
    pub fn dini_to_log_modulus(d0: f64) -> Result<Self> {
        if !(d0 > 0.0) || !d0.is_finite() {
            return invalid(format!("Dini constant must be positive, got {d0}"));
        }
        Ok(Self::DiniLog { d0 })
    }

    pub fn eval(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return invalid(format!("modulus argument must lie in (0, 1), got {eps}"));
        }
        Ok(self.eval_unchecked(eps))
    }

    pub(crate) fn eval_unchecked(&self, eps: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Hoelder { c, a } => c * eps.powf(*a),
            Self::DiniLog { d0 } => d0 / (-eps.ln()),
            Self::Tabulated { knots } => {
                let mut prev = (0.0, 0.0);
                for &(s, w) in knots {
                    if eps <= s {
                        let frac = (eps - prev.0) / (s - prev.0);
                        return prev.1 + frac * (w - prev.1);
                    }
                    prev = (s, w);
                }
                prev.1
            }
        }
    }

    /// Structural checks plus sampled monotonicity and decay toward `0⁺`.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Zero => {}
            Self::Hoelder { c, a } => {
                if !(*c >= 0.0 && *a > 0.0) {
                    return invalid(format!("Hölder modulus needs C ≥ 0 and a > 0, got C = {c}, a = {a}"));
                }
            }
            Self::DiniLog { d0 } => {
                if !(*d0 > 0.0) {
                    return invalid(format!("Dini constant must be positive, got {d0}"));
                }
            }
            Self::Tabulated { knots } => {
                let mut prev = (0.0, 0.0);
                for &(s, w) in knots {
                    if !(s > prev.0) || !(w >= prev.1) || !w.is_finite() {
                        return invalid("tabulated modulus knots must be strictly increasing in s and non-decreasing in ω");
                    }
                    prev = (s, w);
                }
            }
        }
        let grid: Vec<f64> = (1..1000).map(|k| k as f64 / 1000.0).collect();
        if grid
            .windows(2)
            .any(|w| self.eval_unchecked(w[1]) < self.eval_unchecked(w[0]) - 1e-15)
        {
            return invalid("modulus is decreasing somewhere on (0, 1)");
        }
        let dyadic: Vec<f64> = (1..=1000).map(|k| self.eval_unchecked(0.5f64.powi(k))).collect();
        if dyadic.windows(2).any(|w| w[1] > w[0] + 1e-15) {
            return invalid("modulus does not decrease along ε = 2⁻ᵏ");
        }
        Ok(())
    }
}

/// Axis-aligned box in `(x, t)` coordinates or a Korányi ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: HPoint, radius: f64 },
    Everywhere,
}

impl Region {
    pub fn contains(&self, p: &HPoint) -> bool {
        match self {
            Region::Box { lo, hi } => {
                let d = p.x.len();
                p.x.iter().enumerate().all(|(i, v)| *v >= lo[i] && *v <= hi[i]) && p.t >= lo[d] && p.t <= hi[d]
            }
            Region::Ball { center, radius } => group::distance_unchecked(center, p) < *radius,
            Region::Everywhere => true,
        }
    }

    /// Lebesgue measure, when finite.
    pub fn measure(&self) -> Option<f64> {
        match self {
            Region::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(a, b)| b - a).product()),
            Region::Ball { center, radius } => {
                let q = 2 * center.n() + 2;
                Some(radius.powi(q as i32) * group::unit_ball_volume(center.n()))
            }
            Region::Everywhere => None,
        }
    }
}

type MatrixFn = dyn Fn(&HPoint) -> DMatrix<f64> + Send + Sync;

/// A variable coefficient field `z ↦ A(z)` on a region `Ω` with a declared modulus.
#[derive(Clone)]
pub struct CoefficientField {
    n: usize,
    lambda: f64,
    big_lambda: f64,
    domain: Region,
    modulus: ContinuityModulus,
    eval: Arc<MatrixFn>,
    constant: Option<CoefficientMatrix>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("n", &self.n)
            .field("lambda", &self.lambda)
            .field("Lambda", &self.big_lambda)
            .field("domain", &self.domain)
            .field("modulus", &self.modulus)
            .field("constant", &self.constant.is_some())
            .finish()
    }
}

impl CoefficientField {
    pub fn constant(m: CoefficientMatrix, domain: Region) -> Self {
        let entries = m.entries().clone();
        Self {
            n: m.n(),
            lambda: m.lambda(),
            big_lambda: m.big_lambda(),
            domain,
            modulus: ContinuityModulus::Zero,
            eval: Arc::new(move |_| entries.clone()),
            constant: Some(m),
        }
    }

    pub fn from_fn<F>(
        n: usize,
        lambda: f64,
        big_lambda: f64,
        domain: Region,
        modulus: ContinuityModulus,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&HPoint) -> DMatrix<f64> + Send + Sync + 'static,
    {
        GroupParams::new(n)?;
        if !(lambda > 0.0 && big_lambda >= lambda) {
            return invalid("field bounds must satisfy 0 < λ ≤ Λ");
        }
        modulus.validate()?;
        Ok(Self {
            n,
            lambda,
            big_lambda,
            domain,
            modulus,
            eval: Arc::new(f),
            constant: None,
        })
    }

    /// Tabulated ℍ¹ field on a node grid over `[lo, hi]` (ordering `x₁, x₂, t`), with
    /// entries `(a₁₁, a₁₂, a₂₂)` per node. Values between nodes are trilinear blends
    /// renormalized to unit determinant.
    pub fn tabulated_h1(
        lo: [f64; 3],
        hi: [f64; 3],
        dims: [usize; 3],
        entries: Vec<[f64; 3]>,
        lambda: f64,
        big_lambda: f64,
        modulus: ContinuityModulus,
    ) -> Result<Self> {
        if dims.iter().any(|d| *d < 2) || entries.len() != dims[0] * dims[1] * dims[2] {
            return invalid("tabulated field needs at least 2 nodes per axis and one entry per node");
        }
        let domain = Region::Box {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        };
        let f = move |p: &HPoint| {
            let c = [p.x[0], p.x[1], p.t];
            let mut base = [0usize; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let h = (hi[a] - lo[a]) / (dims[a] - 1) as f64;
                let s = ((c[a] - lo[a]) / h).clamp(0.0, (dims[a] - 1) as f64);
                let i = (s.floor() as usize).min(dims[a] - 2);
                base[a] = i;
                frac[a] = s - i as f64;
            }
            let mut acc = [0.0; 3];
            for corner in 0..8 {
                let mut w = 1.0;
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    let bit = (corner >> a) & 1;
                    idx[a] = base[a] + bit;
                    w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                let e = entries[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])];
                for k in 0..3 {
                    acc[k] += w * e[k];
                }
            }
            let det = (acc[0] * acc[2] - acc[1] * acc[1]).max(1e-300);
            let s = 1.0 / det.sqrt();
            DMatrix::from_row_slice(2, 2, &[acc[0] * s, acc[1] * s, acc[1] * s, acc[2] * s])
        };
        Self::from_fn(1, lambda, big_lambda, domain, modulus, f)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn modulus(&self) -> &ContinuityModulus {
        &self.modulus
    }

    pub fn as_constant(&self) -> Option<&CoefficientMatrix> {
        self.constant.as_ref()
    }

    /// Raw entries without validation; used in inner loops.
    pub fn entries_at(&self, z: &HPoint) -> DMatrix<f64> {
        (self.eval)(z)
    }

    /// Validated matrix at `z`.
    pub fn eval(&self, z: &HPoint) -> Result<CoefficientMatrix> {
        if let Some(m) = &self.constant {
            m.check_point(z)?;
            return Ok(m.clone());
        }
        GroupParams::new(self.n)?.check(z)?;
        CoefficientMatrix::new((self.eval)(z), self.lambda, self.big_lambda)
    }

    /// Checks the class invariants (bounds, unit determinant, optionally the
    /// symplectic condition) at the given points.
    pub fn check_class(&self, points: &[HPoint], require_symplectic: bool) -> Result<()> {
        for z in points {
            let m = self.eval(z)?;
            let det = m.determinant();
            if (det - 1.0).abs() > 1e-10 {
                return invalid(format!("coefficient at {z:?} has determinant {det}"));
            }
            if require_symplectic && !is_symplectic(&m, PREDICATE_TOL)?.symplectic {
                return invalid(format!("coefficient at {z:?} is not symplectic"));
            }
        }
        Ok(())
    }
}

/// Sampled `ω_A(z₀; ε) = sup_{B_ε(z₀) ∩ Ω} ‖A(z) − A(z₀)‖`.
pub fn empirical_modulus(a: &CoefficientField, z0: &HPoint, eps: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(eps > 0.0) {
        return invalid(format!("radius must be positive, got {eps}"));
    }
    GroupParams::new(a.n)?.check(z0)?;
    let a0 = a.entries_at(z0);
    let mut rng = seeded_rng(seed, 0xe3);
    let mut used = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let w = uniform_in_koranyi_ball(a.n, eps, &mut rng);
        let z = group::compose_unchecked(z0, &w);
        if !a.domain.contains(&z) {
            continue;
        }
        used += 1;
        worst = worst.max(operator_norm(&(a.entries_at(&z) - &a0)));
    }
    if used == 0 {
        return Err(HeisError::EmptySample(format!(
            "no sample of B_{eps}(z₀) fell inside the coefficient domain"
        )));
    }
    Ok(worst)
}

/// Parameters of a smooth random ℍ¹ coefficient field
/// `A(z) = R(θ(z)) diag(e^{s(z)}, e^{−s(z)}) R(θ(z))ᵗ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothFieldSpec {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    /// Euclidean Lipschitz constant of `s` and `θ`.
    pub slope: f64,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Draws a smooth unit-determinant ℍ¹ field in `M₁(λ, Λ)` together with a Lipschitz
/// modulus `ω(ε) = c ε` that it provably respects on its box.
pub fn random_smooth_field_h1(spec: &SmoothFieldSpec, seed: u64) -> Result<CoefficientField> {
    check_class_bounds(spec.lambda, spec.big_lambda)?;
    if !(spec.slope >= 0.0) {
        return invalid("field slope must be non-negative");
    }
    let mut rng = seeded_rng(seed, 0xf1e1d);
    let s_max = spec.big_lambda.ln().min(-spec.lambda.ln());
    // s = s0 + amp·sin(⟨k, z⟩ + phase) with |s| ≤ s_max and Lipschitz ≤ slope
    let s_amp_cap = 0.5 * s_max;
    let s0 = if s_max > 0.0 { rng.random_range(-0.5 * s_max..=0.5 * s_max) } else { 0.0 };
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let nrm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / nrm, v[1] / nrm, v[2] / nrm]
    };
    let ks = unit(&mut rng);
    let kt = unit(&mut rng);
    let freq_s = rng.random_range(0.5..2.0);
    let freq_t = rng.random_range(0.5..2.0);
    let s_amp = (spec.slope / freq_s).min(s_amp_cap);
    let t_amp = spec.slope / freq_t;
    let phase_s = rng.random_range(0.0..std::f64::consts::TAU);
    let phase_t = rng.random_range(0.0..std::f64::consts::TAU);
    let theta0 = rng.random_range(0.0..std::f64::consts::PI);
    let f = move |p: &HPoint| {
        let z = [p.x[0], p.x[1], p.t];
        let dot = |k: &[f64; 3]| k[0] * z[0] + k[1] * z[1] + k[2] * z[2];
        let s = s0 + s_amp * (freq_s * dot(&ks) + phase_s).sin();
        let th = theta0 + t_amp * (freq_t * dot(&kt) + phase_t).sin();
        let (c, sn) = (th.cos(), th.sin());
        let (e1, e2) = (s.exp(), (-s).exp());
        let a11 = c * c * e1 + sn * sn * e2;
        let a22 = sn * sn * e1 + c * c * e2;
        let a12 = c * sn * (e1 - e2);
        DMatrix::from_row_slice(2, 2, &[a11, a12, a12, a22])
    };
    // ‖∂A/∂s‖ ≤ e^{|s|}, ‖∂A/∂θ‖ ≤ 2 sinh|s|; s and θ are slope-Lipschitz in z.
    let lip_euclid = spec.slope * (s_max.exp() + 2.0 * s_max.sinh());
    // |Δz|_E ≤ (2 + 2X)·d(z, z₀) whenever d ≤ 1, X = max |x| on the box
    let x_max = (spec.lo[0].abs().max(spec.hi[0].abs()).powi(2) + spec.lo[1].abs().max(spec.hi[1].abs()).powi(2)).sqrt();
    let modulus = ContinuityModulus::Hoelder {
        c: lip_euclid * (2.0 + 2.0 * x_max),
        a: 1.0,
    };
    let domain = Region::Box {
        lo: spec.lo.to_vec(),
        hi: spec.hi.to_vec(),
    };
    CoefficientField::from_fn(1, spec.lambda, spec.big_lambda, domain, modulus, f)
}
