//! Experiment configuration: one TOML file with an optional block per subcommand.

use std::path::{Path, PathBuf};

use heis_core::coefficients::{self, MatrixRecord, SmoothFieldSpec};
use heis_core::solver::harness;
use heis_core::solver::{BoundaryFn, Grid, Scheme};
use heis_core::{barriers, CoefficientField, CoefficientMatrix, ContinuityModulus, HPoint, QuadratureMethod, Region};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub verify_identities: Option<VerifyIdentities>,
    pub gen_matrix: Option<GenMatrix>,
    pub alpha: Option<Alpha>,
    pub epsilon0: Option<Epsilon0>,
    pub barrier_check: Option<BarrierCheck>,
    pub solve: Option<Solve>,
    pub critical_density: Option<CriticalDensity>,
    pub harnack: Option<Harnack>,
    pub holder: Option<Holder>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn one() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    0.5
}

fn default_big_lambda() -> f64 {
    2.0
}

fn default_delta() -> f64 {
    0.25
}

fn default_count() -> usize {
    1
}

fn default_n() -> usize {
    1
}

fn default_origin() -> [f64; 3] {
    [0.0; 3]
}

/// An explicit matrix, inline or by reference to a `gen-matrix` output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    pub matrix: Option<MatrixRecord>,
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub index: usize,
}

impl MatrixSource {
    pub fn load(&self) -> Result<CoefficientMatrix, String> {
        match (&self.matrix, &self.file) {
            (Some(m), None) => m.clone().into_matrix().map_err(|e| e.to_string()),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                let records: Vec<MatrixRecord> = match serde_json::from_str(&text) {
                    Ok(list) => list,
                    Err(_) => vec![serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?],
                };
                let record = records
                    .get(self.index)
                    .ok_or_else(|| format!("{} has no matrix at index {}", path.display(), self.index))?;
                record.clone().into_matrix().map_err(|e| e.to_string())
            }
            _ => Err("give exactly one of `matrix` and `file`".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyIdentities {
    #[serde(default = "VerifyIdentities::default_ns")]
    pub n: Vec<usize>,
    #[serde(default = "VerifyIdentities::default_matrices")]
    pub matrices: usize,
    #[serde(default = "VerifyIdentities::default_points")]
    pub points: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "VerifyIdentities::default_tol")]
    pub tol: f64,
    #[serde(default = "VerifyIdentities::default_gamma_tol")]
    pub gamma_tol: f64,
    #[serde(default = "VerifyIdentities::default_converse")]
    pub converse: bool,
    #[serde(default = "VerifyIdentities::default_witness")]
    pub witness_threshold: f64,
    /// Checks this matrix alone instead of generated ones.
    pub matrix: Option<MatrixSource>,
}

impl VerifyIdentities {
    fn default_ns() -> Vec<usize> {
        vec![1, 2, 3]
    }
    fn default_matrices() -> usize {
        50
    }
    fn default_points() -> usize {
        1000
    }
    fn default_tol() -> f64 {
        1e-10
    }
    fn default_gamma_tol() -> f64 {
        1e-9
    }
    fn default_converse() -> bool {
        true
    }
    fn default_witness() -> f64 {
        1e-3
    }
}

impl Default for VerifyIdentities {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    Symplectic,
    UnitDet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMatrix {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "GenMatrix::default_kind")]
    pub kind: MatrixKind,
}

impl GenMatrix {
    fn default_kind() -> MatrixKind {
        MatrixKind::Symplectic
    }
}

impl Default for GenMatrix {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alpha {
    /// Uses this matrix instead of `count` generated ones.
    pub matrix: Option<MatrixSource>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "Alpha::default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "Alpha::default_samples")]
    pub samples: usize,
    #[serde(default = "Alpha::default_method")]
    pub method: QuadratureMethod,
}

impl Alpha {
    fn default_radii() -> Vec<f64> {
        vec![0.5, 1.0, 2.0]
    }
    fn default_samples() -> usize {
        1_000_000
    }
    fn default_method() -> QuadratureMethod {
        QuadratureMethod::StratifiedGrid
    }
}

impl Default for Alpha {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epsilon0 {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub modulus: ContinuityModulus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Growth {
    #[serde(default = "Growth::default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "Growth::default_samples")]
    pub samples: usize,
    #[serde(default = "Growth::default_points")]
    pub points: usize,
    /// `μ` as a fraction of `r`.
    #[serde(default = "Growth::default_mu")]
    pub mu_fraction: f64,
    /// Allowed relative deviation of the floor ratio at `r`, `r/2` from `2^{4δ}`.
    #[serde(default = "Growth::default_ratio_tol")]
    pub ratio_tol: f64,
}

impl Growth {
    fn default_radii() -> Vec<f64> {
        vec![0.5, 0.25]
    }
    fn default_samples() -> usize {
        100_000
    }
    fn default_points() -> usize {
        8
    }
    fn default_mu() -> f64 {
        0.1
    }
    fn default_ratio_tol() -> f64 {
        0.25
    }
}

impl Default for Growth {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierCheck {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "BarrierCheck::default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "BarrierCheck::default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub growth: Growth,
}

impl BarrierCheck {
    fn default_deltas() -> Vec<f64> {
        vec![0.1, 0.25, 0.4]
    }
    fn default_samples() -> usize {
        100_000
    }
}

impl Default for BarrierCheck {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_lo")]
    pub lo: [f64; 3],
    #[serde(default = "GridSpec::default_hi")]
    pub hi: [f64; 3],
    #[serde(default = "GridSpec::default_dims")]
    pub dims: [usize; 3],
}

impl GridSpec {
    fn default_lo() -> [f64; 3] {
        [-1.0; 3]
    }
    fn default_hi() -> [f64; 3] {
        [1.0; 3]
    }
    fn default_dims() -> [usize; 3] {
        [13, 13, 25]
    }

    pub fn build(&self) -> Result<Grid, String> {
        Grid::new(self.lo, self.hi, self.dims).map_err(|e| e.to_string())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

/// A coefficient field on ℍ¹. `seed` is offset by the field index inside a family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `A ≡ M`, explicit or drawn from `M₁(λ, Λ)`.
    Constant {
        matrix: Option<MatrixSource>,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one", rename = "Lambda")]
        big_lambda: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Smooth random field with a given Lipschitz slope.
    Smooth {
        lambda: f64,
        #[serde(rename = "Lambda")]
        big_lambda: f64,
        slope: f64,
        lo: [f64; 3],
        hi: [f64; 3],
        #[serde(default)]
        seed: u64,
    },
    /// Smooth random field whose declared modulus gives `ε₀ = eps0`.
    Calibrated {
        lambda: f64,
        #[serde(rename = "Lambda")]
        big_lambda: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        eps0: f64,
        lo: [f64; 3],
        hi: [f64; 3],
        #[serde(default)]
        seed: u64,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Constant {
            matrix: None,
            lambda: 1.0,
            big_lambda: 1.0,
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn label(&self) -> &'static str {
        match self {
            FieldSpec::Constant { .. } => "constant",
            FieldSpec::Smooth { .. } => "smooth",
            FieldSpec::Calibrated { .. } => "calibrated",
        }
    }

    pub fn build(&self, offset: u64) -> Result<CoefficientField, String> {
        let field = match self {
            FieldSpec::Constant {
                matrix,
                lambda,
                big_lambda,
                seed,
            } => {
                let m = match matrix {
                    Some(src) => src.load()?,
                    None => coefficients::random_symplectic(1, *lambda, *big_lambda, seed + offset).map_err(|e| e.to_string())?,
                };
                Ok(CoefficientField::constant(m, Region::Everywhere))
            }
            FieldSpec::Smooth {
                lambda,
                big_lambda,
                slope,
                lo,
                hi,
                seed,
            } => coefficients::random_smooth_field_h1(
                &SmoothFieldSpec {
                    lambda: *lambda,
                    big_lambda: *big_lambda,
                    slope: *slope,
                    lo: *lo,
                    hi: *hi,
                },
                seed + offset,
            ),
            FieldSpec::Calibrated {
                lambda,
                big_lambda,
                delta,
                eps0,
                lo,
                hi,
                seed,
            } => harness::field_for_eps0(*lambda, *big_lambda, *delta, *lo, *hi, *eps0, seed + offset),
        };
        field.map_err(|e| e.to_string())
    }
}

/// Dirichlet data. `seed` is offset by the datum index inside a family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `c₀ + c₁x₁ + c₂x₂ + c₃t`.
    Affine { c0: f64, c: [f64; 3] },
    /// Random positive trigonometric data above `floor`.
    Positive {
        #[serde(default = "DataSpec::default_floor")]
        floor: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `Γ_M(pole⁻¹ ∘ z)` for a constant field `A ≡ M`; an exact solution away from the pole.
    Fundamental { pole: [f64; 3] },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Positive { floor: 0.05, seed: 0 }
    }
}

impl DataSpec {
    fn default_floor() -> f64 {
        0.05
    }

    pub fn build(&self, field: &CoefficientField, offset: u64) -> Result<BoundaryFn, String> {
        Ok(match self {
            DataSpec::Constant { value } => {
                let v = *value;
                Arc::new(move |_: &HPoint| v)
            }
            DataSpec::Affine { c0, c } => {
                let (c0, c) = (*c0, *c);
                Arc::new(move |z: &HPoint| c0 + c[0] * z.x[0] + c[1] * z.x[1] + c[2] * z.t)
            }
            DataSpec::Positive { floor, seed } => harness::positive_boundary_data(seed + offset, *floor, false),
            DataSpec::Fundamental { pole } => {
                let m = field
                    .as_constant()
                    .ok_or("fundamental-solution data needs a constant field")?
                    .clone();
                let inv = heis_core::group::inverse(&HPoint::h1(pole[0], pole[1], pole[2]));
                Arc::new(move |z: &HPoint| {
                    let p = heis_core::group::compose(&inv, z).expect("ℍ¹ points");
                    barriers::gamma_fundamental(&m, &p).unwrap_or(f64::INFINITY)
                })
            }
        })
    }

    /// Exact solution in the interior, when known.
    pub fn exact(&self, field: &CoefficientField) -> Option<BoundaryFn> {
        match self {
            DataSpec::Constant { .. } | DataSpec::Affine { .. } | DataSpec::Fundamental { .. } => self.build(field, 0).ok(),
            DataSpec::Positive { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    EuclideanStencil,
    SemiLagrangian,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solve {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "Solve::default_scheme")]
    pub scheme: SchemeChoice,
    #[serde(default = "Solve::default_tol")]
    pub tol: f64,
    #[serde(default = "Solve::default_max_iter")]
    pub max_iter: usize,
    /// Largest accepted `max |u_euclid − u_sl|` when both schemes run.
    #[serde(default = "Solve::default_discrepancy")]
    pub discrepancy_tol: f64,
    /// Largest accepted error against an exact solution, when one is known.
    #[serde(default = "Solve::default_oracle")]
    pub oracle_tol: f64,
}

impl Solve {
    fn default_scheme() -> SchemeChoice {
        SchemeChoice::Both
    }
    fn default_tol() -> f64 {
        1e-10
    }
    fn default_max_iter() -> usize {
        5000
    }
    fn default_discrepancy() -> f64 {
        5e-2
    }
    fn default_oracle() -> f64 {
        1e-2
    }
}

impl Default for Solve {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalDensity {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_big_lambda", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_origin")]
    pub center: [f64; 3],
    #[serde(default = "CriticalDensity::default_r")]
    pub r: f64,
    /// Constant matrices drawn from `M₁(λ, Λ)`.
    #[serde(default = "CriticalDensity::default_matrices")]
    pub matrices: usize,
    /// Supersolutions per matrix.
    #[serde(default = "CriticalDensity::default_per_matrix")]
    pub per_matrix: usize,
    #[serde(default = "CriticalDensity::default_samples")]
    pub samples: usize,
    /// Samples for the constant `ε`.
    #[serde(default = "CriticalDensity::default_constant_samples")]
    pub constant_samples: usize,
    /// When set, tests against `ε̄` on `Ω = B_{ηr}(center)` with this `ε₀`.
    pub eps0: Option<f64>,
}

impl CriticalDensity {
    fn default_r() -> f64 {
        0.5
    }
    fn default_matrices() -> usize {
        4
    }
    fn default_per_matrix() -> usize {
        7
    }
    fn default_samples() -> usize {
        50_000
    }
    fn default_constant_samples() -> usize {
        200_000
    }
}

impl Default for CriticalDensity {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

/// Coefficient fields × boundary data solved on one grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default = "default_count")]
    pub fields: usize,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "default_count")]
    pub data_count: usize,
    #[serde(default = "Family::default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_origin")]
    pub center: [f64; 3],
    #[serde(default = "Solve::default_tol")]
    pub tol: f64,
}

impl Family {
    fn default_scheme() -> Scheme {
        Scheme::SemiLagrangian
    }
}

impl Default for Family {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harnack {
    #[serde(default)]
    pub family: Family,
    #[serde(default = "Harnack::default_radii")]
    pub radii: Vec<f64>,
    /// Enlargement factor; defaults to `η(λ, Λ)` of the field class.
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Repeats the scan on the refined grid and gates the change of `Ĉ`.
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "Harnack::default_stability")]
    pub stability_tol: f64,
}

impl Harnack {
    fn default_radii() -> Vec<f64> {
        vec![0.1, 0.2]
    }
    fn default_stability() -> f64 {
        0.2
    }
}

impl Default for Harnack {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holder {
    #[serde(default)]
    pub family: Family,
    /// Fit scales run over `[r/32, r/3]`.
    #[serde(default = "Holder::default_r")]
    pub r: f64,
}

impl Holder {
    fn default_r() -> f64 {
        0.6
    }
}

impl Default for Holder {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}
