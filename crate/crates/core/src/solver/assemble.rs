use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::linsolve::{self, Csr};
use crate::coefficients::{CoefficientField, CoefficientMatrix};
use crate::error::{invalid, HeisError, Result};
use crate::group::{self, HPoint};

pub type BoundaryFn = Arc<dyn Fn(&HPoint) -> f64 + Send + Sync>;

/// `L_A u = 0` on the box of `grid`, minus an optional Korányi ball, with Dirichlet data.
#[derive(Clone)]
pub struct DirichletProblem {
    field: CoefficientField,
    grid: Grid,
    excluded: Option<(HPoint, f64)>,
    boundary: BoundaryFn,
    fixed: Vec<bool>,
}

impl fmt::Debug for DirichletProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirichletProblem")
            .field("field", &self.field)
            .field("grid", &self.grid)
            .field("excluded", &self.excluded)
            .finish()
    }
}

impl DirichletProblem {
    pub fn new(field: CoefficientField, grid: Grid, boundary: BoundaryFn) -> Result<Self> {
        if field.n() != 1 {
            return invalid(format!("the solver works on ℍ¹ only, got n = {}", field.n()));
        }
        let bad = (0..grid.len()).into_par_iter().find_first(|&i| {
            let p = grid.point(i);
            field.eval(&p).map(|m| (m.determinant() - 1.0).abs() > 1e-10).unwrap_or(true)
        });
        if let Some(i) = bad {
            let p = grid.point(i);
            field.eval(&p)?;
            return invalid(format!("coefficient at node {p:?} does not have unit determinant"));
        }
        let fixed = (0..grid.len()).map(|i| grid.is_boundary(i)).collect();
        let out = Self {
            field,
            grid,
            excluded: None,
            boundary,
            fixed,
        };
        out.check_mask()?;
        Ok(out)
    }

    /// Removes the open Korányi ball `B_r(c)` from the unknowns; its nodes take the
    /// boundary data.
    pub fn with_excluded_ball(mut self, center: HPoint, radius: f64) -> Result<Self> {
        group::GroupParams::new(1)?.check(&center)?;
        if !(radius > 0.0) {
            return invalid("excluded radius must be positive");
        }
        for i in 0..self.grid.len() {
            if group::distance_unchecked(&center, &self.grid.point(i)) < radius {
                self.fixed[i] = true;
            }
        }
        self.excluded = Some((center, radius));
        self.check_mask()?;
        Ok(self)
    }

    fn check_mask(&self) -> Result<()> {
        let unknowns: Vec<usize> = (0..self.grid.len()).filter(|&i| !self.fixed[i]).collect();
        let Some(&start) = unknowns.first() else {
            return Err(HeisError::Stencil("the mask has no interior nodes".into()));
        };
        let mut seen = vec![false; self.grid.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut count = 1;
        let dims = self.grid.dims();
        while let Some(i) = queue.pop_front() {
            let c = self.grid.coords(i);
            for a in 0..3 {
                for step in [-1i64, 1] {
                    let v = c[a] as i64 + step;
                    if v < 0 || v >= dims[a] as i64 {
                        continue;
                    }
                    let mut d = c;
                    d[a] = v as usize;
                    let j = self.grid.index(d[0], d[1], d[2]);
                    if !self.fixed[j] && !seen[j] {
                        seen[j] = true;
                        count += 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        if count != unknowns.len() {
            return Err(HeisError::Stencil("the mask of unknown nodes is not connected".into()));
        }
        Ok(())
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn excluded(&self) -> Option<&(HPoint, f64)> {
        self.excluded.as_ref()
    }

    pub fn is_fixed(&self, idx: usize) -> bool {
        self.fixed[idx]
    }

    pub fn boundary_value(&self, p: &HPoint) -> f64 {
        (self.boundary)(p)
    }

    /// Same field, mask and data on another grid.
    pub fn on_grid(&self, grid: Grid) -> Result<Self> {
        let p = Self::new(self.field.clone(), grid, self.boundary.clone())?;
        match &self.excluded {
            Some((c, r)) => p.with_excluded_ball(c.clone(), *r),
            None => Ok(p),
        }
    }

    /// Same field and mask with other data.
    pub fn with_boundary(&self, boundary: BoundaryFn) -> Self {
        let mut p = self.clone();
        p.boundary = boundary;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Centred differences of `tr(B D²u)`, 19 points.
    #[default]
    EuclideanStencil,
    /// Second differences along the eigendirections of `A`, monotone.
    SemiLagrangian,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::EuclideanStencil => "euclidean-stencil",
            Scheme::SemiLagrangian => "semi-lagrangian",
        }
    }
}

/// `B = C A Cᵗ` with `C` the 3×2 matrix of rows `e₁, e₂, 2(Jx)ᵗ`, so that
/// `Σ aᵢⱼ XᵢXⱼu = tr(B D²u)` for symmetric `A`.
pub fn euclidean_coefficients(a: &CoefficientMatrix, p: &HPoint) -> Result<Matrix3<f64>> {
    if a.n() != 1 || p.n() != 1 {
        return invalid("euclidean_coefficients is defined on ℍ¹ only");
    }
    Ok(euclidean_b(a.entries(), p))
}

fn euclidean_b(a: &DMatrix<f64>, p: &HPoint) -> Matrix3<f64> {
    let jx = [-p.x[1], p.x[0]];
    let c = nalgebra::Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 2.0 * jx[0], 2.0 * jx[1]);
    let a2 = Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    c * a2 * c.transpose()
}

/// Weights `(node, w)` with `L_h u(node₀) = Σ w u(node)`, centre included.
fn stencil(problem: &DirichletProblem, scheme: Scheme, idx: usize) -> Vec<(usize, f64)> {
    let grid = &problem.grid;
    let p = grid.point(idx);
    let a = problem.field.entries_at(&p);
    match scheme {
        Scheme::EuclideanStencil => euclid_row(grid, idx, &euclidean_b(&a, &p)),
        Scheme::SemiLagrangian => sl_row(grid, idx, &p, &a),
    }
}

fn euclid_row(grid: &Grid, idx: usize, b: &Matrix3<f64>) -> Vec<(usize, f64)> {
    let h = grid.spacing();
    let c = grid.coords(idx);
    let at = |d: [i64; 3]| {
        grid.index(
            (c[0] as i64 + d[0]) as usize,
            (c[1] as i64 + d[1]) as usize,
            (c[2] as i64 + d[2]) as usize,
        )
    };
    let mut row = Vec::with_capacity(19);
    let mut centre = 0.0;
    for a in 0..3 {
        let w = b[(a, a)] / (h[a] * h[a]);
        let mut d = [0i64; 3];
        d[a] = 1;
        row.push((at(d), w));
        d[a] = -1;
        row.push((at(d), w));
        centre -= 2.0 * w;
    }
    for a in 0..3 {
        for bb in a + 1..3 {
            let w = 2.0 * b[(a, bb)] / (4.0 * h[a] * h[bb]);
            for (sa, sb, sign) in [(1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)] {
                let mut d = [0i64; 3];
                d[a] = sa;
                d[bb] = sb;
                row.push((at(d), sign * w));
            }
        }
    }
    row.push((idx, centre));
    row
}

/// Arm length of the semi-Lagrangian scheme: `√(h·ℓ)/2`, at least two cells, with `h`
/// the horizontal spacing and `ℓ` the horizontal extent.
pub fn semi_lagrangian_reach(grid: &Grid) -> f64 {
    let h = grid.spacing();
    let hx = h[0].max(h[1]);
    let extent = (grid.hi()[0] - grid.lo()[0]).min(grid.hi()[1] - grid.lo()[1]);
    (2.0 * hx).max((hx * extent).sqrt() / 2.0)
}

/// Longest `σ ≤ s` with `z + σ d` inside the box.
fn arm_length(grid: &Grid, z: [f64; 3], d: [f64; 3], s: f64) -> f64 {
    let (lo, hi) = (grid.lo(), grid.hi());
    let mut sigma = s;
    for a in 0..3 {
        if d[a] > 0.0 {
            sigma = sigma.min((hi[a] - z[a]) / d[a]);
        } else if d[a] < 0.0 {
            sigma = sigma.min((lo[a] - z[a]) / d[a]);
        }
    }
    sigma
}

fn sl_row(grid: &Grid, idx: usize, p: &HPoint, a: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let s = semi_lagrangian_reach(grid);
    let z = grid.position(idx);
    let a2 = Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let eig = a2.symmetric_eigen();
    let jx = [-p.x[1], p.x[0]];
    let mut row = Vec::with_capacity(40);
    let mut centre = 0.0;
    for k in 0..2 {
        let lam = eig.eigenvalues[k];
        let v = [eig.eigenvectors[(0, k)], eig.eigenvectors[(1, k)]];
        // z∘(σv, 0) = (x + σv, t + 2σ⟨Jx, v⟩)
        let dir = [v[0], v[1], 2.0 * (jx[0] * v[0] + jx[1] * v[1])];
        let back = dir.map(|c| -c);
        let sp = arm_length(grid, z, dir, s);
        let sm = arm_length(grid, z, back, s);
        let wp = lam * 2.0 / (sp * (sp + sm));
        let wm = lam * 2.0 / (sm * (sp + sm));
        for (sig, d, w) in [(sp, dir, wp), (sm, back, wm)] {
            let q = [z[0] + sig * d[0], z[1] + sig * d[1], z[2] + sig * d[2]];
            let weights = grid.interpolation(q).expect("arm endpoint clipped to the box");
            for (j, c) in weights {
                row.push((j, w * c));
            }
            centre -= w;
        }
    }
    row.push((idx, centre));
    row
}

/// Discrete `L_h u` at every non-fixed node (zero on fixed nodes).
pub fn apply_operator(problem: &DirichletProblem, scheme: Scheme, values: &[f64]) -> Result<Vec<f64>> {
    let grid = &problem.grid;
    if values.len() != grid.len() {
        return Err(HeisError::DimensionMismatch {
            expected: grid.len(),
            found: values.len(),
        });
    }
    Ok((0..grid.len())
        .into_par_iter()
        .map(|i| {
            if problem.fixed[i] {
                0.0
            } else {
                stencil(problem, scheme, i).iter().map(|(j, w)| w * values[*j]).sum()
            }
        })
        .collect())
}

/// The linear system for the unknown nodes, written as `−L_h`.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    /// Node index of each unknown.
    pub nodes: Vec<usize>,
    /// Unknown index of each node.
    pub unknown: Vec<Option<usize>>,
    /// Values on fixed nodes (zero elsewhere).
    pub fixed_values: Vec<f64>,
    /// Weights on fixed nodes per row, to rebuild `rhs` for other data.
    pub coupling: Vec<Vec<(usize, f64)>>,
    /// Off-diagonal weights of `L_h` that are negative.
    pub negative_weights: usize,
    pub scheme: Scheme,
}

/// Matrix row, right-hand side, negative weights and couplings to fixed nodes.
type AssembledRow = (Vec<(usize, f64)>, f64, usize, Vec<(usize, f64)>);

pub fn assemble(problem: &DirichletProblem, scheme: Scheme) -> Result<Assembled> {
    let grid = &problem.grid;
    let nodes: Vec<usize> = (0..grid.len()).filter(|&i| !problem.fixed[i]).collect();
    let mut unknown = vec![None; grid.len()];
    for (k, &i) in nodes.iter().enumerate() {
        unknown[i] = Some(k);
    }
    let fixed_values = fixed_values(problem, &problem.boundary)?;
    let rows: Vec<AssembledRow> = nodes
        .par_iter()
        .map(|&i| {
            let st = stencil(problem, scheme, i);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(st.len());
            let mut rhs = 0.0;
            let mut negative = 0;
            let mut sorted = st;
            sorted.sort_by_key(|e| e.0);
            for (j, w) in sorted {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            let mut row = Vec::with_capacity(merged.len());
            let mut coupling = Vec::new();
            for (j, w) in merged {
                if j != i && w < 0.0 {
                    negative += 1;
                }
                match unknown[j] {
                    Some(k) => row.push((k, -w)),
                    None => {
                        rhs += w * fixed_values[j];
                        coupling.push((j, w));
                    }
                }
            }
            (row, rhs, negative, coupling)
        })
        .collect();
    let negative_weights = rows.iter().map(|r| r.2).sum();
    let rhs = rows.iter().map(|r| r.1).collect();
    let mut matrix_rows = Vec::with_capacity(rows.len());
    let mut coupling = Vec::with_capacity(rows.len());
    for r in rows {
        matrix_rows.push(r.0);
        coupling.push(r.3);
    }
    let matrix = Csr::from_rows(nodes.len(), matrix_rows);
    Ok(Assembled {
        matrix,
        rhs,
        nodes,
        unknown,
        fixed_values,
        coupling,
        negative_weights,
        scheme,
    })
}

fn fixed_values(problem: &DirichletProblem, data: &BoundaryFn) -> Result<Vec<f64>> {
    let grid = &problem.grid;
    let v: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| if problem.fixed[i] { data(&grid.point(i)) } else { 0.0 })
        .collect();
    if let Some(i) = (0..grid.len()).find(|&i| !v[i].is_finite()) {
        return invalid(format!("boundary data is not finite at {:?}", grid.point(i)));
    }
    Ok(v)
}

/// Discrete maximum principle audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmpReport {
    pub data_min: f64,
    pub data_max: f64,
    pub solution_min: f64,
    pub solution_max: f64,
    /// Negative off-diagonal weights plus unknown nodes outside the data range.
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub grid: Grid,
    /// Values on every node, fixed nodes included.
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub scheme: Scheme,
    pub method: String,
    pub dmp: Option<DmpReport>,
}

impl Solution {
    /// Trilinear interpolation of the nodal values.
    pub fn value_at(&self, p: &HPoint) -> Option<f64> {
        self.grid.interpolate(&self.values, [p.x[0], p.x[1], p.t])
    }

    /// The same solution multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.values.iter_mut().for_each(|v| *v *= c);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

pub fn solve(problem: &DirichletProblem, scheme: Scheme, opts: &SolveOptions) -> Result<Solution> {
    check_opts(opts)?;
    let sys = assemble(problem, scheme)?;
    let x0 = initial_guess(problem, &sys, &sys.fixed_values);
    let (x, stats) = linsolve::solve(&sys.matrix, &sys.rhs, Some(&x0), opts.tol, opts.max_iter)?;
    finish(problem, &sys, &sys.fixed_values, x, stats)
}

/// Solves one problem for several boundary data, assembling and factoring once.
pub fn solve_many(
    problem: &DirichletProblem,
    scheme: Scheme,
    data: &[BoundaryFn],
    opts: &SolveOptions,
) -> Result<Vec<Solution>> {
    check_opts(opts)?;
    let sys = assemble(problem, scheme)?;
    let ilu = linsolve::Ilu0::new(&sys.matrix)?;
    data.iter()
        .map(|g| {
            let fixed = fixed_values(problem, g)?;
            let rhs: Vec<f64> = sys
                .coupling
                .par_iter()
                .map(|row| row.iter().map(|(j, w)| w * fixed[*j]).sum())
                .collect();
            let x0 = initial_guess(problem, &sys, &fixed);
            let (x, stats) = linsolve::solve_with(&sys.matrix, &ilu, &rhs, Some(&x0), opts.tol, opts.max_iter)?;
            finish(problem, &sys, &fixed, x, stats)
        })
        .collect()
}

/// Mean of the Dirichlet data on every unknown.
fn initial_guess(problem: &DirichletProblem, sys: &Assembled, fixed_values: &[f64]) -> Vec<f64> {
    let (sum, count) = fixed_values
        .iter()
        .enumerate()
        .filter(|(i, _)| problem.fixed[*i])
        .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
    vec![sum / count.max(1) as f64; sys.nodes.len()]
}

fn check_opts(opts: &SolveOptions) -> Result<()> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return invalid(format!("solver tolerance must lie in (0, 1), got {}", opts.tol));
    }
    Ok(())
}

fn finish(
    problem: &DirichletProblem,
    sys: &Assembled,
    fixed_values: &[f64],
    x: Vec<f64>,
    stats: linsolve::SolveStats,
) -> Result<Solution> {
    let scheme = sys.scheme;
    let mut values = fixed_values.to_vec();
    for (k, &i) in sys.nodes.iter().enumerate() {
        values[i] = x[k];
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HeisError::Solver("solution is not finite".into()));
    }
    let dmp = (scheme == Scheme::SemiLagrangian).then(|| {
        let fixed = (0..values.len()).filter(|&i| problem.fixed[i]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in fixed {
            lo = lo.min(values[i]);
            hi = hi.max(values[i]);
        }
        let slack = 1e-8 * (hi - lo).abs().max(hi.abs()).max(1e-300);
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut outside = 0;
        for &i in &sys.nodes {
            smin = smin.min(values[i]);
            smax = smax.max(values[i]);
            if values[i] < lo - slack || values[i] > hi + slack {
                outside += 1;
            }
        }
        DmpReport {
            data_min: lo,
            data_max: hi,
            solution_min: smin,
            solution_max: smax,
            violations: outside + sys.negative_weights,
        }
    });
    Ok(Solution {
        grid: problem.grid.clone(),
        values,
        residual: stats.residual,
        iterations: stats.iterations,
        scheme,
        method: stats.method.to_string(),
        dmp,
    })
}

/// Largest `|u_h − u|` over unknown nodes against an exact solution.
pub fn max_error(problem: &DirichletProblem, sol: &Solution, exact: &dyn Fn(&HPoint) -> f64) -> f64 {
    (0..sol.grid.len())
        .filter(|&i| !problem.fixed[i])
        .map(|i| (sol.values[i] - exact(&sol.grid.point(i))).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Region;

    fn identity_problem(n: usize, data: BoundaryFn) -> DirichletProblem {
        let grid = Grid::new([-1.0; 3], [1.0; 3], [n, n, n]).unwrap();
        let field = CoefficientField::constant(CoefficientMatrix::identity(1), Region::Everywhere);
        DirichletProblem::new(field, grid, data).unwrap()
    }

    #[test]
    fn b_at_origin_and_psd() {
        let a = CoefficientMatrix::identity(1);
        let b = euclidean_coefficients(&a, &HPoint::origin(1)).unwrap();
        assert_eq!(b, Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 0.0)));
        let m = crate::coefficients::random_symplectic(1, 0.5, 2.0, 3).unwrap();
        let b = euclidean_coefficients(&m, &HPoint::h1(0.7, -0.4, 0.2)).unwrap();
        let e = b.symmetric_eigenvalues();
        assert!(e.iter().all(|v| *v > -1e-12));
        assert!(e.iter().filter(|v| v.abs() < 1e-12).count() == 1);
        assert!(euclidean_coefficients(&CoefficientMatrix::identity(2), &HPoint::origin(2)).is_err());
    }

    #[test]
    fn affine_functions_are_annihilated() {
        let p = identity_problem(12, Arc::new(|_| 0.0));
        let g = p.grid().clone();
        let u: Vec<f64> = (0..g.len()).map(|i| 1.0 + 2.0 * g.position(i)[0] - 3.0 * g.position(i)[1]).collect();
        for s in [Scheme::EuclideanStencil, Scheme::SemiLagrangian] {
            let lu = apply_operator(&p, s, &u).unwrap();
            assert!(lu.iter().all(|v| v.abs() < 1e-9), "{s:?}");
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let p = identity_problem(12, Arc::new(|_| 2.5));
        for s in [Scheme::EuclideanStencil, Scheme::SemiLagrangian] {
            let sol = solve(&p, s, &SolveOptions::default()).unwrap();
            assert!(sol.values.iter().all(|v| (v - 2.5).abs() < 1e-8));
        }
    }

    #[test]
    fn semi_lagrangian_weights_are_monotone() {
        let m = crate::coefficients::random_symplectic(1, 0.5, 2.0, 9).unwrap();
        let grid = Grid::new([-1.0; 3], [1.0; 3], [14, 14, 14]).unwrap();
        let field = CoefficientField::constant(m, Region::Everywhere);
        let p = DirichletProblem::new(field, grid, Arc::new(|z: &HPoint| z.t)).unwrap();
        let sys = assemble(&p, Scheme::SemiLagrangian).unwrap();
        assert_eq!(sys.negative_weights, 0);
        let sol = solve(&p, Scheme::SemiLagrangian, &SolveOptions::default()).unwrap();
        assert_eq!(sol.dmp.unwrap().violations, 0);
    }

    #[test]
    fn excluded_ball_fixes_nodes() {
        let p = identity_problem(12, Arc::new(|_| 1.0));
        let q = p.clone().with_excluded_ball(HPoint::origin(1), 0.5).unwrap();
        let centre = q.grid().len() / 2;
        let nearest = (0..q.grid().len())
            .min_by(|a, b| {
                let da = group::koranyi_norm(&q.grid().point(*a));
                let db = group::koranyi_norm(&q.grid().point(*b));
                da.total_cmp(&db)
            })
            .unwrap();
        assert!(q.is_fixed(nearest));
        assert!(!p.is_fixed(centre) || p.grid().is_boundary(centre));
    }
}
