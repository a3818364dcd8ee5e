use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::group::HPoint;

/// Tensor node grid on a box in `(x₁, x₂, t)`, boundary nodes included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: [f64; 3],
    hi: [f64; 3],
    dims: [usize; 3],
    h: [f64; 3],
}

/// Fewest interior nodes per axis.
pub const MIN_INTERIOR: usize = 8;

impl Grid {
    pub fn new(lo: [f64; 3], hi: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return invalid(format!("grid axis {a} has bounds [{}, {}]", lo[a], hi[a]));
            }
            if dims[a] < MIN_INTERIOR + 2 {
                return invalid(format!(
                    "grid axis {a} has {} nodes, need at least {}",
                    dims[a],
                    MIN_INTERIOR + 2
                ));
            }
        }
        let h = [0, 1, 2].map(|a| (hi[a] - lo[a]) / (dims[a] - 1) as f64);
        Ok(Self { lo, hi, dims, h })
    }

    /// Box `z_c ∘ ([−L, L]² × [−L², L²])` shape centred at `(x_c, t_c)` with the same
    /// node count `m` along `x` and `m_t` along `t`. Under `δ_r` the box maps to the box
    /// of half-width `rL`, and `h_t/h²` is unchanged.
    pub fn homogeneous(center: [f64; 3], half: f64, m: usize, m_t: usize) -> Result<Self> {
        if !(half > 0.0) {
            return invalid("grid half-width must be positive");
        }
        let ht = half * half;
        Self::new(
            [center[0] - half, center[1] - half, center[2] - ht],
            [center[0] + half, center[1] + half, center[2] + ht],
            [m, m, m_t],
        )
    }

    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.h
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Doubles the resolution: `m ↦ 2m − 1` nodes per axis, so old nodes stay nodes.
    pub fn refined(&self) -> Self {
        let dims = self.dims.map(|d| 2 * d - 1);
        Self::new(self.lo, self.hi, dims).expect("refinement of a valid grid")
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        [0, 1, 2].map(|a| {
            if c[a] == self.dims[a] - 1 {
                self.hi[a]
            } else {
                self.lo[a] + c[a] as f64 * self.h[a]
            }
        })
    }

    pub fn point(&self, idx: usize) -> HPoint {
        let p = self.position(idx);
        HPoint::h1(p[0], p[1], p[2])
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] == self.dims[a] - 1)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    /// Whether the Korányi ball `B_r(z)` lies in the box.
    pub fn contains_ball(&self, z: &HPoint, r: f64) -> bool {
        let xn = z.horizontal_norm_sq().sqrt();
        let ht = r * r + 2.0 * xn * r;
        z.x[0] - r >= self.lo[0]
            && z.x[0] + r <= self.hi[0]
            && z.x[1] - r >= self.lo[1]
            && z.x[1] + r <= self.hi[1]
            && z.t - ht >= self.lo[2]
            && z.t + ht <= self.hi[2]
    }

    /// Trilinear weights at `p`, or `None` outside the box. Weights are non-negative
    /// and sum to one; zero weights are dropped.
    pub fn interpolation(&self, p: [f64; 3]) -> Option<Vec<(usize, f64)>> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let slack = 1e-12 * self.h[a];
            if p[a] < self.lo[a] - slack || p[a] > self.hi[a] + slack {
                return None;
            }
            let s = ((p[a] - self.lo[a]) / self.h[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let mut i = s.floor() as usize;
            let mut f = s - i as f64;
            if i >= self.dims[a] - 1 {
                i = self.dims[a] - 2;
                f = 1.0;
            }
            // snap so that points on a grid plane only touch that plane
            if f < 1e-12 {
                f = 0.0;
            } else if f > 1.0 - 1e-12 {
                f = 1.0;
            }
            base[a] = i;
            frac[a] = f;
        }
        let mut out = Vec::with_capacity(8);
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w > 0.0 {
                out.push((self.index(idx[0], idx[1], idx[2]), w));
            }
        }
        Some(out)
    }

    /// Trilinear interpolation of nodal values.
    pub fn interpolate(&self, values: &[f64], p: [f64; 3]) -> Option<f64> {
        self.interpolation(p).map(|w| w.iter().map(|(i, c)| values[*i] * c).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new([-1.0; 3], [1.0; 3], [10, 11, 12]).unwrap();
        for idx in [0, 5, 117, g.len() - 1] {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.position(g.len() - 1), [1.0; 3]);
        assert!(g.is_boundary(0) && !g.is_boundary(g.index(3, 4, 5)));
    }

    #[test]
    fn rejects_thin_grids() {
        assert!(Grid::new([0.0; 3], [1.0; 3], [9, 10, 10]).is_err());
        assert!(Grid::new([0.0; 3], [0.0, 1.0, 1.0], [10, 10, 10]).is_err());
    }

    #[test]
    fn interpolation_reproduces_trilinear_functions() {
        let g = Grid::homogeneous([0.1, -0.2, 0.3], 1.5, 12, 14).unwrap();
        let f = |p: [f64; 3]| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + p[0] * p[1] * p[2];
        let values: Vec<f64> = (0..g.len()).map(|i| f(g.position(i))).collect();
        for p in [[0.0, 0.0, 0.0], [1.6, -1.7, 2.55], [-1.4, 1.3, -1.9]] {
            assert!((g.interpolate(&values, p).unwrap() - f(p)).abs() < 1e-12);
        }
        assert!(g.interpolate(&values, [5.0, 0.0, 0.0]).is_none());
        let w = g.interpolation(g.position(g.index(3, 4, 5))).unwrap();
        assert_eq!(w, vec![(g.index(3, 4, 5), 1.0)]);
    }

    #[test]
    fn refinement_keeps_nodes() {
        let g = Grid::new([-1.0; 3], [1.0; 3], [10, 10, 10]).unwrap();
        let f = g.refined();
        assert_eq!(f.dims(), [19, 19, 19]);
        assert_eq!(f.position(f.index(2, 4, 6)), g.position(g.index(1, 2, 3)));
    }
}
