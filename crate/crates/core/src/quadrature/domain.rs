//! Integration domains: gauge balls, boxes, sublevel sets and set differences.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::coefficients::CoefficientMatrix;
use crate::error::{invalid, HeisError, Result};
use crate::group::{self, GroupParams, HPoint};

pub type FieldFn = Arc<dyn Fn(&HPoint) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DomainDescriptor {
    /// `{ζ : d(ζ, center) < radius}`.
    KoranyiBall { center: HPoint, radius: f64 },
    /// `{ζ : d_M(ζ, center) < radius}`.
    ModifiedBall {
        m: CoefficientMatrix,
        center: HPoint,
        radius: f64,
    },
    /// Euclidean box, bounds ordered `x₁ … x₂ₙ, t`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ζ ∈ within : field(ζ) < level}`.
    Sublevel {
        field: FieldFn,
        level: f64,
        within: std::boxed::Box<DomainDescriptor>,
    },
    /// `first \ second`.
    Difference(std::boxed::Box<DomainDescriptor>, std::boxed::Box<DomainDescriptor>),
}

impl fmt::Debug for DomainDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::KoranyiBall { center, radius } => write!(f, "KoranyiBall({center:?}, {radius})"),
            Self::ModifiedBall { center, radius, .. } => write!(f, "ModifiedBall({center:?}, {radius})"),
            Self::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            Self::Sublevel { level, within, .. } => write!(f, "Sublevel(< {level}, {within:?})"),
            Self::Difference(a, b) => write!(f, "Difference({a:?}, {b:?})"),
        }
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return invalid(format!("ball radius must be finite and non-negative, got {radius}"));
    }
    Ok(())
}

impl DomainDescriptor {
    pub fn koranyi_ball(center: HPoint, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        if !center.is_finite() {
            return Err(HeisError::NonFinite);
        }
        Ok(Self::KoranyiBall { center, radius })
    }

    pub fn modified_ball(m: CoefficientMatrix, center: HPoint, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        m.check_point(&center)?;
        Ok(Self::ModifiedBall { m, center, radius })
    }

    pub fn box_domain(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() < 3 || lo.len().is_multiple_of(2) {
            return invalid("box bounds need 2n + 1 coordinates on each side");
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return invalid("box bounds must be finite with lo ≤ hi");
        }
        Ok(Self::Box { lo, hi })
    }

    pub fn sublevel(field: FieldFn, level: f64, within: DomainDescriptor) -> Self {
        Self::Sublevel {
            field,
            level,
            within: std::boxed::Box::new(within),
        }
    }

    pub fn difference(a: DomainDescriptor, b: DomainDescriptor) -> Result<Self> {
        if a.n() != b.n() {
            return Err(HeisError::DimensionMismatch {
                expected: a.n(),
                found: b.n(),
            });
        }
        Ok(Self::Difference(std::boxed::Box::new(a), std::boxed::Box::new(b)))
    }

    pub fn n(&self) -> usize {
        match self {
            Self::KoranyiBall { center, .. } | Self::ModifiedBall { center, .. } => center.n(),
            Self::Box { lo, .. } => (lo.len() - 1) / 2,
            Self::Sublevel { within, .. } => within.n(),
            Self::Difference(a, _) => a.n(),
        }
    }

    pub fn contains(&self, p: &HPoint) -> bool {
        match self {
            Self::KoranyiBall { center, radius } => group::distance_unchecked(p, center) < *radius,
            Self::ModifiedBall { m, center, radius } => {
                let w = group::compose_unchecked(&group::inverse(center), p);
                let q = m.inverse_quadratic_form(&w.x);
                q * q + w.t * w.t < radius.powi(4)
            }
            Self::Box { lo, hi } => {
                let d = p.x.len();
                p.x.iter().enumerate().all(|(i, v)| *v >= lo[i] && *v <= hi[i]) && p.t >= lo[d] && p.t <= hi[d]
            }
            Self::Sublevel { field, level, within } => within.contains(p) && field(p) < *level,
            Self::Difference(a, b) => a.contains(p) && !b.contains(p),
        }
    }

    /// A region of known volume containing the domain, used for uniform sampling.
    pub fn bounding(&self) -> Bounding {
        match self {
            Self::KoranyiBall { center, radius } => {
                let mut half = vec![*radius; 2 * center.n()];
                half.push(radius * radius);
                Bounding::Sheared {
                    center: center.clone(),
                    half,
                }
            }
            Self::ModifiedBall { m, center, radius } => {
                let d = 2 * center.n();
                let mut half: Vec<f64> = (0..d).map(|i| radius * m.entries()[(i, i)].sqrt()).collect();
                half.push(radius * radius);
                Bounding::Sheared {
                    center: center.clone(),
                    half,
                }
            }
            Self::Box { lo, hi } => Bounding::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            Self::Sublevel { within, .. } => within.bounding(),
            Self::Difference(a, _) => a.bounding(),
        }
    }

    /// A Korányi ball `(center, radius)` containing the domain.
    pub fn enclosing_ball(&self) -> (HPoint, f64) {
        match self {
            Self::KoranyiBall { center, radius } => (center.clone(), *radius),
            Self::ModifiedBall { m, center, radius } => (center.clone(), radius * m.big_lambda().sqrt()),
            Self::Box { lo, hi } => {
                let d = lo.len() - 1;
                let x: Vec<f64> = (0..d).map(|i| 0.5 * (lo[i] + hi[i])).collect();
                let hx = (0..d).map(|i| 0.5 * (hi[i] - lo[i])).map(|h| h * h).sum::<f64>().sqrt();
                let ht = 0.5 * (hi[d] - lo[d]);
                let cx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                // (c⁻¹∘p)_t = Δt − 2⟨Jc_x, Δx⟩
                let tt = ht + 2.0 * cx * hx;
                let radius = (hx.powi(4) + tt * tt).powf(0.25);
                (
                    HPoint {
                        x,
                        t: 0.5 * (lo[d] + hi[d]),
                    },
                    radius,
                )
            }
            Self::Sublevel { within, .. } => within.enclosing_ball(),
            Self::Difference(a, _) => a.enclosing_ball(),
        }
    }

    /// Exact Lebesgue measure when it is available in closed form.
    pub fn exact_measure(&self) -> Option<f64> {
        match self {
            Self::KoranyiBall { center, radius } => {
                let q = GroupParams::new(center.n()).ok()?.homogeneous_dimension();
                Some(radius.powi(q as i32) * group::unit_ball_volume(center.n()))
            }
            Self::ModifiedBall { m, center, radius } => {
                let q = 2 * center.n() + 2;
                Some(radius.powi(q as i32) * group::unit_ball_volume(center.n()) * m.determinant().sqrt())
            }
            Self::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(a, b)| b - a).product()),
            _ => None,
        }
    }

    /// Uniform sample of a gauge ball (Korányi or modified).
    pub fn sample_ball<R: Rng>(&self, rng: &mut R) -> Result<HPoint> {
        match self {
            Self::KoranyiBall { center, radius } => {
                let w = super::sampling::uniform_in_koranyi_ball(center.n(), *radius, rng);
                Ok(group::compose_unchecked(center, &w))
            }
            Self::ModifiedBall { m, center, radius } => {
                // (y, t) ↦ (M^{1/2}y, t) maps B_r(0) onto B^M_r(0) with constant Jacobian
                let w = super::sampling::uniform_in_koranyi_ball(center.n(), *radius, rng);
                let s = m.sqrt();
                let x: Vec<f64> = (0..w.x.len())
                    .map(|i| (0..w.x.len()).map(|j| s[(i, j)] * w.x[j]).sum())
                    .collect();
                Ok(group::compose_unchecked(center, &HPoint { x, t: w.t }))
            }
            _ => invalid("uniform sampling is only available on gauge balls"),
        }
    }
}

/// Sampling envelope: an axis box, or a box of group increments `center ∘ w`,
/// `|wᵢ| ≤ halfᵢ` (unit Jacobian, so the volume is the box volume).
#[derive(Debug, Clone)]
pub enum Bounding {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Sheared { center: HPoint, half: Vec<f64> },
}

impl Bounding {
    pub fn dim(&self) -> usize {
        match self {
            Bounding::Box { lo, .. } => lo.len(),
            Bounding::Sheared { half, .. } => half.len(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Bounding::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Bounding::Sheared { half, .. } => half.iter().map(|h| 2.0 * h).product(),
        }
    }

    /// Maps unit-cube coordinates `u ∈ [0, 1]^{2n+1}` to the envelope.
    pub fn map_unit(&self, u: &[f64]) -> HPoint {
        let d = self.dim();
        match self {
            Bounding::Box { lo, hi } => {
                let c: Vec<f64> = (0..d).map(|i| lo[i] + u[i] * (hi[i] - lo[i])).collect();
                HPoint {
                    x: c[..d - 1].to_vec(),
                    t: c[d - 1],
                }
            }
            Bounding::Sheared { center, half } => {
                let c: Vec<f64> = (0..d).map(|i| (2.0 * u[i] - 1.0) * half[i]).collect();
                let w = HPoint {
                    x: c[..d - 1].to_vec(),
                    t: c[d - 1],
                };
                group::compose_unchecked(center, &w)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::sampling::seeded_rng;

    #[test]
    fn ball_envelopes_contain_their_balls() {
        let m = crate::coefficients::random_symplectic(1, 0.5, 2.0, 3).unwrap();
        let center = HPoint::h1(0.4, -0.3, 0.2);
        let balls = [
            DomainDescriptor::koranyi_ball(center.clone(), 0.7).unwrap(),
            DomainDescriptor::modified_ball(m, center, 0.7).unwrap(),
        ];
        let mut rng = seeded_rng(0, 0);
        for ball in &balls {
            let b = ball.bounding();
            let (c, r) = ball.enclosing_ball();
            for _ in 0..2000 {
                let p = ball.sample_ball(&mut rng).unwrap();
                assert!(ball.contains(&p));
                assert!(group::distance_unchecked(&p, &c) <= r + 1e-12);
                if let Bounding::Sheared { center, half } = &b {
                    let w = group::compose_unchecked(&group::inverse(center), &p);
                    assert!(w.x.iter().zip(half).all(|(v, h)| v.abs() <= h + 1e-12));
                    assert!(w.t.abs() <= half[2] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn box_enclosing_ball_covers_corners() {
        let d = DomainDescriptor::box_domain(vec![0.5, -1.0, 2.0], vec![1.5, 0.0, 3.0]).unwrap();
        let (c, r) = d.enclosing_ball();
        for k in 0..8 {
            let p = HPoint::h1(
                if k & 1 == 0 { 0.5 } else { 1.5 },
                if k & 2 == 0 { -1.0 } else { 0.0 },
                if k & 4 == 0 { 2.0 } else { 3.0 },
            );
            assert!(group::distance_unchecked(&p, &c) <= r + 1e-12);
        }
    }

    #[test]
    fn difference_and_sublevel_membership() {
        let big = DomainDescriptor::koranyi_ball(HPoint::origin(1), 1.0).unwrap();
        let small = DomainDescriptor::koranyi_ball(HPoint::origin(1), 0.5).unwrap();
        let ring = DomainDescriptor::difference(big.clone(), small).unwrap();
        assert!(ring.contains(&HPoint::h1(0.7, 0.0, 0.0)));
        assert!(!ring.contains(&HPoint::h1(0.2, 0.0, 0.0)));
        let half = DomainDescriptor::sublevel(Arc::new(|p: &HPoint| p.x[0]), 0.0, big);
        assert!(half.contains(&HPoint::h1(-0.5, 0.0, 0.0)));
        assert!(!half.contains(&HPoint::h1(0.5, 0.0, 0.0)));
        assert!(DomainDescriptor::koranyi_ball(HPoint::origin(1), -1.0).is_err());
        assert!(DomainDescriptor::box_domain(vec![0.0; 3], vec![-1.0; 3]).is_err());
    }
}
