//! Seeded random streams, gauge-ball samplers and deterministic parallel reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::group::{self, HPoint};

/// Samples handled by one random substream.
pub const CHUNK: usize = 4096;

/// Independent ChaCha stream for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point on the Euclidean unit sphere `S^{d−1}`.
pub fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Point with Gaussian direction at scale `10^U(−2, 2)`: `x ~ s·N(0, I)`, `t ~ s²·N(0, 1)`.
pub fn multiscale_point<R: Rng>(n: usize, rng: &mut R) -> HPoint {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let x = (0..2 * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let t = scale * scale * rng.sample::<f64, _>(StandardNormal);
    HPoint { x, t }
}

/// Uniform point of the Korányi ball `B_r(0)` in ℍⁿ.
///
/// The `x`-marginal has density ∝ `√(1 − |x|⁴)` on the Euclidean unit ball, so we draw
/// `x` uniformly there, accept with that probability, then take `t` uniform in
/// `±√(1 − |x|⁴)`, and finally dilate by `r`.
pub fn uniform_in_koranyi_ball<R: Rng>(n: usize, r: f64, rng: &mut R) -> HPoint {
    let d = 2 * n;
    loop {
        let dir = unit_vector(d, rng);
        let rad = rng.random::<f64>().powf(1.0 / d as f64);
        let cap = (1.0 - rad.powi(4)).max(0.0).sqrt();
        if rng.random::<f64>() <= cap {
            let t = cap * rng.random_range(-1.0..=1.0);
            let x = dir.into_iter().map(|a| a * rad * r).collect();
            return HPoint { x, t: t * r * r };
        }
    }
}

/// Point of the Korányi unit sphere, distributed by the cone measure
/// (radial projection of the uniform ball law).
pub fn koranyi_sphere_point<R: Rng>(n: usize, rng: &mut R) -> HPoint {
    loop {
        let w = uniform_in_koranyi_ball(n, 1.0, rng);
        let rho = group::koranyi_norm(&w);
        if rho > 1e-6 {
            return group::dilate_unchecked(1.0 / rho, &w);
        }
    }
}

/// Running first and second moments of an estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Splits `total` samples into fixed chunks, each with its own substream, and returns
/// the per-chunk results in chunk order regardless of scheduling.
pub fn par_chunks<T, F>(total: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>, &mut ChaCha8Rng) -> T + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(total);
            let mut rng = seeded_rng(seed, c as u64 + 1);
            f(c, range, &mut rng)
        })
        .collect()
}

/// Moment accumulation of `f` over `total` draws, merged in chunk order.
pub fn par_moments<F>(total: usize, seed: u64, f: F) -> Moments
where
    F: Fn(usize, &mut ChaCha8Rng) -> f64 + Sync,
{
    let parts = par_chunks(total, seed, |_, range, rng| {
        let mut m = Moments::default();
        for i in range {
            m.push(f(i, rng));
        }
        m
    });
    let mut out = Moments::default();
    for p in &parts {
        out.merge(p);
    }
    out
}
