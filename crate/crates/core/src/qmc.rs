//! Randomly shifted Richtmyer lattice points: x_k = frac(Δ + k·√p_j).

use crate::rng::stream_rng;
use rand::Rng;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Smallest/largest coordinate returned, so that inverse distribution
/// functions stay finite.
const EDGE: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct RichtmyerLattice {
    alpha: Vec<f64>,
    shift: Vec<f64>,
}

impl RichtmyerLattice {
    /// Lattice in `dim` dimensions with a uniform random shift drawn from `seed`.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "lattice dimension {dim} too large");
        let mut rng = stream_rng(seed, 0x5147);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self::with_shift(shift)
    }

    pub fn with_shift(shift: Vec<f64>) -> Self {
        let alpha = PRIMES[..shift.len()].iter().map(|&p| f64::from(p).sqrt().fract()).collect();
        Self { alpha, shift }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Point k (k ≥ 0) in the open unit cube.
    pub fn point(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(k, &mut out);
        out
    }

    pub fn point_into(&self, k: usize, out: &mut [f64]) {
        let kk = (k + 1) as f64;
        for ((o, a), s) in out.iter_mut().zip(&self.alpha).zip(&self.shift) {
            *o = (s + kk * a).fract().clamp(EDGE, 1.0 - EDGE);
        }
    }

    /// Point k after the tent (baker's) transform 1 − |2x − 1|, which
    /// periodizes the integrand and improves lattice-rule convergence.
    pub fn tent_point_into(&self, k: usize, out: &mut [f64]) {
        self.point_into(k, out);
        for o in out.iter_mut() {
            *o = (1.0 - (2.0 * *o - 1.0).abs()).clamp(EDGE, 1.0 - EDGE);
        }
    }
}
