use super::orthant::{mvn_upper_orthant, OrthantEstimate};
use crate::error::{Error, Result};
use crate::lattice::{neighbor_list, LatticeOptions};
use crate::nelson_aalen::{linspace, CurveKind, StepCurve};
use crate::randfield::MaternParams;
use crate::rng::derive_seed;
use crate::special::{norm_pdf, norm_sf};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Denominators below this are treated as underflow (J(u) = 0).
const UNDERFLOW: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitCorrelation {
    Independent,
    Matern(MaternParams),
}

impl LimitCorrelation {
    fn cor(&self, d: f64) -> f64 {
        match self {
            LimitCorrelation::Independent => (d == 0.0) as u8 as f64,
            LimitCorrelation::Matern(p) => p.cor(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub correlation: LimitCorrelation,
    pub nrows: usize,
    pub ncols: usize,
    pub options: LatticeOptions,
    /// Output levels, strictly increasing.
    pub grid: Vec<f64>,
    /// Quasi-Monte Carlo points per orthant probability.
    pub mc_samples: usize,
    /// Equally spaced integration nodes from `lower` to the last grid level,
    /// merged with the output grid.
    pub integration_points: usize,
    /// Start of the integral, standing in for −∞.
    pub lower: f64,
    /// Variance of a common component removed from every cell, such as the
    /// lattice mean under mean-correction. Zero gives the stationary field.
    #[serde(default)]
    pub mean_shift_variance: f64,
    pub seed: u64,
}

impl LimitSpec {
    pub fn new(correlation: LimitCorrelation, nrows: usize, ncols: usize, options: LatticeOptions, grid: Vec<f64>) -> Self {
        Self {
            correlation,
            nrows,
            ncols,
            options,
            grid,
            mc_samples: 20_000,
            integration_points: 400,
            lower: -6.0,
            mean_shift_variance: 0.0,
            seed: 0,
        }
    }

    /// Models mean-corrected fields: each cell loses the lattice mean, whose
    /// variance is [`mean_shift_variance`] for this lattice.
    pub fn mean_corrected(mut self) -> Self {
        self.mean_shift_variance = mean_shift_variance(self.correlation, self.nrows, self.ncols);
        self
    }
}

/// Variance of the lattice mean of a unit-variance field, averaging the
/// correlation over all pairs of cells in plane coordinates.
pub fn mean_shift_variance(cor: LimitCorrelation, nrows: usize, ncols: usize) -> f64 {
    let n = (nrows * ncols) as f64;
    let mut total = 0.0;
    for dr in 0..nrows {
        for dc in 0..ncols {
            let pairs = ((nrows - dr) * (ncols - dc)) as f64;
            let mult = match (dr, dc) {
                (0, 0) => 1.0,
                (0, _) | (_, 0) => 2.0,
                _ => 4.0,
            };
            total += mult * pairs * cor.cor(((dr * dr + dc * dc) as f64).sqrt());
        }
    }
    total / (n * n)
}

/// Cells sharing a neighbour configuration up to the symmetries of the square.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborClass {
    /// Neighbour positions relative to the cell, in plane coordinates.
    pub displacements: Vec<(isize, isize)>,
    pub count: usize,
}

fn canonical(d: &[(isize, isize)]) -> Vec<(isize, isize)> {
    type Sym = fn((isize, isize)) -> (isize, isize);
    const SYMMETRIES: [Sym; 8] = [
        |(a, b)| (a, b),
        |(a, b)| (-a, b),
        |(a, b)| (a, -b),
        |(a, b)| (-a, -b),
        |(a, b)| (b, a),
        |(a, b)| (-b, a),
        |(a, b)| (b, -a),
        |(a, b)| (-b, -a),
    ];
    SYMMETRIES
        .iter()
        .map(|g| {
            let mut v: Vec<_> = d.iter().map(|&x| g(x)).collect();
            v.sort_unstable();
            v
        })
        .min()
        .expect("eight symmetries")
}

/// Groups lattice cells by neighbour configuration.
pub fn neighbor_classes(nrows: usize, ncols: usize, options: LatticeOptions) -> Vec<NeighborClass> {
    let mut classes: BTreeMap<Vec<(isize, isize)>, usize> = BTreeMap::new();
    for i in 0..nrows * ncols {
        let (r, c) = ((i / ncols) as isize, (i % ncols) as isize);
        let d: Vec<(isize, isize)> = neighbor_list(nrows, ncols, options, i)
            .as_slice()
            .iter()
            .map(|&j| ((j / ncols) as isize - r, (j % ncols) as isize - c))
            .collect();
        *classes.entry(canonical(&d)).or_default() += 1;
    }
    classes
        .into_iter()
        .map(|(displacements, count)| NeighborClass { displacements, count })
        .collect()
}

fn dist(a: (isize, isize), b: (isize, isize)) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

/// Law of the neighbours given the centre value u, when a common component
/// of variance `shift` has been removed: with covariance k(·) = ρ(·) − shift
/// and σ² = 1 − shift, the mean is k_n u / σ² and the covariance
/// K_nn − k_n k_nᵀ / σ². Returns (k_n / σ², that covariance).
pub(crate) fn conditional_law(cor: LimitCorrelation, d: &[(isize, isize)], shift: f64) -> (Vec<f64>, Mat<f64>) {
    let var = 1.0 - shift;
    let k: Vec<f64> = d.iter().map(|&x| cor.cor(dist(x, (0, 0))) - shift).collect();
    let m = d.len();
    let cond = Mat::from_fn(m, m, |i, j| cor.cor(dist(d[i], d[j])) - shift - k[i] * k[j] / var);
    (k.iter().map(|v| v / var).collect(), cond)
}

/// Covariance of (centre, neighbours).
fn joint_covariance(cor: LimitCorrelation, d: &[(isize, isize)], shift: f64) -> Mat<f64> {
    let pts: Vec<(isize, isize)> = std::iter::once((0, 0)).chain(d.iter().copied()).collect();
    Mat::from_fn(pts.len(), pts.len(), |i, j| cor.cor(dist(pts[i], pts[j])) - shift)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCurve {
    /// A(t) on the output grid (possibly truncated).
    pub curve: StepCurve,
    /// Quasi-Monte Carlo standard error of A(t).
    pub mc_se: Vec<f64>,
    /// Integrand (hazard) at the output levels.
    pub hazard: Vec<f64>,
    /// E{Y(t)}/|𝒳| at the output levels.
    pub expected_at_risk: Vec<f64>,
    /// First level at which the denominator underflowed.
    pub truncated_at: Option<f64>,
}

struct Node {
    ratio: f64,
    ratio_se: f64,
    at_risk: f64,
}

fn hazard_at(u: f64, spec: &LimitSpec, classes: &[NeighborClass], seed: u64) -> Result<Node> {
    let (cor, shift, samples) = (spec.correlation, spec.mean_shift_variance, spec.mc_samples);
    let sd = (1.0 - shift).sqrt();
    let (mut num, mut num_var, mut den, mut den_var) = (0.0, 0.0, 0.0, 0.0);
    let cells: usize = classes.iter().map(|c| c.count).sum();
    for (ci, class) in classes.iter().enumerate() {
        let n = class.count as f64;
        let (rho, cond) = conditional_law(cor, &class.displacements, shift);
        let mean: Vec<f64> = rho.iter().map(|r| r * u).collect();
        let cond_p: OrthantEstimate = mvn_upper_orthant(&mean, &cond, u, samples, derive_seed(seed, &[ci as u64, 0]))?;
        let phi = norm_pdf(u / sd) / sd;
        num += n * phi * cond_p.probability;
        num_var += (n * phi * cond_p.std_error).powi(2);

        let joint = joint_covariance(cor, &class.displacements, shift);
        let zeros = vec![0.0; joint.nrows()];
        let p = mvn_upper_orthant(&zeros, &joint, u, samples, derive_seed(seed, &[ci as u64, 1]))?;
        den += n * p.probability;
        den_var += (n * p.std_error).powi(2);
    }
    let ratio = num / den;
    let ratio_se = ((num_var + ratio * ratio * den_var).sqrt() / den).abs();
    Ok(Node {
        ratio,
        ratio_se,
        at_risk: den / cells as f64,
    })
}

/// Limiting cumulative hazard A(t) = ∫ J(u) Σ_x f_x(u) pr(z_(x) > u1 | z_x = u)
/// / Σ_x pr(z_x > u, z_(x) > u1) du, by the trapezoid rule.
pub fn limit_curve(spec: &LimitSpec) -> Result<LimitCurve> {
    if let LimitCorrelation::Matern(p) = spec.correlation {
        p.validate()?;
    }
    if spec.nrows == 0 || spec.ncols == 0 {
        return Err(Error::domain("lattice must have at least one cell"));
    }
    if !(0.0..1.0).contains(&spec.mean_shift_variance) {
        return Err(Error::domain(format!(
            "mean shift variance must lie in [0, 1), got {}",
            spec.mean_shift_variance
        )));
    }
    if spec.mc_samples < 10_000 {
        return Err(Error::domain(format!(
            "limit curve needs at least 10000 samples per probability, got {}",
            spec.mc_samples
        )));
    }
    if spec.grid.windows(2).any(|w| !(w[0] < w[1])) || spec.grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain("limit grid must be finite and strictly increasing"));
    }
    if spec.grid.is_empty() {
        return Ok(LimitCurve {
            curve: StepCurve::empty(CurveKind::Grid),
            mc_se: Vec::new(),
            hazard: Vec::new(),
            expected_at_risk: Vec::new(),
            truncated_at: None,
        });
    }

    let last = *spec.grid.last().expect("nonempty grid");
    let lower = spec.lower.min(spec.grid[0]);
    let mut nodes: Vec<f64> = linspace(lower, last, spec.integration_points.max(2));
    nodes.extend_from_slice(&spec.grid);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    let classes = neighbor_classes(spec.nrows, spec.ncols, spec.options);
    let values: Vec<Node> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &u)| hazard_at(u, spec, &classes, derive_seed(spec.seed, &[i as u64])))
        .collect::<Result<_>>()?;

    let cut = values
        .iter()
        .position(|v| !(v.at_risk > UNDERFLOW) || !v.ratio.is_finite())
        .unwrap_or(values.len());
    let truncated_at = (cut < values.len()).then(|| nodes[cut]);
    if let Some(t) = truncated_at {
        log::warn!("limit curve truncated at level {t}: expected risk set underflows");
    }
    let nodes = &nodes[..cut];
    let values = &values[..cut];

    // Cumulative trapezoid with per-node weights for the error propagation.
    let mut a = vec![0.0; nodes.len()];
    let mut var = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let h = nodes[i] - nodes[i - 1];
        a[i] = a[i - 1] + 0.5 * h * (values[i - 1].ratio + values[i].ratio);
        var[i] = (0..=i)
            .map(|j| {
                let left = if j > 0 { nodes[j] - nodes[j - 1] } else { 0.0 };
                let right = if j < i { nodes[j + 1] - nodes[j] } else { 0.0 };
                (0.5 * (left + right) * values[j].ratio_se).powi(2)
            })
            .sum();
    }

    let mut levels = Vec::new();
    let (mut out, mut se, mut hazard, mut at_risk) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &t in &spec.grid {
        if let Ok(i) = nodes.binary_search_by(|x| x.total_cmp(&t)) {
            levels.push(t);
            out.push(a[i]);
            se.push(var[i].sqrt());
            hazard.push(values[i].ratio);
            at_risk.push(values[i].at_risk);
        }
    }
    Ok(LimitCurve {
        curve: StepCurve::new(levels, out, CurveKind::Grid)?,
        mc_se: se,
        hazard,
        expected_at_risk: at_risk,
        truncated_at,
    })
}

/// Closed form under independence: −log(1 − Φ(t)).
pub fn iid_limit(t: f64) -> f64 {
    -norm_sf(t).ln()
}
