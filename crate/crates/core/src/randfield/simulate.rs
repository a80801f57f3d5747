use super::matern::MaternParams;
use crate::error::{Error, Result};
use crate::lattice::{LatticeField, LatticeOptions};
use crate::linalg::{cholesky_jittered, PackedLower};
use crate::rng::{derive_seed, stream_rng};
use crate::special::norm_quantile_split;
use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur};

/// Largest lattice handled by the dense Cholesky path.
pub const DENSE_CELL_LIMIT: usize = 10_000;

/// Vectors multiplied together through the packed factor.
const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gaussian field.
    M1,
    /// Squared Gaussian field, transformed back to normal margins.
    M2,
    /// Ratio of two χ²₃ fields, transformed back to normal margins.
    M3,
}

impl ModelKind {
    /// Independent inner Gaussian fields per output field.
    pub fn grf_count(self) -> usize {
        match self {
            ModelKind::M1 | ModelKind::M2 => 1,
            ModelKind::M3 => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub kind: ModelKind,
    /// Correlation of the inner Gaussian field(s).
    pub matern: MaternParams,
}

/// Dense correlation matrix over cells in row-major order, at Euclidean
/// lattice distances.
pub fn covariance_matrix(nrows: usize, ncols: usize, p: MaternParams) -> Result<Mat<f64>> {
    p.validate()?;
    let table: Vec<f64> = (0..nrows * ncols)
        .map(|k| {
            let (dr, dc) = ((k / ncols) as f64, (k % ncols) as f64);
            p.cor((dr * dr + dc * dc).sqrt())
        })
        .collect();
    let n = nrows * ncols;
    Ok(Mat::from_fn(n, n, |i, j| {
        let dr = (i / ncols).abs_diff(j / ncols);
        let dc = (i % ncols).abs_diff(j % ncols);
        table[dr * ncols + dc]
    }))
}

fn standard_normals(seed: u64, n: usize) -> impl Iterator<Item = f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(move |_| rng.sample(StandardNormal))
}

/// Draws unit-variance Gaussian fields with Matérn correlation from a cached
/// Cholesky factor.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    nrows: usize,
    ncols: usize,
    params: MaternParams,
    factor: PackedLower,
}

impl GrfSampler {
    pub fn new(nrows: usize, ncols: usize, params: MaternParams) -> Result<Self> {
        let n = nrows * ncols;
        if n == 0 {
            return Err(Error::domain("lattice must have at least one cell"));
        }
        if n > DENSE_CELL_LIMIT {
            return Err(Error::domain(format!(
                "{nrows}x{ncols} lattice exceeds the dense simulation limit of {DENSE_CELL_LIMIT} cells"
            )));
        }
        let l = cholesky_jittered(&covariance_matrix(nrows, ncols, params)?)?;
        Ok(Self {
            nrows,
            ncols,
            params,
            factor: PackedLower::from_lower(&l),
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn params(&self) -> MaternParams {
        self.params
    }

    /// One field (not mean-corrected), row-major.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        self.sample_batch(&[seed]).pop().expect("one seed")
    }

    /// One field per seed; identical to calling `sample` on each seed.
    pub fn sample_batch(&self, seeds: &[u64]) -> Vec<Vec<f64>> {
        let n = self.factor.dim();
        seeds
            .par_chunks(BATCH)
            .flat_map_iter(|chunk| {
                let b = chunk.len();
                let mut z = vec![0.0; n * b];
                for (c, &seed) in chunk.iter().enumerate() {
                    for (j, v) in standard_normals(seed, n).enumerate() {
                        z[j * b + c] = v;
                    }
                }
                let x = self.factor.mul_interleaved(&z, b);
                (0..b).map(move |c| (0..n).map(|j| x[j * b + c]).collect::<Vec<f64>>())
            })
            .collect()
    }
}

/// Φ⁻¹(F₁(y)) for a χ²₁ value y.
pub(crate) fn chi1_to_normal(y: f64) -> f64 {
    let cdf = gamma_lr(0.5, 0.5 * y).max(f64::MIN_POSITIVE);
    let sf = gamma_ur(0.5, 0.5 * y).max(f64::MIN_POSITIVE);
    norm_quantile_split(cdf, sf)
}

/// Φ⁻¹(F₃,₃(x)) for an F₃,₃ value x.
pub(crate) fn f33_to_normal(x: f64) -> f64 {
    let cdf = beta_reg(1.5, 1.5, x / (1.0 + x)).max(f64::MIN_POSITIVE);
    let sf = beta_reg(1.5, 1.5, 1.0 / (1.0 + x)).max(f64::MIN_POSITIVE);
    norm_quantile_split(cdf, sf)
}

/// F₃,₃ ratio from six standard normal values.
pub(crate) fn f33_ratio(g: [f64; 6]) -> f64 {
    let num = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
    let den = g[3] * g[3] + g[4] * g[4] + g[5] * g[5];
    num / den
}

fn mean_correct(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
}

/// Samples one of the three models on a fixed lattice.
#[derive(Debug, Clone)]
pub struct ModelSampler {
    model: FieldModel,
    grf: GrfSampler,
    options: LatticeOptions,
}

impl ModelSampler {
    pub fn new(model: FieldModel, nrows: usize, ncols: usize, options: LatticeOptions) -> Result<Self> {
        Ok(Self {
            model,
            grf: GrfSampler::new(nrows, ncols, model.matern)?,
            options,
        })
    }

    pub fn model(&self) -> FieldModel {
        self.model
    }

    pub fn grf(&self) -> &GrfSampler {
        &self.grf
    }

    /// Transformed values before mean-correction.
    pub fn sample_raw(&self, seed: u64) -> Vec<f64> {
        self.sample_raw_batch(&[seed]).pop().expect("one seed")
    }

    pub fn sample_raw_batch(&self, seeds: &[u64]) -> Vec<Vec<f64>> {
        match self.model.kind {
            ModelKind::M1 => self.grf.sample_batch(seeds),
            ModelKind::M2 => self
                .grf
                .sample_batch(seeds)
                .into_iter()
                .map(|g| g.into_iter().map(|z| chi1_to_normal(z * z)).collect())
                .collect(),
            ModelKind::M3 => {
                let inner: Vec<u64> = seeds
                    .iter()
                    .flat_map(|&s| (0..6).map(move |k| derive_seed(s, &[k])))
                    .collect();
                let grfs = self.grf.sample_batch(&inner);
                grfs.chunks(6)
                    .map(|g| {
                        (0..g[0].len())
                            .map(|i| f33_to_normal(f33_ratio(std::array::from_fn(|k| g[k][i]))))
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// Mean-corrected field for one seed.
    pub fn sample(&self, seed: u64) -> Result<LatticeField> {
        self.sample_batch(&[seed]).map(|mut v| v.pop().expect("one seed"))
    }

    pub fn sample_batch(&self, seeds: &[u64]) -> Result<Vec<LatticeField>> {
        self.sample_raw_batch(seeds)
            .into_iter()
            .map(|mut v| {
                mean_correct(&mut v);
                LatticeField::new(self.grf.nrows, self.grf.ncols, v, self.options)
            })
            .collect()
    }
}

/// Mean-corrected Gaussian field with Matérn correlation.
pub fn simulate_grf(nrows: usize, ncols: usize, p: MaternParams, seed: u64, options: LatticeOptions) -> Result<LatticeField> {
    simulate_model(FieldModel { kind: ModelKind::M1, matern: p }, nrows, ncols, seed, options)
}

pub fn simulate_model(model: FieldModel, nrows: usize, ncols: usize, seed: u64, options: LatticeOptions) -> Result<LatticeField> {
    ModelSampler::new(model, nrows, ncols, options)?.sample(seed)
}

/// Independent N(0,1) values (no mean-correction).
pub fn simulate_iid(nrows: usize, ncols: usize, seed: u64, options: LatticeOptions) -> Result<LatticeField> {
    LatticeField::new(nrows, ncols, standard_normals(seed, nrows * ncols).collect(), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_cdf, norm_quantile};
    use approx::assert_relative_eq;

    fn params(eta: f64, nu: f64) -> MaternParams {
        MaternParams::new(eta, nu).unwrap()
    }

    /// Kolmogorov–Smirnov statistic against a continuous distribution function.
    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Asymptotic α = 0.01 critical value.
    fn ks_critical(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn deterministic_given_seed() {
        let o = LatticeOptions::default();
        let a = simulate_grf(6, 7, params(3.0, 1.0), 7, o).unwrap();
        let b = simulate_grf(6, 7, params(3.0, 1.0), 7, o).unwrap();
        assert_eq!(a, b);
        let c = simulate_grf(6, 7, params(3.0, 1.0), 8, o).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_equals_single() {
        let s = ModelSampler::new(
            FieldModel { kind: ModelKind::M3, matern: params(2.0, 0.8) },
            5,
            4,
            LatticeOptions::default(),
        )
        .unwrap();
        let seeds: Vec<u64> = (100..140).collect();
        let batch = s.sample_raw_batch(&seeds);
        for (seed, b) in seeds.iter().zip(&batch) {
            assert_eq!(&s.sample_raw(*seed), b);
        }
    }

    #[test]
    fn m1_is_grf() {
        let o = LatticeOptions::default();
        let p = params(5.0, 1.0);
        let a = simulate_model(FieldModel { kind: ModelKind::M1, matern: p }, 8, 8, 3, o).unwrap();
        assert_eq!(a, simulate_grf(8, 8, p, 3, o).unwrap());
    }

    #[test]
    fn two_cell_correlation() {
        let s = GrfSampler::new(2, 1, params(1.0, 0.5)).unwrap();
        let draws = s.sample_batch(&(0..100_000).collect::<Vec<u64>>());
        let n = draws.len() as f64;
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for d in &draws {
            sx += d[0];
            sy += d[1];
            sxy += d[0] * d[1];
            sxx += d[0] * d[0];
            syy += d[1] * d[1];
        }
        let cov = sxy / n - sx * sy / n / n;
        let r = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
        assert!((r - (-1.0f64).exp()).abs() < 0.01, "r = {r}");
    }

    #[test]
    fn mean_corrected_and_normal_margins() {
        let s = ModelSampler::new(
            FieldModel { kind: ModelKind::M1, matern: params(5.0, 1.0) },
            40,
            40,
            LatticeOptions::default(),
        )
        .unwrap();
        let f = s.sample(11).unwrap();
        let mean = f.values().iter().sum::<f64>() / 1600.0;
        assert!(mean.abs() < 1e-12);
        // One cell per seed keeps the sample independent.
        let xs: Vec<f64> = s.sample_raw_batch(&(0..2000).collect::<Vec<u64>>()).iter().map(|v| v[820]).collect();
        assert!(ks_statistic(xs.clone(), norm_cdf) < ks_critical(xs.len()));
    }

    #[test]
    fn m2_is_probability_integral_transform() {
        let p = params(3.0, 1.0);
        let grf = GrfSampler::new(6, 6, p).unwrap();
        let m2 = ModelSampler::new(FieldModel { kind: ModelKind::M2, matern: p }, 6, 6, LatticeOptions::default()).unwrap();
        for seed in 0..20 {
            let g = grf.sample(seed);
            let t = m2.sample_raw(seed);
            for (z, v) in g.iter().zip(&t) {
                // F₁(z²) = 2Φ(|z|) − 1 = 1 − 2Φ(−|z|).
                let oracle = if z.abs() < 0.6744897501960817 {
                    norm_quantile(2.0 * norm_cdf(z.abs()) - 1.0)
                } else {
                    -norm_quantile(2.0 * norm_cdf(-z.abs()))
                };
                assert_relative_eq!(*v, oracle, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
        let xs: Vec<f64> = m2.sample_raw_batch(&(0..3000).collect::<Vec<u64>>()).iter().map(|v| v[14]).collect();
        assert!(ks_statistic(xs.clone(), norm_cdf) < ks_critical(xs.len()));
    }

    #[test]
    fn m3_ratio_is_f33() {
        let grf = GrfSampler::new(2, 1, params(1.0, 0.5)).unwrap();
        let n = 100_000u64;
        let inner: Vec<u64> = (0..n).flat_map(|s| (0..6).map(move |k| derive_seed(s, &[k]))).collect();
        let g = grf.sample_batch(&inner);
        let ratios: Vec<f64> = g
            .chunks(6)
            .map(|c| f33_ratio(std::array::from_fn(|k| c[k][0])))
            .collect();
        // F₃,₃ distribution function in closed form:
        // I_w(3/2, 3/2) = (2/π)(asin √w − √(w(1−w))(1 − 2w)).
        let cdf = |x: f64| {
            let w = x / (1.0 + x);
            2.0 / std::f64::consts::PI * (w.sqrt().asin() - (w * (1.0 - w)).sqrt() * (1.0 - 2.0 * w))
        };
        assert!(ks_statistic(ratios, cdf) < ks_critical(n as usize));
        for &x in &[0.01, 0.3, 1.0, 2.5, 40.0] {
            assert_relative_eq!(norm_cdf(f33_to_normal(x)), cdf(x), max_relative = 1e-9);
        }
    }

    #[test]
    fn marginal_variance_is_one() {
        // Pre-correction values; mean-correction shrinks the variance by the
        // variance of the lattice mean.
        for kind in [ModelKind::M1, ModelKind::M2, ModelKind::M3] {
            let s = ModelSampler::new(FieldModel { kind, matern: params(2.0, 1.0) }, 10, 10, LatticeOptions::default()).unwrap();
            let batch = s.sample_raw_batch(&(0..400).collect::<Vec<u64>>());
            // Independent replicates at one cell: SE of the variance ≈ √(2/n).
            let xs: Vec<f64> = batch.iter().map(|v| v[55]).collect();
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "{kind:?} var {var}");
        }
    }

    #[test]
    fn size_guard() {
        assert!(matches!(GrfSampler::new(101, 100, params(1.0, 1.0)), Err(Error::Domain(_))));
    }
}
