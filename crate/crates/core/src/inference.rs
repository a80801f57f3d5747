//! Pointwise intervals and simultaneous bands for Nelson–Aalen curves, and
//! the coverage experiment that calibrates them.

use crate::error::{Error, Result};
use crate::filtration::{Direction, RiskConvention};
use crate::lattice::{LatticeField, LatticeOptions};
use crate::limiting::{limit_curve, LimitCorrelation, LimitSpec};
use crate::linalg::psd_correlation_factor;
use crate::nelson_aalen::{at_risk_percentile_grid, discretize, field_curve, naive_variance, nelson_aalen, StepCurve};
use crate::randfield::{fit_matern_mle, FieldModel, MleFit, MleOptions, ModelKind, ModelSampler};
use crate::rng::{derive_seed, stream_rng};
use crate::special::{norm_quantile, upper_quantile_sorted};
use crate::filtration::birth_process;
use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Eigenvalue floor for correlation repair.
pub const PSD_FLOOR: f64 = 1e-10;
pub const DEFAULT_MC_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMethod {
    Replicate,
    Bootstrap,
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub levels: Vec<f64>,
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    /// Multiplier of the scale: z_{1−α/2}, c_γ or d̂_α.
    pub threshold: f64,
    pub alpha: f64,
    pub method: BandMethod,
    pub simultaneous: bool,
    /// Grid indices with zero estimated variance, left out of the band.
    pub excluded: Vec<usize>,
    /// Eigenvalue mass added when repairing the correlation estimate.
    pub psd_repair: f64,
}

impl BandResult {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }

    /// Whether `truth` lies inside the band at every included grid point.
    pub fn covers(&self, truth: &[f64]) -> bool {
        (0..self.levels.len())
            .filter(|j| !self.excluded.contains(j))
            .all(|j| (truth[j] - self.center[j]).abs() <= self.half_width[j])
    }

    /// Writes `level,center,lower,upper` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "center", "lower", "upper"])?;
        for j in 0..self.levels.len() {
            w.write_record([
                self.levels[j].to_string(),
                self.center[j].to_string(),
                (self.center[j] - self.half_width[j]).to_string(),
                (self.center[j] + self.half_width[j]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Pointwise mean and sample standard deviation of curves on a common grid.
fn moments(curves: &[StepCurve]) -> Result<(Vec<f64>, Vec<f64>)> {
    let levels = curves[0].levels();
    if let Some(c) = curves.iter().find(|c| c.levels() != levels) {
        return Err(Error::domain(format!(
            "curves are not on a common grid ({} vs {} levels)",
            levels.len(),
            c.levels().len()
        )));
    }
    let n = curves.len() as f64;
    let m = levels.len();
    let mut mean = vec![0.0; m];
    for c in curves {
        for (a, v) in mean.iter_mut().zip(c.values()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut sd = vec![0.0; m];
    for c in curves {
        for ((s, v), a) in sd.iter_mut().zip(c.values()).zip(&mean) {
            *s += (v - a).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    Ok((mean, sd))
}

/// Ā_j ± z_{1−α/2} σ̂_j/√N.
pub fn replicate_pointwise(curves: &[StepCurve], alpha: f64) -> Result<BandResult> {
    check_alpha(alpha)?;
    if curves.len() < 2 {
        return Err(Error::domain("pointwise intervals need at least 2 replicate curves"));
    }
    let (mean, sd) = moments(curves)?;
    let z = norm_quantile(1.0 - alpha / 2.0);
    let root_n = (curves.len() as f64).sqrt();
    Ok(BandResult {
        levels: curves[0].levels().to_vec(),
        half_width: sd.iter().map(|s| z * s / root_n).collect(),
        center: mean,
        threshold: z,
        alpha,
        method: BandMethod::Replicate,
        simultaneous: false,
        excluded: Vec::new(),
        psd_repair: 0.0,
    })
}

/// Upper-α quantile of max_j |G_j| for G ~ N(0, cor) by Monte Carlo.
/// Returns the quantile and the eigenvalue repair applied to `cor`.
pub fn max_abs_quantile(cor: &Mat<f64>, alpha: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if draws == 0 {
        return Err(Error::domain("Monte Carlo threshold needs at least one draw"));
    }
    let psd = psd_correlation_factor(cor, PSD_FLOOR)?;
    if psd.repair > 0.0 {
        // Rank-deficient estimates (fewer replicates than levels) only sit at
        // round-off below zero; report those quietly.
        let level = if psd.min_eigenvalue < -1e-8 { log::Level::Warn } else { log::Level::Debug };
        log::log!(
            level,
            "correlation estimate not positive semi-definite (min eigenvalue {:.3e}); clipped with repair {:.3e}",
            psd.min_eigenvalue,
            psd.repair
        );
    }
    let r = psd.factor.ncols();
    let mut rng = stream_rng(seed, 0);
    let mut z = Mat::<f64>::zeros(r, draws);
    for d in 0..draws {
        for k in 0..r {
            z[(k, d)] = rng.sample(StandardNormal);
        }
    }
    let g = &psd.factor * &z;
    let mut maxima: Vec<f64> = (0..draws)
        .map(|d| (0..g.nrows()).map(|j| g[(j, d)].abs()).fold(0.0, f64::max))
        .collect();
    maxima.sort_by(f64::total_cmp);
    Ok((upper_quantile_sorted(&maxima, alpha), psd.repair))
}

fn positive_indices(sd: &[f64]) -> (Vec<usize>, Vec<usize>) {
    (0..sd.len()).partition(|&j| sd[j] > 0.0)
}

/// Simultaneous band Ā_j ± c_γ σ̂_j/√N with c_γ from the replicate
/// correlation.
pub fn replicate_band(curves: &[StepCurve], alpha: f64, mc_draws: usize, seed: u64) -> Result<BandResult> {
    check_alpha(alpha)?;
    if curves.len() < 3 {
        return Err(Error::domain("a simultaneous band needs at least 3 replicate curves"));
    }
    let (mean, sd) = moments(curves)?;
    let (kept, excluded) = positive_indices(&sd);
    if kept.is_empty() {
        return Err(Error::domain("replicate curves have zero variance at every grid point"));
    }
    if !excluded.is_empty() {
        log::warn!("{} grid points with zero replicate variance left out of the band", excluded.len());
    }
    let n = curves.len() as f64;
    let k = kept.len();
    let mut cor = Mat::<f64>::zeros(k, k);
    for c in curves {
        let v = c.values();
        for (a, &i) in kept.iter().enumerate() {
            let zi = (v[i] - mean[i]) / sd[i];
            for (b, &j) in kept.iter().enumerate().take(a + 1) {
                cor[(a, b)] += zi * (v[j] - mean[j]) / sd[j];
            }
        }
    }
    for a in 0..k {
        for b in 0..=a {
            let v = cor[(a, b)] / (n - 1.0);
            cor[(a, b)] = v;
            cor[(b, a)] = v;
        }
    }
    let (c, repair) = max_abs_quantile(&cor, alpha, mc_draws, seed)?;
    let root_n = n.sqrt();
    Ok(BandResult {
        levels: curves[0].levels().to_vec(),
        half_width: sd.iter().map(|s| c * s / root_n).collect(),
        center: mean,
        threshold: c,
        alpha,
        method: BandMethod::Replicate,
        simultaneous: true,
        excluded,
        psd_repair: repair,
    })
}

/// Band Â_j ± d̂_α σ̂_j from bootstrap curves, with d̂_α the upper-α quantile
/// of G_b = max_j |Â_bj − Ā_j|/σ̂_j.
pub fn bootstrap_band_from_curves(original: &StepCurve, boot: &[StepCurve], alpha: f64) -> Result<BandResult> {
    check_alpha(alpha)?;
    if boot.len() < 2 {
        return Err(Error::domain("bootstrap band needs at least 2 bootstrap curves"));
    }
    if original.levels() != boot[0].levels() {
        return Err(Error::domain("original and bootstrap curves are not on a common grid"));
    }
    let (mean, sd) = moments(boot)?;
    let (kept, excluded) = positive_indices(&sd);
    if kept.is_empty() {
        return Err(Error::domain("bootstrap curves have zero variance at every grid point"));
    }
    if !excluded.is_empty() {
        log::warn!("{} grid points with zero bootstrap variance left out of the band", excluded.len());
    }
    let mut g: Vec<f64> = boot
        .iter()
        .map(|c| {
            kept.iter()
                .map(|&j| (c.values()[j] - mean[j]).abs() / sd[j])
                .fold(0.0, f64::max)
        })
        .collect();
    g.sort_by(f64::total_cmp);
    let d = upper_quantile_sorted(&g, alpha);
    Ok(BandResult {
        levels: original.levels().to_vec(),
        center: original.values().to_vec(),
        half_width: sd.iter().map(|s| d * s).collect(),
        threshold: d,
        alpha,
        method: BandMethod::Bootstrap,
        simultaneous: true,
        excluded,
        psd_repair: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub alpha: f64,
    pub mle: MleOptions,
    pub direction: Direction,
    pub convention: RiskConvention,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            alpha: 0.05,
            mle: MleOptions::default(),
            direction: Direction::Sublevel,
            convention: RiskConvention::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub band: BandResult,
    pub fit: MleFit,
    /// Bootstrap curves on the grid.
    pub curves: Vec<StepCurve>,
}

/// Parametric bootstrap band from a single field: Matérn MLE, B simulated
/// fields at the estimate, band centred on the original curve.
pub fn bootstrap_band(field: &LatticeField, grid: &[f64], options: &BootstrapOptions, seed: u64) -> Result<BootstrapBand> {
    if options.replicates < 100 {
        return Err(Error::domain(format!(
            "bootstrap needs at least 100 replicates, got {}",
            options.replicates
        )));
    }
    let fit = fit_matern_mle(field, &options.mle)?;
    let sampler = ModelSampler::new(
        FieldModel { kind: ModelKind::M1, matern: fit.params },
        field.nrows(),
        field.ncols(),
        field.options(),
    )?;
    let seeds: Vec<u64> = (0..options.replicates as u64).map(|b| derive_seed(seed, &[b])).collect();
    let curves = sampler
        .sample_batch(&seeds)?
        .par_iter()
        .map(|f| field_curve(f, options.direction, options.convention, grid))
        .collect::<Result<Vec<_>>>()?;
    let original = field_curve(field, options.direction, options.convention, grid)?;
    let band = bootstrap_band_from_curves(&original, &curves, options.alpha)?;
    Ok(BootstrapBand { band, fit, curves })
}

/// Equal-precision band from the naive variance of a single curve, treating
/// the estimator as a process with independent increments: the standardized
/// process has correlation √(v_j/v_k) for j ≤ k.
pub fn naive_band(a_hat: &StepCurve, var_naive: &StepCurve, alpha: f64, mc_draws: usize, seed: u64) -> Result<BandResult> {
    check_alpha(alpha)?;
    if a_hat.levels() != var_naive.levels() {
        return Err(Error::domain("estimate and variance are not on a common grid"));
    }
    let var = var_naive.values();
    let (kept, excluded) = positive_indices(var);
    if kept.is_empty() {
        return Err(Error::domain("naive variance is zero at every grid point"));
    }
    let k = kept.len();
    let cor = Mat::from_fn(k, k, |a, b| {
        let (vi, vj) = (var[kept[a]], var[kept[b]]);
        (vi.min(vj) / vi.max(vj)).sqrt()
    });
    let (c, repair) = max_abs_quantile(&cor, alpha, mc_draws, seed)?;
    Ok(BandResult {
        levels: a_hat.levels().to_vec(),
        center: a_hat.values().to_vec(),
        half_width: var.iter().map(|v| c * v.sqrt()).collect(),
        threshold: c,
        alpha,
        method: BandMethod::Naive,
        simultaneous: true,
        excluded,
        psd_repair: repair,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub model: FieldModel,
    pub nrows: usize,
    pub ncols: usize,
    pub options: LatticeOptions,
    pub method: BandMethod,
    pub trials: usize,
    /// Fields per trial for the replicate method.
    pub replicates: usize,
    /// Bootstrap resamples per trial.
    pub bootstrap: usize,
    pub alpha: f64,
    pub mc_draws: usize,
    /// Fields used to place the at-risk percentile levels and grid.
    pub pilot_fields: usize,
    pub grid_points: usize,
    pub percentiles: Vec<f64>,
    pub limit_samples: usize,
    pub mle: MleOptions,
    pub seed: u64,
}

impl CoverageConfig {
    pub fn new(model: FieldModel, nrows: usize, ncols: usize, method: BandMethod, trials: usize, seed: u64) -> Self {
        Self {
            model,
            nrows,
            ncols,
            options: LatticeOptions::default(),
            method,
            trials,
            replicates: 40,
            bootstrap: 200,
            alpha: 0.05,
            mc_draws: DEFAULT_MC_DRAWS,
            pilot_fields: 50,
            grid_points: 200,
            percentiles: vec![0.9, 0.7, 0.5, 0.3, 0.1],
            limit_samples: 20_000,
            mle: MleOptions::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub method: BandMethod,
    pub trials: usize,
    pub percentiles: Vec<f64>,
    /// Levels at which the expected at-risk fraction equals each percentile.
    pub levels: Vec<f64>,
    /// Pointwise coverage (%) at each percentile level.
    pub pointwise: Vec<f64>,
    /// Simultaneous coverage (%) over the grid.
    pub simultaneous: Option<f64>,
    /// Mean band threshold across trials.
    pub mean_threshold: Option<f64>,
}

const PILOT_TAG: u64 = 0x9117;
const TRIAL_TAG: u64 = 0x7121;
const BAND_TAG: u64 = 0xba4d;

struct TrialOutcome {
    pointwise: Vec<bool>,
    simultaneous: bool,
    threshold: f64,
}

/// Runs the coverage experiment: each trial builds intervals and a band by
/// the chosen method and checks them against the limiting curve.
pub fn coverage_experiment(config: &CoverageConfig) -> Result<CoverageTable> {
    let empty = CoverageTable {
        method: config.method,
        trials: 0,
        percentiles: config.percentiles.clone(),
        levels: Vec::new(),
        pointwise: Vec::new(),
        simultaneous: None,
        mean_threshold: None,
    };
    if config.trials == 0 {
        return Ok(empty);
    }
    check_alpha(config.alpha)?;
    if config.model.kind != ModelKind::M1 {
        return Err(Error::domain("coverage needs a Gaussian (M1) model: the limiting curve is only available there"));
    }
    let sampler = ModelSampler::new(config.model, config.nrows, config.ncols, config.options)?;
    let pilot_seeds: Vec<u64> = (0..config.pilot_fields.max(1) as u64).map(|i| derive_seed(config.seed, &[PILOT_TAG, i])).collect();
    let pilot = sampler.sample_batch(&pilot_seeds)?;
    let pg = at_risk_percentile_grid(&pilot, &config.percentiles, config.grid_points, Direction::Sublevel)?;
    drop(pilot);

    let mut nodes: Vec<f64> = pg.grid.iter().chain(&pg.levels).copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    // Sampled fields are mean-corrected; so is the truth.
    let mut spec =
        LimitSpec::new(LimitCorrelation::Matern(config.model.matern), config.nrows, config.ncols, config.options, nodes).mean_corrected();
    spec.mc_samples = config.limit_samples;
    spec.seed = derive_seed(config.seed, &[0x1141]);
    let limit = limit_curve(&spec)?;
    if limit.truncated_at.is_some() {
        return Err(Error::domain("limiting curve underflows inside the coverage grid"));
    }
    let truth = |t: f64| limit.curve.interpolate(t).expect("grid level inside limit curve");
    let truth_grid: Vec<f64> = pg.grid.iter().map(|&t| truth(t)).collect();
    let truth_pct: Vec<f64> = pg.levels.iter().map(|&t| truth(t)).collect();
    let z = norm_quantile(1.0 - config.alpha / 2.0);

    let outcomes: Vec<TrialOutcome> = (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<TrialOutcome> {
            let band_seed = derive_seed(config.seed, &[BAND_TAG, trial]);
            match config.method {
                BandMethod::Replicate => {
                    let seeds: Vec<u64> = (0..config.replicates as u64)
                        .map(|i| derive_seed(config.seed, &[TRIAL_TAG, trial, i]))
                        .collect();
                    let fields = sampler.sample_batch(&seeds)?;
                    let mut on_grid = Vec::with_capacity(fields.len());
                    let mut at_pct = Vec::with_capacity(fields.len());
                    for f in &fields {
                        let a = nelson_aalen(&birth_process(f, Direction::Sublevel, RiskConvention::Left))?;
                        on_grid.push(discretize(&a, &pg.grid)?);
                        at_pct.push(pg.levels.iter().map(|&t| a.eval(t)).collect::<Vec<f64>>());
                    }
                    let band = replicate_band(&on_grid, config.alpha, config.mc_draws, band_seed)?;
                    let n = at_pct.len() as f64;
                    let pointwise = (0..pg.levels.len())
                        .map(|p| {
                            let xs: Vec<f64> = at_pct.iter().map(|v| v[p]).collect();
                            let m = xs.iter().sum::<f64>() / n;
                            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                            (m - truth_pct[p]).abs() <= z * sd / n.sqrt()
                        })
                        .collect();
                    Ok(TrialOutcome {
                        pointwise,
                        simultaneous: band.covers(&truth_grid),
                        threshold: band.threshold,
                    })
                }
                BandMethod::Naive => {
                    let f = sampler.sample(derive_seed(config.seed, &[TRIAL_TAG, trial, 0]))?;
                    let bp = birth_process(&f, Direction::Sublevel, RiskConvention::Left);
                    let a = nelson_aalen(&bp)?;
                    let v = naive_variance(&bp)?;
                    let band = naive_band(&discretize(&a, &pg.grid)?, &discretize(&v, &pg.grid)?, config.alpha, config.mc_draws, band_seed)?;
                    let pointwise = pg
                        .levels
                        .iter()
                        .zip(&truth_pct)
                        .map(|(&t, &tr)| (a.eval(t) - tr).abs() <= z * v.eval(t).sqrt())
                        .collect();
                    Ok(TrialOutcome {
                        pointwise,
                        simultaneous: band.covers(&truth_grid),
                        threshold: band.threshold,
                    })
                }
                BandMethod::Bootstrap => {
                    let f = sampler.sample(derive_seed(config.seed, &[TRIAL_TAG, trial, 0]))?;
                    let options = BootstrapOptions {
                        replicates: config.bootstrap,
                        alpha: config.alpha,
                        mle: config.mle.clone(),
                        ..Default::default()
                    };
                    // Percentile levels ride along on the grid so each
                    // bootstrap curve is evaluated there too.
                    let mut levels: Vec<f64> = pg.grid.iter().chain(&pg.levels).copied().collect();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    let bb = bootstrap_band(&f, &levels, &options, band_seed)?;
                    let (_, sd) = moments(&bb.curves)?;
                    let idx = |t: f64| levels.binary_search_by(|x| x.total_cmp(&t)).expect("level on grid");
                    let pointwise = pg
                        .levels
                        .iter()
                        .zip(&truth_pct)
                        .map(|(&t, &tr)| {
                            let j = idx(t);
                            (bb.band.center[j] - tr).abs() <= z * sd[j]
                        })
                        .collect();
                    let simultaneous = pg
                        .grid
                        .iter()
                        .zip(&truth_grid)
                        .all(|(&t, &tr)| {
                            let j = idx(t);
                            bb.band.excluded.contains(&j) || (bb.band.center[j] - tr).abs() <= bb.band.half_width[j]
                        });
                    Ok(TrialOutcome {
                        pointwise,
                        simultaneous,
                        threshold: bb.band.threshold,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let n = outcomes.len() as f64;
    let pointwise = (0..pg.levels.len())
        .map(|p| 100.0 * outcomes.iter().filter(|o| o.pointwise[p]).count() as f64 / n)
        .collect();
    let simultaneous = 100.0 * outcomes.iter().filter(|o| o.simultaneous).count() as f64 / n;
    let mean_threshold = outcomes.iter().map(|o| o.threshold).sum::<f64>() / n;
    Ok(CoverageTable {
        levels: pg.levels,
        pointwise,
        simultaneous: Some(simultaneous),
        mean_threshold: Some(mean_threshold),
        ..empty
    })
}
