//! Nelson–Aalen cumulative hazard of component births, its naive variance,
//! and grid discretization.

use crate::error::{Error, Result};
use crate::filtration::{birth_process, BirthProcess, Direction, RiskConvention};
use crate::lattice::LatticeField;
use crate::special::quantile_sorted;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// Right-continuous step function, zero before the first level.
    Step,
    /// Samples on a grid of levels.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    levels: Vec<f64>,
    values: Vec<f64>,
    kind: CurveKind,
}

impl StepCurve {
    pub fn new(levels: Vec<f64>, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if levels.len() != values.len() {
            return Err(Error::domain(format!(
                "curve has {} levels but {} values",
                levels.len(),
                values.len()
            )));
        }
        if let Some(w) = levels.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::domain(format!(
                "curve levels must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { levels, values, kind })
    }

    pub fn empty(kind: CurveKind) -> Self {
        Self {
            levels: Vec::new(),
            values: Vec::new(),
            kind,
        }
    }

    /// Builds a cumulative step curve from jump locations and sizes.
    pub fn from_jumps(levels: Vec<f64>, jumps: &[f64]) -> Result<Self> {
        let values = jumps
            .iter()
            .scan(0.0, |acc, j| {
                *acc += j;
                Some(*acc)
            })
            .collect();
        Self::new(levels, values, CurveKind::Step)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Right-continuous evaluation: the value at the last level ≤ t, or 0.
    pub fn eval(&self, t: f64) -> f64 {
        match self.levels.partition_point(|&l| l <= t) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }

    /// Linear interpolation between grid samples; `None` outside the grid.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let n = self.levels.len();
        if n == 0 || t < self.levels[0] || t > self.levels[n - 1] {
            return None;
        }
        let k = self.levels.partition_point(|&l| l <= t);
        if k == n {
            return Some(self.values[n - 1]);
        }
        let (l0, l1) = (self.levels[k - 1], self.levels[k]);
        let w = (t - l0) / (l1 - l0);
        Some(self.values[k - 1] + w * (self.values[k] - self.values[k - 1]))
    }

    /// Increments between consecutive values (the first against zero).
    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let j = v - prev;
                prev = v;
                j
            })
            .collect()
    }

    /// Writes `level,<name>` rows; with `exp_levels` the level column is
    /// reported as exp(t).
    pub fn write_csv(&self, out: impl Write, name: &str, exp_levels: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", name])?;
        for (l, v) in self.levels.iter().zip(&self.values) {
            let l = if exp_levels { l.exp() } else { *l };
            w.write_record([l.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_risk(bp: &BirthProcess) -> Result<()> {
    match bp.births().iter().find(|b| b.at_risk == 0) {
        Some(b) => Err(Error::Internal(format!(
            "birth at level {} has an empty risk set",
            b.level
        ))),
        None => Ok(()),
    }
}

/// Â(t) = Σ_{u ≤ t} dN(u)/Y(u).
pub fn nelson_aalen(bp: &BirthProcess) -> Result<StepCurve> {
    check_risk(bp)?;
    let levels = bp.births().iter().map(|b| b.level).collect();
    let jumps: Vec<f64> = bp.births().iter().map(|b| 1.0 / b.at_risk as f64).collect();
    StepCurve::from_jumps(levels, &jumps)
}

/// Σ_{u ≤ t} dN(u)/Y(u)². Anti-conservative for dependent fields: the
/// counting-process martingale argument behind it does not hold here.
pub fn naive_variance(bp: &BirthProcess) -> Result<StepCurve> {
    check_risk(bp)?;
    let levels = bp.births().iter().map(|b| b.level).collect();
    let jumps: Vec<f64> = bp
        .births()
        .iter()
        .map(|b| (b.at_risk as f64).powi(2).recip())
        .collect();
    StepCurve::from_jumps(levels, &jumps)
}

/// Right-continuous evaluation of `curve` at each grid level.
pub fn discretize(curve: &StepCurve, grid: &[f64]) -> Result<StepCurve> {
    let values = grid.iter().map(|&t| curve.eval(t)).collect();
    StepCurve::new(grid.to_vec(), values, CurveKind::Grid)
}

/// Convenience: Nelson–Aalen of a field evaluated on a grid.
pub fn field_curve(field: &LatticeField, direction: Direction, convention: RiskConvention, grid: &[f64]) -> Result<StepCurve> {
    let bp = birth_process(field, direction, convention);
    discretize(&nelson_aalen(&bp)?, grid)
}

/// Writes `level,A_hat,var_naive` rows.
pub fn write_na_csv(out: impl Write, a_hat: &StepCurve, var_naive: &StepCurve, exp_levels: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "A_hat", "var_naive"])?;
    for ((l, a), v) in a_hat.levels().iter().zip(a_hat.values()).zip(var_naive.values()) {
        let l = if exp_levels { l.exp() } else { *l };
        w.write_record([l.to_string(), a.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-or-more column CSV with a header, taking the first column as
/// levels and the named column as values.
pub fn read_curve_csv(path: &Path, column: &str) -> Result<StepCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let source = path.display().to_string();
    let headers = r.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::parse(format!("{source}:1"), format!("missing column '{column}'")))?;
    let mut levels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse = |k: usize| -> Result<f64> {
            let s = rec.get(k).unwrap_or("").trim();
            s.parse::<f64>()
                .map_err(|_| Error::parse(format!("{source}:{line} field {}", k + 1), format!("not a number: '{s}'")))
        };
        levels.push(parse(0)?);
        values.push(parse(idx)?);
    }
    StepCurve::new(levels, values, CurveKind::Grid)
}

/// Levels at which the pooled at-risk fraction crosses given probabilities,
/// plus an equally spaced grid between the 0.95 and 0.05 crossings.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentileGrid {
    pub probs: Vec<f64>,
    pub levels: Vec<f64>,
    pub grid: Vec<f64>,
}

pub const CENTRAL_UPPER: f64 = 0.95;
pub const CENTRAL_LOWER: f64 = 0.05;
pub const DEFAULT_GRID_POINTS: usize = 200;

/// Pooled empirical at-risk fraction Ȳ(t) = #{x : m_x ≥ t}/n solved for
/// Ȳ(t) = p via the (1 − p) quantile of the pooled exit levels m_x.
pub fn at_risk_percentile_grid(fields: &[LatticeField], probs: &[f64], m: usize, direction: Direction) -> Result<PercentileGrid> {
    if fields.is_empty() {
        return Err(Error::domain("at-risk percentile grid needs at least one field"));
    }
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::domain(format!("at-risk probability {p} outside (0, 1)")));
    }
    if m < 2 {
        return Err(Error::domain(format!("grid needs at least 2 points, got {m}")));
    }
    let mut pooled: Vec<f64> = fields
        .iter()
        .flat_map(|f| birth_process(f, direction, RiskConvention::Left).exit_levels().to_vec())
        .collect();
    pooled.sort_by(f64::total_cmp);
    let level_at = |p: f64| quantile_sorted(&pooled, 1.0 - p);
    let levels = probs.iter().map(|&p| level_at(p)).collect();
    Ok(PercentileGrid {
        probs: probs.to_vec(),
        levels,
        grid: linspace(level_at(CENTRAL_UPPER), level_at(CENTRAL_LOWER), m),
    })
}

/// `m` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..m)
            .map(|i| if i == m - 1 { b } else { a + (b - a) * i as f64 / (m - 1) as f64 })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, LatticeOptions};
    use crate::rng::stream_rng;
    use crate::special::norm_quantile;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn example() -> BirthProcess {
        let f = LatticeField::new(1, 3, vec![0.5, -1.0, 0.2], LatticeOptions::default()).unwrap();
        birth_process(&f, Direction::Sublevel, RiskConvention::Left)
    }

    fn normal_field(n: usize, seed: u64, options: LatticeOptions) -> LatticeField {
        let mut rng = stream_rng(seed, 0);
        let v = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        LatticeField::new(n, n, v, options).unwrap()
    }

    #[test]
    fn three_cell_example() {
        let a = nelson_aalen(&example()).unwrap();
        assert_eq!(a.levels(), &[-1.0]);
        assert_eq!(a.jumps(), vec![1.0 / 3.0]);
        assert_eq!(a.eval(0.0), 1.0 / 3.0);
        assert_eq!(a.eval(-1.000001), 0.0);
        let v = naive_variance(&example()).unwrap();
        assert_eq!(v.jumps(), vec![1.0 / 9.0]);
    }

    #[test]
    fn single_basin_jump() {
        let v: Vec<f64> = (0..16).map(f64::from).collect();
        let f = LatticeField::new(4, 4, v, LatticeOptions::default()).unwrap();
        let bp = birth_process(&f, Direction::Sublevel, RiskConvention::Left);
        assert_eq!(nelson_aalen(&bp).unwrap().jumps(), vec![1.0 / 16.0]);
        assert_eq!(naive_variance(&bp).unwrap().jumps(), vec![1.0 / 256.0]);
    }

    #[test]
    fn total_matches_brute_force() {
        let f = normal_field(10, 4, LatticeOptions::default());
        let a = nelson_aalen(&birth_process(&f, Direction::Sublevel, RiskConvention::Left)).unwrap();
        // Independent pass: for each local minimum, count cells whose value and
        // all neighbour values are ≥ the minimum's value.
        let mut total = 0.0;
        let cells: Vec<_> = (0..100).map(|i| f.coord(i)).collect();
        for &c in &cells {
            let z = f.value(c);
            let nbrs = f.neighbors(c).unwrap();
            if nbrs.iter().all(|&n| f.value(n) > z) {
                let y = cells
                    .iter()
                    .filter(|&&x| f.value(x) >= z && f.neighbors(x).unwrap().iter().all(|&n| f.value(n) >= z))
                    .count();
                total += 1.0 / y as f64;
            }
        }
        assert_relative_eq!(a.eval(f64::INFINITY), total, max_relative = 1e-12);
    }

    #[test]
    fn variance_jumps_are_squared_hazard_jumps() {
        let f = normal_field(12, 9, LatticeOptions::default());
        let bp = birth_process(&f, Direction::Sublevel, RiskConvention::Left);
        let a = nelson_aalen(&bp).unwrap().jumps();
        let v = naive_variance(&bp).unwrap().jumps();
        for (x, y) in a.iter().zip(&v) {
            assert_relative_eq!(x * x, *y, max_relative = 1e-9);
        }
    }

    #[test]
    fn discretize_is_right_continuous() {
        let a = nelson_aalen(&example()).unwrap();
        let g = discretize(&a, &[-3.0, -2.0, -1.5]).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0, 0.0]);
        let g = discretize(&a, &[-1.0]).unwrap();
        assert_eq!(g.values(), &[1.0 / 3.0]);
        assert_eq!(g.kind(), CurveKind::Grid);
    }

    #[test]
    fn refinement_then_subsample_equals_direct() {
        let f = normal_field(10, 2, LatticeOptions::default());
        let a = nelson_aalen(&birth_process(&f, Direction::Sublevel, RiskConvention::Left)).unwrap();
        let fine = linspace(-3.0, 3.0, 601);
        let coarse: Vec<f64> = fine.iter().step_by(10).copied().collect();
        let via_fine = discretize(&a, &fine).unwrap();
        let direct = discretize(&a, &coarse).unwrap();
        let sub: Vec<f64> = via_fine.values().iter().step_by(10).copied().collect();
        assert_eq!(sub, direct.values());
    }

    #[test]
    fn iid_torus_median_at_risk_level() {
        let options = LatticeOptions { boundary: Boundary::Torus, ..Default::default() };
        let fields: Vec<_> = (0..4).map(|s| normal_field(100, s, options)).collect();
        let pg = at_risk_percentile_grid(&fields, &[0.5], 200, Direction::Sublevel).unwrap();
        let expected = norm_quantile(1.0 - 0.5f64.powf(0.2));
        assert_relative_eq!(expected, -1.1289, epsilon = 1e-4);
        assert!((pg.levels[0] - expected).abs() < 0.02, "{} vs {expected}", pg.levels[0]);
        assert_eq!(pg.grid.len(), 200);
    }

    #[test]
    fn percentile_levels_decrease_in_p() {
        let fields = vec![normal_field(20, 1, LatticeOptions::default())];
        let probs = [0.999, 0.9, 0.7, 0.5, 0.3, 0.1];
        let pg = at_risk_percentile_grid(&fields, &probs, 50, Direction::Sublevel).unwrap();
        assert!(pg.levels.windows(2).all(|w| w[0] < w[1]));
        let lowest = fields[0].values().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(pg.levels[0] < lowest + 0.5);
        assert!(matches!(
            at_risk_percentile_grid(&[], &probs, 50, Direction::Sublevel),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn interpolation() {
        let c = StepCurve::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 4.0], CurveKind::Grid).unwrap();
        assert_eq!(c.interpolate(0.5), Some(1.0));
        assert_eq!(c.interpolate(2.0), Some(3.0));
        assert_eq!(c.interpolate(3.0), Some(4.0));
        assert_eq!(c.interpolate(3.5), None);
        assert!(StepCurve::new(vec![1.0, 1.0], vec![0.0, 0.0], CurveKind::Grid).is_err());
    }

    proptest! {
        #[test]
        fn hazard_is_monotone(seed in 0u64..1000, n in 2usize..12) {
            let f = normal_field(n, seed, LatticeOptions::default());
            let a = nelson_aalen(&birth_process(&f, Direction::Sublevel, RiskConvention::Left)).unwrap();
            prop_assert!(a.values().windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(a.eval(f64::NEG_INFINITY), 0.0);
            let last = *a.values().last().unwrap();
            prop_assert_eq!(a.eval(f64::INFINITY), last);
        }
    }
}
