//! Connected-component births through the sublevel (or superlevel)
//! filtration of a lattice field, as counting processes and as barcodes.

use crate::lattice::{GridIndex, LatticeField};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Filter by increasing level (components born at local minima).
    #[default]
    Sublevel,
    /// Filter by decreasing level; levels are reported negated.
    Superlevel,
}

/// How the at-risk count is evaluated at an event level u.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskConvention {
    /// Left limit Y(u⁻): z_x ≥ u and every neighbour ≥ u.
    #[default]
    Left,
    /// Literal reading: z_x ≥ u and every neighbour > u.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Birth {
    pub level: f64,
    pub location: GridIndex,
    /// At-risk count used as the denominator at this birth.
    pub at_risk: usize,
}

/// Births of connected components with the at-risk process.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthProcess {
    births: Vec<Birth>,
    /// Per cell, min(z_x, neighbours); ascending. The cell leaves the risk
    /// set once the level passes this value.
    exit_levels: Vec<f64>,
    direction: Direction,
    convention: RiskConvention,
}

impl BirthProcess {
    pub fn births(&self) -> &[Birth] {
        &self.births
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn convention(&self) -> RiskConvention {
        self.convention
    }

    /// Number of locations |𝒳|.
    pub fn size(&self) -> usize {
        self.exit_levels.len()
    }

    pub fn exit_levels(&self) -> &[f64] {
        &self.exit_levels
    }

    /// Y(t⁻) = #{x : z_x ≥ t and z_x' ≥ t for all neighbours x'}.
    pub fn at_risk(&self, t: f64) -> usize {
        let below = self.exit_levels.partition_point(|&m| m < t);
        self.exit_levels.len() - below
    }

    /// Y(t⁻)/|𝒳|.
    pub fn at_risk_fraction(&self, t: f64) -> f64 {
        self.at_risk(t) as f64 / self.size() as f64
    }
}

fn filtration_values(field: &LatticeField, direction: Direction) -> Vec<f64> {
    match direction {
        Direction::Sublevel => field.values().to_vec(),
        Direction::Superlevel => field.values().iter().map(|v| -v).collect(),
    }
}

fn minima_of(field: &LatticeField, values: &[f64]) -> Vec<(GridIndex, f64)> {
    let mut out: Vec<(GridIndex, f64)> = (0..values.len())
        .filter(|&i| {
            field
                .neighbor_list(i)
                .as_slice()
                .iter()
                .all(|&j| values[i] < values[j])
        })
        .map(|i| (field.coord(i), values[i]))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Strict local minima, ascending by level.
pub fn local_minima(field: &LatticeField) -> Vec<(GridIndex, f64)> {
    minima_of(field, field.values())
}

/// Strict local maxima, descending by level.
pub fn local_maxima(field: &LatticeField) -> Vec<(GridIndex, f64)> {
    let negated: Vec<f64> = field.values().iter().map(|v| -v).collect();
    minima_of(field, &negated)
        .into_iter()
        .map(|(at, v)| (at, -v))
        .collect()
}

/// Counting process of component births with the at-risk process.
pub fn birth_process(field: &LatticeField, direction: Direction, convention: RiskConvention) -> BirthProcess {
    let values = filtration_values(field, direction);
    let n = values.len();
    let exit: Vec<f64> = (0..n)
        .map(|i| {
            field
                .neighbor_list(i)
                .as_slice()
                .iter()
                .fold(values[i], |m, &j| m.min(values[j]))
        })
        .collect();
    let mut exit_levels = exit.clone();
    exit_levels.sort_by(f64::total_cmp);

    let births = minima_of(field, &values)
        .into_iter()
        .map(|(location, level)| {
            let below = exit_levels.partition_point(|&m| m < level);
            let left = n - below;
            let at_risk = match convention {
                RiskConvention::Left => left,
                RiskConvention::Strict => {
                    let x = field.linear(location);
                    let blocked = field
                        .neighbor_list(x)
                        .as_slice()
                        .iter()
                        .filter(|&&y| exit[y] == level)
                        .count();
                    left - blocked
                }
            };
            Birth {
                level,
                location,
                at_risk,
            }
        })
        .collect();

    BirthProcess {
        births,
        exit_levels,
        direction,
        convention,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub birth: f64,
    /// +∞ for the component that is born first.
    pub death: f64,
    pub location: GridIndex,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Barcode {
    pub intervals: Vec<Interval>,
    pub direction: Direction,
}

impl Barcode {
    /// Number of components alive at level t (β₀ of the sublevel set).
    pub fn alive_at(&self, t: f64) -> usize {
        self.intervals
            .iter()
            .filter(|iv| iv.birth <= t && t < iv.death)
            .count()
    }
}

/// Zero-dimensional barcode by union–find over cells in increasing level;
/// on a merge the younger component dies (elder rule).
pub fn barcode(field: &LatticeField, direction: Direction) -> Barcode {
    let values = filtration_values(field, direction);
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut uf = UnionFind::<usize>::new(n);
    let mut processed = vec![false; n];
    // Birth (level, interval index) of the component rooted at each representative.
    let mut birth_of: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut intervals: Vec<Interval> = Vec::new();

    for &x in &order {
        let level = values[x];
        let mut roots: Vec<usize> = field
            .neighbor_list(x)
            .as_slice()
            .iter()
            .filter(|&&y| processed[y])
            .map(|&y| uf.find_mut(y))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        processed[x] = true;

        if roots.is_empty() {
            birth_of[x] = Some((level, intervals.len()));
            intervals.push(Interval {
                birth: level,
                death: f64::INFINITY,
                location: field.coord(x),
            });
            continue;
        }

        let elder = *roots
            .iter()
            .min_by(|&&a, &&b| birth_of[a].expect("root has birth").0.total_cmp(&birth_of[b].expect("root has birth").0))
            .expect("nonempty roots");
        let survivor = birth_of[elder].expect("root has birth");
        for &r in &roots {
            if r != elder {
                let (_, idx) = birth_of[r].expect("root has birth");
                intervals[idx].death = level;
            }
        }
        for &r in &roots {
            uf.union(r, x);
        }
        let root = uf.find_mut(x);
        birth_of[root] = Some(survivor);
    }

    intervals.sort_by(|a, b| a.birth.total_cmp(&b.birth));
    Barcode { intervals, direction }
}
