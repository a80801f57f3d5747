//! Rectangular lattice fields with configurable neighbourhoods.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    /// Cells sharing an edge.
    #[default]
    Edge4,
    /// Cells sharing an edge or a vertex.
    Vertex8,
}

impl Neighborhood {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const EDGE4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const VERTEX8: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Neighborhood::Edge4 => &EDGE4,
            Neighborhood::Vertex8 => &VERTEX8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatticeOptions {
    pub boundary: Boundary,
    pub neighborhood: Neighborhood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl GridIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Up to eight neighbour indices without allocation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NeighborList {
    idx: [usize; 8],
    len: usize,
}

impl NeighborList {
    pub(crate) fn as_slice(&self) -> &[usize] {
        &self.idx[..self.len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    options: LatticeOptions,
    ties_broken: usize,
}

impl LatticeField {
    /// Builds a field from row-major values. Non-finite values are rejected;
    /// tied values are separated by a rank·ε perturbation in row-major order
    /// with ε = 10⁻⁹ × (data range).
    pub fn new(nrows: usize, ncols: usize, values: Vec<f64>, options: LatticeOptions) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::domain("lattice dimensions must be positive"));
        }
        if values.len() != nrows * ncols {
            return Err(Error::domain(format!(
                "expected {} values for a {nrows}x{ncols} lattice, got {}",
                nrows * ncols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value {} at row {}, col {}",
                values[i],
                i / ncols,
                i % ncols
            )));
        }
        let mut field = Self {
            nrows,
            ncols,
            values,
            options,
            ties_broken: 0,
        };
        field.break_ties();
        Ok(field)
    }

    fn break_ties(&mut self) {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        let eps = if range > 0.0 { 1e-9 * range } else { 1e-9 * lo.abs().max(1.0) };
        let mut total = 0;
        // A perturbation can in principle land on another value; repeat until distinct.
        for _ in 0..8 {
            let mut order: Vec<usize> = (0..self.values.len()).collect();
            order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(a.cmp(&b)));
            let mut changed = 0;
            let mut i = 0;
            while i < order.len() {
                let mut j = i + 1;
                while j < order.len() && self.values[order[j]] == self.values[order[i]] {
                    j += 1;
                }
                for (rank, &idx) in order[i..j].iter().enumerate().skip(1) {
                    self.values[idx] += rank as f64 * eps;
                    changed += 1;
                }
                i = j;
            }
            total += changed;
            if changed == 0 {
                break;
            }
        }
        if total > 0 {
            log::warn!("broke {total} tied field values with a {eps:.3e} rank perturbation");
        }
        self.ties_broken = total;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn options(&self) -> LatticeOptions {
        self.options
    }

    pub fn boundary(&self) -> Boundary {
        self.options.boundary
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.options.neighborhood
    }

    /// Number of values altered by tie-breaking at construction.
    pub fn ties_broken(&self) -> usize {
        self.ties_broken
    }

    pub fn value(&self, at: GridIndex) -> f64 {
        self.values[self.linear(at)]
    }

    pub fn linear(&self, at: GridIndex) -> usize {
        at.row * self.ncols + at.col
    }

    pub fn coord(&self, linear: usize) -> GridIndex {
        GridIndex::new(linear / self.ncols, linear % self.ncols)
    }

    /// The same lattice with every value negated (the superlevel filtration
    /// of `self` is the sublevel filtration of the result).
    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn neighbor_list(&self, linear: usize) -> NeighborList {
        neighbor_list(self.nrows, self.ncols, self.options, linear)
    }

    /// Neighbours of `at`: dropped at open edges, wrapped on a torus.
    pub fn neighbors(&self, at: GridIndex) -> Result<Vec<GridIndex>> {
        if at.row >= self.nrows || at.col >= self.ncols {
            return Err(Error::domain(format!(
                "index ({}, {}) outside {}x{} lattice",
                at.row, at.col, self.nrows, self.ncols
            )));
        }
        Ok(self
            .neighbor_list(self.linear(at))
            .as_slice()
            .iter()
            .map(|&i| self.coord(i))
            .collect())
    }

    /// Cells with value ≤ t, row-major.
    pub fn sublevel_mask(&self, t: f64) -> Vec<bool> {
        self.values.iter().map(|&v| v <= t).collect()
    }

    pub fn read_csv(path: &Path, options: LatticeOptions) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, options, &path.display().to_string())
    }

    pub fn from_csv_reader(reader: impl Read, options: LatticeOptions, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut values = Vec::new();
        let mut ncols = None;
        let mut nrows = 0;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(nrows + 1, |p| p.line() as usize);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            match ncols {
                None => ncols = Some(record.len()),
                Some(n) if n != record.len() => {
                    return Err(Error::parse(
                        format!("{source}:{line}"),
                        format!("expected {n} fields, found {}", record.len()),
                    ))
                }
                _ => {}
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::parse(format!("{source}:{line} field {}", k + 1), format!("not a number: `{field}`"))
                })?;
                values.push(v);
            }
            nrows += 1;
        }
        let ncols = ncols.ok_or_else(|| Error::parse(source, "empty grid"))?;
        Self::new(nrows, ncols, values, options)
    }

    /// Reads a raw little-endian f64 array with a JSON sidecar `{nrows, ncols}`.
    pub fn read_raw(path: &Path, sidecar: &Path, options: LatticeOptions) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dims {
            nrows: usize,
            ncols: usize,
        }
        let dims: Dims = serde_json::from_reader(std::fs::File::open(sidecar)?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != dims.nrows * dims.ncols * 8 {
            return Err(Error::parse(
                path.display().to_string(),
                format!(
                    "expected {} bytes for {}x{} f64 values, found {}",
                    dims.nrows * dims.ncols * 8,
                    dims.nrows,
                    dims.ncols,
                    bytes.len()
                ),
            ));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(dims.nrows, dims.ncols, values, options)
    }

    /// Loads `.csv` grids directly and anything else as raw f64 with a
    /// `<path>.json` sidecar.
    pub fn load(path: &Path, options: LatticeOptions) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(path, options)
        } else {
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".json");
            Self::read_raw(path, Path::new(&sidecar), options)
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        for r in 0..self.nrows {
            let row = &self.values[r * self.ncols..(r + 1) * self.ncols];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn neighbor_list(nrows: usize, ncols: usize, options: LatticeOptions, linear: usize) -> NeighborList {
    let (r, c) = ((linear / ncols) as isize, (linear % ncols) as isize);
    let (nr, nc) = (nrows as isize, ncols as isize);
    let mut out = NeighborList { idx: [0; 8], len: 0 };
    for &(dr, dc) in options.neighborhood.offsets() {
        let (mut rr, mut cc) = (r + dr, c + dc);
        match options.boundary {
            Boundary::Open => {
                if rr < 0 || rr >= nr || cc < 0 || cc >= nc {
                    continue;
                }
            }
            Boundary::Torus => {
                rr = rr.rem_euclid(nr);
                cc = cc.rem_euclid(nc);
            }
        }
        let idx = (rr * nc + cc) as usize;
        if idx != linear && !out.idx[..out.len].contains(&idx) {
            out.idx[out.len] = idx;
            out.len += 1;
        }
    }
    out
}
