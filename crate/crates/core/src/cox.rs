//! Cox proportional-hazards regression on tree event tables with delayed
//! entry and optional fixed effects.

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_solve};
use crate::nelson_aalen::{CurveKind, StepCurve};
use crate::special::quantile_sorted;
use crate::trees::{EventKind, EventTable};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

/// A group of design columns tested jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFormula {
    pub terms: Vec<Term>,
    /// Fixed-effect factor; only `tree_id` is available in event tables.
    pub factor: Option<String>,
    pub ties: Ties,
    pub max_iter: usize,
}

impl CoxFormula {
    /// One single-column term per covariate.
    pub fn new(covariates: &[&str]) -> Self {
        Self {
            terms: covariates
                .iter()
                .map(|c| Term { name: c.to_string(), columns: vec![c.to_string()] })
                .collect(),
            factor: None,
            ties: Ties::Breslow,
            max_iter: 50,
        }
    }

    pub fn with_term(mut self, name: &str, columns: &[&str]) -> Self {
        self.terms.push(Term {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        });
        self
    }

    pub fn with_factor(mut self, factor: &str) -> Self {
        self.factor = Some(factor.to_string());
        self
    }

    pub fn with_ties(mut self, ties: Ties) -> Self {
        self.ties = ties;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermTest {
    pub name: String,
    pub chi_square: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub event: EventKind,
    pub ties: Ties,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Inverse observed information, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub log_partial_likelihood: f64,
    pub null_log_partial_likelihood: f64,
    pub terms: Vec<TermTest>,
    /// Breslow cumulative baseline hazard at covariate value zero.
    pub baseline: StepCurve,
    pub hr_20_80: Vec<(String, f64)>,
    pub factor_levels: Vec<String>,
    pub iterations: usize,
    /// Log partial likelihood after each accepted step, starting at β = 0.
    pub loglik_trace: Vec<f64>,
    pub gradient_max: f64,
    pub events: usize,
    pub rows: usize,
}

const CONVERGENCE_LOGLIK: f64 = 1e-9;
const CONVERGENCE_GRADIENT: f64 = 1e-6;
/// |β|·sd beyond this marks a diverging coefficient.
const DIVERGENCE: f64 = 30.0;

/// Design in canonical row order, with centred columns for the likelihood.
struct Design {
    names: Vec<String>,
    p: usize,
    /// Row-major raw values.
    raw: Vec<f64>,
    /// Row-major centred values.
    x: Vec<f64>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    event: Vec<bool>,
    /// (term name, column range) with the factor last.
    groups: Vec<(String, std::ops::Range<usize>)>,
    factor_levels: Vec<String>,
    factor_name: Option<String>,
}

impl Design {
    fn new(table: &EventTable, formula: &CoxFormula, event: EventKind) -> Result<Self> {
        let rows = table.rows();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&rows[a], &rows[b]);
            ra.exit
                .total_cmp(&rb.exit)
                .then(ra.entry.total_cmp(&rb.entry))
                .then(ra.status.cmp(&rb.status))
                .then_with(|| ra.tree_id.cmp(&rb.tree_id))
                .then_with(|| ra.edge.cmp(&rb.edge))
                .then_with(|| {
                    ra.covariates
                        .iter()
                        .zip(&rb.covariates)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| *o != Ordering::Equal)
                        .unwrap_or(Ordering::Equal)
                })
        });

        let mut names = Vec::new();
        let mut cols = Vec::new();
        let mut groups = Vec::new();
        for term in &formula.terms {
            if term.columns.is_empty() {
                return Err(Error::domain(format!("term `{}` has no columns", term.name)));
            }
            let start = names.len();
            for c in &term.columns {
                let k = table
                    .column_index(c)
                    .ok_or_else(|| Error::domain(format!("unknown covariate `{c}`")))?;
                if names.contains(c) {
                    return Err(Error::domain(format!("covariate `{c}` used twice")));
                }
                names.push(c.clone());
                cols.push(k);
            }
            groups.push((term.name.clone(), start..names.len()));
        }
        let mut factor_levels = Vec::new();
        let n_cov = names.len();
        if let Some(f) = &formula.factor {
            if f != "tree_id" {
                return Err(Error::domain(format!("unknown factor `{f}`; only tree_id is available")));
            }
            factor_levels = rows.iter().map(|r| r.tree_id.clone()).collect();
            factor_levels.sort();
            factor_levels.dedup();
            for level in factor_levels.iter().skip(1) {
                names.push(format!("{f}={level}"));
            }
            if factor_levels.len() > 1 {
                groups.push((f.clone(), n_cov..names.len()));
            }
        }
        let p = names.len();
        let n = rows.len();
        let mut raw = vec![0.0; n * p];
        for (i, &r) in order.iter().enumerate() {
            let row = &rows[r];
            for (j, &k) in cols.iter().enumerate() {
                raw[i * p + j] = row.covariates[k];
            }
            if let Ok(l) = factor_levels.binary_search(&row.tree_id) {
                if l > 0 {
                    raw[i * p + n_cov + l - 1] = 1.0;
                }
            }
        }
        let mut x = raw.clone();
        for j in 0..p {
            let mean = (0..n).map(|i| raw[i * p + j]).sum::<f64>() / n as f64;
            for i in 0..n {
                x[i * p + j] -= mean;
            }
        }
        let design = Self {
            names,
            p,
            raw,
            x,
            entry: order.iter().map(|&r| rows[r].entry).collect(),
            exit: order.iter().map(|&r| rows[r].exit).collect(),
            event: order.iter().map(|&r| event.matches(rows[r].status)).collect(),
            groups,
            factor_levels,
            factor_name: formula.factor.clone(),
        };
        design.check_rank()?;
        Ok(design)
    }

    fn n(&self) -> usize {
        self.entry.len()
    }

    /// Modified Gram–Schmidt on the centred columns; a column whose residual
    /// is negligible relative to its norm is aliased.
    fn check_rank(&self) -> Result<()> {
        let n = self.n();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut aliased = Vec::new();
        for j in 0..self.p {
            let mut v: Vec<f64> = (0..n).map(|i| self.x[i * self.p + j]).collect();
            let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let scale = (0..n).map(|i| self.raw[i * self.p + j].abs()).fold(0.0, f64::max);
            if norm0 <= 1e-12 * scale.max(f64::MIN_POSITIVE) * (n as f64).sqrt() || norm <= 1e-9 * norm0 {
                aliased.push(self.names[j].clone());
            } else {
                basis.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        if aliased.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient(aliased))
        }
    }

    /// Distinct event radii with the indices of events at each.
    fn event_times(&self) -> Vec<(f64, Vec<usize>)> {
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in 0..self.n() {
            if self.event[i] {
                match out.last_mut() {
                    Some((t, d)) if *t == self.exit[i] => d.push(i),
                    _ => out.push((self.exit[i], vec![i])),
                }
            }
        }
        out
    }

    fn risk_set(&self, t: f64) -> impl Iterator<Item = usize> + '_ {
        let start = self.exit.partition_point(|&e| e < t);
        (start..self.n()).filter(move |&j| self.entry[j] < t)
    }
}

struct Evaluation {
    loglik: f64,
    grad: Vec<f64>,
    /// Negative Hessian, row-major.
    info: Vec<f64>,
}

fn evaluate(d: &Design, beta: &[f64], ties: Ties, times: &[(f64, Vec<usize>)]) -> Evaluation {
    let p = d.p;
    let eta: Vec<f64> = (0..d.n())
        .map(|i| (0..p).map(|k| d.x[i * p + k] * beta[k]).sum())
        .collect();
    let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let parts: Vec<Evaluation> = times
        .par_iter()
        .map(|(t, events)| {
            let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; p], vec![0.0; p * p]);
            for j in d.risk_set(*t) {
                let xj = &d.x[j * p..(j + 1) * p];
                s0 += w[j];
                for a in 0..p {
                    s1[a] += w[j] * xj[a];
                    for b in 0..=a {
                        s2[a * p + b] += w[j] * xj[a] * xj[b];
                    }
                }
            }
            let mut e = Evaluation { loglik: 0.0, grad: vec![0.0; p], info: vec![0.0; p * p] };
            let (mut d0, mut d1, mut d2) = (0.0, vec![0.0; p], vec![0.0; p * p]);
            for &i in events {
                let xi = &d.x[i * p..(i + 1) * p];
                e.loglik += eta[i];
                for a in 0..p {
                    e.grad[a] += xi[a];
                }
                if ties == Ties::Efron {
                    d0 += w[i];
                    for a in 0..p {
                        d1[a] += w[i] * xi[a];
                        for b in 0..=a {
                            d2[a * p + b] += w[i] * xi[a] * xi[b];
                        }
                    }
                }
            }
            let m = events.len();
            let reps: Vec<f64> = match ties {
                Ties::Breslow => vec![0.0],
                Ties::Efron => (0..m).map(|k| k as f64 / m as f64).collect(),
            };
            let weight = match ties {
                Ties::Breslow => m as f64,
                Ties::Efron => 1.0,
            };
            for phi in reps {
                let z0 = s0 - phi * d0;
                e.loglik -= weight * z0.ln();
                for a in 0..p {
                    let ma = (s1[a] - phi * d1[a]) / z0;
                    e.grad[a] -= weight * ma;
                    for b in 0..=a {
                        let mb = (s1[b] - phi * d1[b]) / z0;
                        e.info[a * p + b] += weight * ((s2[a * p + b] - phi * d2[a * p + b]) / z0 - ma * mb);
                    }
                }
            }
            e
        })
        .collect();
    let mut total = Evaluation { loglik: 0.0, grad: vec![0.0; p], info: vec![0.0; p * p] };
    for e in parts {
        total.loglik += e.loglik;
        total.grad.iter_mut().zip(&e.grad).for_each(|(a, b)| *a += b);
        total.info.iter_mut().zip(&e.info).for_each(|(a, b)| *a += b);
    }
    for a in 0..p {
        for b in 0..a {
            total.info[b * p + a] = total.info[a * p + b];
        }
    }
    total
}

fn to_mat(v: &[f64], p: usize) -> Mat<f64> {
    Mat::from_fn(p, p, |i, j| v[i * p + j])
}

fn newton_step(info: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let p = grad.len();
    let mut m = to_mat(info, p);
    let trace = (0..p).map(|i| m[(i, i)].abs()).sum::<f64>().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..20 {
        if let Ok(s) = spd_solve(&m, grad) {
            return Ok(s);
        }
        ridge = if ridge == 0.0 { 1e-10 * trace } else { ridge * 10.0 };
        for i in 0..p {
            m[(i, i)] = info[i * p + i] + ridge;
        }
    }
    Err(Error::Factorization("observed information is not positive definite".into()))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits the Cox model by Newton–Raphson with step-halving.
pub fn cox_fit(table: &EventTable, event: EventKind, formula: &CoxFormula) -> Result<CoxFit> {
    let d = Design::new(table, formula, event)?;
    let events = d.event.iter().filter(|e| **e).count();
    if events == 0 {
        return Err(Error::domain(format!("no {event:?} events in the table")));
    }
    let times = d.event_times();
    let p = d.p;
    let sd: Vec<f64> = (0..p)
        .map(|k| ((0..d.n()).map(|i| d.x[i * p + k].powi(2)).sum::<f64>() / d.n() as f64).sqrt())
        .collect();

    let mut beta = vec![0.0; p];
    let mut cur = evaluate(&d, &beta, formula.ties, &times);
    let null_loglik = cur.loglik;
    let mut trace = vec![cur.loglik];
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    loop {
        if p == 0 {
            break;
        }
        let step = newton_step(&cur.info, &cur.grad)?;
        // Twice the quadratic-model gain; below this the log-PL difference
        // of a step is rounding noise.
        let predicted: f64 = cur.grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let stationary = predicted <= 1e3 * f64::EPSILON * (1.0 + cur.loglik.abs());
        let small_gradient = max_abs(&cur.grad) < CONVERGENCE_GRADIENT;
        if (change < CONVERGENCE_LOGLIK || iterations == 0) && (small_gradient || stationary) && (iterations > 0 || (small_gradient && stationary)) {
            break;
        }
        if iterations == formula.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                best: beta,
                detail: format!("Cox partial likelihood: gradient max-norm {:.3e}", max_abs(&cur.grad)),
            });
        }
        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let e = evaluate(&d, &cand, formula.ties, &times);
            if e.loglik.is_finite() && e.loglik >= cur.loglik {
                accepted = Some((cand, e));
                break;
            }
            scale /= 2.0;
        }
        let Some((cand, next)) = accepted else {
            if stationary {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                best: beta,
                detail: format!("step-halving stalled; gradient max-norm {:.3e}", max_abs(&cur.grad)),
            });
        };
        change = (next.loglik - cur.loglik).abs() / (cur.loglik.abs() + 1e-12);
        beta = cand;
        cur = next;
        trace.push(cur.loglik);
        if let Some(k) = (0..p).find(|&k| beta[k].abs() * sd[k] > DIVERGENCE) {
            return Err(Error::MonotoneLikelihood { column: d.names[k].clone(), value: beta[k] });
        }
    }

    // A converged but effectively infinite coefficient: doubling it does
    // not lower the likelihood.
    for k in 0..p {
        if beta[k].abs() * sd[k] > 5.0 {
            let mut doubled = beta.clone();
            doubled[k] *= 2.0;
            if evaluate(&d, &doubled, formula.ties, &times).loglik >= cur.loglik - 1e-8 {
                return Err(Error::MonotoneLikelihood { column: d.names[k].clone(), value: beta[k] });
            }
        }
    }

    let cov = if p == 0 { Mat::zeros(0, 0) } else { spd_inverse(&to_mat(&cur.info, p))? };
    let covariance: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect();
    let std_errors = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let terms = d
        .groups
        .iter()
        .map(|(name, range)| {
            let k = range.len();
            let sub = Mat::from_fn(k, k, |i, j| cov[(range.start + i, range.start + j)]);
            let b = &beta[range.clone()];
            let chi_square = match spd_solve(&sub, b) {
                Ok(s) => b.iter().zip(&s).map(|(x, y)| x * y).sum(),
                Err(_) => f64::NAN,
            };
            let p_value = ChiSquared::new(k as f64).map(|c| c.sf(chi_square)).unwrap_or(f64::NAN);
            TermTest { name: name.clone(), chi_square, df: k, p_value }
        })
        .collect();
    let baseline = breslow_baseline(&d, &beta, formula.ties, &times)?;
    let mut fit = CoxFit {
        event,
        ties: formula.ties,
        names: d.names.clone(),
        coefficients: beta,
        std_errors,
        covariance,
        log_partial_likelihood: cur.loglik,
        null_log_partial_likelihood: null_loglik,
        terms,
        baseline,
        hr_20_80: Vec::new(),
        factor_levels: d.factor_levels.clone(),
        iterations,
        loglik_trace: trace,
        gradient_max: max_abs(&cur.grad),
        events,
        rows: d.n(),
    };
    fit.hr_20_80 = hr_from_design(&fit, &d);
    Ok(fit)
}

fn breslow_baseline(d: &Design, beta: &[f64], ties: Ties, times: &[(f64, Vec<usize>)]) -> Result<StepCurve> {
    if times.is_empty() {
        return Ok(StepCurve::empty(CurveKind::Step));
    }
    let p = d.p;
    let w: Vec<f64> = (0..d.n())
        .map(|i| (0..p).map(|k| d.raw[i * p + k] * beta[k]).sum::<f64>().exp())
        .collect();
    let jumps: Vec<f64> = times
        .iter()
        .map(|(t, events)| {
            let s0: f64 = d.risk_set(*t).map(|j| w[j]).sum();
            let m = events.len();
            match ties {
                Ties::Breslow => m as f64 / s0,
                Ties::Efron => {
                    let d0: f64 = events.iter().map(|&i| w[i]).sum();
                    (0..m).map(|k| 1.0 / (s0 - k as f64 / m as f64 * d0)).sum()
                }
            }
        })
        .collect();
    StepCurve::from_jumps(times.iter().map(|(t, _)| *t).collect(), &jumps)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn range_20_80(v: Vec<f64>) -> f64 {
    let s = sorted(v);
    quantile_sorted(&s, 0.8) - quantile_sorted(&s, 0.2)
}

fn hr_from_design(fit: &CoxFit, d: &Design) -> Vec<(String, f64)> {
    let p = d.p;
    let n = d.n();
    let mut out = Vec::new();
    for (name, range) in &d.groups {
        let is_factor = d.factor_name.as_deref() == Some(name.as_str()) && range.end == p && !d.factor_levels.is_empty();
        let hr = if is_factor {
            let mut effects = vec![0.0];
            effects.extend_from_slice(&fit.coefficients[range.clone()]);
            range_20_80(effects).exp()
        } else if range.len() == 1 {
            let k = range.start;
            let gap = range_20_80((0..n).map(|i| d.raw[i * p + k]).collect());
            if gap == 0.0 {
                log::warn!("covariate `{name}` has equal 20% and 80% quantiles; hazard ratio set to 1");
                1.0
            } else {
                (fit.coefficients[k] * gap).exp()
            }
        } else {
            range_20_80(
                (0..n)
                    .map(|i| range.clone().map(|k| d.raw[i * p + k] * fit.coefficients[k]).sum())
                    .collect(),
            )
            .exp()
        };
        out.push((name.clone(), hr));
    }
    out
}

/// Hazard ratios between the 20% and 80% points of each term, using the
/// covariate distribution over the table rows. Single columns give
/// exp{β(q₀.₈ − q₀.₂)}; grouped columns and the fixed-effect factor give the
/// exponentiated 20–80 range of the term's contribution.
pub fn hazard_ratio_20_80(fit: &CoxFit, table: &EventTable, formula: &CoxFormula) -> Result<Vec<(String, f64)>> {
    let d = Design::new(table, formula, fit.event)?;
    if d.names != fit.names {
        return Err(Error::domain("formula does not match the fitted model"));
    }
    Ok(hr_from_design(fit, &d))
}

/// Max discrepancy of the analytic gradient and Hessian from central finite
/// differences (step 10⁻⁵), relative to max(|analytic|, 1).
pub fn gradient_check(table: &EventTable, event: EventKind, formula: &CoxFormula, beta: &[f64]) -> Result<f64> {
    let d = Design::new(table, formula, event)?;
    if beta.len() != d.p {
        return Err(Error::domain(format!("beta has {} entries, design has {} columns", beta.len(), d.p)));
    }
    let times = d.event_times();
    let p = d.p;
    let h = 1e-5;
    let at = evaluate(&d, beta, formula.ties, &times);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(1.0);
    for k in 0..p {
        let mut bp = beta.to_vec();
        let mut bm = beta.to_vec();
        bp[k] += h;
        bm[k] -= h;
        let (ep, em) = (evaluate(&d, &bp, formula.ties, &times), evaluate(&d, &bm, formula.ties, &times));
        worst = worst.max(rel(at.grad[k], (ep.loglik - em.loglik) / (2.0 * h)));
        for a in 0..p {
            let fd = (ep.grad[a] - em.grad[a]) / (2.0 * h);
            worst = worst.max(rel(-at.info[a * p + k], fd));
        }
    }
    Ok(worst)
}

/// Log partial likelihood at `beta`.
pub fn log_partial_likelihood(table: &EventTable, event: EventKind, formula: &CoxFormula, beta: &[f64]) -> Result<f64> {
    let d = Design::new(table, formula, event)?;
    if beta.len() != d.p {
        return Err(Error::domain(format!("beta has {} entries, design has {} columns", beta.len(), d.p)));
    }
    Ok(evaluate(&d, beta, formula.ties, &d.event_times()).loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::trees::{build_event_table, grow_tree, EdgeStatus, EventRow, TreeGrowth};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn row(id: &str, entry: f64, exit: f64, status: EdgeStatus, x: Vec<f64>) -> EventRow {
        EventRow { tree_id: "t".into(), edge: id.into(), entry, exit, status, covariates: x }
    }

    fn random_table(seed: u64, n: usize, p: usize) -> EventTable {
        let mut rng = stream_rng(seed, 9);
        let rows = (0..n)
            .map(|i| {
                let entry = rng.random_range(0.0..2.0);
                let exit = entry + rng.random_range(0.05..3.0);
                let status = [EdgeStatus::Leaf, EdgeStatus::Branch, EdgeStatus::Censored][rng.random_range(0..3)];
                EventRow {
                    tree_id: format!("g{}", i % 3),
                    edge: format!("e{i}"),
                    entry,
                    exit,
                    status,
                    covariates: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
                }
            })
            .collect();
        EventTable::new((0..p).map(|k| format!("x{k}")).collect(), rows).unwrap()
    }

    fn grown_table(seed: u64, min_edges: usize) -> EventTable {
        let g = TreeGrowth::default();
        let mut trees = Vec::new();
        let mut edges = 0;
        let mut k = 0;
        while edges < min_edges {
            let t = grow_tree(&g, format!("{seed}-{k:04}"), crate::rng::derive_seed(seed, &[k])).unwrap();
            edges += t.edges().len();
            trees.push(t);
            k += 1;
        }
        build_event_table(&trees, 1.0).unwrap()
    }

    #[test]
    fn two_edges_without_covariates() {
        let t = EventTable::new(
            vec![],
            vec![row("a", 0.0, 1.0, EdgeStatus::Leaf, vec![]), row("b", 0.0, 2.0, EdgeStatus::Leaf, vec![])],
        )
        .unwrap();
        let fit = cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&[])).unwrap();
        assert_relative_eq!(fit.log_partial_likelihood, -(2f64.ln()), max_relative = 1e-15);
        assert_eq!(fit.baseline.jumps(), vec![0.5, 1.0]);
        assert_eq!(gradient_check(&t, EventKind::Leaf, &CoxFormula::new(&[]), &[]).unwrap(), 0.0);
    }

    #[test]
    fn score_at_null() {
        let t = EventTable::new(
            vec!["x".into()],
            vec![
                row("a", 0.0, 1.0, EdgeStatus::Leaf, vec![1.0]),
                row("b", 0.0, 2.0, EdgeStatus::Censored, vec![0.0]),
                row("c", 0.5, 3.0, EdgeStatus::Censored, vec![0.0]),
                row("d", 1.5, 3.0, EdgeStatus::Censored, vec![1.0]),
            ],
        )
        .unwrap();
        let d = Design::new(&t, &CoxFormula::new(&["x"]), EventKind::Leaf).unwrap();
        let e = evaluate(&d, &[0.0], Ties::Breslow, &d.event_times());
        // Risk set at r = 1 is {a, b, c}; d has not entered yet.
        assert_relative_eq!(e.grad[0], 1.0 - 1.0 / 3.0, max_relative = 1e-12);
    }

    /// Direct partial likelihood for one covariate, no ties.
    fn naive_pl(rows: &[(f64, f64, bool, f64)], beta: f64) -> f64 {
        rows.iter()
            .filter(|r| r.2)
            .map(|&(_, t, _, x)| {
                let denom: f64 = rows.iter().filter(|r| r.0 < t && t <= r.1).map(|r| (beta * r.3).exp()).sum();
                beta * x - denom.ln()
            })
            .sum()
    }

    #[test]
    fn binary_covariate_matches_grid_search() {
        let mut rng = stream_rng(77, 0);
        let raw: Vec<(f64, f64, bool, f64)> = (0..60)
            .map(|_| {
                let x = rng.random_range(0..2) as f64;
                let entry = rng.random_range(0.0..0.5);
                (entry, entry + rng.random_range(0.1..3.0) / (1.0 + x), rng.random::<f64>() < 0.7, x)
            })
            .collect();
        let rows = raw
            .iter()
            .enumerate()
            .map(|(i, r)| row(&i.to_string(), r.0, r.1, if r.2 { EdgeStatus::Leaf } else { EdgeStatus::Censored }, vec![r.3]))
            .collect();
        let t = EventTable::new(vec!["x".into()], rows).unwrap();
        let fit = cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&["x"])).unwrap();
        let argmax = |lo: f64, hi: f64, step: f64| {
            let n = ((hi - lo) / step).round() as usize;
            (0..=n).map(|k| lo + k as f64 * step).max_by(|a, b| naive_pl(&raw, *a).total_cmp(&naive_pl(&raw, *b))).unwrap()
        };
        let coarse = argmax(-3.0, 3.0, 1e-2);
        let fine = argmax(coarse - 0.02, coarse + 0.02, 1e-5);
        assert!((fit.coefficients[0] - fine).abs() < 1e-4, "{} vs {fine}", fit.coefficients[0]);
        assert_relative_eq!(fit.log_partial_likelihood, naive_pl(&raw, fit.coefficients[0]), max_relative = 1e-10);
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn aliased_columns_are_named() {
        let mut t = random_table(3, 40, 2);
        let doubled: Vec<f64> = t.column("x0").unwrap().iter().map(|v| 2.0 * v + 1.0).collect();
        t.add_column("x0_twice", &doubled).unwrap();
        let const_col = vec![4.0; 40];
        t.add_column("k", &const_col).unwrap();
        match cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&["x0", "x1", "x0_twice", "k"])) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["x0_twice".to_string(), "k".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn separated_data_is_monotone() {
        // Every event has x = 1 and every censored edge x = 0, with the
        // events always earliest: the likelihood increases without bound.
        let rows = (0..20)
            .map(|i| {
                let ev = i % 2 == 0;
                row(&i.to_string(), 0.0, if ev { 1.0 + i as f64 * 0.01 } else { 5.0 + i as f64 * 0.01 }, if ev { EdgeStatus::Leaf } else { EdgeStatus::Censored }, vec![ev as u8 as f64])
            })
            .collect();
        let t = EventTable::new(vec!["x".into()], rows).unwrap();
        assert!(matches!(
            cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&["x"])),
            Err(Error::MonotoneLikelihood { .. })
        ));
    }

    #[test]
    fn invariances() {
        let t = grown_table(5, 300);
        let f = CoxFormula::new(&["width", "euclid"]);
        let base = cox_fit(&t, EventKind::Leaf, &f).unwrap();

        let mut shifted = t.clone();
        let mut scaled = t.clone();
        let k = t.column_index("width").unwrap();
        for r in shifted.rows_mut() {
            r.covariates[k] += 100.0;
        }
        for r in scaled.rows_mut() {
            r.covariates[k] *= 4.0;
        }
        let s = cox_fit(&shifted, EventKind::Leaf, &f).unwrap();
        assert_relative_eq!(s.coefficients[0], base.coefficients[0], max_relative = 1e-7);
        assert_relative_eq!(s.std_errors[0], base.std_errors[0], max_relative = 1e-7);
        assert_relative_eq!(s.hr_20_80[0].1, base.hr_20_80[0].1, max_relative = 1e-7);
        let c = cox_fit(&scaled, EventKind::Leaf, &f).unwrap();
        assert_relative_eq!(c.coefficients[0], base.coefficients[0] / 4.0, max_relative = 1e-7);
        assert_relative_eq!(c.hr_20_80[0].1, base.hr_20_80[0].1, max_relative = 1e-7);

        let mut permuted = t.clone();
        permuted.rows_mut().reverse();
        let p = cox_fit(&permuted, EventKind::Leaf, &f).unwrap();
        assert_eq!(p, base);
    }

    #[test]
    fn binary_hazard_ratio_is_exp_beta() {
        let mut t = grown_table(8, 200);
        let ind: Vec<f64> = (0..t.len()).map(|i| (i % 2) as f64).collect();
        t.add_column("b", &ind).unwrap();
        let f = CoxFormula::new(&["b", "width"]);
        let fit = cox_fit(&t, EventKind::Leaf, &f).unwrap();
        assert_relative_eq!(fit.hr_20_80[0].1, fit.coefficients[0].exp(), max_relative = 1e-12);
        assert_eq!(hazard_ratio_20_80(&fit, &t, &f).unwrap(), fit.hr_20_80);
    }

    #[test]
    fn grouped_term_and_factor() {
        let mut t = grown_table(11, 400);
        let az = t.column("azimuth").unwrap();
        t.add_column("az1", &az.iter().map(|a| a.cos()).collect::<Vec<_>>()).unwrap();
        t.add_column("az2", &az.iter().map(|a| (2.0 * a).cos()).collect::<Vec<_>>()).unwrap();
        for (i, r) in t.rows_mut().iter_mut().enumerate() {
            r.tree_id = format!("g{}", i % 3);
        }
        let f = CoxFormula::new(&["width"]).with_term("azimuth", &["az1", "az2"]).with_factor("tree_id");
        let fit = cox_fit(&t, EventKind::Leaf, &f).unwrap();
        let df: Vec<(String, usize)> = fit.terms.iter().map(|x| (x.name.clone(), x.df)).collect();
        assert_eq!(df, vec![("width".into(), 1), ("azimuth".into(), 2), ("tree_id".into(), 2)]);
        assert_eq!(fit.names[3..], ["tree_id=g1".to_string(), "tree_id=g2".to_string()]);
        let effects = sorted(vec![0.0, fit.coefficients[3], fit.coefficients[4]]);
        let expected = (quantile_sorted(&effects, 0.8) - quantile_sorted(&effects, 0.2)).exp();
        assert_relative_eq!(fit.hr_20_80[2].1, expected, max_relative = 1e-12);
        assert!(fit.hr_20_80.iter().all(|(_, h)| *h > 0.0));
        assert!(matches!(
            cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&["width"]).with_factor("patient")),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn efron_equals_breslow_without_ties() {
        let t = random_table(12, 50, 2);
        let f = CoxFormula::new(&["x0", "x1"]);
        let b = cox_fit(&t, EventKind::Leaf, &f).unwrap();
        let e = cox_fit(&t, EventKind::Leaf, &f.clone().with_ties(Ties::Efron)).unwrap();
        assert_relative_eq!(b.coefficients[0], e.coefficients[0], max_relative = 1e-10);
    }

    #[test]
    fn efron_gradient_with_ties() {
        let mut t = random_table(13, 60, 2);
        for r in t.rows_mut() {
            r.exit = (r.exit * 4.0).ceil() / 4.0;
            r.entry = r.entry.min(r.exit - 0.1);
        }
        let f = CoxFormula::new(&["x0", "x1"]).with_ties(Ties::Efron);
        assert!(gradient_check(&t, EventKind::Leaf, &f, &[0.4, -0.8]).unwrap() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0, b2 in -1.0f64..1.0) {
            let t = random_table(seed, 80, 3);
            let f = CoxFormula::new(&["x0", "x1", "x2"]);
            prop_assert!(gradient_check(&t, EventKind::Leaf, &f, &[0.0; 3]).unwrap() < 1e-6);
            prop_assert!(gradient_check(&t, EventKind::Branch, &f, &[b0, b1, b2]).unwrap() < 1e-5);
        }

        #[test]
        fn loglik_never_decreases(seed in 0u64..1000) {
            let t = random_table(seed, 60, 2);
            let fit = cox_fit(&t, EventKind::Leaf, &CoxFormula::new(&["x0", "x1"])).unwrap();
            prop_assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(fit.gradient_max < 1e-5);
        }
    }
}
