//! Derivative-free direct search (Nelder–Mead) inside a box.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_evals: usize,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter below this.
    pub x_tol: f64,
    pub initial_step: f64,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Every accepted best point, in order.
    pub trace: Vec<(Vec<f64>, f64)>,
}

impl NelderMead {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            lower,
            upper,
            max_evals: 2000,
            f_tol: 1e-10,
            x_tol: 1e-7,
            initial_step: 0.25,
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Minimizes `f` from `start`. Non-finite values are treated as +∞.
    pub fn minimize(&self, start: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Result<Minimum> {
        let n = start.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() { v } else { f64::INFINITY }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut x0 = start.to_vec();
        self.project(&mut x0);
        simplex.push(x0.clone());
        for i in 0..n {
            let mut x = x0.clone();
            let span = self.upper[i] - self.lower[i];
            let step = self.initial_step * span.min(1.0).max(1e-3);
            x[i] = if x[i] + step <= self.upper[i] { x[i] + step } else { x[i] - step };
            self.project(&mut x);
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
        let mut trace = Vec::new();

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            if trace.last().is_none_or(|(_, v): &(Vec<f64>, f64)| values[0] < *v) {
                trace.push((simplex[0].clone(), values[0]));
            }

            let spread = values[n] - values[0];
            let diameter = simplex
                .iter()
                .skip(1)
                .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if values[0].is_finite() && spread.abs() <= self.f_tol * (1.0 + values[0].abs()) && diameter <= self.x_tol {
                return Ok(Minimum {
                    x: simplex[0].clone(),
                    value: values[0],
                    evaluations: evals,
                    trace,
                });
            }
            if evals >= self.max_evals {
                return Err(Error::NonConvergence {
                    iterations: evals,
                    best: simplex[0].clone(),
                    detail: format!("simplex spread {spread:.3e}, diameter {diameter:.3e}, best value {}", values[0]),
                });
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut x: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect();
                self.project(&mut x);
                x
            };

            let xr = along(1.0);
            let fr = eval(&xr, &mut evals);
            if fr < values[0] {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            for i in 1..=n {
                let x: Vec<f64> = simplex[i]
                    .iter()
                    .zip(&simplex[0])
                    .map(|(v, b)| b + 0.5 * (v - b))
                    .collect();
                values[i] = eval(&x, &mut evals);
                simplex[i] = x;
            }
        }
    }
}
