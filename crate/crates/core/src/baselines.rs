//! Classical ISTA for real-valued LASSO problems.

use crate::error::{Error, Result};
use crate::net::prox::soft_scalar;
use crate::rng::SeededRng;

/// `min_x 0.5 ||A x - y||^2 + lambda ||x||_1` with a dense row-major `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoProblem {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    y: Vec<f64>,
    lambda: f64,
    lipschitz: f64,
}

impl LassoProblem {
    /// Builds the problem and estimates `L = lambda_max(A^T A)` by power iteration.
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, y: Vec<f64>, lambda: f64) -> Result<Self> {
        if a.len() != rows * cols || y.len() != rows {
            return Err(Error::dim(format!(
                "A has {} entries and y has {}, expected {rows}x{cols} and {rows}",
                a.len(),
                y.len()
            )));
        }
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut p = Self {
            rows,
            cols,
            a,
            y,
            lambda,
            lipschitz: 0.0,
        };
        p.lipschitz = p.power_iteration();
        Ok(p)
    }

    /// Standard-normal `A` and `y`.
    pub fn random_gaussian(
        rows: usize,
        cols: usize,
        lambda: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let a = (0..rows * cols).map(|_| rng.normal()).collect();
        let y = (0..rows).map(|_| rng.normal()).collect();
        Self::new(rows, cols, a, y, lambda)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn observation(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Largest eigenvalue of `A^T A`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &ri) in self.a.chunks(self.cols).zip(r) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * ri;
            }
        }
        out
    }

    /// `A^T (A x - y)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self
            .apply(x)
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a - b)
            .collect();
        self.apply_transpose(&r)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let fit: f64 = self
            .apply(x)
            .iter()
            .zip(&self.y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        0.5 * fit + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// At most 100 iterations, stopping once the Rayleigh quotient changes by
    /// less than 1e-10 relative.
    fn power_iteration(&self) -> f64 {
        if self.cols == 0 || self.rows == 0 {
            return 0.0;
        }
        let mut v = vec![1.0 / (self.cols as f64).sqrt(); self.cols];
        let mut estimate = 0.0;
        for _ in 0..100 {
            let w = self.apply_transpose(&self.apply(&v));
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = w.into_iter().map(|x| x / norm).collect();
            let done = (next - estimate).abs() <= 1e-10 * next.abs();
            estimate = next;
            if done {
                break;
            }
        }
        // the Rayleigh quotient approaches from below; use the final vector's norm
        let w = self.apply_transpose(&self.apply(&v));
        w.iter().map(|x| x * x).sum::<f64>().sqrt().max(estimate)
    }
}

/// Iterates and objective values of an ISTA run.
#[derive(Clone, Debug, PartialEq)]
pub struct IstaRun {
    pub solution: Vec<f64>,
    /// `objective[0]` is at `x0`, then one entry per step.
    pub objective: Vec<f64>,
}

/// `x <- soft(x - t A^T (A x - y), lambda t)`, repeated `steps` times.
pub fn ista_solve(problem: &LassoProblem, x0: &[f64], steps: usize, t: f64) -> Result<IstaRun> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::arg(format!("step size must be > 0, got {t}")));
    }
    if x0.len() != problem.cols {
        return Err(Error::dim(format!(
            "x0 has {} entries, expected {}",
            x0.len(),
            problem.cols
        )));
    }
    let mut x = x0.to_vec();
    let mut objective = Vec::with_capacity(steps + 1);
    objective.push(problem.objective(&x));
    let thresh = problem.lambda * t;
    for _ in 0..steps {
        let g = problem.gradient(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi = soft_scalar(*xi - t * gi, thresh);
        }
        objective.push(problem.objective(&x));
    }
    Ok(IstaRun {
        solution: x,
        objective,
    })
}

/// Reference LASSO solver: cyclic coordinate descent with exact 1D
/// minimization, run until no coordinate moves by more than `tol`.
///
/// Shares no code with the proximal-gradient path, so it serves as an
/// independent oracle for [`ista_solve`].
pub fn coordinate_descent(p: &LassoProblem, max_sweeps: usize, tol: f64) -> Vec<f64> {
    let (m, n) = (p.rows(), p.cols());
    let a = p.matrix();
    let col_sq: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| a[i * n + j].powi(2)).sum())
        .collect();
    let mut x = vec![0.0; n];
    let mut r = p.observation().to_vec();
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for j in 0..n {
            let rho: f64 = (0..m).map(|i| a[i * n + j] * r[i]).sum::<f64>() + col_sq[j] * x[j];
            let new = if rho > p.lambda() {
                (rho - p.lambda()) / col_sq[j]
            } else if rho < -p.lambda() {
                (rho + p.lambda()) / col_sq[j]
            } else {
                0.0
            };
            let d = new - x[j];
            if d != 0.0 {
                for i in 0..m {
                    r[i] -= a[i * n + j] * d;
                }
                x[j] = new;
            }
            moved = moved.max(d.abs());
        }
        if moved <= tol {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_problem(seed: u64, rows: usize, cols: usize, lambda: f64) -> LassoProblem {
        LassoProblem::random_gaussian(rows, cols, lambda, &mut SeededRng::new(seed, 0)).unwrap()
    }

    /// Largest eigenvalue by Jacobi rotation of the explicit Gram matrix.
    fn jacobi_max_eigenvalue(p: &LassoProblem) -> f64 {
        let n = p.cols();
        let a = p.matrix();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..p.rows()).map(|k| a[k * n + i] * a[k * n + j]).sum();
            }
        }
        for _ in 0..100 {
            for i in 0..n {
                for j in i + 1..n {
                    let gij = g[i * n + j];
                    if gij.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (g[j * n + j] - g[i * n + i]) / (2.0 * gij);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (gki, gkj) = (g[k * n + i], g[k * n + j]);
                        g[k * n + i] = c * gki - s * gkj;
                        g[k * n + j] = s * gki + c * gkj;
                    }
                    for k in 0..n {
                        let (gik, gjk) = (g[i * n + k], g[j * n + k]);
                        g[i * n + k] = c * gik - s * gjk;
                        g[j * n + k] = s * gik + c * gjk;
                    }
                }
            }
        }
        (0..n).map(|i| g[i * n + i]).fold(f64::MIN, f64::max)
    }

    #[test]
    fn identity_zero_lambda_converges_in_one_step() {
        let y = vec![0.5, -2.0, 3.0];
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let p = LassoProblem::new(3, 3, eye, y.clone(), 0.0).unwrap();
        let run = ista_solve(&p, &[0.0; 3], 1, 1.0).unwrap();
        assert_eq!(run.solution, y);
    }

    #[test]
    fn scalar_prox_fixed_point() {
        let p = LassoProblem::new(1, 1, vec![1.0], vec![3.0], 1.0).unwrap();
        let run = ista_solve(&p, &[0.0], 1, 1.0).unwrap();
        assert_eq!(run.solution, vec![2.0]);
        let more = ista_solve(&p, &[2.0], 5, 1.0).unwrap();
        assert_eq!(more.solution, vec![2.0]);
    }

    #[test]
    fn nonpositive_step_rejected() {
        let p = LassoProblem::new(1, 1, vec![1.0], vec![3.0], 1.0).unwrap();
        assert!(matches!(
            ista_solve(&p, &[0.0], 1, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            ista_solve(&p, &[0.0], 1, -1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn power_iteration_matches_jacobi() {
        for seed in 0..5 {
            let p = gaussian_problem(seed, 8, 16, 0.1);
            let exact = jacobi_max_eigenvalue(&p);
            assert!(
                p.lipschitz() >= exact * (1.0 - 1e-8),
                "{} vs {exact}",
                p.lipschitz()
            );
            assert!(p.lipschitz() <= exact * (1.0 + 1e-6));
        }
    }

    #[test]
    fn random_lasso_matches_coordinate_descent() {
        let p = gaussian_problem(42, 8, 16, 0.1);
        let run = ista_solve(&p, &[0.0; 16], 5000, 1.0 / p.lipschitz()).unwrap();
        for w in run.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let oracle = p.objective(&coordinate_descent(&p, 200_000, 1e-15));
        let got = *run.objective.last().unwrap();
        assert!((got - oracle).abs() <= 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn converged_point_is_a_fixed_point() {
        let p = gaussian_problem(3, 8, 16, 0.1);
        let t = 1.0 / p.lipschitz();
        let x = ista_solve(&p, &[0.0; 16], 20000, t).unwrap().solution;
        let g = p.gradient(&x);
        for (xi, gi) in x.iter().zip(&g) {
            assert!((soft_scalar(xi - t * gi, 0.1 * t) - xi).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_lambda_is_plain_gradient_descent() {
        let p = gaussian_problem(5, 6, 4, 0.0);
        let t = 0.5 / p.lipschitz();
        let mut x = vec![0.3, -0.1, 0.0, 1.0];
        let run = ista_solve(&p, &x, 10, t).unwrap();
        for _ in 0..10 {
            let g = p.gradient(&x);
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= t * gi;
            }
        }
        assert_eq!(run.solution, x);
    }
}
