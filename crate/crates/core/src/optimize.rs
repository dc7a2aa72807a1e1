//! Derivative-free and quasi-Newton minimisers used by the calibrators.
//!
//! Objectives return `f64::INFINITY` (or NaN) for infeasible points; both
//! minimisers treat those as "worse than anything finite".

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMead {
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial simplex edge length per coordinate.
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_evaluations: 2000, f_tol: 1e-9, x_tol: 1e-7, initial_step: 0.25 }
    }
}

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            clean(f(x))
        };
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut p = start.to_vec();
            p[i] += self.initial_step;
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();
        let mut converged = false;

        while evals < self.max_evaluations {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let diameter =
                simplex[1..].iter().flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| libm::fabs(a - b))).fold(0.0, f64::max);
            if spread.is_finite() && spread <= self.f_tol && diameter <= self.x_tol {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect() };

            let reflected = along(1.0);
            let fr = eval(&reflected, &mut evals);
            if fr < values[0] {
                let expanded = along(2.0);
                let fe = eval(&expanded, &mut evals);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            } else {
                let c = along(-0.5);
                let fc = eval(&c, &mut evals);
                (c, fc)
            };
            if fc < f64::min(fr, values[n]) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            for i in 1..=n {
                let p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
                values[i] = eval(&p, &mut evals);
                simplex[i] = p;
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        Minimum { x: simplex[best].clone(), value: values[best], evaluations: evals, converged }
    }
}

/// Central-difference gradient.
pub fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], evals: &mut usize) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * f64::max(1.0, libm::fabs(x[i]));
        p[i] = x[i] + h;
        let up = clean(f(&p));
        p[i] = x[i] - h;
        let down = clean(f(&p));
        p[i] = x[i];
        *evals += 2;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian, row-major `n × n`.
pub fn hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], step: f64) -> Vec<f64> {
    let n = x.len();
    let f0 = clean(f(x));
    let mut h = vec![0.0; n * n];
    let mut p = x.to_vec();
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                p[i] = x[i] + step;
                let up = clean(f(&p));
                p[i] = x[i] - step;
                let down = clean(f(&p));
                p[i] = x[i];
                (up - 2.0 * f0 + down) / (step * step)
            } else {
                let mut corner = |si: f64, sj: f64, p: &mut Vec<f64>| {
                    p[i] = x[i] + si * step;
                    p[j] = x[j] + sj * step;
                    let v = clean(f(p));
                    p[i] = x[i];
                    p[j] = x[j];
                    v
                };
                let pp = corner(1.0, 1.0, &mut p);
                let pm = corner(1.0, -1.0, &mut p);
                let mp = corner(-1.0, 1.0, &mut p);
                let mm = corner(-1.0, -1.0, &mut p);
                (pp - pm - mp + mm) / (4.0 * step * step)
            };
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bfgs {
    pub max_iterations: usize,
    pub g_tol: f64,
    pub f_tol: f64,
}

impl Default for Bfgs {
    fn default() -> Self {
        Bfgs { max_iterations: 200, g_tol: 1e-6, f_tol: 1e-12 }
    }
}

impl Bfgs {
    /// BFGS on finite-difference gradients with backtracking line search.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut evals = 1usize;
        let mut x = start.to_vec();
        let mut fx = clean(f(&x));
        if !fx.is_finite() {
            return Minimum { x, value: fx, evaluations: evals, converged: false };
        }
        let mut g = gradient(&mut f, &x, &mut evals);
        let mut inv_h: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
        let mut converged = false;

        for _ in 0..self.max_iterations {
            let gnorm = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
            if gnorm < self.g_tol {
                converged = true;
                break;
            }
            let mut dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| inv_h[i * n + j] * g[j]).sum::<f64>()).collect();
            let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
            if slope >= 0.0 {
                // Not a descent direction: reset to steepest descent.
                for (k, v) in inv_h.iter_mut().enumerate() {
                    *v = if k / n == k % n { 1.0 } else { 0.0 };
                }
                dir = g.iter().map(|v| -v).collect();
                slope = -gnorm * gnorm;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
                let ft = clean(f(&trial));
                evals += 1;
                if ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
            let Some((x_new, f_new)) = accepted else { break };
            let g_new = gradient(&mut f, &x_new, &mut evals);
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let improvement = fx - f_new;
            x = x_new;
            g = g_new;
            fx = f_new;
            if sy > 1e-12 {
                let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv_h[i * n + j] * y[j]).sum()).collect();
                let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    for j in 0..n {
                        inv_h[i * n + j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                    }
                }
            }
            if improvement <= self.f_tol * (1.0 + libm::fabs(fx)) {
                converged = true;
                break;
            }
        }
        Minimum { x, value: fx, evaluations: evals, converged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let nm = NelderMead { max_evaluations: 5000, f_tol: 1e-14, x_tol: 1e-8, initial_step: 0.5 };
        let m = nm.minimize(rosenbrock, &[-1.2, 1.0]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn bfgs_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + x[0] * x[1];
        let m = Bfgs::default().minimize(f, &[0.0, 0.0]);
        // gradient zero: 2(x-3) + y = 0, 4(y+1) + x = 0
        let (x, y) = (4.0, -2.0);
        assert!((m.x[0] - x).abs() < 1e-5 && (m.x[1] - y).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn infeasible_points_rejected() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::NAN } else { (x[0] - 1.0).powi(2) };
        let m = NelderMead::default().minimize(f, &[2.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn hessian_of_quadratic() {
        let mut f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1] + 0.5 * x[1] * x[1];
        let h = hessian(&mut f, &[0.3, -0.2], 1e-3);
        let want = [6.0, 1.0, 1.0, 1.0];
        for (a, b) in h.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
