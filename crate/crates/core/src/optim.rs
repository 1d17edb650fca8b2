//! Unconstrained minimizers: adaptive Nelder-Mead and BFGS with numerical gradients.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Derivative-free simplex search.
    #[default]
    Simplex,
    /// BFGS with central-difference gradients.
    QuasiNewton,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simplex" | "nelder-mead" => Ok(Optimizer::Simplex),
            "quasi-newton" | "bfgs" => Ok(Optimizer::QuasiNewton),
            _ => Err(format!("unknown optimizer {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Relative tolerance on the objective.
    pub ftol: f64,
    /// Absolute tolerance on the simplex size / step length.
    pub xtol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { max_iter: 20_000, ftol: 1e-6, xtol: 1e-6, initial_step: 0.3 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], method: Optimizer, opts: &OptimOptions) -> OptimResult {
    match method {
        Optimizer::Simplex => nelder_mead(f, x0, opts),
        Optimizer::QuasiNewton => bfgs(f, x0, opts),
    }
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn close(a: f64, b: f64, ftol: f64) -> bool {
    (a - b).abs() <= ftol * (a.abs() + b.abs()).max(1e-300) * 0.5 + 1e-14
}

/// Nelder-Mead with dimension-adaptive coefficients; restarts a fresh simplex
/// around the best point until a restart no longer improves it.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        nan_to_inf(f(x))
    };
    if n == 0 {
        let v = eval(x0);
        return OptimResult { x: vec![], f: v, iterations: 0, evaluations: 1, converged: true };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = opts.initial_step;

    while iterations < opts.max_iter {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..n {
            let mut x = best_x.clone();
            x[i] += step;
            let v = eval(&x);
            simplex.push((x, v));
        }
        let mut local_converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (fl, fh) = (simplex[0].1, simplex[n].1);
            let size = simplex[1..]
                .iter()
                .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if fl.is_finite() && close(fl, fh, opts.ftol) && size <= opts.xtol.max(1e-3) || size <= opts.xtol {
                local_converged = true;
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / nf;
                }
            }
            let along =
                |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, h)| c + t * (c - h)).collect() };
            let xr = along(alpha);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(alpha * gamma);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(alpha * rho);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-rho);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let lo = simplex[0].0.clone();
                    for (x, v) in simplex[1..].iter_mut() {
                        for (xi, li) in x.iter_mut().zip(&lo) {
                            *xi = li + sigma * (*xi - li);
                        }
                        *v = eval(x);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best_f && !close(simplex[0].1, best_f, opts.ftol);
        if simplex[0].1 <= best_f {
            best_f = simplex[0].1;
            best_x = simplex[0].0.clone();
        }
        if local_converged && !improved {
            converged = true;
            break;
        }
        step = (step * 0.5).max(opts.xtol * 10.0);
    }
    OptimResult { x: best_x, f: best_f, iterations, evaluations, converged }
}

/// Central-difference gradient.
pub fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let a = f(&xp);
            xp[i] = x[i] - h;
            let b = f(&xp);
            xp[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// BFGS on the inverse Hessian with Armijo backtracking.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        nan_to_inf(f(x))
    };
    let h = 1e-6;
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut g = gradient(&mut eval, &x, h);
    let mut hinv = identity(n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter && fx.is_finite() {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            hinv = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if dmax > 2.0 { 2.0 / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fnew = eval(&xn);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = g.iter().all(|v| v.abs() < 1e-4);
            break;
        };
        let gn = gradient(&mut eval, &xn, h);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let done = close(fnew, fx, opts.ftol) && s.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.xtol.max(1e-4);
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        x = xn;
        fx = fnew;
        g = gn;
        if done {
            converged = true;
            break;
        }
    }
    OptimResult { x, f: fx, iterations, evaluations, converged }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
