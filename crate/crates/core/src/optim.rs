//! Box-constrained quasi-Newton minimization with numerical gradients.
//!
//! BFGS on the inverse Hessian with a projected backtracking line search.
//! Gradients are forward finite differences. Intended for low-dimensional
//! smooth-enough objectives such as knot-placement fit errors.

#[derive(Debug, Clone)]
pub struct BoxedMinimizeConfig {
    pub max_iterations: usize,
    /// Stop when the objective change falls below this (scaled by 1 + |f|).
    pub objective_tol: f64,
    /// Forward-difference step for the numerical gradient.
    pub gradient_step: f64,
}

impl Default for BoxedMinimizeConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            objective_tol: 1e-10,
            gradient_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    h: f64,
    lower: &[f64],
    upper: &[f64],
    evals: &mut usize,
) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut probe = x.to_vec();
    for i in 0..n {
        // Step backwards when the forward probe would leave the box.
        let step = if x[i] + h <= upper[i] { h } else { -h };
        let _ = lower;
        probe[i] = x[i] + step;
        *evals += 1;
        g[i] = (f(&probe) - fx) / step;
        probe[i] = x[i];
    }
    g
}

/// Minimize `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize_boxed<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &BoxedMinimizeConfig,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lower, upper);
    let mut evals = 1usize;
    let mut fx = f(&x);
    let mut g = fd_gradient(&mut f, &x, fx, config.gradient_step, lower, upper, &mut evals);
    // Inverse Hessian approximation, dense row-major.
    let mut hinv = identity(n);
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let mut direction = neg_matvec(&hinv, &g);
        if dot(&direction, &g) >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            hinv = identity(n);
            direction = g.iter().map(|v| -v).collect();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut candidate: Vec<f64> =
                x.iter().zip(&direction).map(|(xi, di)| xi + alpha * di).collect();
            clamp_into(&mut candidate, lower, upper);
            if candidate == x {
                break;
            }
            evals += 1;
            let fc = f(&candidate);
            let slope: f64 = g
                .iter()
                .zip(&candidate)
                .zip(x.iter())
                .map(|((gi, ci), xi)| gi * (ci - xi))
                .sum();
            if fc <= fx + 1e-4 * slope.min(0.0) && fc < fx {
                accepted = Some((candidate, fc));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            break;
        };

        let g_new = fd_gradient(
            &mut f,
            &x_new,
            f_new,
            config.gradient_step,
            lower,
            upper,
            &mut evals,
        );
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            bfgs_update(&mut hinv, &s, &y, sy);
        } else {
            hinv = identity(n);
        }

        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if improvement <= config.objective_tol * (1.0 + fx.abs()) {
            break;
        }
    }

    Minimum {
        x,
        value: fx,
        iterations,
        evaluations: evals,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn neg_matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| -(0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sherman-Morrison BFGS update of the inverse Hessian:
/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(hinv: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            hinv[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let cfg = BoxedMinimizeConfig::default();
        let result = minimize_boxed(
            |x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.7).powi(2),
            &[0.9, 0.1],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &cfg,
        );
        assert!((result.x[0] - 0.3).abs() < 1e-5, "{:?}", result.x);
        assert!((result.x[1] - 0.7).abs() < 1e-5, "{:?}", result.x);
    }

    #[test]
    fn respects_box_bounds() {
        let cfg = BoxedMinimizeConfig::default();
        // Unconstrained minimum at (2, 2) lies outside the box.
        let result = minimize_boxed(
            |x| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &cfg,
        );
        assert!(result.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((result.x[0] - 1.0).abs() < 1e-6);
        assert!((result.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_in_box() {
        let cfg = BoxedMinimizeConfig {
            max_iterations: 500,
            ..Default::default()
        };
        let result = minimize_boxed(
            |x| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                a * a + 100.0 * b * b
            },
            &[-0.5, 0.5],
            &[-2.0, -2.0],
            &[2.0, 2.0],
            &cfg,
        );
        assert!(result.value < 1e-8, "value {}", result.value);
    }

    #[test]
    fn never_increases_objective() {
        let cfg = BoxedMinimizeConfig::default();
        let f = |x: &[f64]| (x[0].sin() * 3.0).abs() + x[0] * x[0];
        let f0 = f(&[0.9]);
        let result = minimize_boxed(f, &[0.9], &[-1.0], &[1.0], &cfg);
        assert!(result.value <= f0);
    }
}
