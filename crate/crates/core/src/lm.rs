//! Small dense Levenberg-Marquardt solver with a numeric Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iters: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when `|dx| <= step_tol * (|x| + step_tol)`.
    pub step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iters: 100, grad_tol: 1e-8, step_tol: 1e-10, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Half the sum of squared residuals at the start and at the end.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn half_sq(r: &DVector<f64>) -> f64 {
    let c = 0.5 * r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

/// Central-difference Jacobian.
pub fn numeric_jacobian<F>(f: &F, x: &DVector<f64>, r0_len: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r0_len, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        let orig = xp[j];
        xp[j] = orig + h;
        let rp = f(&xp);
        xp[j] = orig - h;
        let rm = f(&xp);
        xp[j] = orig;
        if rp.len() != r0_len || rm.len() != r0_len {
            continue;
        }
        jac.set_column(j, &((rp - rm) / (2.0 * h)));
    }
    jac
}

/// Minimizes `0.5 * |f(x)|^2`. Only cost-decreasing steps are accepted, so
/// `final_cost <= initial_cost` always holds.
pub fn minimize<F>(f: F, x0: DVector<f64>, cfg: &LmConfig) -> LmReport
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut r = f(&x);
    let initial_cost = half_sq(&r);
    let mut cost = initial_cost;
    let mut lambda = cfg.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    if !cost.is_finite() || r.is_empty() {
        return LmReport { params: x, initial_cost, final_cost: cost, iterations, converged };
    }

    while iterations < cfg.max_iters {
        iterations += 1;
        let jac = numeric_jacobian(&f, &x, r.len());
        let g = jac.transpose() * &r;
        if g.amax() < cfg.grad_tol {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let dx = -chol.solve(&g);
            let xn = &x + &dx;
            let rn = f(&xn);
            let cn = if rn.len() == r.len() { half_sq(&rn) } else { f64::INFINITY };
            if cn < cost {
                let small_step = dx.norm() <= cfg.step_tol * (x.norm() + cfg.step_tol);
                x = xn;
                r = rn;
                let rel_drop = (cost - cn) / cost.max(1e-300);
                cost = cn;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small_step || rel_drop < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            // No descent direction left at any damping: a stationary point
            // up to numerical precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmReport { params: x, initial_cost, final_cost: cost, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let rep = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &LmConfig { max_iters: 500, ..Default::default() });
        assert!((rep.params[0] - 1.0).abs() < 1e-6, "{:?}", rep.params);
        assert!((rep.params[1] - 1.0).abs() < 1e-6);
        assert!(rep.final_cost <= rep.initial_cost);
    }

    #[test]
    fn linear_least_squares() {
        // Fit y = a x + b to exact data.
        let xs = [0.0, 1.0, 2.0, 3.0];
        let f = move |p: &DVector<f64>| DVector::from_iterator(4, xs.iter().map(|x| p[0] * x + p[1] - (2.0 * x - 1.0)));
        let rep = minimize(f, DVector::from_vec(vec![0.0, 0.0]), &LmConfig::default());
        assert!((rep.params[0] - 2.0).abs() < 1e-8);
        assert!((rep.params[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] - 3.0]);
        let rep = minimize(f, DVector::from_vec(vec![3.0]), &LmConfig::default());
        assert_eq!(rep.params[0], 3.0);
        assert!(rep.converged);
    }
}
