//! Local-minimum tracking along a task curve.
//!
//! If theta* minimizes L(., t0) and the Hessian stays symmetric positive
//! definite, the minimizer moves along a task path t_hat(gamma) according to
//!
//!   d theta / d gamma = -(d2L/dtheta2)^-1 (d2L/dtheta dt) (d t_hat / d gamma)
//!
//! which we integrate with fixed-step RK4 (determinism over adaptivity).
//! Every stage solves the Hessian system by Cholesky factorization; a
//! non-SPD Hessian surfaces as a tracking error carrying the gamma where
//! positive definiteness was lost.

use nalgebra::{DMatrix, DVector};

use crate::OracleError;

/// Gradient norm required of the starting point: tracking a point that is
/// not a critical point integrates a meaningless vector field.
const START_GRAD_TOL: f64 = 1e-8;

/// Twice-differentiable loss family over parameters theta and task vector t.
pub trait LossFamily {
    fn theta_dim(&self) -> usize;
    fn task_dim(&self) -> usize;
    fn loss(&self, theta: &DVector<f64>, t: &DVector<f64>) -> f64;
    fn grad(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DVector<f64>;
    /// Hessian d2L/dtheta2, `[theta_dim, theta_dim]`, must be symmetric.
    fn hessian(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DMatrix<f64>;
    /// Mixed second derivative d2L/dtheta dt, `[theta_dim, task_dim]`.
    fn mixed(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DMatrix<f64>;
}

/// A path through task space from `t0` to `t1` together with the loss
/// family it lives in. The default path is the straight line; `with_path`
/// accepts any smooth `gamma -> (t, dt/dgamma)` with matching endpoints.
pub struct TaskCurve<F: LossFamily> {
    pub family: F,
    pub t0: DVector<f64>,
    pub t1: DVector<f64>,
    #[allow(clippy::type_complexity)]
    path: Option<Box<dyn Fn(f64) -> (DVector<f64>, DVector<f64>)>>,
}

impl<F: LossFamily> TaskCurve<F> {
    pub fn linear(family: F, t0: DVector<f64>, t1: DVector<f64>) -> Self {
        TaskCurve { family, t0, t1, path: None }
    }

    pub fn with_path(
        family: F,
        t0: DVector<f64>,
        t1: DVector<f64>,
        path: impl Fn(f64) -> (DVector<f64>, DVector<f64>) + 'static,
    ) -> Self {
        TaskCurve { family, t0, t1, path: Some(Box::new(path)) }
    }

    /// Task point and path velocity at curve parameter `gamma`.
    pub fn at(&self, gamma: f64) -> (DVector<f64>, DVector<f64>) {
        match &self.path {
            Some(p) => p(gamma),
            None => (&self.t0 + (&self.t1 - &self.t0) * gamma, &self.t1 - &self.t0),
        }
    }
}

fn velocity<F: LossFamily>(
    family: &F,
    theta: &DVector<f64>,
    gamma: f64,
    t: &DVector<f64>,
    dt: &DVector<f64>,
) -> Result<DVector<f64>, OracleError> {
    let h = family.hessian(theta, t);
    let scale = 1.0 + h.amax();
    let asym = (&h - h.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(OracleError::Tracking {
            gamma,
            detail: format!("hessian asymmetry {asym:.3e} exceeds tolerance"),
        });
    }
    let rhs = family.mixed(theta, t) * dt;
    let chol = h.cholesky().ok_or(OracleError::Tracking {
        gamma,
        detail: "hessian is not positive definite".into(),
    })?;
    Ok(-chol.solve(&rhs))
}

/// Track the minimizer `theta0` of `L(., t0)` along the curve to `t1` with
/// `steps` RK4 steps. Errors if `theta0` is not a critical point or the
/// Hessian stops being symmetric positive definite along the way.
pub fn ode_track<F: LossFamily>(
    curve: &TaskCurve<F>,
    theta0: &DVector<f64>,
    steps: usize,
) -> Result<DVector<f64>, OracleError> {
    if steps == 0 {
        return Err(OracleError::invalid("need at least one integration step"));
    }
    if theta0.len() != curve.family.theta_dim() {
        return Err(OracleError::invalid(format!(
            "theta0 has {} entries, family expects {}",
            theta0.len(),
            curve.family.theta_dim()
        )));
    }
    let (t_start, _) = curve.at(0.0);
    let g0 = curve.family.grad(theta0, &t_start).norm();
    if g0 >= START_GRAD_TOL {
        return Err(OracleError::invalid(format!(
            "theta0 is not a minimizer: gradient norm {g0:.3e} at gamma=0"
        )));
    }

    let h = 1.0 / steps as f64;
    let mut theta = theta0.clone();
    let eval = |gamma: f64, th: &DVector<f64>| -> Result<DVector<f64>, OracleError> {
        let (t, dt) = curve.at(gamma);
        velocity(&curve.family, th, gamma, &t, &dt)
    };
    for step in 0..steps {
        let g = step as f64 * h;
        let k1 = eval(g, &theta)?;
        let k2 = eval(g + 0.5 * h, &(&theta + &k1 * (0.5 * h)))?;
        let k3 = eval(g + 0.5 * h, &(&theta + &k2 * (0.5 * h)))?;
        let k4 = eval(g + h, &(&theta + &k3 * h))?;
        theta += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(theta)
}

/// Newton's method with backtracking line search. Used to prepare starting
/// points for tracking and as an independent re-optimization check.
pub fn newton_minimize<F: LossFamily>(
    family: &F,
    t: &DVector<f64>,
    theta_init: &DVector<f64>,
    grad_tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, OracleError> {
    let mut theta = theta_init.clone();
    for _ in 0..max_iter {
        let g = family.grad(&theta, t);
        if g.norm() < grad_tol {
            return Ok(theta);
        }
        let h = family.hessian(&theta, t);
        let chol = h
            .cholesky()
            .ok_or_else(|| OracleError::invalid("newton: hessian is not positive definite"))?;
        let dir = chol.solve(&g);
        let slope = g.dot(&dir);
        let base = family.loss(&theta, t);
        let mut alpha = 1.0;
        while alpha > 1e-10 {
            let cand = &theta - &dir * alpha;
            if family.loss(&cand, t) <= base - 1e-4 * alpha * slope {
                theta = cand;
                break;
            }
            alpha *= 0.5;
        }
        if alpha <= 1e-10 {
            return Err(OracleError::invalid("newton: line search failed"));
        }
    }
    let g = family.grad(&theta, t).norm();
    if g < grad_tol {
        Ok(theta)
    } else {
        Err(OracleError::invalid(format!(
            "newton: gradient norm {g:.3e} after {max_iter} iterations"
        )))
    }
}

/// Quadratic family `L(theta, t) = 1/2 (theta - A t)^T B (theta - A t)`
/// with SPD `B`. The tracking field is constant, `A (t1 - t0)`, so RK4
/// reproduces the minimizer `A t1` to rounding error.
pub struct QuadraticFamily {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl QuadraticFamily {
    /// `B = I`: plain squared distance to the moving target `A t`.
    pub fn isotropic(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        QuadraticFamily { a, b: DMatrix::identity(n, n) }
    }
}

impl LossFamily for QuadraticFamily {
    fn theta_dim(&self) -> usize {
        self.a.nrows()
    }

    fn task_dim(&self) -> usize {
        self.a.ncols()
    }

    fn loss(&self, theta: &DVector<f64>, t: &DVector<f64>) -> f64 {
        let r = theta - &self.a * t;
        0.5 * r.dot(&(&self.b * &r))
    }

    fn grad(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        &self.b * (theta - &self.a * t)
    }

    fn hessian(&self, _theta: &DVector<f64>, _t: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }

    fn mixed(&self, _theta: &DVector<f64>, _t: &DVector<f64>) -> DMatrix<f64> {
        -(&self.b * &self.a)
    }
}

/// L2-regularized two-class logistic regression where the task vector
/// shifts the positive class: sample i lives at `base_i + y_i * t` and
/// theta stacks the weight vector and the intercept. The ridge term keeps
/// the Hessian SPD everywhere, so the minimizer exists and tracking is
/// well posed even for separable data.
pub struct LogisticFamily {
    /// Base points, `[n, p]`.
    pub base: DMatrix<f64>,
    /// Binary labels, one per base point.
    pub labels: Vec<u8>,
    /// Ridge coefficient applied to weights and intercept, must be > 0.
    pub l2: f64,
}

impl LogisticFamily {
    fn n(&self) -> usize {
        self.base.nrows()
    }

    fn p(&self) -> usize {
        self.base.ncols()
    }

    /// Sample point i under task shift t.
    fn x(&self, i: usize, t: &DVector<f64>) -> DVector<f64> {
        let mut x = self.base.row(i).transpose();
        if self.labels[i] == 1 {
            x += t;
        }
        x
    }

    /// Per-sample margin u = w.x + b and sigmoid p for the current theta.
    fn forward(&self, theta: &DVector<f64>, t: &DVector<f64>) -> Vec<(DVector<f64>, f64)> {
        let p = self.p();
        let w = theta.rows(0, p).into_owned();
        let b = theta[p];
        (0..self.n())
            .map(|i| {
                let x = self.x(i, t);
                let u = w.dot(&x) + b;
                (x, 1.0 / (1.0 + (-u).exp()))
            })
            .collect()
    }
}

impl LossFamily for LogisticFamily {
    fn theta_dim(&self) -> usize {
        self.p() + 1
    }

    fn task_dim(&self) -> usize {
        self.p()
    }

    fn loss(&self, theta: &DVector<f64>, t: &DVector<f64>) -> f64 {
        let p = self.p();
        let w = theta.rows(0, p).into_owned();
        let b = theta[p];
        let mut total = 0.0;
        for i in 0..self.n() {
            let u = w.dot(&self.x(i, t)) + b;
            // softplus(u) - y*u, computed stably.
            total += u.max(0.0) + (-u.abs()).exp().ln_1p() - f64::from(self.labels[i]) * u;
        }
        total / self.n() as f64 + 0.5 * self.l2 * theta.norm_squared()
    }

    fn grad(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let inv_n = 1.0 / self.n() as f64;
        let mut g = theta * self.l2;
        for (i, (x, prob)) in self.forward(theta, t).into_iter().enumerate() {
            let r = (prob - f64::from(self.labels[i])) * inv_n;
            for j in 0..p {
                g[j] += r * x[j];
            }
            g[p] += r;
        }
        g
    }

    fn hessian(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DMatrix<f64> {
        let p = self.p();
        let inv_n = 1.0 / self.n() as f64;
        let mut h = DMatrix::identity(p + 1, p + 1) * self.l2;
        for (x, prob) in self.forward(theta, t) {
            let s = prob * (1.0 - prob) * inv_n;
            for j in 0..p {
                for k in 0..p {
                    h[(j, k)] += s * x[j] * x[k];
                }
                h[(j, p)] += s * x[j];
                h[(p, j)] += s * x[j];
            }
            h[(p, p)] += s;
        }
        h
    }

    fn mixed(&self, theta: &DVector<f64>, t: &DVector<f64>) -> DMatrix<f64> {
        let p = self.p();
        let inv_n = 1.0 / self.n() as f64;
        let w = theta.rows(0, p).into_owned();
        let mut m = DMatrix::zeros(p + 1, p);
        for (i, (x, prob)) in self.forward(theta, t).into_iter().enumerate() {
            if self.labels[i] != 1 {
                continue;
            }
            let s = prob * (1.0 - prob) * inv_n;
            let r = (prob - 1.0) * inv_n;
            for j in 0..p {
                for k in 0..p {
                    m[(j, k)] += s * w[k] * x[j];
                }
                m[(j, j)] += r;
            }
            for k in 0..p {
                m[(p, k)] += s * w[k];
            }
        }
        m
    }
}
