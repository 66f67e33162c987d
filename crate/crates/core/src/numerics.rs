//! Small numerical building blocks shared by the physics modules: complex
//! matrix aliases, Hermitian spectral helpers, derivative-free and
//! least-squares optimizers, and per-index random streams.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Ket2 = Vector2<C64>;
pub type Ket4 = Vector4<C64>;

pub(crate) const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Eigenvalues (ascending) and matching eigenvectors of a Hermitian 4×4 matrix.
pub fn hermitian_eigen(m: &Mat4) -> (Vector4<f64>, Mat4) {
    // Symmetrize first so round-off in the input cannot leak into the solver.
    let h = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector4::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vecs = Mat4::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (vals, vecs)
}

pub fn hermitian_eigenvalues(m: &Mat4) -> Vector4<f64> {
    hermitian_eigen(m).0
}

/// Principal square root of a Hermitian positive semidefinite matrix.
/// Negative eigenvalues (round-off) are clamped to zero.
pub fn psd_sqrt(m: &Mat4) -> Mat4 {
    let (vals, vecs) = hermitian_eigen(m);
    let d = Mat4::from_diagonal(&vals.map(|v| c(v.max(0.0).sqrt(), 0.0)));
    vecs * d * vecs.adjoint()
}

/// Random stream for job `index` of a run seeded with `seed`. Streams for
/// distinct indices are independent, so results do not depend on scheduling.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization.
///
/// `step` sets the initial simplex edge along each coordinate. Terminates
/// when both the spread of function values and the simplex diameter fall
/// below `tol`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, tol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= tol && diameter <= tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
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
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[i] = f(&shrunk);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

/// BFGS with a backtracking (Armijo) line search. `f` returns the value and
/// gradient; non-finite values are treated as +∞. Stops when an accepted
/// step improves the value by less than `ftol`, or when no downhill step
/// exists along a freshly reset search direction.
pub fn bfgs<F>(f: F, x0: &[f64], ftol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = f(x.as_slice());
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -g.norm_squared();
            fresh = true;
        }
        if slope == 0.0 {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * t;
            let (ft, gt) = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                converged = true;
                break;
            }
            // stale curvature model: retry along the gradient
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        let improvement = fx - fnew;
        let s = &xn - &x;
        let y = &gn - &g;
        x = xn;
        fx = fnew;
        g = gn;
        if improvement < ftol {
            converged = true;
            break;
        }
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if fresh {
                h *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub residual_count: usize,
    /// Jᵀ·J at the solution, used for the parameter covariance.
    pub normal_matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LeastSquares {
    /// Covariance σ²·(JᵀJ)⁻¹ with σ² estimated from the residuals.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let dof = self.residual_count.saturating_sub(self.params.len()).max(1);
        let sigma2 = self.cost / dof as f64;
        self.normal_matrix
            .clone()
            .try_inverse()
            .map(|inv| inv * sigma2)
    }
}

fn jacobian<F>(f: &F, p: &[f64], r0: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut x = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1.0);
        x[j] = p[j] + h;
        let up = f(&x);
        x[j] = p[j] - h;
        let down = f(&x);
        x[j] = p[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Levenberg–Marquardt with a central-difference Jacobian.
pub fn levenberg_marquardt<F>(f: F, p0: &[f64], max_iter: usize) -> LeastSquares
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut p = p0.to_vec();
    let mut r = DVector::from_vec(f(&p));
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = jacobian(&f, &p, &r);

    while iterations < max_iter {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() < 1e-15 || cost < 1e-28 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = DVector::from_vec(f(&trial));
            let ct = rt.norm_squared();
            if ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let small_step = step.amax() < 1e-14 * (1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: we are at a minimum to machine precision
            converged = true;
            break;
        }
        jac = jacobian(&f, &p, &r);
        if converged {
            break;
        }
    }

    let normal_matrix = jac.transpose() * &jac;
    LeastSquares {
        params: p,
        cost,
        residual_count: r.len(),
        normal_matrix,
        iterations,
        converged,
    }
}

pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wrap an angle into [0, period).
pub fn wrap(angle: f64, period: f64) -> f64 {
    let w = angle.rem_euclid(period);
    if w >= period {
        0.0
    } else {
        w
    }
}
