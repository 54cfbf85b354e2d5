//! Brute-force solver for the regularized SoS primal with explicit features:
//!
//! ```text
//! max  cᵀθ + C − λ_θ‖θ‖² − λ tr B + ε log det B − γ‖δ‖²
//! s.t. b_i + a_iᵀθ = Φ_iᵀ B Φ_i + δ_i
//! ```
//!
//! with `δ` eliminated, by Newton ascent over `(θ, B)` and a homotopy on `ε`.

use nalgebra::{DMatrix, DVector};

pub struct Primal {
    pub theta: DVector<f64>,
    pub b: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub objective: f64,
}

struct Problem<'a> {
    a: &'a DMatrix<f64>,
    bvec: &'a DVector<f64>,
    c: &'a DVector<f64>,
    offset: f64,
    phi: &'a DMatrix<f64>,
    lambda: f64,
    lambda_theta: f64,
    gamma: f64,
}

/// Symmetric coordinates `(j, k)`, `j ≤ k`.
fn coords(q: usize) -> Vec<(usize, usize)> {
    (0..q).flat_map(|j| (j..q).map(move |k| (j, k))).collect()
}

fn basis_matrix(q: usize, (j, k): (usize, usize)) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(q, q);
    e[(j, k)] = 1.0;
    e[(k, j)] = 1.0;
    e
}

impl Problem<'_> {
    fn m(&self) -> usize {
        self.a.ncols()
    }
    fn q(&self) -> usize {
        self.phi.ncols()
    }

    fn unpack(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.m();
        let q = self.q();
        let theta = z.rows(0, m).into_owned();
        let mut b = DMatrix::zeros(q, q);
        for (p, &(j, k)) in coords(q).iter().enumerate() {
            b[(j, k)] = z[m + p];
            b[(k, j)] = z[m + p];
        }
        (theta, b)
    }

    fn slack(&self, theta: &DVector<f64>, b: &DMatrix<f64>) -> DVector<f64> {
        let s = DVector::from_fn(self.phi.nrows(), |i, _| {
            let f = self.phi.row(i).transpose();
            f.dot(&(b * &f))
        });
        self.bvec + self.a * theta - s
    }

    fn objective(&self, z: &DVector<f64>, eps: f64) -> Option<f64> {
        let (theta, b) = self.unpack(z);
        let chol = b.clone().cholesky()?;
        let logdet = 2.0 * chol.l().diagonal().map(f64::ln).sum();
        let r = self.slack(&theta, &b);
        Some(
            self.c.dot(&theta) + self.offset - self.lambda_theta * theta.norm_squared() - self.lambda * b.trace()
                + eps * logdet
                - self.gamma * r.norm_squared(),
        )
    }

    fn derivatives(&self, z: &DVector<f64>, eps: f64) -> (DVector<f64>, DMatrix<f64>) {
        let (m, q) = (self.m(), self.q());
        let (theta, b) = self.unpack(z);
        let binv = b.clone().try_inverse().expect("B is positive definite");
        let r = self.slack(&theta, &b);
        let cs = coords(q);
        let n = self.phi.nrows();
        let dirs: Vec<DMatrix<f64>> = cs.iter().map(|&c| basis_matrix(q, c)).collect();
        // w[i][p] = Φ_iᵀ D_p Φ_i, the derivative of the i-th SoS value in coordinate p.
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let f = self.phi.row(i).transpose();
                dirs.iter().map(|d| f.dot(&(d * &f))).collect()
            })
            .collect();
        let dim = m + cs.len();
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let gt = self.c - &theta * (2.0 * self.lambda_theta) - self.a.tr_mul(&r) * (2.0 * self.gamma);
        g.rows_mut(0, m).copy_from(&gt);
        for (p, d) in dirs.iter().enumerate() {
            let mut v = -self.lambda * d.trace() + eps * (&binv * d).trace();
            for i in 0..n {
                v += 2.0 * self.gamma * r[i] * w[i][p];
            }
            g[m + p] = v;
        }
        let htt = DMatrix::identity(m, m) * (-2.0 * self.lambda_theta) - self.a.tr_mul(self.a) * (2.0 * self.gamma);
        h.view_mut((0, 0), (m, m)).copy_from(&htt);
        for p in 0..cs.len() {
            for k in 0..m {
                let v: f64 = (0..n).map(|i| 2.0 * self.gamma * self.a[(i, k)] * w[i][p]).sum();
                h[(k, m + p)] = v;
                h[(m + p, k)] = v;
            }
            for s in 0..cs.len() {
                let mut v = -eps * (&binv * &dirs[p] * &binv * &dirs[s]).trace();
                for i in 0..n {
                    v -= 2.0 * self.gamma * w[i][p] * w[i][s];
                }
                h[(m + p, m + s)] = v;
            }
        }
        (g, h)
    }
}

/// Solves the primal at `(λ, λ_θ, γ, ε)`; `ε` is reached through a homotopy
/// from 1.
#[allow(clippy::too_many_arguments)]
pub fn solve_primal(
    a: &DMatrix<f64>,
    bvec: &DVector<f64>,
    c: &DVector<f64>,
    offset: f64,
    phi: &DMatrix<f64>,
    lambda: f64,
    lambda_theta: f64,
    gamma: f64,
    epsilon: f64,
) -> Primal {
    let pr = Problem { a, bvec, c, offset, phi, lambda, lambda_theta, gamma };
    let (m, q) = (pr.m(), pr.q());
    let mut z = DVector::zeros(m + coords(q).len());
    for (p, &(j, k)) in coords(q).iter().enumerate() {
        if j == k {
            z[m + p] = 1.0;
        }
    }
    let mut eps = 1.0f64.max(epsilon);
    loop {
        for _ in 0..500 {
            let (g, h) = pr.derivatives(&z, eps);
            let step = (-h).cholesky().expect("concave objective").solve(&g);
            let gain = g.dot(&step);
            if gain < 1e-26 {
                break;
            }
            let f0 = pr.objective(&z, eps).unwrap();
            let mut t = 1.0;
            loop {
                let cand = &z + &step * t;
                if let Some(f) = pr.objective(&cand, eps) {
                    if f >= f0 + 0.25 * t * gain {
                        z = cand;
                        break;
                    }
                }
                t *= 0.5;
                assert!(t > 1e-30, "primal line search failed");
            }
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps / 10.0).max(epsilon);
    }
    let (theta, b) = pr.unpack(&z);
    let delta = pr.slack(&theta, &b);
    let objective = pr.objective(&z, epsilon).unwrap();
    Primal { theta, b, delta, objective }
}
