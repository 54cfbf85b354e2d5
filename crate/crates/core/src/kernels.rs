//! Positive-definite kernels on `(t, x, u)`, Gram matrices and jittered
//! Cholesky factors.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::sampling::Sample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `(1 + yᵀy')^degree` on the concatenation `y = (t, x, u)`.
    Polynomial { degree: u32 },
    /// `exp(−‖y − y'‖₂ / scale)`.
    Exponential { scale: f64 },
    /// `⟨u, u'⟩ / u_scale + ⟨x, x'⟩ · exp(−|t − t'| / t_scale)`.
    ControlAffine { u_scale: f64, t_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    kind: KernelKind,
    state_dim: usize,
    control_dim: usize,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, state_dim: usize, control_dim: usize) -> Result<Self> {
        match kind {
            KernelKind::Polynomial { degree } if degree < 1 => {
                return Err(Error::Parameter("polynomial kernel degree must be at least 1".into()))
            }
            KernelKind::Exponential { scale } if !(scale > 0.0) => {
                return Err(Error::Parameter(format!("exponential kernel scale must be positive, got {scale}")))
            }
            KernelKind::ControlAffine { u_scale, t_scale } if !(u_scale > 0.0) || !(t_scale > 0.0) => {
                return Err(Error::Parameter("control-affine kernel scales must be positive".into()))
            }
            _ => {}
        }
        if state_dim == 0 || control_dim == 0 {
            return Err(Error::Parameter("kernel dimensions must be at least 1".into()));
        }
        Ok(Self { kind, state_dim, control_dim })
    }

    /// `⟨u, u'⟩/100 + ⟨x, x'⟩ · exp(−|t − t'|)`.
    pub fn control_affine_default(state_dim: usize, control_dim: usize) -> Self {
        Self::new(KernelKind::ControlAffine { u_scale: 100.0, t_scale: 1.0 }, state_dim, control_dim)
            .expect("default scales are positive")
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    fn check(&self, y: &Sample) -> Result<()> {
        if y.x.len() != self.state_dim || y.u.len() != self.control_dim {
            return Err(Error::Domain(format!(
                "sample has (d, p) = ({}, {}), kernel expects ({}, {})",
                y.x.len(),
                y.u.len(),
                self.state_dim,
                self.control_dim
            )));
        }
        Ok(())
    }

    fn eval_unchecked(&self, y: &Sample, z: &Sample) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        match self.kind {
            KernelKind::Polynomial { degree } => {
                (1.0 + y.t * z.t + dot(&y.x, &z.x) + dot(&y.u, &z.u)).powi(degree as i32)
            }
            KernelKind::Exponential { scale } => {
                let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                let dist = ((y.t - z.t).powi(2) + sq(&y.x, &z.x) + sq(&y.u, &z.u)).sqrt();
                (-dist / scale).exp()
            }
            KernelKind::ControlAffine { u_scale, t_scale } => {
                dot(&y.u, &z.u) / u_scale + dot(&y.x, &z.x) * (-(y.t - z.t).abs() / t_scale).exp()
            }
        }
    }

    /// An explicit factor `Z` (one row per sample) with `Z Zᵀ = K`, when the
    /// kernel restricted to the samples has one of small width.
    ///
    /// For the control-affine kernel the time factor is factorized on the
    /// distinct sample times, giving width `p + d · #times`.
    pub fn explicit_factor(&self, samples: &[Sample]) -> Option<DMatrix<f64>> {
        let KernelKind::ControlAffine { u_scale, t_scale } = self.kind else {
            return None;
        };
        let mut times: Vec<f64> = samples.iter().map(|s| s.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let nt = times.len();
        let time_gram = DMatrix::from_fn(nt, nt, |a, b| (-(times[a] - times[b]).abs() / t_scale).exp());
        let r = cholesky_upper(&time_gram).ok()?;
        let (d, p) = (self.state_dim, self.control_dim);
        let width = p + d * nt;
        let u_factor = u_scale.sqrt().recip();
        let mut z = DMatrix::zeros(samples.len(), width);
        for (i, s) in samples.iter().enumerate() {
            let a = times.binary_search_by(|v| v.total_cmp(&s.t)).ok()?;
            for k in 0..p {
                z[(i, k)] = s.u[k] * u_factor;
            }
            for l in 0..d {
                for c in 0..=a {
                    // Row a of the lower factor Rᵀ.
                    z[(i, p + l * nt + c)] = s.x[l] * r[(c, a)];
                }
            }
        }
        Some(z)
    }
}

pub fn kernel_eval(spec: &KernelSpec, y: &Sample, z: &Sample) -> Result<f64> {
    spec.check(y)?;
    spec.check(z)?;
    Ok(spec.eval_unchecked(y, z))
}

/// `K_ij = k(y_i, y_j)`. The upper triangle is computed row-parallel and
/// mirrored, so `K` is exactly symmetric.
pub fn gram(spec: &KernelSpec, samples: &[Sample]) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::Parameter("Gram matrix needs at least one sample".into()));
    }
    for s in samples {
        spec.check(s)?;
    }
    let n = samples.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.eval_unchecked(&samples[i], &samples[j])).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

/// Upper-triangular `R` with `RᵀR = K`. Fails with the first non-positive pivot.
pub fn cholesky_upper(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if !k.is_square() {
        return Err(Error::Parameter("Cholesky needs a square matrix".into()));
    }
    let mut r = DMatrix::<f64>::zeros(n, n);
    // Column i of R holds R[0..=i, i]; every update is a dot product of two
    // contiguous column prefixes.
    for i in 0..n {
        for j in 0..i {
            let (cj, ci) = (r.column(j), r.column(i));
            let s: f64 = cj.rows(0, j).dot(&ci.rows(0, j));
            r[(j, i)] = (k[(j, i)] - s) / r[(j, j)];
        }
        let ci = r.column(i);
        let diag = k[(i, i)] - ci.rows(0, i).norm_squared();
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Factorization { pivot: i });
        }
        r[(i, i)] = diag.sqrt();
    }
    Ok(r)
}

pub const BASE_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-2;

/// Gram matrix with its jittered Cholesky factor `K + jitter·I = RᵀR`.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub k: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub jitter: f64,
}

impl GramFactor {
    /// `Φ = Rᵀ`, whose row `i` is the embedding `Φ_i` (column `i` of `R`).
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        self.r.transpose()
    }
}

/// Adds `1e-8·I` and factorizes, escalating the jitter tenfold up to `1e-2`
/// if the factorization still breaks down.
pub fn cholesky_jitter(k: &DMatrix<f64>) -> Result<GramFactor> {
    if !k.is_square() || k.nrows() == 0 {
        return Err(Error::Parameter("Gram matrix must be square and nonempty".into()));
    }
    let n = k.nrows();
    let mut jitter = BASE_JITTER;
    loop {
        let shifted = k + DMatrix::<f64>::identity(n, n) * jitter;
        match cholesky_upper(&shifted) {
            Ok(r) => return Ok(GramFactor { k: k.clone(), r, jitter }),
            Err(err) if jitter * 10.0 > MAX_JITTER * (1.0 + 1e-9) => return Err(err),
            Err(_) => jitter *= 10.0,
        }
    }
}
