//! Constraint samples: Sobol points in the state box, uniform grids in time
//! and control, and their Cartesian product.

use crate::ocp::ControlProblem;
use crate::{Error, Result};

/// One `(t, x, u)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

/// Joe–Kuo direction-number parameters `(s, a, m_1..m_s)` for dimensions 2..=10.
const JOE_KUO: [(u32, u32, &[u32]); 9] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

pub const MAX_SOBOL_DIM: usize = JOE_KUO.len() + 1;
const BITS: usize = 32;

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for k in 0..s.min(BITS) {
            v[k] = m[k] << (BITS - 1 - k);
        }
        for k in s..BITS {
            v[k] = v[k - s] ^ (v[k - s] >> s);
            for j in 1..s {
                if (a >> (s - 1 - j)) & 1 == 1 {
                    v[k] ^= v[k - j];
                }
            }
        }
        out.push(v);
    }
    out
}

/// First `count` points of the unscrambled Sobol sequence in Gray-code order,
/// skipping the initial all-zero point, mapped affinely into the box.
pub fn sobol_points(dim: usize, count: usize, lo: &[f64], hi: &[f64]) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_SOBOL_DIM {
        return Err(Error::Parameter(format!("Sobol dimension must be in 1..={MAX_SOBOL_DIM}, got {dim}")));
    }
    if count == 0 {
        return Err(Error::Parameter("Sobol count must be at least 1".into()));
    }
    if lo.len() != dim || hi.len() != dim {
        return Err(Error::Parameter("Sobol box does not match dimension".into()));
    }
    if count as u64 >= 1u64 << BITS {
        return Err(Error::Parameter("too many Sobol points requested".into()));
    }
    let directions = direction_numbers(dim);
    let mut state = vec![0u32; dim];
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut points = Vec::with_capacity(count);
    // Point n differs from point n − 1 in the direction of the lowest zero bit of n − 1.
    for n in 1..=count as u64 {
        let bit = (n - 1).trailing_ones() as usize;
        for (s, v) in state.iter_mut().zip(&directions) {
            *s ^= v[bit];
        }
        points
            .push(state.iter().zip(lo.iter().zip(hi)).map(|(&s, (&l, &h))| l + (h - l) * (s as f64 * scale)).collect());
    }
    Ok(points)
}

/// `count` equally spaced points including both endpoints; the midpoint when
/// `count == 1`.
pub fn uniform_grid(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            let mut g: Vec<f64> = (0..count).map(|k| lo + k as f64 * step).collect();
            g[count - 1] = hi;
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<Sample>,
    pub n_t: usize,
    pub n_x: usize,
    pub n_u: usize,
    /// Leading Sobol points skipped.
    pub sobol_skip: usize,
}

impl SampleSet {
    /// Wraps an explicit list, e.g. for hand-built instances.
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let n = samples.len();
        Self { samples, n_t: 1, n_x: n, n_u: 1, sobol_skip: 0 }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }
}

/// Cartesian product of `n_t` uniform times on `[0, T]`, `n_x` Sobol states and
/// a uniform grid of `n_u` values per control coordinate, enumerated t-major,
/// then x, then u (lexicographic in the control coordinates).
pub fn build_sample_set(problem: &dyn ControlProblem, n_t: usize, n_x: usize, n_u: usize) -> Result<SampleSet> {
    if n_t == 0 || n_x == 0 || n_u == 0 {
        return Err(Error::Parameter("sample counts must be at least 1".into()));
    }
    let times = uniform_grid(n_t, 0.0, problem.horizon());
    let sbox = problem.state_box();
    let states = sobol_points(problem.state_dim(), n_x, sbox.lo(), sbox.hi())?;
    let cbox = problem.control_box();
    let axes: Vec<Vec<f64>> =
        (0..problem.control_dim()).map(|k| uniform_grid(n_u, cbox.lo()[k], cbox.hi()[k])).collect();

    let mut controls: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        controls = controls
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }

    let mut samples = Vec::with_capacity(times.len() * states.len() * controls.len());
    for &t in &times {
        for x in &states {
            for u in &controls {
                samples.push(Sample { t, x: x.clone(), u: u.clone() });
            }
        }
    }
    Ok(SampleSet { samples, n_t, n_x, n_u, sobol_skip: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::LqrProblem;

    #[test]
    fn first_sobol_points() {
        assert_eq!(sobol_points(1, 1, &[0.0], &[1.0]).unwrap(), vec![vec![0.5]]);
        let p = sobol_points(2, 3, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p, vec![vec![0.5, 0.5], vec![0.75, 0.25], vec![0.25, 0.75]]);
    }

    #[test]
    fn sobol_rejects_bad_dimension() {
        assert!(matches!(sobol_points(11, 3, &[0.0; 11], &[1.0; 11]), Err(Error::Parameter(_))));
        assert!(matches!(sobol_points(0, 3, &[], &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn grids() {
        assert_eq!(uniform_grid(3, 0.0, 1.0), vec![0.0, 0.5, 1.0]);
        assert_eq!(uniform_grid(1, -10.0, 10.0), vec![0.0]);
        assert_eq!(uniform_grid(2, 0.0, 2.5), vec![0.0, 2.5]);
    }

    #[test]
    fn product_sizes_and_order() {
        let lqr = LqrProblem::double_integrator();
        let s = build_sample_set(&lqr, 1, 1, 1).unwrap();
        assert_eq!(s.len(), 1);
        let s = build_sample_set(&lqr, 20, 20, 20).unwrap();
        assert_eq!(s.len(), 8000);
        let s = build_sample_set(&lqr, 2, 3, 4).unwrap();
        assert_eq!(s.samples()[0].t, 0.0);
        assert_eq!(s.samples()[11].t, 0.0);
        assert_eq!(s.samples()[12].t, 1.0);
        assert_eq!(s.samples()[4].x, s.samples()[7].x);
        assert_eq!(s.samples()[0].u, vec![-10.0]);
        assert_eq!(s.samples()[3].u, vec![10.0]);
        assert!(s.iter().all(|smp| lqr.state_box().contains(&smp.x) && lqr.control_box().contains(&smp.u)));
    }
}
