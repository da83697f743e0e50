//! Generalized empirical Fisher information over head gradients, its
//! trace-of-inverse, and the one-dimensional two-group toy problem where the
//! optimal sampling distribution has a closed form.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::debias::{fc_gradient, SamplingDistribution};
use crate::error::{Error, Result};
use crate::nn::{forward_batch, ModelParams};

const CHUNK: usize = 256;
/// Default ridge as a fraction of the mean diagonal.
pub const RIDGE_FRACTION: f64 = 1e-6;

/// `sum_i h_i g_i g_i^T`, dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EfiMatrix {
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub ridge: f64,
}

impl EfiMatrix {
    /// Weighted sum of outer products; only the upper triangle is accumulated, then mirrored.
    pub fn from_gradients<'a>(grads: impl IntoIterator<Item = (&'a [f64], f64)>, dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for (g, w) in grads {
            accumulate(&mut m, dim, g, w);
        }
        mirror(&mut m, dim);
        Self {
            dim,
            matrix: m,
            ridge: 0.0,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.matrix[r * self.dim + c]
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i)).sum::<f64>() / self.dim as f64
    }

    pub fn default_ridge(&self) -> f64 {
        RIDGE_FRACTION * self.mean_diagonal()
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                worst = worst.max((self.at(r, c) - self.at(c, r)).abs());
            }
        }
        worst
    }

    /// Eigenvalues of the matrix without the ridge, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.matrix);
        let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))?;
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

fn accumulate(m: &mut [f64], dim: usize, g: &[f64], w: f64) {
    for a in 0..dim {
        let ga = w * g[a];
        if ga == 0.0 {
            continue;
        }
        let row = &mut m[a * dim + a..(a + 1) * dim];
        for (dst, &gb) in row.iter_mut().zip(&g[a..]) {
            *dst += ga * gb;
        }
    }
}

fn mirror(m: &mut [f64], dim: usize) {
    for r in 0..dim {
        for c in 0..r {
            m[r * dim + c] = m[c * dim + r];
        }
    }
}

/// EFI of the classifier head at `params`, weighted by `dist`.
pub fn efi(params: &ModelParams, view: &TrainView<'_>, dist: &SamplingDistribution) -> Result<EfiMatrix> {
    if dist.len() != view.len() {
        return Err(Error::Dimension(format!(
            "distribution over {} indices, view has {}",
            dist.len(),
            view.len()
        )));
    }
    let dim = params.n_classes() * (params.feature_dim() + 1);
    let mut m = vec![0.0; dim * dim];
    for start in (0..view.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(view.len());
        let trace = forward_batch(params, &view.images()[start..end])?;
        for b in 0..end - start {
            let i = start + b;
            let g = fc_gradient(&trace, b, view.target(i)).flatten();
            accumulate(&mut m, dim, &g, dist.probs()[i]);
        }
    }
    mirror(&mut m, dim);
    Ok(EfiMatrix {
        dim,
        matrix: m,
        ridge: 0.0,
    })
}

/// Ridge for comparing several matrices on equal footing: the default
/// fraction of their pooled mean diagonal.
pub fn shared_ridge(mats: &[&EfiMatrix]) -> f64 {
    if mats.is_empty() {
        return 0.0;
    }
    RIDGE_FRACTION * mats.iter().map(|m| m.mean_diagonal()).sum::<f64>() / mats.len() as f64
}

/// `Tr[(I + ridge)^-1] = sum 1 / (lambda_i + ridge)`.
pub fn trace_inverse(efi: &EfiMatrix) -> Result<f64> {
    trace_inverse_from_eigenvalues(&efi.eigenvalues()?, efi.ridge)
}

pub fn trace_inverse_from_eigenvalues(eigenvalues: &[f64], ridge: f64) -> Result<f64> {
    let mut total = 0.0;
    for &l in eigenvalues {
        let v = l + ridge;
        if !(v > 0.0) {
            return Err(Error::Numeric(format!(
                "eigenvalue {l} + ridge {ridge} is not positive; matrix is singular"
            )));
        }
        total += 1.0 / v;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfiSummary {
    pub dim: usize,
    pub ridge: f64,
    pub min_eigenvalue: f64,
    pub median_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub trace_inverse: f64,
}

pub fn summarize(efi: &EfiMatrix) -> Result<EfiSummary> {
    let eig = efi.eigenvalues()?;
    let median = if eig.len() % 2 == 1 {
        eig[eig.len() / 2]
    } else {
        0.5 * (eig[eig.len() / 2 - 1] + eig[eig.len() / 2])
    };
    Ok(EfiSummary {
        dim: efi.dim,
        ridge: efi.ridge,
        min_eigenvalue: eig[0],
        median_eigenvalue: median,
        max_eigenvalue: *eig.last().unwrap(),
        trace_inverse: trace_inverse_from_eigenvalues(&eig, efi.ridge)?,
    })
}

/// Two groups of scalar samples: a majority `M` with loss `(theta + a)^2 / 2`
/// and a minority `m` with loss `(theta - a)^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyProblem {
    pub size_major: usize,
    pub size_minor: usize,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyErm {
    pub theta: f64,
    pub grad_major: f64,
    pub grad_minor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyGridOptimum {
    /// `|M| * h_M` at the grid argmin.
    pub mass_major: f64,
    pub h_major: f64,
    pub h_minor: f64,
    pub trace_inverse: f64,
    pub step: f64,
}

impl ToyProblem {
    pub fn new(size_major: usize, size_minor: usize, a: f64) -> Result<Self> {
        if size_major == 0 || size_minor == 0 || !(a > 0.0 && a.is_finite()) {
            return Err(Error::Config(
                "toy problem needs positive group sizes and a positive finite a".into(),
            ));
        }
        Ok(Self {
            size_major,
            size_minor,
            a,
        })
    }

    /// Stationary point of the `h`-weighted loss for group masses
    /// `(t, 1 - t) = (|M| h_M, |m| h_m)`.
    pub fn weighted_optimum(&self, mass_major: f64) -> f64 {
        let mass_minor = 1.0 - mass_major;
        self.a * (mass_minor - mass_major) / (mass_major + mass_minor)
    }

    /// Trace of the inverse (scalar) Fisher information at the weighted optimum.
    pub fn objective(&self, mass_major: f64) -> f64 {
        let theta = self.weighted_optimum(mass_major);
        let g_major = theta + self.a;
        let g_minor = theta - self.a;
        let info = mass_major * g_major * g_major + (1.0 - mass_major) * g_minor * g_minor;
        1.0 / info
    }
}

/// Uniform-weight ERM solution and the group gradients there.
pub fn toy_erm(prob: &ToyProblem) -> ToyErm {
    let (big, small) = (prob.size_major as f64, prob.size_minor as f64);
    let theta = prob.a * (small - big) / (big + small);
    ToyErm {
        theta,
        grad_major: theta + prob.a,
        grad_minor: theta - prob.a,
    }
}

/// Gradient-norm proportional sampling at the ERM solution: `h_g = |g_g(theta_U)| / Z`.
pub fn toy_optimal_h(prob: &ToyProblem) -> (f64, f64) {
    let erm = toy_erm(prob);
    let (gm, gn) = (erm.grad_major.abs(), erm.grad_minor.abs());
    let z = prob.size_major as f64 * gm + prob.size_minor as f64 * gn;
    (gm / z, gn / z)
}

/// Exhaustive search over `grid_steps` evenly spaced masses `t` in `[0, 1]`;
/// the endpoints are skipped since the information vanishes there.
pub fn toy_brute_force(prob: &ToyProblem, grid_steps: usize) -> Result<ToyGridOptimum> {
    if grid_steps < 3 {
        return Err(Error::Config("grid needs at least 3 points".into()));
    }
    let step = 1.0 / (grid_steps - 1) as f64;
    let (mut best_t, mut best) = (f64::NAN, f64::INFINITY);
    for k in 1..grid_steps - 1 {
        let t = k as f64 * step;
        let v = prob.objective(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    Ok(ToyGridOptimum {
        mass_major: best_t,
        h_major: best_t / prob.size_major as f64,
        h_minor: (1.0 - best_t) / prob.size_minor as f64,
        trace_inverse: best,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(values: &[f64]) -> EfiMatrix {
        let n = values.len();
        let mut m = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            m[i * n + i] = *v;
        }
        EfiMatrix {
            dim: n,
            matrix: m,
            ridge: 0.0,
        }
    }

    #[test]
    fn trace_inverse_reference() {
        assert!((trace_inverse(&diag(&[1.0; 7])).unwrap() - 7.0).abs() < 1e-12);
        assert!((trace_inverse(&diag(&[1.0, 2.0, 4.0])).unwrap() - 1.75).abs() < 1e-12);
        // Scalar information 4 a^2 t (1 - t) at a = 1, t = 0.5.
        assert!((trace_inverse(&diag(&[1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!(trace_inverse(&diag(&[1.0, 0.0])).is_err());
        assert!(trace_inverse(&diag(&[1.0, 0.0]).with_ridge(0.5)).is_ok());
    }

    #[test]
    fn single_gradient_is_rank_one() {
        let g = [1.0, -2.0, 0.5];
        let m = EfiMatrix::from_gradients([(&g[..], 1.0)], 3);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m.at(r, c), g[r] * g[c]);
            }
        }
        let eig = m.eigenvalues().unwrap();
        assert!(eig[0].abs() < 1e-12 && eig[1].abs() < 1e-12);
        assert!((eig[2] - 5.25).abs() < 1e-12);
    }

    #[test]
    fn scalar_weighted_sum() {
        let gs = [[2.0], [-1.0], [0.5]];
        let h = [0.2, 0.5, 0.3];
        let m = EfiMatrix::from_gradients(gs.iter().zip(h).map(|(g, w)| (&g[..], w)), 1);
        let expected = 0.2 * 4.0 + 0.5 * 1.0 + 0.3 * 0.25;
        assert!((m.at(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn ridge_decreases_trace_inverse() {
        let m = diag(&[0.1, 1.0, 3.0]);
        let mut prev = f64::INFINITY;
        for r in [0.0, 1e-3, 1e-2, 0.1, 1.0] {
            let v = trace_inverse(&m.clone().with_ridge(r)).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn toy_erm_reference() {
        let p = ToyProblem::new(9, 1, 1.0).unwrap();
        let e = toy_erm(&p);
        assert!((e.theta + 0.8).abs() < 1e-15);
        assert!((e.grad_major - 0.2).abs() < 1e-15);
        assert!((e.grad_minor + 1.8).abs() < 1e-15);
        assert!((9.0 * e.grad_major + e.grad_minor).abs() < 1e-14);

        let sym = toy_erm(&ToyProblem::new(4, 4, 2.5).unwrap());
        assert_eq!(sym.theta, 0.0);
        assert_eq!(sym.grad_major.abs(), 2.5);
        assert_eq!(sym.grad_minor.abs(), 2.5);
    }

    #[test]
    fn toy_erm_minimizes_uniform_loss() {
        // Golden-section search on the uniform-weight loss as an independent check.
        let p = ToyProblem::new(9, 1, 1.0).unwrap();
        let loss = |t: f64| 9.0 * 0.5 * (t + 1.0).powi(2) + 0.5 * (t - 1.0).powi(2);
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if loss(x1) < loss(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        assert!((toy_erm(&p).theta - 0.5 * (lo + hi)).abs() < 1e-8);
    }

    #[test]
    fn toy_optimal_reference() {
        let (hm, hn) = toy_optimal_h(&ToyProblem::new(9, 1, 1.0).unwrap());
        assert!((hm - 1.0 / 18.0).abs() < 1e-15);
        assert!((hn - 0.5).abs() < 1e-15);
        let (hm, hn) = toy_optimal_h(&ToyProblem::new(5, 5, 3.0).unwrap());
        assert!((hm - 0.1).abs() < 1e-15 && (hn - 0.1).abs() < 1e-15);
    }

    #[test]
    fn toy_objective_is_symmetric_and_scale_free() {
        let p = ToyProblem::new(7, 3, 1.3).unwrap();
        for t in [0.1, 0.25, 0.4] {
            assert!((p.objective(t) - p.objective(1.0 - t)).abs() < 1e-12 * p.objective(t));
            assert!((p.objective(t) - 1.0 / (4.0 * 1.3f64.powi(2) * t * (1.0 - t))).abs() < 1e-12 * p.objective(t));
        }
        let doubled = ToyProblem { a: 2.6, ..p };
        let a = toy_brute_force(&p, 1001).unwrap();
        let b = toy_brute_force(&doubled, 1001).unwrap();
        assert_eq!(a.mass_major, b.mass_major);
    }

    #[test]
    fn grid_needs_three_points() {
        let p = ToyProblem::new(1, 1, 1.0).unwrap();
        assert!(toy_brute_force(&p, 2).is_err());
        assert!((toy_brute_force(&p, 3).unwrap().mass_major - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn closed_form_matches_grid(big in 1usize..500, small in 1usize..500, a in 0.01f64..100.0) {
            let p = ToyProblem::new(big, small, a).unwrap();
            let (hm, hn) = toy_optimal_h(&p);
            let grid = toy_brute_force(&p, 2001).unwrap();
            prop_assert!((big as f64 * hm - grid.mass_major).abs() <= grid.step);
            prop_assert!((big as f64 * hm + small as f64 * hn - 1.0).abs() < 1e-12);
            let e = toy_erm(&p);
            prop_assert!((hm / hn - e.grad_major.abs() / e.grad_minor.abs()).abs() < 1e-9 * (hm / hn));
        }
    }
}
