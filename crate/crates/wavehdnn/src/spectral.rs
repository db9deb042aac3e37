//! Heat-kernel graph wavelet operators built from the normalized hypergraph
//! Laplacian.
//!
//! The pair (Θ, Θ′) applies `e^{−sL}` and `e^{+sL}`: Θ = U·diag(e^{−sλ})·Uᵀ
//! and Θ′ = U·diag(e^{+sλ})·Uᵀ, so Θ·Θ′ = I. Small problems use an exact
//! symmetric eigendecomposition; larger ones use a Chebyshev polynomial
//! approximation applied matrix-free through the three-term recurrence on
//! the rescaled Laplacian `2L/λ_max − I`.

use crate::diffcore::LinearMap;
use crate::hypergraph::SparseMatrix;
use crate::{Error, Result};
use ndarray::Array2;
use std::sync::Arc;

/// Dense eigendecomposition cutoff for [`exact_wavelet`].
pub const DEFAULT_DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletMode {
    Exact,
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Θ, kernel `e^{−sλ}`.
    Forward,
    /// Θ′, kernel `e^{+sλ}`.
    Inverse,
}

struct ExactData {
    /// Orthonormal eigenvector matrix U (columns are eigenvectors).
    eigvecs: Array2<f64>,
    /// Eigenvalues clamped to `[0, ∞)`.
    eigvals: Vec<f64>,
    kernel_forward: Vec<f64>,
    kernel_inverse: Vec<f64>,
}

struct ChebyshevData {
    laplacian: Arc<SparseMatrix>,
    lambda_max: f64,
    order: usize,
    coeffs_forward: Vec<f64>,
    coeffs_inverse: Vec<f64>,
    approx_err_forward: f64,
    approx_err_inverse: f64,
}

/// Factorized wavelet pair; immutable after construction, applications are
/// pure.
pub struct WaveletOperator {
    mode: WaveletMode,
    scale: f64,
    dim: usize,
    exact: Option<ExactData>,
    cheb: Option<ChebyshevData>,
}

impl std::fmt::Debug for WaveletOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WaveletOperator")
            .field("mode", &self.mode)
            .field("scale", &self.scale)
            .field("dim", &self.dim)
            .finish()
    }
}

impl WaveletOperator {
    pub fn mode(&self) -> WaveletMode {
        self.mode
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Eigenvalues in exact mode (clamped to `[0, ∞)`).
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.exact.as_ref().map(|e| e.eigvals.as_slice())
    }

    /// Estimated spectral bound in Chebyshev mode.
    pub fn lambda_max(&self) -> Option<f64> {
        self.cheb.as_ref().map(|c| c.lambda_max)
    }

    /// Max pointwise kernel approximation error measured at construction
    /// (Chebyshev mode).
    pub fn approximation_error(&self, direction: Direction) -> Option<f64> {
        self.cheb.as_ref().map(|c| match direction {
            Direction::Forward => c.approx_err_forward,
            Direction::Inverse => c.approx_err_inverse,
        })
    }

    /// Apply Θ (forward) or Θ′ (inverse) to the columns of `x`.
    pub fn apply(&self, direction: Direction, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "wavelet apply",
                expected: format!("{} rows", self.dim),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        match self.mode {
            WaveletMode::Exact => {
                let data = self.exact.as_ref().expect("exact data present");
                let kernel = match direction {
                    Direction::Forward => &data.kernel_forward,
                    Direction::Inverse => &data.kernel_inverse,
                };
                // U · diag(kernel) · Uᵀ · x as two dense products.
                let mut spectral = data.eigvecs.t().dot(x);
                for (i, mut row) in spectral.rows_mut().into_iter().enumerate() {
                    let k = kernel[i];
                    row.mapv_inplace(|v| v * k);
                }
                Ok(data.eigvecs.dot(&spectral))
            }
            WaveletMode::Chebyshev => {
                let data = self.cheb.as_ref().expect("chebyshev data present");
                let coeffs = match direction {
                    Direction::Forward => &data.coeffs_forward,
                    Direction::Inverse => &data.coeffs_inverse,
                };
                Ok(chebyshev_apply(
                    &data.laplacian,
                    data.lambda_max,
                    coeffs,
                    x,
                ))
            }
        }
    }

    /// Constant [`LinearMap`] adapter for the autodiff tape. Θ and Θ′ are
    /// symmetric, so the transpose application is the application itself.
    pub fn as_linear_map(self: &Arc<Self>, direction: Direction) -> Arc<dyn LinearMap> {
        Arc::new(WaveletApplyMap {
            op: Arc::clone(self),
            direction,
        })
    }
}

struct WaveletApplyMap {
    op: Arc<WaveletOperator>,
    direction: Direction,
}

impl LinearMap for WaveletApplyMap {
    fn out_rows(&self) -> usize {
        self.op.dim()
    }
    fn in_rows(&self) -> usize {
        self.op.dim()
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.op
            .apply(self.direction, x)
            .expect("dimension checked by the tape")
    }
    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        self.apply(g)
    }
    fn describe(&self) -> String {
        format!("wavelet {:?} (n = {})", self.direction, self.op.dim())
    }
}

fn check_symmetric(l: &SparseMatrix) -> Result<()> {
    if l.num_rows() != l.num_cols() {
        return Err(Error::ContractViolation(format!(
            "laplacian must be square, got {}x{}",
            l.num_rows(),
            l.num_cols()
        )));
    }
    let mut entries: std::collections::BTreeMap<(usize, usize), f64> = std::collections::BTreeMap::new();
    for (r, c, v) in l.iter_triplets() {
        entries.insert((r, c), v);
    }
    for (&(r, c), &v) in &entries {
        let vt = entries.get(&(c, r)).copied().unwrap_or(0.0);
        if (v - vt).abs() > 1e-10 {
            return Err(Error::ContractViolation(format!(
                "laplacian not symmetric at ({r},{c}): {v} vs {vt}"
            )));
        }
    }
    Ok(())
}

fn check_scale(s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Config(format!(
            "wavelet scale must be a non-negative finite real, got {s}"
        )));
    }
    Ok(())
}

/// Exact wavelet pair by dense symmetric eigendecomposition.
pub fn exact_wavelet(l: &SparseMatrix, s: f64) -> Result<WaveletOperator> {
    exact_wavelet_with_limit(l, s, DEFAULT_DENSE_LIMIT)
}

/// [`exact_wavelet`] with an explicit dense-size cutoff.
pub fn exact_wavelet_with_limit(l: &SparseMatrix, s: f64, limit: usize) -> Result<WaveletOperator> {
    check_scale(s)?;
    check_symmetric(l)?;
    let n = l.num_rows();
    if n > limit {
        return Err(Error::DenseLimitExceeded { n, limit });
    }

    let dense = l.to_dense();
    let mat = nalgebra::DMatrix::from_fn(n, n, |r, c| dense[(r, c)]);
    let eig = nalgebra::SymmetricEigen::try_new(mat, 1e-13, 10_000)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;

    let eigvals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let eigvecs = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, c)]);
    let kernel_forward: Vec<f64> = eigvals.iter().map(|&v| (-s * v).exp()).collect();
    let kernel_inverse: Vec<f64> = eigvals.iter().map(|&v| (s * v).exp()).collect();

    log::info!("exact wavelet: n={n} s={s} lambda_range=[{:.3e}, {:.3e}]",
        eigvals.iter().cloned().fold(f64::INFINITY, f64::min),
        eigvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));

    Ok(WaveletOperator {
        mode: WaveletMode::Exact,
        scale: s,
        dim: n,
        exact: Some(ExactData {
            eigvecs,
            eigvals,
            kernel_forward,
            kernel_inverse,
        }),
        cheb: None,
    })
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn estimate_lambda_max(l: &SparseMatrix) -> f64 {
    use rand::Rng;
    use rand::SeedableRng;
    let n = l.num_rows();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED_CAFE);
    let mut v = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.5..1.5));
    let norm = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.mapv_inplace(|x| x / nv);

    let mut lambda = 0.0f64;
    for _ in 0..300 {
        let w = l.matmul_dense(&v);
        let new_lambda = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
        let wn = norm(&w);
        if wn < 1e-300 {
            return 0.0;
        }
        v = w.mapv(|x| x / wn);
        if (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs().max(1.0) {
            return new_lambda.max(0.0);
        }
        lambda = new_lambda;
    }
    lambda.max(0.0)
}

/// Chebyshev projection coefficients of `f` on `[0, lambda_max]` using
/// `2K+2` Chebyshev–Gauss quadrature points.
fn chebyshev_coeffs<F: Fn(f64) -> f64>(f: F, lambda_max: f64, order: usize) -> Vec<f64> {
    let n = 2 * order + 2;
    let half = lambda_max / 2.0;
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let theta = std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
            let t = theta.cos();
            (theta, f(half * (t + 1.0)))
        })
        .collect();
    (0..=order)
        .map(|k| {
            let sum: f64 = samples
                .iter()
                .map(|&(theta, fv)| fv * (k as f64 * theta).cos())
                .sum();
            let factor = if k == 0 { 1.0 } else { 2.0 };
            factor * sum / n as f64
        })
        .collect()
}

/// Evaluate the Chebyshev expansion at a scalar `lambda ∈ [0, lambda_max]`.
fn chebyshev_eval(coeffs: &[f64], lambda_max: f64, lambda: f64) -> f64 {
    let t = 2.0 * lambda / lambda_max - 1.0;
    let mut acc = coeffs[0];
    let (mut t_prev, mut t_curr) = (1.0, t);
    for &c in &coeffs[1..] {
        acc += c * t_curr;
        let t_next = 2.0 * t * t_curr - t_prev;
        t_prev = t_curr;
        t_curr = t_next;
    }
    acc
}

/// Apply the expansion to the columns of `x` via the three-term recurrence
/// on the rescaled Laplacian, never materializing a dense operator.
fn chebyshev_apply(
    l: &SparseMatrix,
    lambda_max: f64,
    coeffs: &[f64],
    x: &Array2<f64>,
) -> Array2<f64> {
    // L̂ y = (2/λ_max) L y − y
    let rescaled = |y: &Array2<f64>| -> Array2<f64> {
        let mut out = l.matmul_dense(y);
        out.mapv_inplace(|v| v * (2.0 / lambda_max));
        out - y
    };
    let mut acc = x.mapv(|v| v * coeffs[0]);
    if coeffs.len() == 1 {
        return acc;
    }
    let mut t_prev = x.clone();
    let mut t_curr = rescaled(x);
    acc = acc + t_curr.mapv(|v| v * coeffs[1]);
    for &c in &coeffs[2..] {
        let t_next = rescaled(&t_curr).mapv(|v| 2.0 * v) - &t_prev;
        acc = acc + t_next.mapv(|v| v * c);
        t_prev = t_curr;
        t_curr = t_next;
    }
    acc
}

/// Chebyshev-approximated wavelet pair of order `K ≥ 1`.
///
/// `λ_max` is estimated by power iteration with a +1% safety margin; the
/// max pointwise kernel error over a dense grid is recorded and logged.
pub fn chebyshev_wavelet(l: &Arc<SparseMatrix>, s: f64, order: usize) -> Result<WaveletOperator> {
    if order < 1 {
        return Err(Error::Config(format!(
            "chebyshev order must be at least 1, got {order}"
        )));
    }
    check_scale(s)?;
    check_symmetric(l)?;
    let n = l.num_rows();
    let lambda_max = (estimate_lambda_max(l) * 1.01).max(1e-8);

    let coeffs_forward = chebyshev_coeffs(|lam| (-s * lam).exp(), lambda_max, order);
    let coeffs_inverse = chebyshev_coeffs(|lam| (s * lam).exp(), lambda_max, order);

    let grid_error = |coeffs: &[f64], sign: f64| -> f64 {
        (0..=512)
            .map(|i| {
                let lam = lambda_max * i as f64 / 512.0;
                (chebyshev_eval(coeffs, lambda_max, lam) - (sign * s * lam).exp()).abs()
            })
            .fold(0.0, f64::max)
    };
    let approx_err_forward = grid_error(&coeffs_forward, -1.0);
    let approx_err_inverse = grid_error(&coeffs_inverse, 1.0);

    log::info!(
        "chebyshev wavelet: n={n} s={s} K={order} lambda_max={lambda_max:.6} err_fwd={approx_err_forward:.3e} err_inv={approx_err_inverse:.3e}"
    );

    Ok(WaveletOperator {
        mode: WaveletMode::Chebyshev,
        scale: s,
        dim: n,
        exact: None,
        cheb: Some(ChebyshevData {
            laplacian: Arc::clone(l),
            lambda_max,
            order,
            coeffs_forward,
            coeffs_inverse,
            approx_err_forward,
            approx_err_inverse,
        }),
    })
}

impl WaveletOperator {
    /// Chebyshev expansion order, if in Chebyshev mode.
    pub fn order(&self) -> Option<usize> {
        self.cheb.as_ref().map(|c| c.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_node_laplacian() -> SparseMatrix {
        SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 0.5), (0, 1, -0.5), (1, 0, -0.5), (1, 1, 0.5)],
        )
        .unwrap()
    }

    fn random_laplacian(nodes: usize, edges: usize, seed: u64) -> SparseMatrix {
        use crate::data::InteractionDataset;
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        for n in 0..nodes {
            // Every node in at least one hyperedge.
            train.push((n, rng.random_range(0..edges)));
            for e in 0..edges {
                if rng.random::<f64>() < 0.15 {
                    train.push((n, e));
                }
            }
        }
        train.sort_unstable();
        train.dedup();
        let ds = InteractionDataset::from_splits(nodes, edges, train, vec![], vec![], 0);
        let (user_side, _) = crate::hypergraph::build_views(&ds).unwrap();
        crate::hypergraph::normalized_laplacian(&user_side).unwrap()
    }

    #[test]
    fn scale_zero_gives_identity() {
        let l = two_node_laplacian();
        let op = exact_wavelet(&l, 0.0).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = op.apply(Direction::Forward, &x).unwrap();
        for (&a, &b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_example_theta_at_ln2() {
        let l = two_node_laplacian();
        let op = exact_wavelet(&l, std::f64::consts::LN_2).unwrap();
        let theta = op.apply(Direction::Forward, &Array2::eye(2)).unwrap();
        let expected = array![[0.75, 0.25], [0.25, 0.75]];
        for (&a, &b) in theta.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "got {theta:?}");
        }
    }

    #[test]
    fn forward_of_basis_vector() {
        let l = two_node_laplacian();
        let op = exact_wavelet(&l, std::f64::consts::LN_2).unwrap();
        let e1 = array![[1.0], [0.0]];
        let y = op.apply(Direction::Forward, &e1).unwrap();
        assert!((y[(0, 0)] - 0.75).abs() < 1e-12);
        assert!((y[(1, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn forward_inverse_identity() {
        let l = random_laplacian(12, 9, 3);
        let op = exact_wavelet(&l, 1.0).unwrap();
        let x = Array2::from_shape_fn((12, 4), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let y = op
            .apply(Direction::Inverse, &op.apply(Direction::Forward, &x).unwrap())
            .unwrap();
        for (&a, &b) in y.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_mode_is_symmetric_operator() {
        let l = random_laplacian(10, 8, 4);
        let op = exact_wavelet(&l, 1.0).unwrap();
        let theta = op.apply(Direction::Forward, &Array2::eye(10)).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!((theta[(i, j)] - theta[(j, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eigenvalues_within_laplacian_range() {
        for seed in 0..5 {
            let l = random_laplacian(16, 10, seed);
            let op = exact_wavelet(&l, 1.0).unwrap();
            for &v in op.eigenvalues().unwrap() {
                assert!((-1e-10..=2.0 + 1e-10).contains(&v), "eigenvalue {v}");
            }
        }
    }

    #[test]
    fn dense_limit_exceeded_directs_to_chebyshev() {
        let l = random_laplacian(8, 6, 1);
        let err = exact_wavelet_with_limit(&l, 1.0, 4).unwrap_err();
        assert!(matches!(err, Error::DenseLimitExceeded { n: 8, limit: 4 }));
    }

    #[test]
    fn chebyshev_scale_zero_is_identity() {
        let l = Arc::new(random_laplacian(10, 7, 2));
        for k in [1, 4, 9] {
            let op = chebyshev_wavelet(&l, 0.0, k).unwrap();
            let x = Array2::from_shape_fn((10, 3), |(i, j)| (i + j) as f64 * 0.3 - 1.0);
            let y = op.apply(Direction::Forward, &x).unwrap();
            for (&a, &b) in y.iter().zip(x.iter()) {
                assert!((a - b).abs() < 1e-12, "K={k}");
            }
        }
    }

    #[test]
    fn chebyshev_matches_exact_on_two_node_graph() {
        let l = two_node_laplacian();
        let exact = exact_wavelet(&l, std::f64::consts::LN_2).unwrap();
        let cheb = chebyshev_wavelet(&Arc::new(l), std::f64::consts::LN_2, 8).unwrap();
        let eye = Array2::eye(2);
        let a = exact.apply(Direction::Forward, &eye).unwrap();
        let b = cheb.apply(Direction::Forward, &eye).unwrap();
        for (&x, &y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn chebyshev_error_shrinks_with_order() {
        let l = Arc::new(random_laplacian(24, 14, 5));
        let exact = exact_wavelet(&l, 1.0).unwrap();
        let x = Array2::from_shape_fn((24, 2), |(i, j)| ((i * 3 + j) as f64 * 0.37).cos());
        let exact_y = exact.apply(Direction::Forward, &x).unwrap();
        let err_at = |k: usize| -> f64 {
            let op = chebyshev_wavelet(&l, 1.0, k).unwrap();
            let y = op.apply(Direction::Forward, &x).unwrap();
            let num = y
                .iter()
                .zip(exact_y.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let den = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            num / den
        };
        let e5 = err_at(5);
        let e20 = err_at(20);
        assert!(e20 <= e5, "K=20 error {e20} vs K=5 error {e5}");
        assert!(e20 < 1e-3);
    }

    #[test]
    fn rejects_bad_configuration() {
        let l = Arc::new(two_node_laplacian());
        assert!(matches!(
            chebyshev_wavelet(&l, 1.0, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            chebyshev_wavelet(&l, -0.5, 4),
            Err(Error::Config(_))
        ));
        assert!(matches!(exact_wavelet(&l, f64::NAN), Err(Error::Config(_))));
    }

    #[test]
    fn apply_is_linear() {
        let l = random_laplacian(9, 6, 8);
        let op = exact_wavelet(&l, 1.0).unwrap();
        let x = Array2::from_shape_fn((9, 2), |(i, j)| (i as f64 - j as f64) * 0.21);
        let y = Array2::from_shape_fn((9, 2), |(i, j)| ((i + 2 * j) as f64 * 0.13).sin());
        let lhs = op
            .apply(Direction::Forward, &(x.mapv(|v| 2.0 * v) + y.mapv(|v| -0.7 * v)))
            .unwrap();
        let rhs = op.apply(Direction::Forward, &x).unwrap().mapv(|v| 2.0 * v)
            + op.apply(Direction::Forward, &y).unwrap().mapv(|v| -0.7 * v);
        for (&a, &b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let l = random_laplacian(7, 5, 9);
        let op = exact_wavelet(&l, 1.3).unwrap();
        let x = Array2::zeros((7, 3));
        let y = op.apply(Direction::Forward, &x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let l = two_node_laplacian();
        let op = exact_wavelet(&l, 1.0).unwrap();
        assert!(op.apply(Direction::Forward, &Array2::zeros((3, 1))).is_err());
    }
}
