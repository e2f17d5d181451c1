//! Laplacian eigenbasis, graph Fourier transform, and Chebyshev filters.
//!
//! Filtering has two routes that must agree:
//! - [`cheb_filter_apply`] runs the recurrence `T_0 = R`, `T_1 = L~ R`,
//!   `T_k = 2 L~ T_{k-1} - T_{k-2}` on the shifted operator `L~ = L - I`
//!   using sparse products only;
//! - [`spectral_filter_oracle`] forms `U g(Lambda) U^T R` from a dense
//!   eigendecomposition and exists to verify the first route and to drive
//!   diagnostics such as the synthetic corpus.
//!
//! The oracle is deliberately capped at [`EIG_ORACLE_LIMIT`] nodes.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::scalar::{cast, Scalar};

/// Largest graph accepted by the dense eigendecomposition.
pub const EIG_ORACLE_LIMIT: usize = 512;

/// Eigenvalues within this distance of 0 or 2 are clamped onto the boundary.
const EIG_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("graph with {n} nodes exceeds the eigendecomposition limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("eigenvalue {value} lies outside [0, 2] beyond the boundary tolerance")]
    EigenvalueOutOfRange { value: f64 },
    #[error("a filter needs at least one coefficient")]
    EmptyCoefficients,
    #[error("filter coefficient {index} is not finite")]
    NonFiniteCoefficient { index: usize },
    #[error("lambda = {lambda} is outside the Laplacian spectrum [0, 2]")]
    LambdaOutOfDomain { lambda: f64 },
    #[error("signal has {got} rows but the basis spans {expected} nodes")]
    SignalRowMismatch { got: usize, expected: usize },
    #[error("a response grid needs at least 2 points")]
    GridTooSmall,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Chebyshev coefficients `alpha_0..alpha_K` of one filter.
///
/// The response at eigenvalue `lambda` in `[0, 2]` is
/// `sum_k alpha_k T_k(lambda - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs<T> {
    alpha: Vec<T>,
}

impl<T: Scalar> FilterCoeffs<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self, SpectralError> {
        if alpha.is_empty() {
            return Err(SpectralError::EmptyCoefficients);
        }
        for (index, a) in alpha.iter().enumerate() {
            if !a.is_finite() {
                return Err(SpectralError::NonFiniteCoefficient { index });
            }
        }
        Ok(Self { alpha })
    }

    /// Filter order `K`; the coefficient count is `K + 1`.
    pub fn order(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// Low-pass response `2 - lambda` (coefficients `(1, -1, 0, ...)`),
    /// zero-padded to order `k`. This is the propagation rule of a plain
    /// graph convolution layer, so it doubles as an equivalence oracle.
    pub fn lowpass(k: usize) -> Self {
        let mut alpha = vec![T::zero(); k + 1];
        alpha[0] = T::one();
        if k >= 1 {
            alpha[1] = -T::one();
        }
        Self { alpha }
    }

    /// Evaluates the response at `lambda` via the Chebyshev recurrence.
    pub fn eval(&self, lambda: T) -> Result<T, SpectralError> {
        if !(lambda >= T::zero() && lambda <= cast::<T>(2.0)) {
            return Err(SpectralError::LambdaOutOfDomain {
                lambda: lambda.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mu = lambda - T::one();
        let mut acc = self.alpha[0];
        if self.alpha.len() == 1 {
            return Ok(acc);
        }
        let mut t_prev = T::one();
        let mut t_cur = mu;
        acc += self.alpha[1] * t_cur;
        for k in 2..self.alpha.len() {
            let t_next = cast::<T>(2.0) * mu * t_cur - t_prev;
            t_prev = t_cur;
            t_cur = t_next;
            acc += self.alpha[k] * t_cur;
        }
        Ok(acc)
    }
}

/// Eigendecomposition of the normalized Laplacian, eigenvalues ascending.
///
/// Column `k` of the eigenvector matrix pairs with `eigenvalues()[k]`. Each
/// eigenvector is sign-normalized so its largest-magnitude entry (first such
/// entry on ties) is positive, which makes the basis deterministic.
#[derive(Debug, Clone)]
pub struct SpectralBasis<T> {
    eigenvalues: Vec<T>,
    eigenvectors: Array2<T>,
}

impl<T: Scalar> SpectralBasis<T> {
    pub fn num_nodes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Array2<T> {
        &self.eigenvectors
    }

    /// Graph Fourier transform `U^T x`.
    pub fn gft(&self, x: &Array1<T>) -> Result<Array1<T>, SpectralError> {
        if x.len() != self.num_nodes() {
            return Err(SpectralError::SignalRowMismatch {
                got: x.len(),
                expected: self.num_nodes(),
            });
        }
        Ok(self.eigenvectors.t().dot(x))
    }

    /// Inverse transform `U x_hat`.
    pub fn igft(&self, x_hat: &Array1<T>) -> Result<Array1<T>, SpectralError> {
        if x_hat.len() != self.num_nodes() {
            return Err(SpectralError::SignalRowMismatch {
                got: x_hat.len(),
                expected: self.num_nodes(),
            });
        }
        Ok(self.eigenvectors.dot(x_hat))
    }
}

/// Dense symmetric eigendecomposition of `L`, capped at [`EIG_ORACLE_LIMIT`].
pub fn eig_laplacian<T>(g: &Graph<T>) -> Result<SpectralBasis<T>, SpectralError>
where
    T: Scalar + nalgebra::RealField,
{
    eig_laplacian_limited(g, EIG_ORACLE_LIMIT)
}

/// As [`eig_laplacian`] with an explicit node cap.
pub fn eig_laplacian_limited<T>(
    g: &Graph<T>,
    limit: usize,
) -> Result<SpectralBasis<T>, SpectralError>
where
    T: Scalar + nalgebra::RealField,
{
    use num_traits::Float;

    let n = g.num_nodes();
    if n > limit {
        return Err(SpectralError::TooLarge { n, limit });
    }
    let dense = g.dense_laplacian();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("symmetric eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let two = cast::<T>(2.0);
    let tol = cast::<T>(EIG_BOUNDARY_TOL);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Array2::<T>::zeros((n, n));
    for (k, &src) in order.iter().enumerate() {
        let mut lam = eig.eigenvalues[src];
        if lam < T::zero() || lam > two {
            if lam >= -tol && lam <= two + tol {
                lam = Float::min(Float::max(lam, T::zero()), two);
            } else {
                return Err(SpectralError::EigenvalueOutOfRange {
                    value: lam.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        eigenvalues.push(lam);

        // Deterministic sign: largest-magnitude entry becomes positive.
        let col = eig.eigenvectors.column(src);
        let mut lead = T::zero();
        for i in 0..n {
            if Float::abs(col[i]) > Float::abs(lead) {
                lead = col[i];
            }
        }
        let flip = lead < T::zero();
        for i in 0..n {
            eigenvectors[[i, k]] = if flip { -col[i] } else { col[i] };
        }
    }
    Ok(SpectralBasis { eigenvalues, eigenvectors })
}

/// `T_k(L~) R` for `k = 0..=order`; the shared basis of every filter in a
/// layer, also cached for the backward pass.
pub fn cheb_basis_terms<T: Scalar>(
    g: &Graph<T>,
    order: usize,
    r: &Array2<T>,
) -> Result<Vec<Array2<T>>, SpectralError> {
    let mut terms = Vec::with_capacity(order + 1);
    terms.push(r.clone());
    if order >= 1 {
        terms.push(g.scaled_laplacian_matvec(r)?);
    }
    for k in 2..=order {
        let two_l_t = g.scaled_laplacian_matvec(&terms[k - 1])? * cast::<T>(2.0);
        terms.push(two_l_t - &terms[k - 2]);
    }
    Ok(terms)
}

/// Applies one filter to a multi-column signal with `K` sparse products.
pub fn cheb_filter_apply<T: Scalar>(
    g: &Graph<T>,
    coeffs: &FilterCoeffs<T>,
    r: &Array2<T>,
) -> Result<Array2<T>, SpectralError> {
    let terms = cheb_basis_terms(g, coeffs.order(), r)?;
    Ok(combine_terms(&terms, coeffs.alpha()))
}

/// `sum_k alpha_k T_k(L~) R` from precomputed basis terms.
pub fn combine_terms<T: Scalar>(terms: &[Array2<T>], alpha: &[T]) -> Array2<T> {
    debug_assert_eq!(terms.len(), alpha.len());
    let mut acc = &terms[0] * alpha[0];
    for (t, &a) in terms.iter().zip(alpha).skip(1) {
        acc.zip_mut_with(t, |av, &tv| *av += a * tv);
    }
    acc
}

/// Exact filtering `U g(Lambda) U^T R` through the eigenbasis.
pub fn spectral_filter_oracle<T: Scalar>(
    basis: &SpectralBasis<T>,
    coeffs: &FilterCoeffs<T>,
    r: &Array2<T>,
) -> Result<Array2<T>, SpectralError> {
    if r.nrows() != basis.num_nodes() {
        return Err(SpectralError::SignalRowMismatch {
            got: r.nrows(),
            expected: basis.num_nodes(),
        });
    }
    let u = &basis.eigenvectors;
    let mut r_hat = u.t().dot(r);
    for (k, &lam) in basis.eigenvalues.iter().enumerate() {
        let gain = coeffs.eval(lam)?;
        r_hat.row_mut(k).mapv_inplace(|v| v * gain);
    }
    Ok(u.dot(&r_hat))
}

/// Samples the response on a uniform grid over `[0, 2]`.
pub fn frequency_response_grid<T: Scalar>(
    coeffs: &FilterCoeffs<T>,
    num_points: usize,
) -> Result<Vec<(T, T)>, SpectralError> {
    if num_points < 2 {
        return Err(SpectralError::GridTooSmall);
    }
    let span = cast::<T>((num_points - 1) as f64);
    (0..num_points)
        .map(|i| {
            let lam = cast::<T>(2.0) * cast::<T>(i as f64) / span;
            coeffs.eval(lam).map(|resp| (lam, resp))
        })
        .collect()
}
