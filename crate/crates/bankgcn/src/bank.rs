//! Filter-bank convolution layer.
//!
//! A layer projects the node signal into `s` low-dimensional subspaces,
//! filters each subspace with its own learned Chebyshev filter on the shifted
//! Laplacian, adds a full-pass shortcut, concatenates the subspaces, applies
//! ReLU, and l2-normalizes each node row:
//!
//! ```text
//! R_p = X W_p + b_p
//! H_p = sum_k alpha_p[k] T_k(L - I) R_p + R_p
//! Y   = normalize_rows(relu(concat_p H_p))
//! ```
//!
//! The backward pass is hand-derived; `T_k(L - I)` is self-adjoint, so the
//! filter's adjoint reuses the same recurrence.

use ndarray::{Array1, Array2};
use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::scalar::{cast, Scalar};
use crate::spectral::{cheb_basis_terms, combine_terms, FilterCoeffs, SpectralError};

/// Denominator guard for the diversity penalty on zero-norm coefficients.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("layer width {d_out} is not divisible by {subspaces} subspaces")]
    WidthNotDivisible { d_out: usize, subspaces: usize },
    #[error("a layer needs at least one subspace")]
    ZeroSubspaces,
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error("input has {got} columns but the layer expects {expected}")]
    InputWidthMismatch { got: usize, expected: usize },
    #[error("subspace parameter lists must have equal lengths and shapes")]
    InconsistentParams,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parameters of one filter-bank layer.
#[derive(Debug, Clone)]
pub struct BankLayerParams<T> {
    d_in: usize,
    d_sub: usize,
    pub(crate) proj_w: Vec<Array2<T>>,
    pub(crate) proj_b: Vec<Array1<T>>,
    pub(crate) filters: Vec<FilterCoeffs<T>>,
}

/// Gradients of one layer, shape-matched to [`BankLayerParams`].
#[derive(Debug, Clone)]
pub struct BankLayerGrads<T> {
    pub proj_w: Vec<Array2<T>>,
    pub proj_b: Vec<Array1<T>>,
    pub alpha: Vec<Array1<T>>,
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BankCache<T> {
    input: Array2<T>,
    /// `cheb[p][k] = T_k(L - I) R_p`; `cheb[p][0]` is the projection itself.
    cheb: Vec<Vec<Array2<T>>>,
    pre_act: Array2<T>,
    output: Array2<T>,
    row_norms: Vec<T>,
}

impl<T: Scalar> BankCache<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    /// Concatenated subspace outputs before ReLU and row normalization.
    pub fn pre_activation(&self) -> &Array2<T> {
        &self.pre_act
    }

    /// ReLU activity pattern; part of the decision trace used to spot
    /// finite-difference probes that straddle a kink.
    pub fn relu_mask(&self) -> Vec<bool> {
        self.pre_act.iter().map(|&h| h > T::zero()).collect()
    }
}

impl<T: Scalar> BankLayerParams<T> {
    /// Randomly initialized layer.
    ///
    /// Projections draw from `U(-c, c)` with `c = sqrt(6 / (d_in + d_out/s))`,
    /// biases start at zero, and filter coefficients draw from `U(-a, a)`
    /// with `a = 1 / sqrt(K + 1)`.
    pub fn new<R: Rng>(
        d_in: usize,
        d_out: usize,
        subspaces: usize,
        order: usize,
        rng: &mut R,
    ) -> Result<Self, BankError> {
        if subspaces == 0 {
            return Err(BankError::ZeroSubspaces);
        }
        if d_in == 0 || d_out == 0 {
            return Err(BankError::ZeroWidth);
        }
        if !d_out.is_multiple_of(subspaces) {
            return Err(BankError::WidthNotDivisible { d_out, subspaces });
        }
        let d_sub = d_out / subspaces;
        let w_bound = (6.0 / (d_in + d_sub) as f64).sqrt();
        let a_bound = 1.0 / ((order + 1) as f64).sqrt();
        let mut proj_w = Vec::with_capacity(subspaces);
        let mut proj_b = Vec::with_capacity(subspaces);
        let mut filters = Vec::with_capacity(subspaces);
        for _ in 0..subspaces {
            let w = Array2::from_shape_fn((d_in, d_sub), |_| {
                cast::<T>(rng.random_range(-w_bound..w_bound))
            });
            let alpha: Vec<T> = (0..=order)
                .map(|_| cast::<T>(rng.random_range(-a_bound..a_bound)))
                .collect();
            proj_w.push(w);
            proj_b.push(Array1::zeros(d_sub));
            filters.push(FilterCoeffs::new(alpha).expect("bounded draw is finite"));
        }
        Ok(Self { d_in, d_sub, proj_w, proj_b, filters })
    }

    /// Assembles a layer from explicit parts; all lists must agree in length,
    /// shape, and filter order.
    pub fn from_parts(
        proj_w: Vec<Array2<T>>,
        proj_b: Vec<Array1<T>>,
        filters: Vec<FilterCoeffs<T>>,
    ) -> Result<Self, BankError> {
        if proj_w.is_empty() {
            return Err(BankError::ZeroSubspaces);
        }
        if proj_w.len() != proj_b.len() || proj_w.len() != filters.len() {
            return Err(BankError::InconsistentParams);
        }
        let (d_in, d_sub) = (proj_w[0].nrows(), proj_w[0].ncols());
        if d_in == 0 || d_sub == 0 {
            return Err(BankError::ZeroWidth);
        }
        let order = filters[0].order();
        for ((w, b), f) in proj_w.iter().zip(&proj_b).zip(&filters) {
            if w.nrows() != d_in || w.ncols() != d_sub || b.len() != d_sub || f.order() != order {
                return Err(BankError::InconsistentParams);
            }
        }
        Ok(Self { d_in, d_sub, proj_w, proj_b, filters })
    }

    pub fn subspaces(&self) -> usize {
        self.proj_w.len()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_sub(&self) -> usize {
        self.d_sub
    }

    pub fn d_out(&self) -> usize {
        self.d_sub * self.subspaces()
    }

    pub fn order(&self) -> usize {
        self.filters[0].order()
    }

    pub fn filters(&self) -> &[FilterCoeffs<T>] {
        &self.filters
    }

    pub fn proj_w(&self) -> &[Array2<T>] {
        &self.proj_w
    }

    pub fn proj_b(&self) -> &[Array1<T>] {
        &self.proj_b
    }

    /// Overwrites every filter with the same coefficient vector.
    pub fn set_uniform_filters(&mut self, coeffs: &FilterCoeffs<T>) {
        for f in &mut self.filters {
            *f = coeffs.clone();
        }
    }

    /// Projects the node signal into each subspace: `R_p = X W_p + b_p`.
    pub fn project(&self, x: &Array2<T>) -> Result<Vec<Array2<T>>, BankError> {
        if x.ncols() != self.d_in {
            return Err(BankError::InputWidthMismatch { got: x.ncols(), expected: self.d_in });
        }
        Ok(self
            .proj_w
            .iter()
            .zip(&self.proj_b)
            .map(|(w, b)| x.dot(w) + b)
            .collect())
    }

    /// Full layer application.
    pub fn forward(&self, g: &Graph<T>, x: &Array2<T>) -> Result<Array2<T>, BankError> {
        Ok(self.forward_cached(g, x)?.output)
    }

    /// Layer application that retains intermediates for [`Self::backward`].
    pub fn forward_cached(
        &self,
        g: &Graph<T>,
        x: &Array2<T>,
    ) -> Result<BankCache<T>, BankError> {
        let n = x.nrows();
        let s = self.subspaces();
        let projections = self.project(x)?;
        let mut cheb = Vec::with_capacity(s);
        let mut pre_act = Array2::<T>::zeros((n, self.d_out()));
        for (p, r) in projections.into_iter().enumerate() {
            let terms = cheb_basis_terms(g, self.order(), &r)?;
            let mut h = combine_terms(&terms, self.filters[p].alpha());
            // Full-pass shortcut keeps the unfiltered projection in the sum.
            h.zip_mut_with(&terms[0], |hv, &rv| *hv += rv);
            pre_act
                .slice_mut(ndarray::s![.., p * self.d_sub..(p + 1) * self.d_sub])
                .assign(&h);
            cheb.push(terms);
        }

        let mut output = pre_act.mapv(|h| if h > T::zero() { h } else { T::zero() });
        let mut row_norms = Vec::with_capacity(n);
        for mut row in output.rows_mut() {
            let norm = row.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            if norm > T::zero() {
                row.mapv_inplace(|v| v / norm);
            }
            row_norms.push(norm);
        }
        Ok(BankCache { input: x.clone(), cheb, pre_act, output, row_norms })
    }

    /// Backward pass; returns parameter gradients and the input gradient.
    pub fn backward(
        &self,
        g: &Graph<T>,
        cache: &BankCache<T>,
        d_out: &Array2<T>,
    ) -> Result<(BankLayerGrads<T>, Array2<T>), BankError> {
        let n = cache.input.nrows();
        let s = self.subspaces();

        // Row normalization: d_a = (d_y - y (y . d_y)) / norm; zero rows and
        // the ReLU subgradient at 0 both propagate zero.
        let mut d_act = Array2::<T>::zeros(d_out.raw_dim());
        for i in 0..n {
            let norm = cache.row_norms[i];
            if norm <= T::zero() {
                continue;
            }
            let y = cache.output.row(i);
            let dy = d_out.row(i);
            let dot = y.dot(&dy);
            let mut da = d_act.row_mut(i);
            for j in 0..y.len() {
                da[j] = (dy[j] - y[j] * dot) / norm;
            }
        }
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&cache.pre_act, |dv, &h| {
            if h <= T::zero() {
                *dv = T::zero();
            }
        });

        let mut grads = BankLayerGrads {
            proj_w: Vec::with_capacity(s),
            proj_b: Vec::with_capacity(s),
            alpha: Vec::with_capacity(s),
        };
        let mut d_x = Array2::<T>::zeros((n, self.d_in));
        for p in 0..s {
            let dh = d_pre
                .slice(ndarray::s![.., p * self.d_sub..(p + 1) * self.d_sub])
                .to_owned();
            let terms = &cache.cheb[p];
            let mut d_alpha = Array1::<T>::zeros(self.order() + 1);
            for (k, t) in terms.iter().enumerate() {
                d_alpha[k] = t.iter().zip(dh.iter()).fold(T::zero(), |acc, (&tv, &dv)| {
                    acc + tv * dv
                });
            }
            // Adjoint of the filter is the filter itself, plus the shortcut.
            let dh_terms = cheb_basis_terms(g, self.order(), &dh)?;
            let mut d_r = combine_terms(&dh_terms, self.filters[p].alpha());
            d_r.zip_mut_with(&dh, |rv, &dv| *rv += dv);

            grads.proj_w.push(cache.input.t().dot(&d_r));
            grads.proj_b.push(d_r.sum_axis(ndarray::Axis(0)));
            d_x = d_x + d_r.dot(&self.proj_w[p].t());
            grads.alpha.push(d_alpha);
        }
        Ok((grads, d_x))
    }

    /// Trainable parameter count.
    ///
    /// `PerSubspace` counts everything that is trained: `d_in * d_out + d_out`
    /// projection entries plus `s (K + 1)` filter coefficients. `SharedFilter`
    /// counts one coefficient vector per layer, the convention used by
    /// comparisons that report counts independent of the subspace split.
    pub fn param_count(&self, convention: ParamCountConvention) -> usize {
        let proj = self.d_in * self.d_out() + self.d_out();
        match convention {
            ParamCountConvention::PerSubspace => proj + self.subspaces() * (self.order() + 1),
            ParamCountConvention::SharedFilter => proj + self.order() + 1,
        }
    }
}

/// How filter coefficients enter a parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCountConvention {
    PerSubspace,
    SharedFilter,
}

/// Largest pairwise absolute cosine similarity between filter coefficient
/// vectors; 0 for fewer than two filters.
///
/// Norms are guarded with `1e-12`, so exactly colinear pairs evaluate a hair
/// below 1 and the value always lies in `[0, 1]`.
pub fn diversity_penalty<T: Scalar>(filters: &[FilterCoeffs<T>]) -> T {
    diversity_penalty_grad(filters).0
}

/// Diversity penalty plus its subgradient.
///
/// The max is non-smooth; the gradient flows through exactly one maximizing
/// pair, the lexicographically smallest, which also identifies tie situations
/// for finite-difference probes. Returns the penalty, the chosen pair, and
/// per-filter gradients (zero except at the chosen pair).
pub fn diversity_penalty_grad<T: Scalar>(
    filters: &[FilterCoeffs<T>],
) -> (T, Option<(usize, usize)>, Vec<Array1<T>>) {
    let grads: Vec<Array1<T>> = filters
        .iter()
        .map(|f| Array1::zeros(f.alpha().len()))
        .collect();
    if filters.len() < 2 {
        return (T::zero(), None, grads);
    }
    let eps = cast::<T>(NORM_EPS);
    let norm = |f: &FilterCoeffs<T>| {
        f.alpha()
            .iter()
            .fold(T::zero(), |acc, &a| acc + a * a)
            .sqrt()
    };
    let mut best = T::zero();
    let mut pair: Option<(usize, usize)> = None;
    for p in 0..filters.len() {
        for q in (p + 1)..filters.len() {
            let dot = filters[p]
                .alpha()
                .iter()
                .zip(filters[q].alpha())
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let value = dot.abs() / ((norm(&filters[p]) + eps) * (norm(&filters[q]) + eps));
            if pair.is_none() || value > best {
                best = value;
                pair = Some((p, q));
            }
        }
    }
    let (p, q) = pair.expect("at least one pair");
    let mut grads = grads;
    let a = &filters[p];
    let b = &filters[q];
    let dot = a
        .alpha()
        .iter()
        .zip(b.alpha())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let (na, nb) = (norm(a), norm(b));
    let (ga, gb) = (na + eps, nb + eps);
    let sign = if dot > T::zero() {
        T::one()
    } else if dot < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    // d/da |a.b| / (ga gb) = sign(a.b) b / (ga gb) - |a.b| a / (ga^2 gb ||a||)
    for (k, g) in grads[p].iter_mut().enumerate() {
        let mut v = sign * b.alpha()[k] / (ga * gb);
        if na > T::zero() {
            v -= dot.abs() * a.alpha()[k] / (ga * ga * gb * na);
        }
        *g = v;
    }
    for (k, g) in grads[q].iter_mut().enumerate() {
        let mut v = sign * a.alpha()[k] / (ga * gb);
        if nb > T::zero() {
            v -= dot.abs() * b.alpha()[k] / (gb * gb * ga * nb);
        }
        *g = v;
    }
    (best, Some((p, q)), grads)
}
