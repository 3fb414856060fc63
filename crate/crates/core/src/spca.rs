//! Sparse principal component analysis solved as elastic-net penalized
//! regression, with ordinary PCA as the initializer and zero-penalty limit.
//!
//! The fit alternates two exact minimization steps on the criterion
//! `||X - X B A^T||_F^2 + λ2 ||B||_F^2 + Σ_j λ1_j ||β_j||_1` with A
//! orthonormal: a coordinate-descent elastic net per component for B, and an
//! orthogonal Procrustes update (thin SVD of `X^T X B`) for A. Both steps
//! lower the criterion, so the objective value is non-increasing across
//! outer iterations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum SpcaError {
    #[error("component count must satisfy 1 <= k <= min(n, m) = {max_k}, got {k}")]
    BadComponentCount { k: usize, max_k: usize },
    #[error("lambda_lasso has {len} entries but k = {k}")]
    BadLambdaCount { len: usize, k: usize },
    #[error("penalties must be finite and non-negative")]
    BadPenalty,
    #[error("max_outer_iterations and convergence_tolerance must be positive")]
    BadBudget,
    #[error("use_components must satisfy 1 <= c <= k = {k}, got {c}")]
    BadUseComponents { c: usize, k: usize },
    #[error(
        "elastic net did not converge within {sweeps} sweeps (KKT residual {residual:.3e})"
    )]
    ElasticNetNoConvergence {
        sweeps: usize,
        residual: f64,
        coefficients: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, SpcaError>;

/// Penalty and budget settings for one SPCA fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcaConfig {
    pub k: usize,
    /// Quadratic (ridge) penalty shared by all components.
    pub lambda_ridge: f64,
    /// Per-component L1 penalties; length must equal `k`.
    pub lambda_lasso: Vec<f64>,
    pub max_outer_iterations: usize,
    pub convergence_tolerance: f64,
}

impl SpcaConfig {
    /// Config with one L1 penalty shared by every component and default
    /// budgets (200 outer iterations, tolerance 1e-6).
    pub fn uniform(k: usize, lambda_ridge: f64, lambda_lasso: f64) -> Self {
        Self {
            k,
            lambda_ridge,
            lambda_lasso: vec![lambda_lasso; k],
            max_outer_iterations: 200,
            convergence_tolerance: 1e-6,
        }
    }

    /// Same penalties and budgets, different component count.
    pub fn with_components(&self, k: usize) -> Self {
        let lambda = self.lambda_lasso.first().copied().unwrap_or(0.0);
        Self {
            k,
            lambda_ridge: self.lambda_ridge,
            lambda_lasso: vec![lambda; k],
            max_outer_iterations: self.max_outer_iterations,
            convergence_tolerance: self.convergence_tolerance,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let max_k = n.min(m);
        if self.k == 0 || self.k > max_k {
            return Err(SpcaError::BadComponentCount { k: self.k, max_k });
        }
        if self.lambda_lasso.len() != self.k {
            return Err(SpcaError::BadLambdaCount {
                len: self.lambda_lasso.len(),
                k: self.k,
            });
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_ridge) || !self.lambda_lasso.iter().all(|&l| ok(l)) {
            return Err(SpcaError::BadPenalty);
        }
        if self.max_outer_iterations == 0 || !(self.convergence_tolerance > 0.0) {
            return Err(SpcaError::BadBudget);
        }
        Ok(())
    }
}

/// Sparse loading matrix: columns unit-norm or all-zero, signs fixed so the
/// largest-magnitude entry of each nonzero column is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcaLoadings {
    pub loadings: DMatrix<f64>,
    pub nonzero_counts: Vec<usize>,
    pub adjusted_variance: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

/// Top-k eigenvectors of `X^T X / n`, descending eigenvalue, unit norm,
/// largest-magnitude entry of each column positive.
pub fn pca_loadings(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, m) = (x.nrows(), x.ncols());
    let max_k = n.min(m);
    if k == 0 || k > max_k {
        return Err(SpcaError::BadComponentCount { k, max_k });
    }
    let cov = x.transpose() * x / n as f64;
    let eigen = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut loadings = DMatrix::zeros(m, k);
    for (out_col, &src_col) in order.iter().take(k).enumerate() {
        let mut column = eigen.eigenvectors.column(src_col).clone_owned();
        canonicalize_sign(&mut column);
        loadings.set_column(out_col, &column);
    }
    Ok(loadings)
}

fn canonicalize_sign(column: &mut DVector<f64>) {
    let mut max_abs = 0.0;
    let mut max_idx = 0;
    for (i, &v) in column.iter().enumerate() {
        if v.abs() > max_abs {
            max_abs = v.abs();
            max_idx = i;
        }
    }
    if max_abs > 0.0 && column[max_idx] < 0.0 {
        column.neg_mut();
    }
}

fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

const ELASTIC_NET_MAX_SWEEPS: usize = 10_000;

/// Coordinate state for the gram-form coordinate-descent solver.
struct CdProblem<'a> {
    gram: &'a DMatrix<f64>,
    xty: &'a DVector<f64>,
    lambda_ridge: f64,
    lambda_lasso: f64,
}

impl CdProblem<'_> {
    /// Max violation of the stationarity conditions:
    /// `|c_j| <= λ1` at zero coordinates, `c_j = λ1 sign(β_j)` otherwise,
    /// with `c_j = 2 x_j^T (y - X β) - 2 λ2 β_j`.
    fn kkt_residual(&self, beta: &DVector<f64>, gram_beta: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..beta.len() {
            let c = 2.0 * (self.xty[j] - gram_beta[j]) - 2.0 * self.lambda_ridge * beta[j];
            let violation = if beta[j] == 0.0 {
                (c.abs() - self.lambda_lasso).max(0.0)
            } else {
                (c - self.lambda_lasso * beta[j].signum()).abs()
            };
            worst = worst.max(violation);
        }
        worst
    }

    fn solve(&self) -> Result<DVector<f64>> {
        let m = self.xty.len();
        let mut beta = DVector::zeros(m);
        let mut gram_beta = DVector::zeros(m);
        let tolerance = 1e-8 * self.xty.amax().max(1.0);
        let mut residual = f64::INFINITY;
        for sweep in 0..ELASTIC_NET_MAX_SWEEPS {
            let mut moved = false;
            for j in 0..m {
                let denom = self.gram[(j, j)] + self.lambda_ridge;
                if denom <= 0.0 {
                    continue;
                }
                // Correlation with the partial residual that excludes j.
                let rho = self.xty[j] - gram_beta[j] + self.gram[(j, j)] * beta[j];
                let new = soft_threshold(rho, self.lambda_lasso / 2.0) / denom;
                if new != beta[j] {
                    let delta = new - beta[j];
                    gram_beta.axpy(delta, &self.gram.column(j).clone_owned(), 1.0);
                    beta[j] = new;
                    moved = true;
                }
            }
            residual = self.kkt_residual(&beta, &gram_beta);
            if residual <= tolerance || !moved {
                return Ok(beta);
            }
            let _ = sweep;
        }
        Err(SpcaError::ElasticNetNoConvergence {
            sweeps: ELASTIC_NET_MAX_SWEEPS,
            residual,
            coefficients: beta.iter().copied().collect(),
        })
    }
}

/// Minimizes `||y - X β||^2 + lambda_ridge ||β||^2 + lambda_lasso ||β||_1`
/// by cyclic coordinate descent with soft-thresholding.
pub fn elastic_net(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda_ridge: f64,
    lambda_lasso: f64,
) -> Result<DVector<f64>> {
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !ok(lambda_ridge) || !ok(lambda_lasso) {
        return Err(SpcaError::BadPenalty);
    }
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    CdProblem {
        gram: &gram,
        xty: &xty,
        lambda_ridge,
        lambda_lasso,
    }
    .solve()
}

/// Normalizes each column to unit norm (zero columns stay zero) and fixes
/// signs. Returns the number of nonzero entries per column.
fn normalize_columns(b: &mut DMatrix<f64>) -> Vec<usize> {
    let mut counts = Vec::with_capacity(b.ncols());
    for j in 0..b.ncols() {
        let mut column = b.column(j).clone_owned();
        let norm = column.norm();
        if norm > 0.0 {
            column /= norm;
            canonicalize_sign(&mut column);
        }
        counts.push(column.iter().filter(|v| **v != 0.0).count());
        b.set_column(j, &column);
    }
    counts
}

/// The criterion the alternating fit minimizes, evaluated in gram form
/// (valid because A has orthonormal columns).
fn objective(gram: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, config: &SpcaConfig) -> f64 {
    let gb = gram * b;
    let reconstruction = gram.trace() - 2.0 * (a.transpose() * &gb).trace()
        + (b.transpose() * &gb).trace();
    let ridge = config.lambda_ridge * b.iter().map(|v| v * v).sum::<f64>();
    let lasso: f64 = (0..b.ncols())
        .map(|j| config.lambda_lasso[j] * b.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    reconstruction + ridge + lasso
}

/// Alternating SPCA from a caller-supplied initial A. Returns the loadings
/// and the per-iteration objective trace.
pub(crate) fn fit_from_initial(
    x: &DMatrix<f64>,
    config: &SpcaConfig,
    initial_a: DMatrix<f64>,
) -> Result<(SpcaLoadings, Vec<f64>)> {
    config.validate(x.nrows(), x.ncols())?;
    let gram = x.transpose() * x;
    let mut a = initial_a;
    let mut previous: Option<DMatrix<f64>> = None;
    let mut converged = false;
    let mut inner_failed = false;
    let mut iterations_used = 0;
    let mut trace = Vec::new();
    let mut b = DMatrix::zeros(x.ncols(), config.k);

    for iteration in 1..=config.max_outer_iterations {
        iterations_used = iteration;
        // Per-component elastic nets share only the read-only gram and A.
        let columns = par::map_indexed(config.k, |j| {
            let xty = &gram * a.column(j).clone_owned();
            CdProblem {
                gram: &gram,
                xty: &xty,
                lambda_ridge: config.lambda_ridge,
                lambda_lasso: config.lambda_lasso[j],
            }
            .solve()
        });
        for (j, column) in columns.into_iter().enumerate() {
            match column {
                Ok(beta) => b.set_column(j, &beta),
                Err(SpcaError::ElasticNetNoConvergence { coefficients, .. }) => {
                    inner_failed = true;
                    b.set_column(j, &DVector::from_vec(coefficients));
                }
                Err(other) => return Err(other),
            }
        }

        // Procrustes step: A = U V^T from the thin SVD of (X^T X) B.
        let svd = (&gram * &b).svd(true, true);
        a = svd.u.as_ref().unwrap() * svd.v_t.as_ref().unwrap();
        trace.push(objective(&gram, &a, &b, config));

        let mut normalized = b.clone();
        normalize_columns(&mut normalized);
        if let Some(prev) = &previous {
            let diff = (&normalized - prev).amax();
            if diff < config.convergence_tolerance {
                converged = true;
                previous = Some(normalized);
                break;
            }
        }
        previous = Some(normalized);
    }

    let mut loadings = previous.unwrap_or_else(|| DMatrix::zeros(x.ncols(), config.k));
    let nonzero_counts = normalize_columns(&mut loadings);
    let adjusted = adjusted_variance_of(x, &loadings);
    Ok((
        SpcaLoadings {
            loadings,
            nonzero_counts,
            adjusted_variance: adjusted,
            converged: converged && !inner_failed,
            iterations_used,
        },
        trace,
    ))
}

/// Fits sparse loadings by the alternating elastic-net / Procrustes scheme,
/// initialized from ordinary PCA. Non-convergence is reported in the result,
/// never thrown.
pub fn spca_fit(x: &DMatrix<f64>, config: &SpcaConfig) -> Result<SpcaLoadings> {
    config.validate(x.nrows(), x.ncols())?;
    let initial = pca_loadings(x, config.k)?;
    fit_from_initial(x, config, initial).map(|(loadings, _)| loadings)
}

/// Indices of features with a nonzero coefficient in any of the first
/// `use_components` components, ascending.
pub fn selected_features(loadings: &SpcaLoadings, use_components: usize) -> Result<Vec<usize>> {
    let k = loadings.loadings.ncols();
    if use_components == 0 || use_components > k {
        return Err(SpcaError::BadUseComponents {
            c: use_components,
            k,
        });
    }
    let b = &loadings.loadings;
    Ok((0..b.nrows())
        .filter(|&j| (0..use_components).any(|c| b[(j, c)].abs() > 0.0))
        .collect())
}

/// Variance explained per component after removing overlap: QR-decompose
/// `X B = Q R` and take `R[j,j]^2 / n`.
pub fn adjusted_variance(x: &DMatrix<f64>, loadings: &SpcaLoadings) -> Vec<f64> {
    adjusted_variance_of(x, &loadings.loadings)
}

fn adjusted_variance_of(x: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let projected = x * b;
    let r = projected.qr().r();
    let n = x.nrows() as f64;
    (0..b.ncols()).map(|j| r[(j, j)] * r[(j, j)] / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn seeded_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    fn center_columns(x: &mut DMatrix<f64>) {
        let n = x.nrows() as f64;
        for j in 0..x.ncols() {
            let mean = x.column(j).sum() / n;
            for i in 0..x.nrows() {
                x[(i, j)] -= mean;
            }
        }
    }

    #[test]
    fn pca_recovers_rank_one_direction() {
        let t = DVector::from_vec(vec![1.5, -0.5, -2.0, 1.0, 0.0, 0.0]);
        let d = DVector::from_vec(vec![0.6, 0.8]);
        let x = &t * d.transpose();
        let loadings = pca_loadings(&x, 1).unwrap();
        assert_relative_eq!(loadings[(0, 0)], 0.6, epsilon = 1e-8);
        assert_relative_eq!(loadings[(1, 0)], 0.8, epsilon = 1e-8);
    }

    #[test]
    fn pca_equicorrelated_pair_gives_diagonal_direction() {
        // Closed-form oracle: for covariance [[1, rho], [rho, 1]] with
        // rho > 0 the leading eigenvector is (1, 1)/sqrt(2).
        let rho: f64 = 0.6;
        let u = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let v = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let col2 = rho * &u + (1.0 - rho * rho).sqrt() * &v;
        let mut x = DMatrix::zeros(4, 2);
        x.set_column(0, &u);
        x.set_column(1, &col2);
        let loadings = pca_loadings(&x, 1).unwrap();
        let expected = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(loadings[(0, 0)], expected, epsilon = 1e-10);
        assert_relative_eq!(loadings[(1, 0)], expected, epsilon = 1e-10);
    }

    #[test]
    fn pca_full_rank_basis_is_orthonormal() {
        let mut x = seeded_matrix(12, 5, 9);
        center_columns(&mut x);
        let loadings = pca_loadings(&x, 5).unwrap();
        let gram = loadings.transpose() * &loadings;
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_rejects_bad_k() {
        let x = seeded_matrix(4, 3, 1);
        assert!(matches!(
            pca_loadings(&x, 4),
            Err(SpcaError::BadComponentCount { .. })
        ));
        assert!(matches!(
            pca_loadings(&x, 0),
            Err(SpcaError::BadComponentCount { .. })
        ));
    }

    #[test]
    fn elastic_net_kills_everything_past_the_threshold() {
        let x = seeded_matrix(10, 4, 2);
        let y = DVector::from_fn(10, |i, _| (i as f64) - 4.5);
        let xty = x.transpose() * &y;
        let lambda = 2.0 * xty.amax() + 1.0;
        let beta = elastic_net(&x, &y, 0.0, lambda).unwrap();
        assert!(beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn elastic_net_matches_normal_equations_without_penalties() {
        let mut x = seeded_matrix(20, 5, 3);
        center_columns(&mut x);
        let truth = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        let y = &x * &truth;
        let beta = elastic_net(&x, &y, 0.0, 0.0).unwrap();
        // Independent oracle: solve the normal equations directly.
        let ls = (x.transpose() * &x)
            .lu()
            .solve(&(x.transpose() * &y))
            .unwrap();
        assert!((beta - ls).amax() < 1e-6);
    }

    #[test]
    fn elastic_net_scalar_closed_form() {
        let x = DMatrix::from_vec(4, 1, vec![1.0, -2.0, 0.5, 3.0]);
        let y = DVector::from_vec(vec![2.0, -1.0, 0.0, 4.0]);
        for &(l1, l2) in &[(0.0, 0.0), (3.0, 0.5), (10.0, 2.0), (100.0, 0.0)] {
            let beta = elastic_net(&x, &y, l2, l1).unwrap();
            let xty = x.column(0).dot(&y);
            let xtx = x.column(0).dot(&x.column(0));
            let expected = soft_threshold(xty, l1 / 2.0) / (xtx + l2);
            assert!(
                (beta[0] - expected).abs() < 1e-10,
                "l1={l1} l2={l2}: {} vs {expected}",
                beta[0]
            );
        }
    }

    #[test]
    fn spca_with_zero_lasso_matches_pca() {
        let mut x = seeded_matrix(30, 10, 4);
        center_columns(&mut x);
        let config = SpcaConfig::uniform(4, 1e-6, 0.0);
        let fit = spca_fit(&x, &config).unwrap();
        let pca = pca_loadings(&x, 4).unwrap();
        for j in 0..4 {
            let b = fit.loadings.column(j);
            let p = pca.column(j);
            let direct = (b - p).amax();
            let flipped = (b + p).amax();
            assert!(
                direct.min(flipped) < 1e-4,
                "component {j}: direct {direct:.2e}, flipped {flipped:.2e}"
            );
        }
    }

    #[test]
    fn spca_total_shrinkage_yields_zero_loadings() {
        let x = seeded_matrix(15, 6, 5);
        let config = SpcaConfig::uniform(2, 1e-4, 1e6);
        let fit = spca_fit(&x, &config).unwrap();
        assert!(fit.loadings.iter().all(|&v| v == 0.0));
        assert_eq!(fit.nonzero_counts, vec![0, 0]);
        assert!(fit.converged);
        assert!(fit.adjusted_variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spca_first_component_respects_truth_mask() {
        let spec = crate::dataset::SyntheticSpec {
            n_samples: 200,
            group_specs: vec![crate::dataset::GroupSpec {
                name: "g".into(),
                n_features: 5,
                n_informative: 2,
                factor_loading: 1.0,
                feature_noise_sd: 0.3,
            }],
            label_coefficients: vec![1.0],
            label_intercept: 0.0,
            seed: 8,
        };
        let (table, _, mask) = crate::dataset::generate_synthetic(&spec).unwrap();
        let (std_table, _) = crate::dataset::standardize(&table).unwrap();
        let config = SpcaConfig::uniform(1, 1e-4, 60.0);
        let fit = spca_fit(std_table.values(), &config).unwrap();
        let selected = selected_features(&fit, 1).unwrap();
        assert!(!selected.is_empty());
        for idx in selected {
            assert!(mask[idx], "noise feature {idx} selected");
        }
    }

    #[test]
    fn selected_features_examples() {
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = 0.7;
        b[(2, 0)] = 0.7;
        b[(1, 1)] = 1.0;
        let loadings = SpcaLoadings {
            loadings: b,
            nonzero_counts: vec![2, 1],
            adjusted_variance: vec![0.0, 0.0],
            converged: true,
            iterations_used: 1,
        };
        assert_eq!(selected_features(&loadings, 1).unwrap(), vec![0, 2]);
        assert_eq!(selected_features(&loadings, 2).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            selected_features(&loadings, 3),
            Err(SpcaError::BadUseComponents { .. })
        ));

        let zero = SpcaLoadings {
            loadings: DMatrix::zeros(4, 2),
            nonzero_counts: vec![0, 0],
            adjusted_variance: vec![0.0, 0.0],
            converged: true,
            iterations_used: 1,
        };
        assert!(selected_features(&zero, 2).unwrap().is_empty());

        let dense = SpcaLoadings {
            loadings: DMatrix::from_element(3, 3, 0.5),
            nonzero_counts: vec![3, 3, 3],
            adjusted_variance: vec![0.0; 3],
            converged: true,
            iterations_used: 1,
        };
        assert_eq!(selected_features(&dense, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn adjusted_variance_matches_eigenvalues_for_exact_pca() {
        let mut x = seeded_matrix(40, 6, 6);
        center_columns(&mut x);
        let k = 4;
        let pca = pca_loadings(&x, k).unwrap();
        let loadings = SpcaLoadings {
            loadings: pca,
            nonzero_counts: vec![6; k],
            adjusted_variance: vec![0.0; k],
            converged: true,
            iterations_used: 1,
        };
        let adjusted = adjusted_variance(&x, &loadings);

        let cov = x.transpose() * &x / 40.0;
        let mut eigenvalues: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..k {
            assert_relative_eq!(adjusted[j], eigenvalues[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn adjusted_variance_single_component_is_projection_variance() {
        let mut x = seeded_matrix(25, 4, 7);
        center_columns(&mut x);
        let pca = pca_loadings(&x, 1).unwrap();
        let projected = &x * pca.column(0);
        let expected = projected.iter().map(|v| v * v).sum::<f64>() / 25.0;
        let loadings = SpcaLoadings {
            loadings: pca,
            nonzero_counts: vec![4],
            adjusted_variance: vec![0.0],
            converged: true,
            iterations_used: 1,
        };
        let adjusted = adjusted_variance(&x, &loadings);
        assert_relative_eq!(adjusted[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn objective_is_non_increasing_across_outer_iterations() {
        let mut x = seeded_matrix(30, 8, 10);
        center_columns(&mut x);
        let config = SpcaConfig::uniform(3, 1e-4, 5.0);
        let initial = pca_loadings(&x, 3).unwrap();
        let (_, trace) = fit_from_initial(&x, &config, initial).unwrap();
        assert!(trace.len() >= 2);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "objective rose: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn selection_is_invariant_to_initial_sign_flips() {
        let mut x = seeded_matrix(25, 6, 11);
        center_columns(&mut x);
        let config = SpcaConfig::uniform(2, 1e-4, 4.0);
        let initial = pca_loadings(&x, 2).unwrap();
        let mut flipped = initial.clone();
        let negated = -flipped.column(1).clone_owned();
        flipped.set_column(1, &negated);

        let (fit_a, _) = fit_from_initial(&x, &config, initial).unwrap();
        let (fit_b, _) = fit_from_initial(&x, &config, flipped).unwrap();
        for c in 1..=2 {
            assert_eq!(
                selected_features(&fit_a, c).unwrap(),
                selected_features(&fit_b, c).unwrap()
            );
        }
    }

    #[test]
    fn sparsity_is_monotone_in_the_lasso_penalty() {
        let mut x = seeded_matrix(20, 8, 12);
        center_columns(&mut x);
        let mut previous = usize::MAX;
        for i in 0..6 {
            let lambda = 0.5 * 10.0f64.powf(i as f64 * 0.5);
            let config = SpcaConfig::uniform(2, 1e-4, lambda);
            let fit = spca_fit(&x, &config).unwrap();
            let total: usize = fit.nonzero_counts.iter().sum();
            assert!(
                total <= previous,
                "nonzeros rose from {previous} to {total} at lambda {lambda}"
            );
            previous = total;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn elastic_net_satisfies_kkt(
            seed in 0u64..500,
            l1 in 0.0f64..10.0,
            l2 in 0.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..10);
            let m = rng.random_range(1..5);
            let x = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
            let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let beta = elastic_net(&x, &y, l2, l1).unwrap();
            let residual = &y - &x * &beta;
            let tol = 1e-6;
            for j in 0..m {
                let c = 2.0 * x.column(j).dot(&residual) - 2.0 * l2 * beta[j];
                if beta[j] == 0.0 {
                    prop_assert!(c.abs() <= l1 + tol, "coord {j}: |{c}| > {l1}");
                } else {
                    prop_assert!(
                        (c - l1 * beta[j].signum()).abs() <= tol,
                        "coord {j}: {c} vs {}",
                        l1 * beta[j].signum()
                    );
                }
            }
        }
    }
}
