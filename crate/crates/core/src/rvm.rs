//! Relevance vector machine: a sparse Bayesian kernel learner in regression
//! and binary-classification modes.
//!
//! Training follows the evidence framework: per-basis precisions `alpha` get
//! re-estimated from `gamma_i / mu_i^2` until the log precisions settle, and
//! bases whose precision diverges are pruned away, leaving a handful of
//! relevance vectors. Regression uses the exact Gaussian posterior;
//! classification finds the posterior mode by Newton steps with step-halving
//! and applies a Laplace approximation around it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum RvmError {
    #[error("kernel width must be positive and finite, got {width}")]
    BadKernelWidth { width: f64 },
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target length {targets} does not match {rows} rows")]
    TargetLengthMismatch { rows: usize, targets: usize },
    #[error("at least one training sample is required")]
    NoSamples,
    #[error("targets must be finite")]
    NonFiniteTargets,
    #[error("classification requires both labels in the training set")]
    OneClassOnly,
    #[error("degenerate model: no basis survived")]
    DegenerateModel,
    #[error("model is a {found} model, expected {expected}")]
    WrongMode { expected: String, found: String },
    #[error("candidate width grid is empty")]
    EmptyGrid,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(
        "IRLS diverged after step-halving budget at outer iteration {outer}; \
         objective trace: {trace:?}"
    )]
    IrlsDiverged { outer: usize, trace: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, RvmError>;

/// Kernel family: `gaussian` decays with squared distance, `laplacian` with
/// plain distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
}

/// Kernel with decay rate `width` (the η in `exp(-η d)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub width: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(RvmError::BadKernelWidth { width });
        }
        Ok(Self { family, width })
    }

    pub fn gaussian(width: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width)
    }

    fn evaluate_rows(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        let d2: f64 = (0..a.ncols())
            .map(|c| {
                let diff = a[(i, c)] - b[(j, c)];
                diff * diff
            })
            .sum();
        let d = match self.family {
            KernelFamily::Gaussian => d2,
            KernelFamily::Laplacian => d2.sqrt(),
        };
        (-self.width * d).exp()
    }
}

/// `|rows| x |centers|` matrix of kernel evaluations.
pub fn kernel_matrix(
    rows: &DMatrix<f64>,
    centers: &DMatrix<f64>,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    if rows.ncols() != centers.ncols() {
        return Err(RvmError::DimensionMismatch {
            expected: centers.ncols(),
            found: rows.ncols(),
        });
    }
    let entries = par::map_indexed(rows.nrows(), |i| {
        (0..centers.nrows())
            .map(|j| spec.evaluate_rows(rows, i, centers, j))
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(rows.nrows(), centers.nrows(), |i, j| {
        entries[i][j]
    }))
}

/// Kernel design matrix with a leading all-ones bias column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn build(rows: &DMatrix<f64>, centers: &DMatrix<f64>, spec: &KernelSpec) -> Result<Self> {
        let kernel = kernel_matrix(rows, centers, spec)?;
        let mut values = DMatrix::zeros(rows.nrows(), centers.nrows() + 1);
        for i in 0..rows.nrows() {
            values[(i, 0)] = 1.0;
        }
        values.view_mut((0, 1), (rows.nrows(), centers.nrows())).copy_from(&kernel);
        Ok(Self { values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RvmMode {
    Regression,
    Classification,
}

impl std::fmt::Display for RvmMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RvmMode::Regression => "regression",
            RvmMode::Classification => "classification",
        })
    }
}

/// A fitted model: surviving kernel centers, posterior mean weights (bias
/// first when retained), and the matching precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct RvmModel {
    pub mode: RvmMode,
    pub kernel: KernelSpec,
    pub relevance_vectors: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub bias_retained: bool,
    pub alphas: DVector<f64>,
    pub noise_variance: Option<f64>,
}

impl RvmModel {
    pub fn n_relevance_vectors(&self) -> usize {
        self.relevance_vectors.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.relevance_vectors.ncols()
    }

    /// The linear score `b + sum_i w_i k(x, rv_i)` per query row.
    pub fn linear_score(&self, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
        if queries.ncols() != self.input_dim() {
            return Err(RvmError::DimensionMismatch {
                expected: self.input_dim(),
                found: queries.ncols(),
            });
        }
        let kernel = kernel_matrix(queries, &self.relevance_vectors, &self.kernel)?;
        let (bias, kernel_weights) = if self.bias_retained {
            (self.weights[0], self.weights.rows(1, self.weights.len() - 1))
        } else {
            (0.0, self.weights.rows(0, self.weights.len()))
        };
        let mut scores = kernel * kernel_weights;
        scores.add_scalar_mut(bias);
        Ok(scores)
    }
}

/// Per-fit bookkeeping; `pruned_count + final_basis_count` always equals the
/// initial pool size (n kernel bases plus the bias).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainDiagnostics {
    pub outer_iterations: usize,
    pub pruned_count: usize,
    pub final_basis_count: usize,
    pub log_marginal_trace: Vec<f64>,
    pub converged: bool,
}

/// Budgets and tolerances for the evidence loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RvmFitOptions {
    pub max_outer_iterations: usize,
    /// Convergence threshold on `max |Δ log alpha|`.
    pub tolerance: f64,
    /// Bases with `alpha` beyond this are pruned.
    pub prune_threshold: f64,
    pub irls_max_steps: usize,
    /// Gradient-norm threshold for the IRLS mode search.
    pub irls_tolerance: f64,
    pub initial_alpha: f64,
    /// Lower clamp for the regression noise variance.
    pub noise_floor: f64,
}

impl Default for RvmFitOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 1000,
            tolerance: 1e-6,
            prune_threshold: 1e12,
            irls_max_steps: 100,
            irls_tolerance: 1e-8,
            initial_alpha: 1e-6,
            noise_floor: 1e-12,
        }
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped strictly inside (0,1). The negative branch mirrors the
/// positive one, so negating a score maps p to exactly `1 - p`.
fn sigmoid_probability(s: f64) -> f64 {
    if s >= 0.0 {
        sigmoid(s).min(1.0 - 1e-15)
    } else {
        1.0 - sigmoid_probability(-s)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cholesky with a single jitter retry; failing after the retry is an error,
/// never a silent fallback.
fn cholesky_with_jitter(mut h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(h.clone()) {
        return Ok(chol);
    }
    let mean_diag = h.diagonal().sum() / h.nrows() as f64;
    let jitter = 1e-10 * mean_diag;
    for i in 0..h.nrows() {
        h[(i, i)] += jitter;
    }
    Cholesky::new(h).ok_or_else(|| {
        RvmError::Numerical("system matrix not positive definite after jitter".into())
    })
}

fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Shared basis-pool state for both fit modes.
struct BasisPool<'a> {
    phi: &'a DMatrix<f64>,
    active: Vec<usize>,
    alpha: Vec<f64>,
}

impl BasisPool<'_> {
    fn active_design(&self) -> DMatrix<f64> {
        let n = self.phi.nrows();
        DMatrix::from_fn(n, self.active.len(), |i, j| self.phi[(i, self.active[j])])
    }

    /// Removes bases flagged for pruning, keeping at least one basis alive
    /// (the one with the smallest precision if everything diverged). The bias
    /// is exempt on the first iteration so the pool cannot empty before any
    /// kernel basis has been evaluated.
    ///
    /// Besides the precision threshold, a basis whose gamma has collapsed to
    /// numerical zero while its precision still grows is on the deletion
    /// trajectory: its precision rises by a constant ratio per iteration and
    /// would stall convergence for hundreds of iterations while contributing
    /// nothing, so it is removed as soon as that trajectory is unambiguous.
    fn prune(
        &mut self,
        new_alpha: &[f64],
        gammas: &[f64],
        threshold: f64,
        iteration: usize,
        weights: &mut Vec<f64>,
    ) {
        const GAMMA_FLOOR: f64 = 1e-7;
        let mut keep: Vec<bool> = new_alpha
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let is_bias = self.active[j] == 0;
                let deletion_trajectory =
                    a > threshold || (gammas[j] < GAMMA_FLOOR && a >= self.alpha[j]);
                a.is_finite() && (!deletion_trajectory || (is_bias && iteration == 1))
            })
            .collect();
        if !keep.iter().any(|&k| k) {
            let best = new_alpha
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            keep[best] = true;
        }
        let mut active = Vec::new();
        let mut alpha = Vec::new();
        let mut kept_weights = Vec::new();
        for j in 0..keep.len() {
            if keep[j] {
                active.push(self.active[j]);
                alpha.push(new_alpha[j].min(threshold));
                kept_weights.push(weights[j]);
            }
        }
        self.active = active;
        self.alpha = alpha;
        *weights = kept_weights;
    }
}

fn validate_inputs(x: &DMatrix<f64>, target_len: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(RvmError::NoSamples);
    }
    if target_len != x.nrows() {
        return Err(RvmError::TargetLengthMismatch {
            rows: x.nrows(),
            targets: target_len,
        });
    }
    Ok(())
}

fn build_model(
    x: &DMatrix<f64>,
    spec: &KernelSpec,
    mode: RvmMode,
    pool: &BasisPool,
    weights: &[f64],
    noise_variance: Option<f64>,
) -> RvmModel {
    let bias_retained = pool.active.first() == Some(&0);
    let kernel_bases: Vec<usize> = pool
        .active
        .iter()
        .filter(|&&b| b > 0)
        .map(|&b| b - 1)
        .collect();
    let relevance_vectors = DMatrix::from_fn(kernel_bases.len(), x.ncols(), |i, j| {
        x[(kernel_bases[i], j)]
    });
    RvmModel {
        mode,
        kernel: *spec,
        relevance_vectors,
        weights: DVector::from_vec(weights.to_vec()),
        bias_retained,
        alphas: DVector::from_vec(pool.alpha.clone()),
        noise_variance,
    }
}

/// Fits the regression model by type-II maximum likelihood with pruning.
pub fn fit_regression(
    x: &DMatrix<f64>,
    targets: &DVector<f64>,
    spec: &KernelSpec,
    opts: &RvmFitOptions,
) -> Result<(RvmModel, TrainDiagnostics)> {
    fit_regression_with_centers(x, targets, x, spec, opts)
}

/// Regression fit whose kernel-basis pool is an explicit center matrix; the
/// public entry point uses the training inputs themselves.
pub(crate) fn fit_regression_with_centers(
    x: &DMatrix<f64>,
    targets: &DVector<f64>,
    centers: &DMatrix<f64>,
    spec: &KernelSpec,
    opts: &RvmFitOptions,
) -> Result<(RvmModel, TrainDiagnostics)> {
    validate_inputs(x, targets.len())?;
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(RvmError::NonFiniteTargets);
    }
    let n = x.nrows();
    let n_centers = centers.nrows();
    let phi = DesignMatrix::build(x, centers, spec)?.values;
    let gram = phi.transpose() * &phi;
    let phi_t = phi.transpose() * targets;
    let t_dot_t = targets.dot(targets);

    let target_mean = targets.sum() / n as f64;
    let target_var = targets.iter().map(|t| (t - target_mean).powi(2)).sum::<f64>() / n as f64;
    let mut sigma2 = (0.1 * target_var).max(1e-6);

    let mut pool = BasisPool {
        phi: &phi,
        active: (0..=n_centers).collect(),
        alpha: vec![opts.initial_alpha; n_centers + 1],
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    // One e-step: posterior (mu, Sigma) and the evidence at the current
    // hyperparameters.
    let e_step = |pool: &BasisPool, sigma2: f64| -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let m = pool.active.len();
        let inv_sigma2 = 1.0 / sigma2;
        let mut h = DMatrix::from_fn(m, m, |a, b| {
            inv_sigma2 * gram[(pool.active[a], pool.active[b])]
        });
        for (j, &a) in pool.alpha.iter().enumerate() {
            h[(j, j)] += a;
        }
        let chol = cholesky_with_jitter(h)?;
        let log_det_h = log_det_from_cholesky(&chol);
        let sigma = chol.inverse();
        let phi_t_active = DVector::from_fn(m, |j, _| phi_t[pool.active[j]]);
        let mu = inv_sigma2 * (&sigma * &phi_t_active);
        let fit_term = (t_dot_t - phi_t_active.dot(&mu)) * inv_sigma2;
        let log_alpha_sum: f64 = pool.alpha.iter().map(|a| a.ln()).sum();
        let evidence = -0.5
            * (n as f64 * (2.0 * std::f64::consts::PI).ln()
                + n as f64 * sigma2.ln()
                - log_alpha_sum
                + log_det_h
                + fit_term);
        Ok((mu, sigma, evidence))
    };

    for iteration in 1..=opts.max_outer_iterations {
        iterations = iteration;
        let m = pool.active.len();
        let (mu, sigma, evidence) = e_step(&pool, sigma2)?;
        trace.push(evidence);

        let gammas: Vec<f64> = (0..m)
            .map(|j| (1.0 - pool.alpha[j] * sigma[(j, j)]).clamp(0.0, 1.0))
            .collect();
        let new_alpha: Vec<f64> = (0..m)
            .map(|j| {
                let mu2 = mu[j] * mu[j];
                if mu2 > 0.0 {
                    gammas[j] / mu2
                } else {
                    f64::INFINITY
                }
            })
            .collect();

        let max_delta = pool
            .alpha
            .iter()
            .zip(&new_alpha)
            .filter(|(_, &new)| new.is_finite() && new <= opts.prune_threshold)
            .map(|(&old, &new)| (new.ln() - old.ln()).abs())
            .fold(0.0f64, f64::max);

        let design = pool.active_design();
        let residual = targets - &design * &mu;
        let gamma_sum: f64 = gammas.iter().sum();
        sigma2 = (residual.norm_squared() / (n as f64 - gamma_sum).max(1e-12))
            .max(opts.noise_floor);

        let mut mu_vec: Vec<f64> = mu.iter().copied().collect();
        pool.prune(&new_alpha, &gammas, opts.prune_threshold, iteration, &mut mu_vec);

        if max_delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    if pool.active.is_empty() {
        return Err(RvmError::DegenerateModel);
    }

    // Final posterior refresh at the settled hyperparameters, with the noise
    // variance re-derived from the refreshed weights so the reported triple
    // (mu, gamma, sigma2) is self-consistent.
    let m = pool.active.len();
    let (mu, sigma, _) = e_step(&pool, sigma2)?;
    let design = pool.active_design();
    let residual = targets - &design * &mu;
    let gamma_sum: f64 = (0..m)
        .map(|j| (1.0 - pool.alpha[j] * sigma[(j, j)]).clamp(0.0, 1.0))
        .sum();
    sigma2 = (residual.norm_squared() / (n as f64 - gamma_sum).max(1e-12)).max(opts.noise_floor);
    let weights: Vec<f64> = mu.iter().copied().collect();

    let model = build_model(
        centers,
        spec,
        RvmMode::Regression,
        &pool,
        &weights,
        Some(sigma2),
    );
    let diagnostics = TrainDiagnostics {
        outer_iterations: iterations,
        pruned_count: n_centers + 1 - pool.active.len(),
        final_basis_count: pool.active.len(),
        log_marginal_trace: trace,
        converged,
    };
    Ok((model, diagnostics))
}

/// Penalized Bernoulli log-likelihood `sum[t log y + (1-t) log(1-y)] - w'Aw/2`
/// at weights `w`; the quantity the IRLS mode search maximizes.
pub fn classification_objective(
    phi: &DMatrix<f64>,
    targets: &[u8],
    alphas: &DVector<f64>,
    weights: &DVector<f64>,
) -> f64 {
    let scores = phi * weights;
    let mut value = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let s = scores[i];
        // log sigmoid(s) = -softplus(-s); log(1 - sigmoid(s)) = -softplus(s)
        value -= if t == 1 { softplus(-s) } else { softplus(s) };
    }
    let penalty: f64 = weights
        .iter()
        .zip(alphas.iter())
        .map(|(w, a)| a * w * w)
        .sum();
    value - 0.5 * penalty
}

/// Analytic gradient of [`classification_objective`]: `Phi'(t - y) - A w`.
pub fn classification_gradient(
    phi: &DMatrix<f64>,
    targets: &[u8],
    alphas: &DVector<f64>,
    weights: &DVector<f64>,
) -> DVector<f64> {
    let scores = phi * weights;
    let errors = DVector::from_fn(targets.len(), |i, _| {
        targets[i] as f64 - sigmoid(scores[i])
    });
    let mut gradient = phi.transpose() * errors;
    for j in 0..gradient.len() {
        gradient[j] -= alphas[j] * weights[j];
    }
    gradient
}

struct IrlsOutcome {
    weights: DVector<f64>,
    covariance: DMatrix<f64>,
    log_det_h: f64,
}

/// Newton mode search with step-halving for the penalized Bernoulli
/// log-likelihood.
fn irls_mode(
    design: &DMatrix<f64>,
    targets: &[u8],
    alphas: &DVector<f64>,
    start: DVector<f64>,
    opts: &RvmFitOptions,
    outer: usize,
) -> Result<IrlsOutcome> {
    let mut w = start;
    let mut objective_trace = vec![classification_objective(design, targets, alphas, &w)];

    let hessian_cholesky = |w: &DVector<f64>| -> Result<Cholesky<f64, Dyn>> {
        let scores = design * w;
        let mut weighted = design.clone();
        for i in 0..design.nrows() {
            let y = sigmoid(scores[i]);
            let b = y * (1.0 - y);
            for j in 0..design.ncols() {
                weighted[(i, j)] *= b;
            }
        }
        let mut h = design.transpose() * weighted;
        for j in 0..design.ncols() {
            h[(j, j)] += alphas[j];
        }
        cholesky_with_jitter(h)
    };

    for _ in 0..opts.irls_max_steps {
        let gradient = classification_gradient(design, targets, alphas, &w);
        if gradient.amax() < opts.irls_tolerance {
            break;
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(RvmError::IrlsDiverged {
                outer,
                trace: objective_trace,
            });
        }
        let chol = hessian_cholesky(&w)?;
        let direction = chol.solve(&gradient);
        let current = *objective_trace.last().unwrap();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &w + step * &direction;
            let value = classification_objective(design, targets, alphas, &candidate);
            if value.is_finite() && value > current {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, value)) => {
                w = candidate;
                objective_trace.push(value);
                // Improvements below floating-point resolution mean the mode
                // is found to working precision.
                if value - current <= 1e-12 * (1.0 + current.abs()) {
                    break;
                }
            }
            // Step-halving exhausted without improvement: the line search has
            // hit floating-point resolution, so the current point is the mode
            // to working precision.
            None => break,
        }
    }
    if !objective_trace.last().unwrap().is_finite() {
        return Err(RvmError::IrlsDiverged {
            outer,
            trace: objective_trace,
        });
    }

    let chol = hessian_cholesky(&w)?;
    let log_det_h = log_det_from_cholesky(&chol);
    Ok(IrlsOutcome {
        weights: w,
        covariance: chol.inverse(),
        log_det_h,
    })
}

/// Fits the binary classifier: IRLS mode search inside, the same
/// gamma/alpha evidence updates and pruning as regression outside.
pub fn fit_classification(
    x: &DMatrix<f64>,
    targets: &[u8],
    spec: &KernelSpec,
    opts: &RvmFitOptions,
) -> Result<(RvmModel, TrainDiagnostics)> {
    validate_inputs(x, targets.len())?;
    let ones = targets.iter().filter(|&&t| t == 1).count();
    if ones == 0 || ones == targets.len() {
        return Err(RvmError::OneClassOnly);
    }
    let n = x.nrows();
    let phi = DesignMatrix::build(x, x, spec)?.values;

    let mut pool = BasisPool {
        phi: &phi,
        active: (0..=n).collect(),
        alpha: vec![opts.initial_alpha; n + 1],
    };
    let mut weights: Vec<f64> = vec![0.0; n + 1];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=opts.max_outer_iterations {
        iterations = iteration;
        let design = pool.active_design();
        let alphas = DVector::from_vec(pool.alpha.clone());
        let start = DVector::from_vec(weights.clone());
        let outcome = irls_mode(&design, targets, &alphas, start, opts, iteration)?;
        let m = pool.active.len();

        let log_alpha_sum: f64 = pool.alpha.iter().map(|a| a.ln()).sum();
        trace.push(
            classification_objective(&design, targets, &alphas, &outcome.weights)
                + 0.5 * log_alpha_sum
                - 0.5 * outcome.log_det_h,
        );

        let gammas: Vec<f64> = (0..m)
            .map(|j| (1.0 - pool.alpha[j] * outcome.covariance[(j, j)]).clamp(0.0, 1.0))
            .collect();
        let new_alpha: Vec<f64> = (0..m)
            .map(|j| {
                let mu2 = outcome.weights[j] * outcome.weights[j];
                if mu2 > 0.0 {
                    gammas[j] / mu2
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let max_delta = pool
            .alpha
            .iter()
            .zip(&new_alpha)
            .filter(|(_, &new)| new.is_finite() && new <= opts.prune_threshold)
            .map(|(&old, &new)| (new.ln() - old.ln()).abs())
            .fold(0.0f64, f64::max);

        let mut mu_vec: Vec<f64> = outcome.weights.iter().copied().collect();
        pool.prune(&new_alpha, &gammas, opts.prune_threshold, iteration, &mut mu_vec);
        weights = mu_vec;

        if max_delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    if pool.active.is_empty() {
        return Err(RvmError::DegenerateModel);
    }

    // Refresh the mode at the settled precisions.
    let design = pool.active_design();
    let alphas = DVector::from_vec(pool.alpha.clone());
    let start = DVector::from_vec(weights.clone());
    let outcome = irls_mode(&design, targets, &alphas, start, opts, iterations + 1)?;
    weights = outcome.weights.iter().copied().collect();

    let model = build_model(x, spec, RvmMode::Classification, &pool, &weights, None);
    let diagnostics = TrainDiagnostics {
        outer_iterations: iterations,
        pruned_count: n + 1 - pool.active.len(),
        final_basis_count: pool.active.len(),
        log_marginal_trace: trace,
        converged,
    };
    Ok((model, diagnostics))
}

/// Mean-prediction per query row for a regression model.
pub fn predict_regression(model: &RvmModel, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
    if model.mode != RvmMode::Regression {
        return Err(RvmError::WrongMode {
            expected: "regression".into(),
            found: model.mode.to_string(),
        });
    }
    model.linear_score(queries)
}

/// Posterior class-1 probability per query row, strictly inside (0,1).
pub fn predict_proba(model: &RvmModel, queries: &DMatrix<f64>) -> Result<DVector<f64>> {
    if model.mode != RvmMode::Classification {
        return Err(RvmError::WrongMode {
            expected: "classification".into(),
            found: model.mode.to_string(),
        });
    }
    let scores = model.linear_score(queries)?;
    Ok(scores.map(sigmoid_probability))
}

/// What to score during width selection.
#[derive(Debug, Clone, Copy)]
pub enum CvTask<'a> {
    Regression(&'a DVector<f64>),
    Classification(&'a [u8]),
}

/// Cross-validation shape: exact leave-one-out up to `loo_cutoff` samples,
/// stratified k-fold beyond it.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSpec {
    pub loo_cutoff: usize,
    pub k_folds: usize,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            loo_cutoff: 200,
            k_folds: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMethod {
    LeaveOneOut,
    /// Deviation from exact LOO, recorded with the fold count.
    KFold { folds: usize },
    /// Single-candidate grids are returned without scoring.
    Skipped,
}

/// One scored grid entry; `score` is accuracy (classification) or negative
/// mean squared error (regression), `None` when scoring was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthScore {
    pub width: f64,
    pub score: Option<f64>,
    pub method: CvMethod,
}

fn subset_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Fits on `train_rows`, predicts `test_rows`, and returns the summed score
/// contribution (correct count or negative squared error).
fn fit_and_score(
    x: &DMatrix<f64>,
    task: &CvTask,
    spec: &KernelSpec,
    opts: &RvmFitOptions,
    train_rows: &[usize],
    test_rows: &[usize],
) -> Result<f64> {
    let train_x = subset_rows(x, train_rows);
    let test_x = subset_rows(x, test_rows);
    match task {
        CvTask::Regression(targets) => {
            let train_t = DVector::from_fn(train_rows.len(), |i, _| targets[train_rows[i]]);
            let (model, _) = fit_regression(&train_x, &train_t, spec, opts)?;
            let predictions = predict_regression(&model, &test_x)?;
            Ok(test_rows
                .iter()
                .enumerate()
                .map(|(i, &r)| -(predictions[i] - targets[r]).powi(2))
                .sum())
        }
        CvTask::Classification(targets) => {
            let train_t: Vec<u8> = train_rows.iter().map(|&r| targets[r]).collect();
            let (model, _) = fit_classification(&train_x, &train_t, spec, opts)?;
            let probabilities = predict_proba(&model, &test_x)?;
            Ok(test_rows
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let label = u8::from(probabilities[i] >= 0.5);
                    f64::from(label == targets[r])
                })
                .sum())
        }
    }
}

fn cv_score(
    x: &DMatrix<f64>,
    task: &CvTask,
    spec: &KernelSpec,
    cv: &CvSpec,
    opts: &RvmFitOptions,
) -> Result<(f64, CvMethod)> {
    let n = x.nrows();
    if n <= cv.loo_cutoff {
        let contributions = par::map_indexed(n, |held_out| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| i != held_out).collect();
            fit_and_score(x, task, spec, opts, &train_rows, &[held_out])
        });
        let mut total = 0.0;
        for c in contributions {
            total += c?;
        }
        Ok((total / n as f64, CvMethod::LeaveOneOut))
    } else {
        let folds = cv.k_folds.max(2).min(n);
        // Round-robin assignment within each class keeps folds stratified
        // and needs no randomness.
        let fold_of: Vec<usize> = match task {
            CvTask::Classification(targets) => {
                let mut fold_of = vec![0usize; n];
                for class in [0u8, 1u8] {
                    for (pos, i) in (0..n).filter(|&i| targets[i] == class).enumerate() {
                        fold_of[i] = pos % folds;
                    }
                }
                fold_of
            }
            CvTask::Regression(_) => (0..n).map(|i| i % folds).collect(),
        };
        let contributions = par::map_indexed(folds, |fold| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            if test_rows.is_empty() {
                return Ok(0.0);
            }
            fit_and_score(x, task, spec, opts, &train_rows, &test_rows)
        });
        let mut total = 0.0;
        for c in contributions {
            total += c?;
        }
        Ok((total / n as f64, CvMethod::KFold { folds }))
    }
}

/// Scores every candidate width by cross-validation and returns the winner.
/// Ties break toward the smaller width, then the earlier grid position.
/// Single-candidate grids skip scoring entirely.
pub fn select_kernel_width(
    x: &DMatrix<f64>,
    task: CvTask,
    family: KernelFamily,
    candidate_widths: &[f64],
    cv: &CvSpec,
    opts: &RvmFitOptions,
) -> Result<(KernelSpec, Vec<WidthScore>)> {
    if candidate_widths.is_empty() {
        return Err(RvmError::EmptyGrid);
    }
    for &w in candidate_widths {
        KernelSpec::new(family, w)?;
    }
    if candidate_widths.len() == 1 {
        let spec = KernelSpec::new(family, candidate_widths[0])?;
        return Ok((
            spec,
            vec![WidthScore {
                width: candidate_widths[0],
                score: None,
                method: CvMethod::Skipped,
            }],
        ));
    }
    let scored = par::map_slice(candidate_widths, |&width| {
        let spec = KernelSpec::new(family, width)?;
        let (score, method) = cv_score(x, &task, &spec, cv, opts)?;
        Ok::<WidthScore, RvmError>(WidthScore {
            width,
            score: Some(score),
            method,
        })
    });
    let mut table = Vec::with_capacity(scored.len());
    for entry in scored {
        table.push(entry?);
    }
    let mut best = 0;
    for (i, entry) in table.iter().enumerate().skip(1) {
        let (score, width) = (entry.score.unwrap(), entry.width);
        let (best_score, best_width) = (table[best].score.unwrap(), table[best].width);
        if score > best_score || (score == best_score && width < best_width) {
            best = i;
        }
    }
    let spec = KernelSpec::new(family, table[best].width)?;
    Ok((spec, table))
}
