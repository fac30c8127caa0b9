//! Exact zero-mean Gaussian-process regression.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::kernels::{self, KernelSpec, PointSet};
use crate::par::{self, Execution};

/// Largest query batch for which the full posterior covariance is formed.
pub const FULL_COV_LIMIT: usize = 2048;

const JITTER_RETRIES: usize = 6;
const JITTER_FACTOR: f64 = 1e-8;

/// A fitted regressor: training data, hyperparameters and the cached
/// Cholesky factor of `K_ff + noise_var * I`.
#[derive(Clone, Debug)]
pub struct GpModel {
    x: PointSet,
    y: DVector<f64>,
    noise_var: f64,
    spec: KernelSpec,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Posterior mean and covariance at a batch of query points.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    /// Marginal variances, clamped at zero.
    pub var: Vec<f64>,
    /// Full covariance; `None` above [`FULL_COV_LIMIT`] query points.
    pub cov: Option<DMatrix<f64>>,
}

impl PosteriorSummary {
    /// Central 95% interval `(lo, hi)` per query point.
    pub fn interval95(&self) -> Vec<(f64, f64)> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let h = 1.96 * v.sqrt();
                (m - h, m + h)
            })
            .collect()
    }
}

fn factorize(k: &DMatrix<f64>, noise_var: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut q = k.clone();
    for i in 0..n {
        q[(i, i)] += noise_var;
    }
    let try_chol =
        |m: DMatrix<f64>| Cholesky::new(m).filter(|c| c.l_dirty().iter().all(|v| v.is_finite()));
    if let Some(c) = try_chol(q.clone()) {
        return Ok((c, 0.0));
    }
    let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
    let mut jitter = JITTER_FACTOR * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for attempt in 0..=JITTER_RETRIES {
        if attempt > 0 {
            jitter *= 2.0;
        }
        let mut qj = q.clone();
        for i in 0..n {
            qj[(i, i)] += jitter;
        }
        if let Some(c) = try_chol(qj) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Factorization { jitter })
}

impl GpModel {
    /// Fits the model, factorizing `K_ff + noise_var * I` once.
    ///
    /// If the factorization fails, a diagonal jitter of `1e-8 * mean(diag K_ff)`
    /// is added and doubled up to six times before giving up.
    pub fn fit(x: PointSet, y: Vec<f64>, spec: KernelSpec, noise_var: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("at least one training point is required"));
        }
        if x.len() != y.len() {
            return Err(invalid(format!(
                "{} training inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!(
                "noise variance must be >= 0, got {noise_var}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("training targets must be finite"));
        }
        let k = kernels::self_cov(&spec, &x)?.into_inner();
        let (chol, jitter) = factorize(&k, noise_var)?;
        let y = DVector::from_vec(y);
        let alpha = chol.solve(&y);
        Ok(Self {
            x,
            y,
            noise_var,
            spec,
            chol,
            alpha,
            jitter,
        })
    }

    /// Same inputs and hyperparameters, new targets; reuses the factor.
    pub fn with_targets(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.x.len() {
            return Err(invalid(format!(
                "{} targets for {} training inputs",
                y.len(),
                self.x.len()
            )));
        }
        let y = DVector::from_vec(y);
        let alpha = self.chol.solve(&y);
        Ok(Self {
            y,
            alpha,
            ..self.clone()
        })
    }

    pub fn inputs(&self) -> &PointSet {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Jitter that had to be added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L L^T = K_ff + noise_var * I` (+ jitter).
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(K_ff + noise_var * I)^{-1} y`.
    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    fn check_queries(&self, q: &PointSet) -> Result<()> {
        if q.is_empty() {
            return Err(invalid("query set must be nonempty"));
        }
        if q.dim() != self.x.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.x.dim(),
                got: q.dim(),
            });
        }
        Ok(())
    }

    /// Posterior mean at a single point (no argument checks).
    #[inline]
    pub(crate) fn mean_at(&self, p: &[f64]) -> f64 {
        self.x
            .rows()
            .zip(self.alpha.iter())
            .map(|(xi, a)| self.spec.eval_unchecked(p, xi) * a)
            .sum()
    }

    /// Posterior means only; cost `O(n)` per query and no matrices.
    pub fn predict_mean(&self, q: &PointSet) -> Result<Vec<f64>> {
        self.predict_mean_with(q, Execution::default())
    }

    pub fn predict_mean_with(&self, q: &PointSet, exec: Execution) -> Result<Vec<f64>> {
        self.check_queries(q)?;
        Ok(par::map_range(q.len(), exec, |i| self.mean_at(q.row(i))))
    }

    /// Posterior mean and covariance via triangular solves against the
    /// cached factor.
    pub fn posterior(&self, q: &PointSet) -> Result<PosteriorSummary> {
        self.check_queries(q)?;
        let k_fq = kernels::cov_matrix(&self.spec, &self.x, q)?.into_inner();
        let mean = (k_fq.transpose() * &self.alpha).as_slice().to_vec();
        let l = self.chol.l_dirty();
        let v = l
            .solve_lower_triangular(&k_fq)
            .ok_or_else(|| Error::Numerical("singular cholesky factor".into()))?;

        let prior_diag = kernels::diag(&self.spec, q)?;
        let m = q.len();
        let (var_raw, cov) = if m <= FULL_COV_LIMIT {
            let k_qq = kernels::self_cov(&self.spec, q)?.into_inner();
            let cov = k_qq - v.transpose() * &v;
            ((0..m).map(|i| cov[(i, i)]).collect::<Vec<_>>(), Some(cov))
        } else {
            let var = (0..m)
                .map(|j| prior_diag[j] - v.column(j).norm_squared())
                .collect();
            (var, None)
        };
        let mut var = Vec::with_capacity(m);
        for (j, &s) in var_raw.iter().enumerate() {
            if s < -1e-10 * prior_diag[j].abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "negative posterior variance {s:e} at query {j}"
                )));
            }
            var.push(s.max(0.0));
        }
        let cov = cov.map(|mut c| {
            for (j, &s) in var.iter().enumerate() {
                c[(j, j)] = s;
            }
            c
        });
        Ok(PosteriorSummary { mean, var, cov })
    }

    /// `log p(y | X)` under the GP prior plus noise.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.y.dot(&self.alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln()
    }
}
