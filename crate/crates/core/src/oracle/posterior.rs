use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};

use crate::error::{check_len, CdimError, Result};
use crate::measurement::LinearOperator;
use crate::rng::{stream_rng, streams};
use crate::score::GmmPrior;

/// Dense `d x n` matrix of `op`, built column by column.
pub fn materialize(op: &dyn LinearOperator) -> Result<DMatrix<f64>> {
    let (n, d) = (op.input_dim(), op.output_dim());
    let mut m = DMatrix::zeros(d, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        e[j] = 0.0;
        m.set_column(j, &DVector::from_vec(col));
    }
    Ok(m)
}

/// Gaussian mixture with full covariances; the exact posterior of a
/// diagonal mixture prior under `y = A x + N(0, sigma2 I)`.
#[derive(Debug, Clone)]
pub struct PosteriorGmm {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    /// Cholesky factors of the component precisions, used for sampling.
    precision_chol: Vec<Cholesky<f64, Dyn>>,
}

impl PosteriorGmm {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.means.iter().map(|m| m.as_slice().to_vec()).collect()
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = DVector::zeros(self.means[0].len());
        for (w, m) in self.weights.iter().zip(&self.means) {
            out += m * *w;
        }
        out.as_slice().to_vec()
    }
}

/// Componentwise Gaussian conjugacy, weights reweighted by the evidence
/// `N(y; A m_k, A C_k A^T + sigma2 I)` in log space.
pub fn exact_posterior(prior: &GmmPrior, op: &dyn LinearOperator, sigma2_obs: f64, y: &[f64]) -> Result<PosteriorGmm> {
    if !(sigma2_obs > 0.0 && sigma2_obs.is_finite()) {
        return Err(CdimError::param(format!("observation variance must be positive, got {sigma2_obs}")));
    }
    let n = op.input_dim();
    check_len("prior dimension", n, prior.means()[0].len())?;
    check_len("observation", op.output_dim(), y.len())?;
    let a = materialize(op)?;
    let at = a.transpose();
    let yv = DVector::from_column_slice(y);
    let aty = &at * &yv / sigma2_obs;
    let ata = &at * &a / sigma2_obs;

    let mut log_w = Vec::new();
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    let mut precision_chol = Vec::new();
    for k in 0..prior.n_components() {
        let m = DVector::from_column_slice(&prior.means()[k]);
        let c = DVector::from_column_slice(&prior.variances()[k]);
        // evidence
        let ac = DMatrix::from_fn(a.nrows(), n, |i, j| a[(i, j)] * c[j]);
        let mut s = &ac * &at;
        for i in 0..s.nrows() {
            s[(i, i)] += sigma2_obs;
        }
        let s_chol = Cholesky::new(s).ok_or_else(|| CdimError::Numeric(format!("evidence covariance of component {k} is singular")))?;
        let resid = &yv - &a * &m;
        let whitened = s_chol.l().solve_lower_triangular(&resid).expect("cholesky factor is invertible");
        let log_det: f64 = 2.0 * s_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = y.len() as f64;
        let log_evidence = -0.5 * (whitened.norm_squared() + log_det + d * (2.0 * std::f64::consts::PI).ln());
        log_w.push(prior.weights()[k].ln() + log_evidence);

        // posterior precision and mean
        let mut p = ata.clone();
        for i in 0..n {
            p[(i, i)] += 1.0 / c[i];
        }
        let p_chol = Cholesky::new(p).ok_or_else(|| CdimError::Numeric(format!("posterior precision of component {k} is singular")))?;
        let rhs = m.component_div(&c) + &aty;
        means.push(p_chol.solve(&rhs));
        covariances.push(p_chol.inverse());
        precision_chol.push(p_chol);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(PosteriorGmm {
        weights,
        means,
        covariances,
        precision_chol,
    })
}

/// Mixtures that can be sampled by [`sample_gmm`].
pub trait MixtureSampler {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

impl MixtureSampler for GmmPrior {
    fn dim(&self) -> usize {
        self.means()[0].len()
    }
    fn draw(&self, mut rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.sample(&mut rng)
    }
}

impl MixtureSampler for PosteriorGmm {
    fn dim(&self) -> usize {
        self.means[0].len()
    }
    fn draw(&self, mut rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let k = if self.weights.len() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights).expect("normalised weights").sample(&mut rng)
        };
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // P = L L^T, so L^{-T} z has covariance P^{-1}
        let offset = self.precision_chol[k]
            .l()
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor is invertible");
        (&self.means[k] + offset).as_slice().to_vec()
    }
}

/// `count` i.i.d. draws, deterministic in `seed`.
pub fn sample_gmm<G: MixtureSampler + ?Sized>(g: &G, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(CdimError::param("sample count must be >= 1"));
    }
    let mut rng = stream_rng(seed, streams::ORACLE);
    Ok((0..count).map(|_| g.draw(&mut rng)).collect())
}
