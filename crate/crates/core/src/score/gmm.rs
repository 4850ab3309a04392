use rand::Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{ScoreModel, Timestep};
use crate::error::{check_finite, check_len, CdimError, Result};

/// Gaussian mixture with diagonal covariances, used as an analytically
/// tractable data distribution `q(x_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Per-component quantities of the smoothed mixture at one `(x_t, abar)`.
struct Smoothed {
    resp: Vec<f64>,
    /// Component posterior means `E[x_0 | x_t, k]`.
    post_means: Vec<Vec<f64>>,
    /// Component scores `-(x_t - sqrt(abar) m_k) / v_k`.
    scores: Vec<Vec<f64>>,
    /// Diagonal component Jacobians `sqrt(abar) c_k / v_k`.
    gains: Vec<Vec<f64>>,
    log_density: f64,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(CdimError::param("mixture needs at least one component"));
        }
        check_len("means", k, means.len())?;
        check_len("variances", k, variances.len())?;
        let n = means[0].len();
        if n == 0 {
            return Err(CdimError::param("mixture dimension must be >= 1"));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_len("component mean", n, m.len())?;
            check_len("component variance", n, v.len())?;
            check_finite("component mean", m)?;
            if v.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(CdimError::param("variances must be finite and > 0"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CdimError::param("weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CdimError::param(format!("weights sum to {total}, not 1")));
        }
        Ok(GmmPrior {
            weights,
            means,
            variances,
        })
    }

    /// Single isotropic component `N(mean, variance I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        GmmPrior::new(vec![1.0], vec![mean], vec![vec![variance; n]])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.means[0].len();
        let mut out = vec![0.0; n];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    fn smoothed(&self, x_t: &[f64], alpha_bar: f64) -> Result<Smoothed> {
        let n = self.dim();
        check_len("x_t", n, x_t.len())?;
        check_finite("x_t", x_t)?;
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(CdimError::DegenerateTime(format!(
                "posterior mean needs alpha_bar in (0, 1], got {alpha_bar}"
            )));
        }
        let sa = alpha_bar.sqrt();
        let k = self.n_components();
        let mut logp = Vec::with_capacity(k);
        let mut post_means = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k);
        let mut gains = Vec::with_capacity(k);
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        for c in 0..k {
            let (m, var) = (&self.means[c], &self.variances[c]);
            let mut lp = if self.weights[c] > 0.0 {
                self.weights[c].ln()
            } else {
                f64::NEG_INFINITY
            };
            let mut pm = Vec::with_capacity(n);
            let mut sc = Vec::with_capacity(n);
            let mut gn = Vec::with_capacity(n);
            for i in 0..n {
                let v = alpha_bar * var[i] + (1.0 - alpha_bar);
                let u = x_t[i] - sa * m[i];
                lp -= 0.5 * (ln_2pi + v.ln() + u * u / v);
                let gain = sa * var[i] / v;
                pm.push(m[i] + gain * u);
                sc.push(-u / v);
                gn.push(gain);
            }
            logp.push(lp);
            post_means.push(pm);
            scores.push(sc);
            gains.push(gn);
        }
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logp.iter().map(|l| (l - max).exp()).sum();
        let log_density = max + sum.ln();
        let resp = logp.iter().map(|l| (l - log_density).exp()).collect();
        Ok(Smoothed {
            resp,
            post_means,
            scores,
            gains,
            log_density,
        })
    }

    /// Closed-form `E[x_0 | x_t]` under the mixture smoothed to `alpha_bar`.
    pub fn posterior_mean(&self, x_t: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        if alpha_bar == 1.0 {
            check_len("x_t", self.dim(), x_t.len())?;
            check_finite("x_t", x_t)?;
            return Ok(x_t.to_vec());
        }
        let s = self.smoothed(x_t, alpha_bar)?;
        Ok(weighted_sum(&s.resp, &s.post_means))
    }

    /// `grad log q_t(x_t)` of the smoothed mixture.
    pub fn score(&self, x_t: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        let s = self.smoothed(x_t, alpha_bar)?;
        Ok(weighted_sum(&s.resp, &s.scores))
    }

    /// `log q_t(x_t)` of the smoothed mixture.
    pub fn log_density(&self, x_t: &[f64], alpha_bar: f64) -> Result<f64> {
        Ok(self.smoothed(x_t, alpha_bar)?.log_density)
    }

    /// Component responsibilities under the smoothed mixture.
    pub fn responsibilities(&self, x_t: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
        Ok(self.smoothed(x_t, alpha_bar)?.resp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c = if self.n_components() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights)
                .expect("validated weights")
                .sample(rng)
        };
        self.means[c]
            .iter()
            .zip(&self.variances[c])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    fn vjp_from(s: &Smoothed, cotangent: &[f64]) -> Vec<f64> {
        let n = cotangent.len();
        let mean_score = weighted_sum(&s.resp, &s.scores);
        let mut out = vec![0.0; n];
        for c in 0..s.resp.len() {
            let g = s.resp[c];
            if g == 0.0 {
                continue;
            }
            let proj: f64 = s.post_means[c].iter().zip(cotangent).map(|(a, b)| a * b).sum();
            for i in 0..n {
                out[i] += g * (s.gains[c][i] * cotangent[i] + (s.scores[c][i] - mean_score[i]) * proj);
            }
        }
        out
    }
}

fn weighted_sum(w: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (g, r) in w.iter().zip(rows) {
        if *g == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(r) {
            *o += g * v;
        }
    }
    out
}

impl ScoreModel for GmmPrior {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn predict_eps(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        let scale = (1.0 - at.alpha_bar).sqrt();
        Ok(self
            .score(x_t, at.alpha_bar)?
            .into_iter()
            .map(|s| -scale * s)
            .collect())
    }

    fn predict_xhat0(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        self.posterior_mean(x_t, at.alpha_bar)
    }

    fn xhat0_vjp(&self, x_t: &[f64], at: Timestep, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("cotangent", self.dim(), cotangent.len())?;
        check_finite("cotangent", cotangent)?;
        if at.alpha_bar == 1.0 {
            check_len("x_t", self.dim(), x_t.len())?;
            return Ok(cotangent.to_vec());
        }
        let s = self.smoothed(x_t, at.alpha_bar)?;
        Ok(Self::vjp_from(&s, cotangent))
    }

    fn xhat0_pullback(
        &self,
        x_t: &[f64],
        at: Timestep,
        cotangent_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if at.alpha_bar == 1.0 {
            let xhat0 = self.posterior_mean(x_t, 1.0)?;
            let cot = cotangent_fn(&xhat0)?;
            let grad = self.xhat0_vjp(x_t, at, &cot)?;
            return Ok((xhat0, grad));
        }
        let s = self.smoothed(x_t, at.alpha_bar)?;
        let xhat0 = weighted_sum(&s.resp, &s.post_means);
        let cot = cotangent_fn(&xhat0)?;
        check_len("cotangent", self.dim(), cot.len())?;
        check_finite("cotangent", &cot)?;
        let grad = Self::vjp_from(&s, &cot);
        Ok((xhat0, grad))
    }
}
