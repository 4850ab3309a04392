//! Small eps-prediction network with a hand-written backward pass.
//!
//! Topology is fixed: `[x_t, sinusoidal(t)] -> H1 -> H2 -> n` with SiLU
//! activations. The backward pass serves two callers: parameter gradients
//! for training and input gradients for `xhat0_vjp`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{xhat_from_eps, ScoreModel, Timestep};
use crate::error::{check_finite, check_len, CdimError, Result};
use crate::rng::{standard_normal_vec, stream_rng, streams};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub hidden: [usize; 2],
    pub emb_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            hidden: [48, 48],
            emb_dim: 16,
            epochs: 60,
            batch_size: 128,
            learning_rate: 2e-3,
            lr_decay: 0.97,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean of `||eps - eps_theta||^2` over each epoch's samples.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    n: usize,
    hidden: [usize; 2],
    emb_dim: usize,
    params: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

struct Cache {
    z: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    eps: Vec<f64>,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

fn time_features(t: usize, dim: usize) -> impl Iterator<Item = f64> {
    let half = dim / 2;
    let tf = t as f64;
    (0..dim).map(move |j| {
        let k = j % half;
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        if j < half {
            (tf * freq).sin()
        } else {
            (tf * freq).cos()
        }
    })
}

impl MlpDenoiser {
    /// Randomly initialised network (He-scaled hidden layers, small output).
    pub fn init(n: usize, hidden: [usize; 2], emb_dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || hidden.contains(&0) {
            return Err(CdimError::param("layer widths must be >= 1"));
        }
        if emb_dim == 0 || !emb_dim.is_multiple_of(2) {
            return Err(CdimError::param("time-embedding dimension must be even and >= 2"));
        }
        let mut net = MlpDenoiser {
            n,
            hidden,
            emb_dim,
            params: Vec::new(),
        };
        let lay = net.layout();
        let mut params = vec![0.0; lay.len];
        let mut rng = stream_rng(seed, streams::TRAINING);
        let fan = [(n + emb_dim, lay.w1, lay.b1), (hidden[0], lay.w2, lay.b2), (hidden[1], lay.w3, lay.b3)];
        for (li, (fan_in, w, b)) in fan.into_iter().enumerate() {
            let scale = if li == 2 { 0.1 } else { (2.0 / fan_in as f64).sqrt() };
            for p in &mut params[w..b] {
                let z: f64 = rng.sample(StandardNormal);
                *p = scale * z;
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn from_parts(n: usize, hidden: [usize; 2], emb_dim: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = MlpDenoiser::init(n, hidden, emb_dim, 0)?;
        check_len("mlp parameters", net.params.len(), params.len())?;
        check_finite("mlp parameters", &params)?;
        net.params = params;
        Ok(net)
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.hidden
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layout(&self) -> Layout {
        let (n, [h1, h2], e) = (self.n, self.hidden, self.emb_dim);
        let w1 = 0;
        let b1 = w1 + h1 * (n + e);
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + n * h2;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + n,
        }
    }

    fn forward(&self, x_t: &[f64], t: usize) -> Cache {
        let lay = self.layout();
        let p = &self.params;
        let [h1n, h2n] = self.hidden;
        let z: Vec<f64> = x_t.iter().copied().chain(time_features(t, self.emb_dim)).collect();
        let zin = z.len();
        let a1: Vec<f64> = (0..h1n)
            .map(|r| {
                let row = &p[lay.w1 + r * zin..lay.w1 + (r + 1) * zin];
                p[lay.b1 + r] + row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let h1: Vec<f64> = a1.iter().map(|&a| silu(a)).collect();
        let a2: Vec<f64> = (0..h2n)
            .map(|r| {
                let row = &p[lay.w2 + r * h1n..lay.w2 + (r + 1) * h1n];
                p[lay.b2 + r] + row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let h2: Vec<f64> = a2.iter().map(|&a| silu(a)).collect();
        let eps = (0..self.n)
            .map(|r| {
                let row = &p[lay.w3 + r * h2n..lay.w3 + (r + 1) * h2n];
                p[lay.b3 + r] + row.iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Cache {
            z,
            a1,
            h1,
            a2,
            h2,
            eps,
        }
    }

    /// Backpropagates `d_eps` through the cached pass. Returns the gradient
    /// with respect to `x_t`; accumulates parameter gradients when asked.
    fn backward(&self, cache: &Cache, d_eps: &[f64], mut param_grad: Option<&mut [f64]>) -> Vec<f64> {
        let lay = self.layout();
        let p = &self.params;
        let [h1n, h2n] = self.hidden;
        let zin = cache.z.len();

        let mut d_h2 = vec![0.0; h2n];
        for r in 0..self.n {
            let g = d_eps[r];
            let row = lay.w3 + r * h2n;
            for c in 0..h2n {
                d_h2[c] += p[row + c] * g;
            }
            if let Some(pg) = param_grad.as_deref_mut() {
                pg[lay.b3 + r] += g;
                for c in 0..h2n {
                    pg[row + c] += g * cache.h2[c];
                }
            }
        }
        let d_a2: Vec<f64> = d_h2.iter().zip(&cache.a2).map(|(g, &a)| g * silu_grad(a)).collect();
        let mut d_h1 = vec![0.0; h1n];
        for r in 0..h2n {
            let g = d_a2[r];
            let row = lay.w2 + r * h1n;
            for c in 0..h1n {
                d_h1[c] += p[row + c] * g;
            }
            if let Some(pg) = param_grad.as_deref_mut() {
                pg[lay.b2 + r] += g;
                for c in 0..h1n {
                    pg[row + c] += g * cache.h1[c];
                }
            }
        }
        let d_a1: Vec<f64> = d_h1.iter().zip(&cache.a1).map(|(g, &a)| g * silu_grad(a)).collect();
        let mut d_x = vec![0.0; self.n];
        for r in 0..h1n {
            let g = d_a1[r];
            let row = lay.w1 + r * zin;
            for c in 0..self.n {
                d_x[c] += p[row + c] * g;
            }
            if let Some(pg) = param_grad.as_deref_mut() {
                pg[lay.b1 + r] += g;
                for c in 0..zin {
                    pg[row + c] += g * cache.z[c];
                }
            }
        }
        d_x
    }

    fn check_input(&self, x_t: &[f64]) -> Result<()> {
        check_len("x_t", self.n, x_t.len())?;
        check_finite("x_t", x_t)
    }

    fn xhat0_from_cache(&self, x_t: &[f64], cache: &Cache, at: Timestep) -> Result<Vec<f64>> {
        if at.alpha_bar >= 1.0 {
            return Ok(x_t.to_vec());
        }
        xhat_from_eps(x_t, &cache.eps, at.alpha_bar)
    }

    fn vjp_from_cache(&self, cache: &Cache, at: Timestep, cotangent: &[f64]) -> Vec<f64> {
        if at.alpha_bar >= 1.0 {
            return cotangent.to_vec();
        }
        let sa = at.alpha_bar.sqrt();
        let s1 = (1.0 - at.alpha_bar).sqrt();
        let d_eps: Vec<f64> = cotangent.iter().map(|c| -s1 * c / sa).collect();
        let d_x = self.backward(cache, &d_eps, None);
        cotangent
            .iter()
            .zip(&d_x)
            .map(|(c, g)| c / sa + g)
            .collect()
    }
}

impl ScoreModel for MlpDenoiser {
    fn dim(&self) -> usize {
        self.n
    }

    fn predict_eps(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        self.check_input(x_t)?;
        Ok(self.forward(x_t, at.t).eps)
    }

    fn predict_xhat0(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        self.check_input(x_t)?;
        if at.alpha_bar >= 1.0 {
            return Ok(x_t.to_vec());
        }
        let cache = self.forward(x_t, at.t);
        self.xhat0_from_cache(x_t, &cache, at)
    }

    fn xhat0_vjp(&self, x_t: &[f64], at: Timestep, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x_t)?;
        check_len("cotangent", self.n, cotangent.len())?;
        check_finite("cotangent", cotangent)?;
        let cache = self.forward(x_t, at.t);
        Ok(self.vjp_from_cache(&cache, at, cotangent))
    }

    fn xhat0_pullback(
        &self,
        x_t: &[f64],
        at: Timestep,
        cotangent_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x_t)?;
        let cache = self.forward(x_t, at.t);
        let xhat0 = self.xhat0_from_cache(x_t, &cache, at)?;
        let cot = cotangent_fn(&xhat0)?;
        check_len("cotangent", self.n, cot.len())?;
        check_finite("cotangent", &cot)?;
        Ok((xhat0, self.vjp_from_cache(&cache, at, &cot)))
    }
}

/// Fits an eps-prediction network by minimising `E ||eps - eps_theta(x_t, t)||^2`
/// with Adam over minibatches of `x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps`.
pub fn train_mlp_denoiser(
    data: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(MlpDenoiser, TrainingReport)> {
    let Some(first) = data.first() else {
        return Err(CdimError::param("training set is empty"));
    };
    let n = first.len();
    for x in data {
        check_len("training sample", n, x.len())?;
        check_finite("training sample", x)?;
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(CdimError::param("batch_size and learning_rate must be positive"));
    }
    let mut net = MlpDenoiser::init(n, config.hidden, config.emb_dim, seed)?;
    let mut rng = stream_rng(seed, streams::TRAINING + 100);
    let len = net.params.len();
    let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
    let (b1, b2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut lr = config.learning_rate;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let total_t = schedule.steps();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; len];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let t = rng.random_range(1..=total_t);
                let a = schedule.alpha_bar(t);
                let noise = standard_normal_vec(&mut rng, n);
                let x_t: Vec<f64> = data[idx]
                    .iter()
                    .zip(&noise)
                    .map(|(x0, e)| a.sqrt() * x0 + (1.0 - a).sqrt() * e)
                    .collect();
                let cache = net.forward(&x_t, t);
                let diff: Vec<f64> = cache.eps.iter().zip(&noise).map(|(p, e)| p - e).collect();
                batch_loss += diff.iter().map(|d| d * d).sum::<f64>();
                let scale = 2.0 / batch.len() as f64;
                let d_eps: Vec<f64> = diff.iter().map(|d| d * scale).collect();
                net.backward(&cache, &d_eps, Some(&mut grad));
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(CdimError::Training {
                    epoch,
                    step,
                    detail: format!("non-finite loss/gradient (batch loss {batch_loss}, lr {lr:e})"),
                });
            }
            step += 1;
            let c1 = 1.0 - f64::powi(b1, step as i32);
            let c2 = 1.0 - f64::powi(b2, step as i32);
            for i in 0..len {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                net.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + adam_eps);
            }
            loss_sum += batch_loss;
        }
        epoch_loss.push(loss_sum / data.len() as f64);
        lr *= config.lr_decay;
    }
    Ok((net, TrainingReport {
        epoch_loss,
        steps: step,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff_grad;
    use crate::schedule::make_linear_schedule;

    #[test]
    fn zero_epochs_keeps_init() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let cfg = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        let data = vec![vec![0.0, 1.0]; 4];
        let (net, rep) = train_mlp_denoiser(&data, &s, &cfg, 9).unwrap();
        let init = MlpDenoiser::init(2, cfg.hidden, cfg.emb_dim, 9).unwrap();
        assert_eq!(net, init);
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert!(train_mlp_denoiser(&[], &s, &TrainingConfig::default(), 0).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let net = MlpDenoiser::init(5, [12, 10], 8, 4).unwrap();
        let mut rng = stream_rng(5, 0);
        for &(t, a) in &[(10usize, 0.97), (400, 0.3), (900, 0.01)] {
            let at = Timestep { t, alpha_bar: a };
            let x = standard_normal_vec(&mut rng, 5);
            let u = standard_normal_vec(&mut rng, 5);
            let vjp = net.xhat0_vjp(&x, at, &u).unwrap();
            let f = |z: &[f64]| -> f64 {
                let h = net.predict_xhat0(z, at).unwrap();
                h.iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let fd = finite_diff_grad(f, &x, 1e-5);
            let err: f64 = vjp.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm.max(1.0), "t={t}: {err}");
        }
    }

    #[test]
    fn training_loss_decreases() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let mut rng = stream_rng(1, 0);
        let data: Vec<Vec<f64>> = (0..512)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                vec![sign * 1.5 + 0.2 * rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let cfg = TrainingConfig {
            hidden: [16, 16],
            epochs: 10,
            batch_size: 32,
            ..TrainingConfig::default()
        };
        let (_, rep) = train_mlp_denoiser(&data, &s, &cfg, 2).unwrap();
        assert_eq!(rep.epoch_loss.len(), 10);
        assert!(rep.epoch_loss.iter().all(|l| *l >= 0.0));
        assert!(rep.epoch_loss[9] < rep.epoch_loss[0]);
    }
}
