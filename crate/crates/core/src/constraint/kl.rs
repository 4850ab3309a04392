//! Gaussian and bucketed KL divergences.
//!
//! The bucketed divergence is made differentiable with a triangular kernel:
//! a residual between two adjacent bucket centres splits its unit mass
//! between them in proportion to kernel weight. With `bin_width` equal to
//! the centre spacing this is linear interpolation; `bin_width = 0` is hard
//! binning by edges.

use crate::error::{CdimError, Result};

/// `KL(N(mean, variance) || N(0, sigma2))`.
///
/// With `paper_variant` the log term is not halved, reproducing the
/// printed expression `log(s2/v) + (v + m^2)/(2 s2) - 1/2`; that variant is
/// minimised at `v = 2 s2` rather than `v = s2`.
pub fn gaussian_kl(mean: f64, variance: f64, sigma2: f64, paper_variant: bool) -> Result<f64> {
    if !(variance > 0.0 && sigma2 > 0.0) {
        return Err(CdimError::param(format!(
            "Gaussian KL needs positive variances, got ({variance}, {sigma2})"
        )));
    }
    let log_term = (sigma2 / variance).ln();
    let quad = (variance + mean * mean) / (2.0 * sigma2);
    Ok(if paper_variant {
        log_term + quad - 0.5
    } else {
        0.5 * log_term + quad - 0.5
    })
}

/// Reference noise law discretised into buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTarget {
    edges: Vec<f64>,
    probs: Vec<f64>,
    centers: Vec<f64>,
    bin_width: f64,
    smoothing_eps: f64,
}

pub const DEFAULT_SMOOTHING_EPS: f64 = 1e-8;

impl DiscreteTarget {
    /// `edges` has `B + 1` strictly increasing entries; `probs` sums to one.
    /// The kernel width defaults to the narrowest centre spacing.
    pub fn new(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let width = min_spacing(&centers);
        let t = DiscreteTarget {
            edges,
            probs,
            centers,
            bin_width: width,
            smoothing_eps: DEFAULT_SMOOTHING_EPS,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_bin_width(mut self, bin_width: f64) -> Result<Self> {
        self.bin_width = bin_width;
        self.validate()?;
        Ok(self)
    }

    pub fn with_smoothing_eps(mut self, eps: f64) -> Result<Self> {
        self.smoothing_eps = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn uniform(lo: f64, hi: f64, buckets: usize) -> Result<Self> {
        let edges = linspace(lo, hi, buckets + 1);
        DiscreteTarget::new(edges, vec![1.0 / buckets as f64; buckets])
    }

    /// `N(0, sigma^2)` over `buckets` equal buckets on `[-half_range, half_range]`;
    /// tail mass is folded into the boundary buckets.
    pub fn gaussian(sigma: f64, buckets: usize, half_range: f64) -> Result<Self> {
        if !(sigma > 0.0 && half_range > 0.0) || buckets < 2 {
            return Err(CdimError::param("gaussian target needs sigma, range > 0 and B >= 2"));
        }
        let edges = linspace(-half_range, half_range, buckets + 1);
        let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma * std::f64::consts::SQRT_2));
        let mut probs: Vec<f64> = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        probs[0] += cdf(edges[0]);
        probs[buckets - 1] += 1.0 - cdf(edges[buckets]);
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        DiscreteTarget::new(edges, probs)
    }

    /// Two buckets centred on `-amplitude` and `+amplitude`.
    pub fn bimodal(amplitude: f64, prob_plus: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !(0.0..=1.0).contains(&prob_plus) {
            return Err(CdimError::param("bimodal target needs amplitude > 0 and prob in [0, 1]"));
        }
        DiscreteTarget::new(
            vec![-2.0 * amplitude, 0.0, 2.0 * amplitude],
            vec![1.0 - prob_plus, prob_plus],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.probs.len();
        if b < 2 {
            return Err(CdimError::param("discrete target needs B >= 2 buckets"));
        }
        if self.edges.len() != b + 1 {
            return Err(CdimError::param(format!(
                "need B + 1 = {} edges, got {}",
                b + 1,
                self.edges.len()
            )));
        }
        if self.edges.iter().any(|e| !e.is_finite()) || self.edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CdimError::param("bucket edges must be finite and strictly increasing"));
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CdimError::param("bucket probabilities must be >= 0"));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CdimError::param(format!("bucket probabilities sum to {total}")));
        }
        if !(self.smoothing_eps > 0.0 && self.smoothing_eps <= 1e-3) {
            return Err(CdimError::param(format!(
                "smoothing_eps must lie in (0, 1e-3], got {}",
                self.smoothing_eps
            )));
        }
        let spacing = min_spacing(&self.centers);
        if !(self.bin_width >= 0.0 && self.bin_width <= spacing * (1.0 + 1e-12)) {
            return Err(CdimError::param(format!(
                "bin_width must lie in [0, {spacing}] (narrowest centre spacing), got {}",
                self.bin_width
            )));
        }
        Ok(())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn smoothing_eps(&self) -> f64 {
        self.smoothing_eps
    }

    pub fn buckets(&self) -> usize {
        self.probs.len()
    }

    /// Up to two `(bucket, weight, d weight / d r)` contributions and
    /// whether `r` lay outside the outer edges.
    fn assign(&self, r: f64) -> ([(usize, f64, f64); 2], bool) {
        let b = self.buckets();
        let c = &self.centers;
        let clipped = r < self.edges[0] || r > self.edges[b];
        if r <= c[0] {
            return ([(0, 1.0, 0.0), (0, 0.0, 0.0)], clipped);
        }
        if r >= c[b - 1] {
            return ([(b - 1, 1.0, 0.0), (b - 1, 0.0, 0.0)], clipped);
        }
        // c[j] <= r < c[j + 1]
        let j = c.partition_point(|&cj| cj <= r) - 1;
        let hard = |r: f64| {
            let k = if r < self.edges[j + 1] { j } else { j + 1 };
            [(k, 1.0, 0.0), (k, 0.0, 0.0)]
        };
        let w = self.bin_width;
        if w == 0.0 {
            return (hard(r), false);
        }
        let k_lo = (1.0 - (r - c[j]) / w).max(0.0);
        let k_hi = (1.0 - (c[j + 1] - r) / w).max(0.0);
        let sum = k_lo + k_hi;
        if sum == 0.0 {
            return (hard(r), false);
        }
        let dk_lo = if k_lo > 0.0 { -1.0 / w } else { 0.0 };
        let dk_hi = if k_hi > 0.0 { 1.0 / w } else { 0.0 };
        let w_lo = k_lo / sum;
        let dw_lo = (dk_lo * sum - k_lo * (dk_lo + dk_hi)) / (sum * sum);
        ([(j, w_lo, dw_lo), (j + 1, 1.0 - w_lo, -dw_lo)], false)
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + step * i as f64 })
        .collect()
}

fn min_spacing(centers: &[f64]) -> f64 {
    centers
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Normalised soft histogram of `residuals` over the target's buckets.
pub fn soft_histogram(residuals: &[f64], target: &DiscreteTarget) -> Vec<f64> {
    let mut hist = vec![0.0; target.buckets()];
    let d = residuals.len() as f64;
    for &r in residuals {
        for (k, w, _) in target.assign(r).0 {
            hist[k] += w / d;
        }
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKl {
    pub value: f64,
    /// Derivative of `value` with respect to each residual.
    pub grad: Vec<f64>,
    /// Floored and renormalised empirical histogram.
    pub histogram: Vec<f64>,
    pub clipped: usize,
}

/// `sum_b r_B(b) log(r_B(b) / p(b))` where `p` is the soft histogram of the
/// residuals, floored at `smoothing_eps` and renormalised.
pub fn discrete_kl(residuals: &[f64], target: &DiscreteTarget) -> Result<DiscreteKl> {
    if residuals.is_empty() {
        return Err(CdimError::param("discrete KL needs at least one residual"));
    }
    if let Some(r) = residuals.iter().find(|r| !r.is_finite()) {
        return Err(CdimError::Numeric(format!("non-finite residual {r}")));
    }
    let d = residuals.len() as f64;
    let assignments: Vec<_> = residuals.iter().map(|&r| target.assign(r)).collect();
    let clipped = assignments.iter().filter(|(_, c)| *c).count();
    let mut raw = vec![0.0; target.buckets()];
    for (parts, _) in &assignments {
        for &(k, w, _) in parts {
            raw[k] += w / d;
        }
    }
    let eps = target.smoothing_eps;
    let floored: Vec<f64> = raw.iter().map(|p| p.max(eps)).collect();
    let z: f64 = floored.iter().sum();
    let mut value = 0.0;
    for (rb, q) in target.probs.iter().zip(&floored) {
        if *rb > 0.0 {
            value += rb * (rb.ln() - (q / z).ln());
        }
    }
    // d value / d raw_b, zero where the floor is active
    let d_raw: Vec<f64> = raw
        .iter()
        .zip(&floored)
        .zip(&target.probs)
        .map(|((p, q), rb)| if *p > eps { -rb / q + 1.0 / z } else { 0.0 })
        .collect();
    let grad = assignments
        .iter()
        .map(|(parts, _)| parts.iter().map(|&(k, _, dw)| d_raw[k] * dw / d).sum())
        .collect();
    Ok(DiscreteKl {
        value,
        grad,
        histogram: floored.iter().map(|q| q / z).collect(),
        clipped,
    })
}
