use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use super::{LinearOperator, Operator};
use crate::error::{check_len, CdimError, Result};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone)]
pub struct Identity {
    n: usize,
}

pub fn identity(n: usize) -> Operator {
    Arc::new(Identity { n })
}

impl LinearOperator for Identity {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.n, x.len())?;
        Ok(x.to_vec())
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.n, y.len())?;
        Ok(y.to_vec())
    }
    fn name(&self) -> String {
        format!("identity({})", self.n)
    }
}

/// Coordinate selection: `apply` gathers the kept indices, `adjoint`
/// scatters them back with zeros elsewhere.
#[derive(Debug, Clone)]
pub struct Mask {
    n: usize,
    kept: Vec<usize>,
}

pub fn mask_operator(n: usize, kept: &[usize]) -> Result<Operator> {
    Ok(Arc::new(Mask::new(n, kept)?))
}

impl Mask {
    pub fn new(n: usize, kept: &[usize]) -> Result<Self> {
        if kept.is_empty() {
            return Err(CdimError::param("mask must keep at least one coordinate"));
        }
        let mut seen = BTreeSet::new();
        for &i in kept {
            if i >= n {
                return Err(CdimError::param(format!("mask index {i} out of range for n={n}")));
            }
            if !seen.insert(i) {
                return Err(CdimError::param(format!("duplicate mask index {i}")));
            }
        }
        Ok(Mask {
            n,
            kept: kept.to_vec(),
        })
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }
}

/// Keeps the second half of the signal (the first half is missing).
pub fn half_mask(n: usize) -> Result<Operator> {
    let kept: Vec<usize> = (n / 2..n).collect();
    mask_operator(n, &kept)
}

/// Drops each group of `group` consecutive coordinates independently with
/// probability `drop_prob`.
pub fn random_mask(n: usize, drop_prob: f64, group: usize, seed: u64) -> Result<Operator> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(CdimError::param(format!("mask probability {drop_prob} outside [0, 1]")));
    }
    if group == 0 || !n.is_multiple_of(group) {
        return Err(CdimError::param(format!("group size {group} must divide n={n}")));
    }
    let mut rng = stream_rng(seed, streams::MASK);
    let mut kept = Vec::new();
    for g in 0..n / group {
        if !rng.random_bool(drop_prob) {
            kept.extend(g * group..(g + 1) * group);
        }
    }
    mask_operator(n, &kept)
}

impl LinearOperator for Mask {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.kept.len()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.n, x.len())?;
        Ok(self.kept.iter().map(|&i| x[i]).collect())
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.kept.len(), y.len())?;
        let mut out = vec![0.0; self.n];
        for (&i, v) in self.kept.iter().zip(y) {
            out[i] = *v;
        }
        Ok(out)
    }
    fn name(&self) -> String {
        format!("mask({}/{})", self.kept.len(), self.n)
    }
}

/// Block averaging by `factor`.
#[derive(Debug, Clone)]
pub struct Downsample {
    n: usize,
    factor: usize,
}

pub fn downsample_operator(n: usize, factor: usize) -> Result<Operator> {
    if factor == 0 || !n.is_multiple_of(factor) {
        return Err(CdimError::param(format!("downsample factor {factor} must divide n={n}")));
    }
    Ok(Arc::new(Downsample { n, factor }))
}

impl LinearOperator for Downsample {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.n / self.factor
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.n, x.len())?;
        let f = self.factor as f64;
        Ok(x.chunks(self.factor).map(|c| c.iter().sum::<f64>() / f).collect())
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.output_dim(), y.len())?;
        let f = self.factor as f64;
        Ok(y.iter()
            .flat_map(|v| std::iter::repeat_n(v / f, self.factor))
            .collect())
    }
    fn name(&self) -> String {
        format!("downsample(x{})", self.factor)
    }
}

/// 1-D convolution with zero padding; output has the input's length.
#[derive(Debug, Clone)]
pub struct Blur {
    n: usize,
    kernel: Vec<f64>,
}

pub fn blur_operator(n: usize, kernel: Vec<f64>) -> Result<Operator> {
    if kernel.is_empty() || kernel.len().is_multiple_of(2) || kernel.len() > n {
        return Err(CdimError::param(format!(
            "blur kernel must have odd length <= n, got {}",
            kernel.len()
        )));
    }
    if kernel.iter().any(|k| !k.is_finite()) || (kernel.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(CdimError::param("blur kernel weights must be finite and sum to 1"));
    }
    Ok(Arc::new(Blur { n, kernel }))
}

/// Sampled Gaussian kernel with radius `ceil(3 sigma)`, normalised to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CdimError::param(format!("kernel sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

impl LinearOperator for Blur {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.n, x.len())?;
        let r = (self.kernel.len() / 2) as isize;
        let n = self.n as isize;
        Ok((0..n)
            .map(|i| {
                self.kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(j, k)| {
                        let src = i + r - j as isize;
                        (0..n).contains(&src).then(|| k * x[src as usize])
                    })
                    .sum()
            })
            .collect())
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint input", self.n, y.len())?;
        let r = (self.kernel.len() / 2) as isize;
        let n = self.n as isize;
        Ok((0..n)
            .map(|m| {
                self.kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(j, k)| {
                        let dst = m - r + j as isize;
                        (0..n).contains(&dst).then(|| k * y[dst as usize])
                    })
                    .sum()
            })
            .collect())
    }
    fn name(&self) -> String {
        format!("blur(k{})", self.kernel.len())
    }
}

/// Uniform gain `gain * x`, e.g. mapping unit-scale signals to photon counts.
#[derive(Debug, Clone)]
pub struct Scale {
    n: usize,
    gain: f64,
}

pub fn scale_operator(n: usize, gain: f64) -> Result<Operator> {
    if !(gain.is_finite() && gain != 0.0) {
        return Err(CdimError::param(format!("gain must be finite and non-zero, got {gain}")));
    }
    Ok(Arc::new(Scale { n, gain }))
}

impl LinearOperator for Scale {
    fn input_dim(&self) -> usize {
        self.n
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.n, x.len())?;
        Ok(x.iter().map(|v| self.gain * v).collect())
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.apply(y)
    }
    fn name(&self) -> String {
        format!("scale({})", self.gain)
    }
}

/// `outer . inner`.
#[derive(Debug, Clone)]
pub struct Composed {
    outer: Operator,
    inner: Operator,
}

pub fn compose(outer: Operator, inner: Operator) -> Result<Operator> {
    if outer.input_dim() != inner.output_dim() {
        return Err(CdimError::Dimension {
            what: "composition (outer input vs inner output)",
            expected: inner.output_dim(),
            got: outer.input_dim(),
        });
    }
    Ok(Arc::new(Composed { outer, inner }))
}

impl LinearOperator for Composed {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.outer.output_dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.outer.apply(&self.inner.apply(x)?)
    }
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.inner.adjoint(&self.outer.adjoint(y)?)
    }
    fn name(&self) -> String {
        format!("{}*{}", self.outer.name(), self.inner.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_edge_cases() {
        let all: Vec<usize> = (0..5).collect();
        let op = mask_operator(5, &all).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(op.apply(&x).unwrap(), x.to_vec());
        assert!(mask_operator(5, &[]).is_err());
        assert!(mask_operator(5, &[1, 1]).is_err());
        assert!(mask_operator(5, &[5]).is_err());
    }

    #[test]
    fn mask_adjoint_apply_is_diagonal_projection() {
        let op = mask_operator(6, &[4, 1]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let back = op.adjoint(&op.apply(&x).unwrap()).unwrap();
        assert_eq!(back, vec![0.0, 2.0, 0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn heavy_random_masking_keeps_few_coordinates() {
        // 92% drop rate: over many seeds the mean kept count is close to 0.08 * n.
        let mut kept = 0usize;
        let mut trials = 0usize;
        for seed in 0..2000 {
            if let Ok(op) = random_mask(16, 0.92, 1, seed) {
                kept += op.output_dim();
            }
            trials += 1;
        }
        // Empty masks are rejected and count as zero kept coordinates.
        let mean = kept as f64 / trials as f64;
        assert!((mean - 1.28).abs() < 0.1, "{mean}");
    }

    #[test]
    fn grouped_mask_drops_whole_groups() {
        let op = random_mask(12, 0.5, 3, 17).unwrap();
        let m = op.apply(&(0..12).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!(m.len() % 3, 0);
        for g in m.chunks(3) {
            assert_eq!(g[1], g[0] + 1.0);
            assert_eq!(g[2], g[0] + 2.0);
            assert_eq!(g[0] as usize % 3, 0);
        }
    }

    #[test]
    fn downsample_values() {
        let op = downsample_operator(8, 4).unwrap();
        let x: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        assert_eq!(op.apply(&x).unwrap(), vec![2.5, 6.5]);
        assert_eq!(op.apply(&[3.0; 8]).unwrap(), vec![3.0, 3.0]);
        let id = downsample_operator(5, 1).unwrap();
        assert_eq!(id.apply(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(downsample_operator(10, 4).is_err());
    }

    #[test]
    fn blur_basics() {
        let id = blur_operator(5, vec![1.0]).unwrap();
        assert_eq!(id.apply(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = blur_operator(8, vec![0.25, 0.5, 0.25]).unwrap();
        let y = b.apply(&[2.0; 8]).unwrap();
        assert!(y[1..7].iter().all(|v| (v - 2.0).abs() < 1e-15));
        assert_eq!(y[0], 1.5);
        assert!(blur_operator(8, vec![0.5, 0.5]).is_err());
        assert!(blur_operator(8, vec![0.2, 0.2, 0.2]).is_err());
        assert!(blur_operator(2, vec![0.25, 0.5, 0.25]).is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalised() {
        let k = gaussian_kernel(1.5).unwrap();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(gaussian_kernel(0.0).is_err());
    }
}
