use rand::seq::SliceRandom;

use crate::error::{CdimError, Result};
use crate::rng::{stream_rng, streams};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_within(s: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            total += dist(&s[i], &s[j]);
        }
    }
    2.0 * total / (s.len() * s.len()) as f64
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` as a V-statistic
/// over all pairs. Exactly symmetric in its arguments.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CdimError::param("energy distance needs two non-empty sample sets"));
    }
    let n = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != n) {
        return Err(CdimError::param("samples have inconsistent dimensions"));
    }
    let mut cross: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| dist(x, y))).collect();
    cross.sort_by(f64::total_cmp);
    let cross = cross.iter().sum::<f64>() / (a.len() * b.len()) as f64;
    Ok(2.0 * cross - (mean_within(a) + mean_within(b)))
}

struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    fn new(pool: &[Vec<f64>]) -> Self {
        let n = pool.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = dist(&pool[i], &pool[j]);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    /// Energy distance between `pool[order[..split]]` and `pool[order[split..]]`.
    fn split_energy(&self, order: &[usize], split: usize) -> f64 {
        let (a, b) = order.split_at(split);
        let mut aa = 0.0;
        let mut bb = 0.0;
        let mut ab = 0.0;
        for &i in a {
            let row = &self.d[i * self.n..(i + 1) * self.n];
            aa += a.iter().map(|&j| row[j]).sum::<f64>();
            ab += b.iter().map(|&j| row[j]).sum::<f64>();
        }
        for &i in b {
            let row = &self.d[i * self.n..(i + 1) * self.n];
            bb += b.iter().map(|&j| row[j]).sum::<f64>();
        }
        let (na, nb) = (a.len() as f64, b.len() as f64);
        2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb)
    }
}

/// Energy distances between random splits of `pool` into sets of size
/// `split` and `pool.len() - split`.
pub fn split_null(pool: &[Vec<f64>], split: usize, permutations: usize, seed: u64) -> Result<Vec<f64>> {
    if split == 0 || split >= pool.len() {
        return Err(CdimError::param(format!(
            "split {split} must leave both sides of a pool of {} non-empty",
            pool.len()
        )));
    }
    let matrix = DistanceMatrix::new(pool);
    let mut rng = stream_rng(seed, streams::ORACLE);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    Ok((0..permutations)
        .map(|_| {
            order.shuffle(&mut rng);
            matrix.split_energy(&order, split)
        })
        .collect())
}

/// Permutation null of the energy distance between `a` and `b`.
pub fn permutation_null(a: &[Vec<f64>], b: &[Vec<f64>], permutations: usize, seed: u64) -> Result<Vec<f64>> {
    let pool: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    split_null(&pool, a.len(), permutations, seed)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(CdimError::param("quantile needs values and q in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}
